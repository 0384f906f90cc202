import json

import numpy as np
import pytest

from layout4d.cli import LABELLED_FIELDS, main
from layout4d.services.formats import read_cloud_bin, read_layout, read_manifest, write_layout

from conftest import make_layout, make_object


@pytest.fixture
def spec_file(tmp_path, small_spec):
    path = tmp_path / "spec.json"
    path.write_text(small_spec.model_dump_json())
    return path


@pytest.fixture
def layout_file(tmp_path, two_car_layout):
    path = tmp_path / "layout.json"
    write_layout(two_car_layout, path)
    return path


def simulate(out, spec_file, *extra):
    return main(["--threads", "1", "simulate", "--spec", str(spec_file), "--out", str(out), *extra])


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_simulate_is_deterministic(tmp_path, spec_file):
    assert simulate(tmp_path / "a", spec_file, "--seed", "3", "--frames", "3") == 0
    assert main(["--threads", "2", "simulate", "--spec", str(spec_file), "--out", str(tmp_path / "b"),
                 "--seed", "3", "--frames", "3"]) == 0
    first, second = tree(tmp_path / "a"), tree(tmp_path / "b")
    assert first == second
    assert "clouds/000002.bin" in first
    assert "range/000002.rim" in first


def test_simulate_writes_a_loadable_dataset(tmp_path, spec_file, layout_file, small_spec):
    out = tmp_path / "sim"
    assert simulate(out, spec_file, "--layout", str(layout_file), "--frames", "1") == 0
    manifest = read_manifest(out / "manifest.json")
    assert len(manifest.frames) == 1
    assert manifest.spec == small_spec
    assert manifest.model_extra["run"]["inputs"]["layout"] == str(layout_file)
    assert "threads" not in manifest.model_extra["run"]
    cloud = read_cloud_bin(out / "clouds/000000.bin", LABELLED_FIELDS)
    assert set(np.unique(cloud.labels)) <= {0, 1, 2}
    assert read_layout(out / "layout.json") == read_layout(layout_file)


def test_simulate_rejects_invalid_layouts(tmp_path, spec_file, capsys):
    path = tmp_path / "crowded.json"
    write_layout(make_layout([make_object(seed=1), make_object(seed=2)]), path)
    assert simulate(tmp_path / "out", spec_file, "--layout", str(path)) == 2
    assert "[overlap]" in capsys.readouterr().out
    assert not (tmp_path / "out").exists()


def test_simulate_checks_frames(tmp_path, spec_file):
    assert simulate(tmp_path / "out", spec_file, "--seed", "1", "--frames", "40") == 2


def test_edit_translate_by_zero_keeps_the_layout(tmp_path, layout_file):
    out = tmp_path / "edited.json"
    code = main(["edit", "--layout", str(layout_file), "--op", "translate", "--args", '{"index": 1}', "--out", str(out)])
    assert code == 0
    assert read_layout(out) == read_layout(layout_file)


def test_edit_insert_then_delete(tmp_path, layout_file):
    obj = {
        "label": "pedestrian",
        "box": {"center": [0.0, 20.0, -1.0], "dims": [0.7, 0.7, 1.75], "yaw": 0.0},
        "trajectory": [[0.0, 0.0, 0.0]] * 8,
    }
    args_file = tmp_path / "insert.json"
    args_file.write_text(json.dumps({"object": obj}))
    inserted, restored = tmp_path / "inserted.json", tmp_path / "restored.json"
    assert main(["edit", "--layout", str(layout_file), "--op", "insert", "--args", f"@{args_file}",
                 "--out", str(inserted)]) == 0
    assert len(read_layout(inserted).objects) == 3
    assert main(["edit", "--layout", str(inserted), "--op", "delete", "--args", '{"index": 2}',
                 "--out", str(restored)]) == 0
    assert read_layout(restored) == read_layout(layout_file)


def test_edit_rejections(tmp_path, layout_file, capsys):
    out = tmp_path / "edited.json"
    code = main(["edit", "--layout", str(layout_file), "--op", "translate",
                 "--args", '{"index": 0, "dx": -27.0, "dy": -9.0}', "--out", str(out)])
    assert code == 3
    assert "[overlap]" in capsys.readouterr().out
    assert not out.exists()

    assert main(["edit", "--layout", str(layout_file), "--op", "delete", "--args", "[1]", "--out", str(out)]) == 2
    assert main(["edit", "--layout", str(layout_file), "--op", "delete", "--args", '{"index": "x"}',
                 "--out", str(out)]) == 2


def test_warp_static_world_modes_agree(tmp_path, spec_file, layout_file):
    assert simulate(tmp_path / "sim", spec_file, "--layout", str(layout_file), "--frames", "1") == 0
    manifest = tmp_path / "sim" / "manifest.json"
    for mode in ("step", "anchor"):
        code = main(["--threads", "1", "warp", "--manifest", str(manifest), "--layout", str(layout_file),
                     "--mode", mode, "--steps", "3", "--out", str(tmp_path / mode)])
        assert code == 0
    for t in range(4):
        name = f"clouds/{t:06d}.bin"
        step = read_cloud_bin(tmp_path / "step" / name, LABELLED_FIELDS)
        anchor = read_cloud_bin(tmp_path / "anchor" / name, LABELLED_FIELDS)
        assert len(step) == len(anchor)
        np.testing.assert_allclose(step.points, anchor.points, atol=1e-4)
    assert read_manifest(tmp_path / "step" / "manifest.json").model_extra["run"]["params"] == {"mode": "step", "steps": 3}


def test_warp_needs_its_inputs(tmp_path, spec_file, layout_file, capsys):
    assert simulate(tmp_path / "sim", spec_file, "--layout", str(layout_file), "--frames", "1") == 0
    code = main(["warp", "--manifest", str(tmp_path / "sim" / "manifest.json"), "--layout",
                 str(tmp_path / "missing.json"), "--out", str(tmp_path / "w")])
    assert code == 2
    assert "not found" in capsys.readouterr().err


def test_eval_on_identical_datasets(tmp_path, spec_file, layout_file):
    assert simulate(tmp_path / "sim", spec_file, "--layout", str(layout_file), "--frames", "6") == 0
    manifest = str(tmp_path / "sim" / "manifest.json")
    report_path = tmp_path / "reports" / "report.json"
    code = main(["--threads", "2", "eval", "--level", "all", "--gen", manifest, "--ref", manifest,
                 "--out", str(report_path)])
    assert code == 0

    report = json.loads(report_path.read_text())
    assert all(v <= 1e-9 for v in report["scene"].values())
    assert report["object"]["p_mmd"] == 0.0
    assert all(v == 0.0 for v in report["temporal"]["ctc"].values())
    metadata = report["metadata"]
    assert metadata["level"] == "all"
    assert metadata["digests"]["gen"] == metadata["digests"]["ref"]
    assert metadata["run"]["params"] == {"level": "all"}
    assert "threads" not in metadata["run"]
    header = report_path.with_suffix(".csv").read_text().splitlines()[0]
    assert header == "level,metric,value,scaled,scale"


def test_eval_temporal_needs_enough_frames(tmp_path, spec_file, layout_file, capsys):
    assert simulate(tmp_path / "sim", spec_file, "--layout", str(layout_file), "--frames", "2") == 0
    code = main(["eval", "--level", "temporal", "--gen", str(tmp_path / "sim" / "manifest.json")])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_usage_errors_exit_with_two():
    with pytest.raises(SystemExit) as excinfo:
        main(["simulate", "--bogus"])
    assert excinfo.value.code == 2
