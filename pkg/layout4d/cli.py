"""
Command line: simulate, warp, edit, eval and serve.

Exit codes: 0 success, 1 runtime or data error, 2 configuration or usage
error, 3 validity rejection.
"""

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from . import __version__
from .config.settings import settings
from .models.documents import DatasetManifest, RunConfig
from .models.geometry import PointCloud
from .models.layout import SceneLayout, ValidityRules
from .models.metrics import EvalConfig, MetricReport
from .models.range_view import SensorSpec
from .models.sequence import FrameState
from .services.evaluation import EvaluationService
from .services.formats import (
    frame_record,
    load_dataset,
    load_document,
    read_layout,
    read_manifest,
    read_poses,
    write_cloud_bin,
    write_layout,
    write_manifest,
    write_poses,
    write_range_image,
    write_report_csv,
    write_report_json,
)
from .services.layout import apply_edit, foreground_mask, graph_from_objects
from .services.simulator import make_world, random_layout, simulate_sequence
from .services.warp import generate_sequence
from .utils.errors import ConfigError, Layout4DError, ValidityError
from .utils.helpers import configure_logging, file_digest

logger = logging.getLogger(__name__)

LABELLED_FIELDS = ("x", "y", "z", "intensity", "object_id")


def _run_echo(run: RunConfig) -> Dict[str, Any]:
    """Run parameters that do not vary with thread count or output location."""
    return run.model_dump(mode="json", exclude={"threads", "outputs"})


def _print_violations(error: ValidityError) -> None:
    print(f"{error}:")
    for violation in error.violations:
        print(f"  - [{violation.kind}] {violation.message}")


def _existing(path: str, role: str) -> Path:
    resolved = Path(path)
    if not resolved.is_file():
        raise ConfigError(f"{role} file {path} not found")
    return resolved


def _frame_name(t: int) -> str:
    return f"{t:06d}"


def _write_frames(out: Path, clouds: Sequence[PointCloud], layout: SceneLayout, spec: SensorSpec,
                  run: RunConfig, images=None) -> None:
    """Clouds, optional range dumps, poses, layout and a manifest tying them together."""
    (out / "clouds").mkdir(parents=True, exist_ok=True)
    if images is not None:
        (out / "range").mkdir(parents=True, exist_ok=True)
    records = []
    poses = layout.ego_trajectory[: len(clouds)]
    for t, (cloud, pose) in enumerate(zip(clouds, poses)):
        name = f"clouds/{_frame_name(t)}.bin"
        write_cloud_bin(cloud, out / name, LABELLED_FIELDS)
        if images is not None:
            write_range_image(images[t], out / "range" / f"{_frame_name(t)}.rim")
        records.append(frame_record(name, pose, t * layout.dt))
    write_layout(layout, out / "layout.json")
    write_poses(poses, out / "poses.json", [t * layout.dt for t in range(len(poses))])
    manifest = DatasetManifest(
        spec=spec,
        fields=LABELLED_FIELDS,
        layout_path="layout.json",
        frames=records,
        run=_run_echo(run),
    )
    write_manifest(manifest, out / "manifest.json")


def cmd_simulate(args: argparse.Namespace) -> int:
    spec = load_document(SensorSpec, _existing(args.spec, "sensor spec")) if args.spec else SensorSpec()
    if args.layout:
        layout = read_layout(_existing(args.layout, "layout"))
    else:
        layout = random_layout(args.seed, ground_z=args.ground_z)

    if args.ego:
        poses = tuple(read_poses(_existing(args.ego, "ego poses")))
        if len(poses) != layout.horizon + 1:
            raise ConfigError(f"ego file holds {len(poses)} poses, layout needs {layout.horizon + 1}")
        layout = SceneLayout(
            objects=layout.objects,
            ego_trajectory=poses,
            graph=graph_from_objects(layout.objects, poses[0]),
            horizon=layout.horizon,
            dt=layout.dt,
            extra=layout.extra,
        )

    frames = layout.horizon + 1 if args.frames is None else args.frames
    if not 1 <= frames <= layout.horizon + 1:
        raise ConfigError(f"--frames must be in [1, {layout.horizon + 1}], got {frames}")

    try:
        world = make_world(layout, ground_z=args.ground_z)
    except ValidityError as e:
        _print_violations(e)
        return ConfigError.exit_code

    simulated = simulate_sequence(
        world, layout.ego_trajectory[:frames], spec, frames - 1, args.noise, args.seed or 0, settings.threads
    )
    run = RunConfig(
        command="simulate",
        seed=args.seed,
        threads=settings.threads,
        inputs={k: v for k, v in (("layout", args.layout), ("ego", args.ego), ("spec", args.spec)) if v},
        outputs={"out": str(args.out)},
        params={"frames": frames, "noise": args.noise, "ground_z": args.ground_z},
    )
    out = Path(args.out)
    _write_frames(out, [f.cloud for f in simulated], layout, spec, run, [f.image for f in simulated])
    print(f"simulated {frames} frame(s) of {len(layout.objects)} object(s) into {out}")
    return 0


def cmd_warp(args: argparse.Namespace) -> int:
    manifest_path = _existing(args.manifest, "manifest")
    layout = read_layout(_existing(args.layout, "layout"))
    dataset = load_dataset(manifest_path, settings.threads)
    if not len(dataset):
        raise ConfigError(f"{manifest_path} holds no frames")

    cloud = dataset.samples[0].cloud
    if cloud.object_id is None:
        cloud = foreground_mask(cloud, layout, 0)
    frame0 = FrameState(cloud, layout.ego_trajectory[0], 0)
    frames = generate_sequence(frame0, layout, args.mode, dataset.spec, args.steps)

    run = RunConfig(
        command="warp",
        threads=settings.threads,
        inputs={"manifest": args.manifest, "layout": args.layout},
        outputs={"out": str(args.out)},
        params={"mode": args.mode, "steps": len(frames) - 1},
    )
    _write_frames(Path(args.out), [f.cloud for f in frames], layout, dataset.spec, run)
    print(f"warped {len(frames)} frame(s) with mode {args.mode} into {args.out}")
    return 0


def _edit_args(raw: str) -> Dict[str, Any]:
    text = Path(raw[1:]).read_text(encoding="utf-8") if raw.startswith("@") else raw
    try:
        parsed = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"--args is not valid JSON: {e.msg}") from e
    if not isinstance(parsed, dict):
        raise ConfigError("--args must be a JSON object")
    return parsed


def cmd_edit(args: argparse.Namespace) -> int:
    layout = read_layout(_existing(args.layout, "layout"))
    rules = load_document(ValidityRules, _existing(args.rules, "rules")) if args.rules else None
    try:
        edited = apply_edit(layout, args.op, _edit_args(args.args), rules)
    except ValidityError as e:
        _print_violations(e)
        return e.exit_code
    write_layout(edited, args.out)
    print(f"{args.op} applied, {len(edited.objects)} object(s) written to {args.out}")
    return 0


def _dataset_digest(manifest_path: Path) -> str:
    """SHA-256 over the manifest and every file it references, in frame order."""
    manifest = read_manifest(manifest_path)
    base = manifest_path.parent
    digest = hashlib.sha256(file_digest(manifest_path).encode())
    for frame in manifest.frames:
        digest.update(file_digest(base / frame.cloud_path).encode())
    if manifest.layout_path:
        digest.update(file_digest(base / manifest.layout_path).encode())
    return digest.hexdigest()


def _print_report(report: MetricReport) -> None:
    for name in ("scene", "object"):
        section = getattr(report, name)
        if section is not None:
            values = ", ".join(f"{k}={v:.6g}" for k, v in section.model_dump().items())
            print(f"{name}: {values}")
    if report.temporal is not None:
        for k, entry in sorted(report.temporal.ttce.items()):
            print(f"ttce@{k}: {entry.translation:.6g} m, {entry.rotation_deg:.6g} deg")
        for k, value in sorted(report.temporal.ctc.items()):
            print(f"ctc@{k}: {value:.6g} m^2")


def cmd_eval(args: argparse.Namespace) -> int:
    config = load_document(EvalConfig, _existing(args.config, "config")) if args.config else EvalConfig()
    gen_path = _existing(args.gen, "generated manifest")
    ref_path = _existing(args.ref, "reference manifest") if args.ref else None

    gen = load_dataset(gen_path, settings.threads)
    ref = load_dataset(ref_path, settings.threads) if ref_path else None
    service = EvaluationService(threads=settings.threads)
    report = service.evaluate(args.level, gen, ref, config)

    run = RunConfig(
        command="eval",
        threads=settings.threads,
        inputs={k: v for k, v in (("gen", args.gen), ("ref", args.ref), ("config", args.config)) if v},
        outputs={"out": str(args.out)} if args.out else {},
        params={"level": args.level},
    )
    report.metadata["run"] = _run_echo(run)
    report.metadata["digests"] = {"gen": _dataset_digest(gen_path)}
    if ref_path:
        report.metadata["digests"]["ref"] = _dataset_digest(ref_path)

    _print_report(report)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_report_json(report, out)
        write_report_csv(report, out.with_suffix(".csv"))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run(
        "layout4d.main:app",
        host=args.host or settings.HOST,
        port=args.port or settings.PORT,
        reload=False,
        log_level=settings.LOG_LEVEL.lower(),
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="layout4d", description=settings.APP_DESCRIPTION)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=int, help="Worker threads (default: LAYOUT4D_THREADS or all cores)")
    parser.add_argument(
        "--log-level",
        type=str.upper,
        choices=("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"),
        help="Logging level (default: LAYOUT4D_LOG_LEVEL or INFO)",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="Raycast a layout into a labelled sequence")
    source = simulate.add_mutually_exclusive_group(required=True)
    source.add_argument("--layout", help="Layout JSON")
    source.add_argument("--seed", type=int, help="Generate a random valid layout from this seed")
    simulate.add_argument("--ego", help="Ego pose JSON overriding the layout's ego trajectory")
    simulate.add_argument("--frames", type=int, help="Number of frames (default: horizon + 1)")
    simulate.add_argument("--spec", help="Sensor spec JSON")
    simulate.add_argument("--noise", type=float, default=0.0, help="Gaussian range noise sigma (m)")
    simulate.add_argument("--ground-z", type=float, default=settings.GROUND_Z, help="Ground plane height (m)")
    simulate.add_argument("--out", required=True, help="Output directory")
    simulate.set_defaults(handler=cmd_simulate)

    warp = commands.add_parser("warp", help="Roll frame 0 of a dataset forward along a layout")
    warp.add_argument("--manifest", required=True)
    warp.add_argument("--layout", required=True)
    warp.add_argument("--mode", choices=("step", "anchor", "fused"), default="fused")
    warp.add_argument("--steps", type=int, help="Steps to generate (default: layout horizon)")
    warp.add_argument("--out", required=True, help="Output directory")
    warp.set_defaults(handler=cmd_warp)

    edit = commands.add_parser("edit", help="Edit a layout; invalid results are rejected")
    edit.add_argument("--layout", required=True)
    edit.add_argument("--op", required=True, choices=("insert", "delete", "translate", "retraject"))
    edit.add_argument("--args", default="{}", help="Operation arguments as JSON, or @file")
    edit.add_argument("--rules", help="Validity rules JSON")
    edit.add_argument("--out", required=True, help="Output layout JSON")
    edit.set_defaults(handler=cmd_edit)

    evaluate = commands.add_parser("eval", help="Compute generation metrics")
    evaluate.add_argument("--level", choices=("scene", "object", "temporal", "all"), default="all")
    evaluate.add_argument("--gen", required=True, help="Generated dataset manifest")
    evaluate.add_argument("--ref", help="Reference dataset manifest")
    evaluate.add_argument("--config", help="Evaluation config JSON")
    evaluate.add_argument("--out", help="Report JSON path; a CSV summary is written next to it")
    evaluate.set_defaults(handler=cmd_eval)

    serve = commands.add_parser("serve", help="Run the HTTP API")
    serve.add_argument("--host")
    serve.add_argument("--port", type=int)
    serve.set_defaults(handler=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings.override(threads=args.threads, log_level=args.log_level)
    configure_logging()
    try:
        return args.handler(args)
    except Layout4DError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
