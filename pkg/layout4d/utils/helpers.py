"""
Utility functions and helpers.
"""

import hashlib
import logging
import sys
import uuid
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, TypeVar, Union

import numpy as np

from ..config.settings import settings

T = TypeVar("T")
R = TypeVar("R")


def generate_request_id() -> str:
    """Generate a unique request ID."""
    return str(uuid.uuid4())


def get_timestamp() -> str:
    """Get current timestamp in ISO format."""
    return datetime.now(timezone.utc).isoformat()


def format_error_response(error: Exception, request_id: Optional[str] = None) -> Dict[str, Any]:
    """
    Format error response with consistent structure.

    Args:
        error: Exception that occurred
        request_id: Optional request ID for tracking

    Returns:
        Dict: Formatted error response
    """
    response = {
        "error": type(error).__name__,
        "message": str(error),
        "timestamp": get_timestamp(),
        "request_id": request_id or generate_request_id(),
    }
    violations = getattr(error, "violations", None)
    if violations:
        response["violations"] = [
            v.model_dump() if hasattr(v, "model_dump") else str(v) for v in violations
        ]
    index = getattr(error, "index", None)
    if index is not None:
        response["index"] = index
    pointer = getattr(error, "pointer", None)
    if pointer:
        response["pointer"] = pointer
    return response


def configure_logging(level: Optional[str] = None) -> None:
    """Route library logs to standard error at the configured level."""
    logging.basicConfig(
        level=(level or settings.LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def file_digest(path: Union[str, Path]) -> str:
    """SHA-256 of a file's bytes, hex encoded."""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def ordered_mean(values: Iterable[float]) -> float:
    """Mean with numpy's pairwise summation over a fixed input order."""
    array = np.asarray(list(values), dtype=np.float64)
    if array.size == 0:
        return 0.0
    return float(np.sum(array) / array.size)


def parallel_map(fn: Callable[[T], R], items: Sequence[T], threads: Optional[int] = None) -> List[R]:
    """
    Apply ``fn`` to every item, preserving input order.

    Results never depend on the worker count: each item is computed
    independently and reductions happen afterwards in input order.
    """
    workers = settings.threads if threads is None else max(1, threads)
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as executor:
        return list(executor.map(fn, items))
