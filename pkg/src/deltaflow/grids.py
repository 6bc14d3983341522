"""Dense float64 grid helpers and live-byte accounting.

Grids are plain C-contiguous ``numpy.float64`` arrays; every helper here
validates the contracts the rest of the package relies on (matching dims,
finite values). Latent video grids are laid out ``(frames, height, width,
channels)`` in row-major order.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidDimensionError, ShapeMismatchError

__all__ = [
    "as_grid",
    "validate_dims",
    "require_same_shape",
    "assert_finite",
    "elementwise",
    "reduce_norm",
    "GridLedger",
]

_ELEMENTWISE_OPS = {"add", "sub", "mul"}
_REDUCTIONS = {"max-abs", "l2", "mean"}


def validate_dims(dims: Sequence[int]) -> tuple[int, ...]:
    """Check an extent list: nonempty, every extent >= 1."""
    dims = tuple(int(d) for d in dims)
    if len(dims) == 0:
        raise InvalidDimensionError("extent list is empty")
    for d in dims:
        if d < 1:
            raise InvalidDimensionError(f"extent {d} < 1 in dims {dims}")
    return dims


def as_grid(values, dims: Sequence[int] | None = None) -> np.ndarray:
    """Coerce to a C-contiguous float64 array, optionally reshaped to dims."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if dims is not None:
        dims = validate_dims(dims)
        if arr.size != int(np.prod(dims)):
            raise ShapeMismatchError(
                f"data length {arr.size} does not match dims {dims}"
            )
        arr = arr.reshape(dims)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    return arr


def require_same_shape(a: np.ndarray, b: np.ndarray, context: str = "") -> None:
    if a.shape != b.shape:
        where = f" in {context}" if context else ""
        raise ShapeMismatchError(f"shape mismatch{where}: {a.shape} vs {b.shape}")


def assert_finite(a: np.ndarray, context: str = "") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        where = f" in {context}" if context else ""
        raise FloatingPointError(f"non-finite values{where}")
    return a


def elementwise(a, b, op: str, scale: float = 1.0) -> np.ndarray:
    """result[i] = a[i] <op> (scale * b[i]); dims must match."""
    if op not in _ELEMENTWISE_OPS:
        raise ValueError(f"unknown op {op!r}, expected one of {sorted(_ELEMENTWISE_OPS)}")
    a = as_grid(a)
    b = as_grid(b)
    require_same_shape(a, b, f"elementwise {op}")
    sb = b if scale == 1.0 else scale * b
    if op == "add":
        return a + sb
    if op == "sub":
        return a - sb
    return a * sb


def reduce_norm(a, kind: str) -> float:
    """Reduce a grid to one of max-abs / l2 / mean."""
    if kind not in _REDUCTIONS:
        raise ValueError(f"unknown reduction {kind!r}, expected one of {sorted(_REDUCTIONS)}")
    a = as_grid(a)
    if a.size == 0:
        raise InvalidDimensionError("cannot reduce an empty grid")
    if kind == "max-abs":
        return float(np.max(np.abs(a)))
    if kind == "l2":
        return float(np.sqrt(np.sum(a * a)))
    return float(np.mean(a))


class GridLedger:
    """Tracks peak simultaneously-live grid bytes across a run.

    Loops call :meth:`observe` once per step with every grid alive at that
    point; the ledger keeps the running peak. Observation is explicit rather
    than hooked into the allocator so the accounting reflects the algorithm's
    working set, not interpreter noise.
    """

    def __init__(self) -> None:
        self.peak_bytes = 0
        self.observations = 0

    def observe(self, *arrays: Iterable) -> int:
        live = 0
        for a in arrays:
            if a is None:
                continue
            live += np.asarray(a).nbytes
        self.peak_bytes = max(self.peak_bytes, live)
        self.observations += 1
        return live

    def reset(self) -> None:
        self.peak_bytes = 0
        self.observations = 0
