"""Analytical attention-memory estimation and desk-scale efficiency probes.

The closed-form estimate is the byte count of materialized attention score
maps per denoiser timestep: prod(attention shape) * dtype bytes * block
count, reported in GiB (2^30). Architectures with multi-scale (per-layer
varying) attention shapes are listed with their citation value only.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, UnsupportedFamilyError
from .grids import GridLedger
from .sampling import ConditionedModel

GIB = 2**30

__all__ = [
    "ArchSpec",
    "MemoryRow",
    "attention_bytes",
    "memory_table",
    "REFERENCE_ARCHS",
    "CallCounter",
    "EfficiencyReport",
    "measure_efficiency",
]


@dataclass(frozen=True)
class ArchSpec:
    """One architecture row: attention shape, block count, dtype width."""

    name: str
    shape: tuple[int, ...] | None  # None marks multi-scale attention
    blocks: int
    dtype_bytes: int = 4
    frames: int | None = None
    reference_gb: float | None = None

    def __post_init__(self):
        if self.blocks < 1 or self.dtype_bytes < 1:
            raise ConfigError(f"{self.name}: blocks and dtype_bytes must be positive")
        if self.shape is not None:
            if len(self.shape) == 0 or any(int(s) < 1 for s in self.shape):
                raise ConfigError(f"{self.name}: attention shape extents must be >= 1")

    @property
    def multi_scale(self) -> bool:
        return self.shape is None


class MultiScaleShapeError(UnsupportedFamilyError):
    """Closed-form estimation is out of model for multi-scale attention."""


def attention_bytes(spec: ArchSpec) -> int:
    """Bytes of attention score maps per timestep."""
    if spec.multi_scale:
        raise MultiScaleShapeError(f"{spec.name}: multi-scale shape has no closed form")
    return int(math.prod(spec.shape)) * spec.dtype_bytes * spec.blocks


@dataclass(frozen=True)
class MemoryRow:
    name: str
    estimated_gib: float | None
    reference_gb: float | None
    relative_error: float | None
    verdict: str  # PASS / FAIL / n/a / citation


def memory_table(specs: list[ArchSpec], tolerance: float = 0.10) -> list[MemoryRow]:
    """Estimate every row and compare against reference values where present."""
    if not specs:
        raise ConfigError("memory table needs at least one architecture")
    rows = []
    for spec in specs:
        if spec.multi_scale:
            rows.append(MemoryRow(spec.name, None, spec.reference_gb, None, "citation"))
            continue
        est = attention_bytes(spec) / GIB
        if spec.reference_gb is None:
            rows.append(MemoryRow(spec.name, est, None, None, "n/a"))
            continue
        rel = abs(est - spec.reference_gb) / spec.reference_gb
        verdict = "PASS" if rel <= tolerance else "FAIL"
        rows.append(MemoryRow(spec.name, est, spec.reference_gb, rel, verdict))
    return rows


# Published per-timestep attention footprints used as reference points.
REFERENCE_ARCHS: tuple[ArchSpec, ...] = (
    ArchSpec("Stable Diffusion", None, 32, 4, frames=1, reference_gb=7.0),
    ArchSpec("HunyuanDiT", (2, 4096, 4096), 80, 4, frames=1, reference_gb=10.0),
    ArchSpec("Zeroscope", None, 64, 4, frames=8, reference_gb=25.0),
    ArchSpec("HunyuanVideo", (1, 24, 11520, 11520), 48, 4, frames=41, reference_gb=612.0),
    ArchSpec("Wan2.1-14B", (1, 40, 11264, 11264), 40, 4, frames=41, reference_gb=794.0),
    ArchSpec("CogVideoX-5B", (2, 48, 11490, 11490), 40, 4, frames=41, reference_gb=1871.0),
)


class CallCounter(ConditionedModel):
    """Wraps a model and counts evaluations; batch calls count once."""

    def __init__(self, inner: ConditionedModel):
        self.inner = inner
        self.calls = 0
        self.rows = 0
        self.batch_sizes: list[int] = []

    def velocity(self, x, t, cond):
        self.calls += 1
        self.rows += 1
        self.batch_sizes.append(1)
        return self.inner.velocity(x, t, cond)

    def velocity_batch(self, xs, t, conds, ers=None, capture=()):
        self.calls += 1
        self.rows += len(xs)
        self.batch_sizes.append(len(xs))
        return self.inner.velocity_batch(xs, t, conds, ers=ers, capture=capture)

    def score(self, x, t, cond):
        return self.inner.score(x, t, cond)

    @property
    def has_score(self) -> bool:
        return self.inner.has_score

    def reset(self):
        self.calls = 0
        self.rows = 0
        self.batch_sizes = []


@dataclass(frozen=True)
class EfficiencyReport:
    model_calls_edit: int
    model_calls_sample: int
    rows_edit: int
    rows_sample: int
    wall_millis_edit: float
    wall_millis_sample: float
    peak_bytes_edit: int
    peak_bytes_sample: int

    @property
    def latency_ratio(self) -> float:
        return self.wall_millis_edit / self.wall_millis_sample

    @property
    def memory_ratio(self) -> float:
        return self.peak_bytes_edit / self.peak_bytes_sample


@dataclass
class RunHandle:
    """One instrumentable loop plus the configuration it was built from."""

    name: str
    fn: object  # callable(counter: CallCounter, ledger: GridLedger) -> None
    model: ConditionedModel
    sched: object
    geometry: tuple[int, ...]
    counter: CallCounter = field(init=False)
    ledger: GridLedger = field(init=False)

    def __post_init__(self):
        self.counter = CallCounter(self.model)
        self.ledger = GridLedger()

    def execute(self) -> float:
        self.counter.reset()
        self.ledger.reset()
        t0 = time.perf_counter()
        self.fn(self.counter, self.ledger)
        return (time.perf_counter() - t0) * 1000.0


def measure_efficiency(edit_run: RunHandle, sample_run: RunHandle,
                       repeats: int = 1) -> EfficiencyReport:
    """Run matched edit and sampling loops under instrumentation.

    With repeats > 1 each loop runs several times and the minimum wall time
    is kept (call counts must agree across repeats). Single-threaded timing
    is the caller's responsibility.
    """
    if edit_run.model is not sample_run.model:
        raise ConfigError("edit and sample runs must share one model")
    if edit_run.sched is not sample_run.sched:
        raise ConfigError("edit and sample runs must share one schedule")
    if edit_run.geometry != sample_run.geometry:
        raise ConfigError(
            f"geometry mismatch: {edit_run.geometry} vs {sample_run.geometry}"
        )
    edit_ms = min(edit_run.execute() for _ in range(repeats))
    sample_ms = min(sample_run.execute() for _ in range(repeats))
    return EfficiencyReport(
        model_calls_edit=edit_run.counter.calls,
        model_calls_sample=sample_run.counter.calls,
        rows_edit=edit_run.counter.rows,
        rows_sample=sample_run.counter.rows,
        wall_millis_edit=edit_ms,
        wall_millis_sample=sample_ms,
        peak_bytes_edit=edit_run.ledger.peak_bytes,
        peak_bytes_sample=sample_run.ledger.peak_bytes,
    )
