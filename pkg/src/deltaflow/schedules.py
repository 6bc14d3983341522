"""Noise schedules and the shared forward / velocity conventions.

Two families are supported on one continuous time axis t in [0, T]:

* ``vp-sde``: linear rate b(t) = beta_min + (beta_max - beta_min) * t / T,
  signal decay abar(t) = exp(-(beta_min*t + (beta_max - beta_min)*t^2/(2T))),
  noise-to-signal sigma(t) = sqrt((1 - abar) / abar). The forward marginal is
  x_t = sqrt(abar)*z0 + sqrt(1-abar)*eps and the deterministic transport
  velocity for a score s is v = -(b/2) * (x + s).
* ``flow-matching``: straight-path mixing a(t) = 1 - t/T toward a standard
  normal at t = T; models in this family emit velocity directly.

Time convention throughout the package: t = 0 is clean data, t = T is pure
noise, and sampling integrates the time grid downward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ParameterError,
    TimeDomainError,
    UnsupportedFamilyError,
)
from .grids import require_same_shape

VP_SDE = "vp-sde"
FLOW_MATCHING = "flow-matching"
FAMILIES = (VP_SDE, FLOW_MATCHING)

# slack for grid times produced by floating-point arithmetic
_TIME_EPS = 1e-12

__all__ = [
    "Schedule",
    "forward_marginal",
    "velocity_from_score",
    "score_from_velocity",
    "eps_from_velocity",
    "delta_beta",
    "VP_SDE",
    "FLOW_MATCHING",
]


@dataclass(frozen=True)
class Schedule:
    family: str = VP_SDE
    beta_min: float = 0.1
    beta_max: float = 20.0
    horizon: float = 1.0
    steps: int = 50
    grid: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise UnsupportedFamilyError(f"unknown family {self.family!r}")
        if self.horizon <= 0:
            raise ParameterError(f"horizon must be positive, got {self.horizon}")
        if self.steps < 1:
            raise ParameterError(f"steps must be >= 1, got {self.steps}")
        if self.beta_min < 0 or self.beta_max < self.beta_min:
            # beta == 0 throughout is tolerated as a degenerate test schedule
            raise ParameterError(
                f"need 0 <= beta_min <= beta_max, got ({self.beta_min}, {self.beta_max})"
            )
        # descending uniform grid t_N = T ... t_0 = 0
        object.__setattr__(
            self, "grid", np.linspace(self.horizon, 0.0, self.steps + 1)
        )

    # -- time helpers -----------------------------------------------------
    def check_time(self, t: float) -> float:
        if not (-_TIME_EPS <= t <= self.horizon + _TIME_EPS):
            raise TimeDomainError(f"t={t} outside [0, {self.horizon}]")
        return min(max(t, 0.0), self.horizon)

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    # -- vp-sde quantities --------------------------------------------------
    def beta(self, t: float) -> float:
        self._require(VP_SDE, "beta(t)")
        t = self.check_time(t)
        return self.beta_min + (self.beta_max - self.beta_min) * t / self.horizon

    def alpha_bar(self, t: float) -> float:
        """exp of the negative accumulated rate; 1 at t=0, ~0 at t=T."""
        self._require(VP_SDE, "alpha_bar(t)")
        t = self.check_time(t)
        integral = self.beta_min * t + (self.beta_max - self.beta_min) * t * t / (
            2.0 * self.horizon
        )
        return math.exp(-integral)

    def sigma(self, t: float) -> float:
        """Noise-to-signal ratio sqrt((1 - abar)/abar); 0 at t=0."""
        ab = self.alpha_bar(t)
        return math.sqrt((1.0 - ab) / ab)

    # -- family-agnostic mixing -------------------------------------------
    def mixing(self, t: float) -> tuple[float, float]:
        """(a, b) with x_t = a*z0 + b*eps."""
        t = self.check_time(t)
        if self.family == VP_SDE:
            ab = self.alpha_bar(t)
            return math.sqrt(ab), math.sqrt(1.0 - ab)
        return 1.0 - t / self.horizon, t / self.horizon

    def _require(self, family: str, what: str) -> None:
        if self.family != family:
            raise UnsupportedFamilyError(f"{what} undefined for family {self.family!r}")


def forward_marginal(sched: Schedule, z0: np.ndarray, t: float, eps: np.ndarray) -> np.ndarray:
    """Transport a clean grid to time t with explicit noise eps."""
    require_same_shape(np.asarray(z0), np.asarray(eps), "forward_marginal")
    a, b = sched.mixing(t)
    if b == 0.0:
        return np.array(z0, dtype=np.float64, copy=True)
    if a == 0.0:
        return np.array(eps, dtype=np.float64, copy=True)
    return a * np.asarray(z0, dtype=np.float64) + b * np.asarray(eps, dtype=np.float64)


def velocity_from_score(sched: Schedule, x: np.ndarray, t: float, score: np.ndarray) -> np.ndarray:
    """Deterministic transport velocity -(beta/2)(x + score) for vp-sde."""
    require_same_shape(np.asarray(x), np.asarray(score), "velocity_from_score")
    b = sched.beta(t)  # raises for flow-matching
    return -(b / 2.0) * (np.asarray(x, dtype=np.float64) + np.asarray(score, dtype=np.float64))


def score_from_velocity(sched: Schedule, x: np.ndarray, t: float, v: np.ndarray) -> np.ndarray:
    """Invert velocity_from_score; requires beta(t) > 0."""
    b = sched.beta(t)
    if b == 0.0:
        raise ParameterError(f"beta({t}) = 0, score not recoverable from velocity")
    return -(2.0 / b) * np.asarray(v, dtype=np.float64) - np.asarray(x, dtype=np.float64)


def eps_from_velocity(sched: Schedule, x: np.ndarray, t: float, v: np.ndarray) -> np.ndarray:
    """Noise prediction implied by a velocity at (x, t), for either family."""
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if sched.family == FLOW_MATCHING:
        # x = (1-t/T) z0 + (t/T) eps, v = (eps - z0)/T  =>  eps = x + (T-t) v
        return x + (sched.horizon - sched.check_time(t)) * v
    score = score_from_velocity(sched, x, t, v)
    ab = sched.alpha_bar(t)
    return -math.sqrt(1.0 - ab) * score


def delta_beta(alpha_prev: float, alpha_cur: float) -> float:
    """Noise-scale step sigma(prev) - sigma(cur) from the two signal decays."""
    if not (0.0 < alpha_prev <= 1.0) or not (0.0 < alpha_cur <= 1.0):
        raise ParameterError("alpha values must lie in (0, 1]")
    return math.sqrt((1.0 - alpha_prev) / alpha_prev) - math.sqrt((1.0 - alpha_cur) / alpha_cur)
