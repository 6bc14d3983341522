"""Reverse-time samplers over a shared velocity-field interface.

Both the deterministic transport sampler and the stochastic sampler walk the
schedule's descending time grid with explicit Euler steps, recording the
velocity at every step so the telescoping identity

    z_0 == z_T - sum_k dt_k * v_k

holds for the discrete trajectory by construction.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass

import numpy as np

from .errors import TimeDomainError
from .grids import require_same_shape
from .rng import NoiseStream
from .schedules import Schedule, score_from_velocity

__all__ = [
    "FlowSample",
    "Trajectory",
    "ConditionedModel",
    "euler_step",
    "sample_pf_ode",
    "sample_sde",
]


@dataclass(frozen=True)
class FlowSample:
    state: np.ndarray
    time: float


class ConditionedModel(abc.ABC):
    """Anything mapping (noised latent, time, condition) to a velocity.

    ``velocity_batch`` is the hook for backends that amortize several
    conditions in one evaluation (and can capture attention); the default
    just loops. ``score`` is optional and only available where the noised
    log-density is known in closed form.
    """

    @abc.abstractmethod
    def velocity(self, x: np.ndarray, t: float, cond) -> np.ndarray: ...

    def velocity_batch(self, xs, t: float, conds, ers=None, capture=()):
        del ers, capture  # backends without embeddings/attention ignore these
        return [self.velocity(x, t, c) for x, c in zip(xs, conds)], []

    def score(self, x: np.ndarray, t: float, cond) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no closed-form score")

    @property
    def has_score(self) -> bool:
        return type(self).score is not ConditionedModel.score


def euler_step(fs: FlowSample, v: np.ndarray, dt: float, horizon: float) -> FlowSample:
    """One reverse step: state' = state - dt * v, time' = time - dt."""
    require_same_shape(np.asarray(fs.state), np.asarray(v), "euler_step")
    new_time = fs.time - dt
    if not (-1e-12 <= new_time <= horizon + 1e-12):
        raise TimeDomainError(f"step lands at t={new_time}, outside [0, {horizon}]")
    if dt == 0.0:
        return FlowSample(fs.state, fs.time)
    return FlowSample(fs.state - dt * np.asarray(v), min(max(new_time, 0.0), horizon))


@dataclass
class Trajectory:
    """States at grid times t_N = T ... t_0 = 0 plus the velocity per step."""

    samples: list[FlowSample]
    velocities: list[np.ndarray]

    @property
    def final(self) -> np.ndarray:
        return self.samples[-1].state

    @property
    def times(self) -> list[float]:
        return [s.time for s in self.samples]

    def riemann_sum(self) -> np.ndarray:
        """sum_k dt_k * v_k, accumulated in step order."""
        total = np.zeros_like(self.samples[0].state)
        for k, v in enumerate(self.velocities):
            dt = self.samples[k].time - self.samples[k + 1].time
            total = total + dt * v
        return total


def sample_pf_ode(sched: Schedule, model: ConditionedModel, cond, zT: np.ndarray,
                  ledger=None) -> Trajectory:
    """Deterministic reverse transport from (zT, T) to (z0, 0)."""
    times = sched.grid
    cur = FlowSample(np.array(zT, dtype=np.float64, copy=True), float(times[0]))
    samples = [cur]
    velocities: list[np.ndarray] = []
    for k in range(sched.steps):
        t, t_next = float(times[k]), float(times[k + 1])
        v = model.velocity(cur.state, t, cond)
        velocities.append(v)
        cur = FlowSample(cur.state - (t - t_next) * v, t_next)
        samples.append(cur)
        if ledger is not None:
            ledger.observe(zT, cur.state, v)
    return Trajectory(samples, velocities)


def sample_sde(sched: Schedule, model: ConditionedModel, cond, zT: np.ndarray,
               stream: NoiseStream, ledger=None) -> Trajectory:
    """Stochastic reverse sampler (vp-sde).

    Realized as the deterministic step plus the score-proportional
    correction dt*(beta/2)*score and diffusion sqrt(beta*dt)*xi, which
    collapses bit-exactly onto the deterministic sampler when beta == 0.
    """
    times = sched.grid
    cur = FlowSample(np.array(zT, dtype=np.float64, copy=True), float(times[0]))
    samples = [cur]
    velocities: list[np.ndarray] = []
    for k in range(sched.steps):
        t, t_next = float(times[k]), float(times[k + 1])
        dt = t - t_next
        v = model.velocity(cur.state, t, cond)
        velocities.append(v)
        state = cur.state - dt * v
        beta_t = sched.beta(t)
        if beta_t > 0.0:
            if model.has_score:
                s = model.score(cur.state, t, cond)
            else:
                s = score_from_velocity(sched, cur.state, t, v)
            xi = stream.normal(cur.state.shape)
            state = state + dt * (beta_t / 2.0) * s + math.sqrt(beta_t * dt) * xi
        cur = FlowSample(state, t_next)
        samples.append(cur)
        if ledger is not None:
            ledger.observe(zT, cur.state, v)
    return Trajectory(samples, velocities)
