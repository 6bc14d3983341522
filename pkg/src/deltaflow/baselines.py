"""Baseline editors the delta-flow engine is contrasted against.

Both baselines consume the same conditioned models through their implied
noise predictions. The inversion editor runs a deterministic
noising-by-inversion pass under the source condition and then resamples
under the target condition; the stochastic-refinement editor iterates small
noise-prediction differences with a fresh random time draw per iteration,
which converges in expectation but with a seed-dependent iteration count.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, UnsupportedFamilyError
from .rng import NoiseStream
from .sampling import ConditionedModel
from .schedules import VP_SDE, Schedule, delta_beta, eps_from_velocity, forward_marginal

__all__ = ["predict_eps", "ddim_invert", "ddim_sample", "inversion_edit",
           "DDSResult", "dds_edit"]


def predict_eps(model: ConditionedModel, sched: Schedule, x: np.ndarray, t: float, cond):
    """Noise prediction from whatever the model natively exposes."""
    if hasattr(model, "eps_prediction"):
        return model.eps_prediction(x, t, cond)
    return eps_from_velocity(sched, x, t, model.velocity(x, t, cond))


def _require_vp(sched: Schedule, what: str) -> None:
    if sched.family != VP_SDE:
        raise UnsupportedFamilyError(f"{what} requires the vp-sde family")


def _ddim_coeffs(sched: Schedule, t_from: float, t_to: float) -> tuple[float, float]:
    """(scale, pred_coeff) for x_to = scale * (x_from + pred_coeff * eps_hat)."""
    ab_from = sched.alpha_bar(t_from)
    ab_to = sched.alpha_bar(t_to)
    scale = math.sqrt(ab_to) / math.sqrt(ab_from)
    pred_coeff = math.sqrt(ab_from) * delta_beta(ab_to, ab_from)
    return scale, pred_coeff


def ddim_sample(model: ConditionedModel, sched: Schedule, xT: np.ndarray, cond) -> np.ndarray:
    """Deterministic reverse pass T -> 0 driven by noise predictions."""
    _require_vp(sched, "ddim_sample")
    x = np.array(xT, dtype=np.float64, copy=True)
    grid = sched.grid
    for k in range(sched.steps):
        t, t_next = float(grid[k]), float(grid[k + 1])
        scale, coeff = _ddim_coeffs(sched, t, t_next)
        x = scale * (x + coeff * predict_eps(model, sched, x, t, cond))
    return x


def ddim_invert(model: ConditionedModel, sched: Schedule, z0: np.ndarray, cond,
                refine_iters: int = 1) -> np.ndarray:
    """Deterministic noising 0 -> T that the reverse pass undoes.

    Each upward step inverts the downward transition; the noise prediction
    at the (unknown) upper state is bootstrapped from the lower one and
    optionally refined by fixed-point iterations.
    """
    _require_vp(sched, "ddim_invert")
    x = np.array(z0, dtype=np.float64, copy=True)
    grid = sched.grid[::-1]  # ascending 0 ... T
    for k in range(sched.steps):
        t_lo, t_hi = float(grid[k]), float(grid[k + 1])
        # inverse of: x_lo = scale * (x_hi + coeff * eps_hat(x_hi, t_hi))
        scale, coeff = _ddim_coeffs(sched, t_hi, t_lo)
        eps_hat = predict_eps(model, sched, x, t_lo, cond)
        x_hi = x / scale - coeff * eps_hat
        for _ in range(refine_iters):
            x_hi = x / scale - coeff * predict_eps(model, sched, x_hi, t_hi, cond)
        x = x_hi
    return x


def inversion_edit(source: np.ndarray, c0, c1, model: ConditionedModel,
                   sched: Schedule, refine_iters: int = 1) -> np.ndarray:
    """Invert under the source condition, resample under the target one."""
    _require_vp(sched, "inversion_edit")
    xT = ddim_invert(model, sched, source, c0, refine_iters=refine_iters)
    return ddim_sample(model, sched, xT, c1)


@dataclass
class DDSResult:
    video: np.ndarray
    iterations: int
    converged: bool
    changes: list[float]  # per-iteration RMS latent change


def dds_edit(source: np.ndarray, c0, c1, model: ConditionedModel, sched: Schedule,
             stream: NoiseStream, step_size: float = 1.0, max_iters: int = 500,
             tol: float = 4e-3, t_range: tuple[float, float] = (0.02, 0.98),
             window: int = 3) -> DDSResult:
    """Stochastic latent refinement with paired noise-prediction deltas.

    Per iteration: draw (t, eps), noise both the current latent and the
    source with the same eps, and step along the difference of the target-
    and source-conditioned noise predictions. Stops when the RMS change
    stays below tol for ``window`` consecutive iterations (a single small
    change can just mean a low-signal time draw).
    """
    if step_size <= 0:
        raise ParameterError(f"step_size must be positive, got {step_size}")
    if not (0.0 <= t_range[0] < t_range[1] <= 1.0):
        raise ParameterError(f"invalid t_range {t_range}")
    source = np.asarray(source, dtype=np.float64)
    z = source.copy()
    changes: list[float] = []
    recent: deque[float] = deque(maxlen=window)
    n = z.size
    converged = False
    iterations = 0
    for i in range(max_iters):
        t = float(stream.uniform_at(2 * i, t_range[0] * sched.horizon,
                                    t_range[1] * sched.horizon, 1)[0])
        eps = stream.normal_at(2 * i + 1, z.shape)
        x_cur = forward_marginal(sched, z, t, eps)
        x_src = forward_marginal(sched, source, t, eps)
        delta = predict_eps(model, sched, x_cur, t, c1) - predict_eps(model, sched, x_src, t, c0)
        z = z - step_size * delta
        rms = float(np.sqrt(np.sum(delta * delta) / n)) * step_size
        changes.append(rms)
        recent.append(rms)
        iterations = i + 1
        if len(recent) == window and max(recent) < tol:
            converged = True
            break
    return DDSResult(video=z, iterations=iterations, converged=converged, changes=changes)
