import math

import numpy as np
import pytest

from deltaflow.errors import TimeDomainError, UnsupportedFamilyError
from deltaflow.rng import NoiseStream
from deltaflow.schedules import (
    FLOW_MATCHING,
    Schedule,
    delta_beta,
    eps_from_velocity,
    forward_marginal,
    velocity_from_score,
)


@pytest.fixture
def vp():
    return Schedule()


@pytest.fixture
def fm():
    return Schedule(family=FLOW_MATCHING)


def test_alpha_bar_endpoints(vp):
    assert vp.alpha_bar(0.0) == 1.0
    # hand integral of the linear rate: beta_min*t + (beta_max-beta_min)*t^2/2
    assert vp.alpha_bar(1.0) == pytest.approx(math.exp(-10.05), rel=1e-12)
    assert vp.alpha_bar(1.0) < 1e-4  # terminal state is essentially pure noise


def test_alpha_bar_domain_error(vp):
    with pytest.raises(TimeDomainError):
        vp.alpha_bar(-0.1)
    with pytest.raises(TimeDomainError):
        vp.alpha_bar(1.5)


def test_schedule_monotonicity(vp):
    alphas = [vp.alpha_bar(t) for t in vp.grid[::-1]]  # ascending times
    sigmas = [vp.sigma(t) for t in vp.grid[::-1]]
    assert all(a > b for a, b in zip(alphas, alphas[1:]))
    assert all(a < b for a, b in zip(sigmas, sigmas[1:]))


def test_grid_shape(vp):
    assert len(vp.grid) == vp.steps + 1
    assert vp.grid[0] == vp.horizon and vp.grid[-1] == 0.0


def test_forward_marginal_t0_bit_exact(vp):
    z0 = NoiseStream(1).normal((2, 3))
    eps = NoiseStream(2).normal((2, 3))
    out = forward_marginal(vp, z0, 0.0, eps)
    np.testing.assert_array_equal(out, z0)


def test_forward_marginal_fm_terminal_bit_exact(fm):
    z0 = NoiseStream(1).normal((4,))
    eps = NoiseStream(2).normal((4,))
    np.testing.assert_array_equal(forward_marginal(fm, z0, fm.horizon, eps), eps)


def test_forward_marginal_vp_plugin():
    # pick t where alpha_bar == 0.25 by inverting numerically
    sched = Schedule()
    lo, hi = 0.0, 1.0
    for _ in range(80):
        mid = (lo + hi) / 2
        lo, hi = (mid, hi) if sched.alpha_bar(mid) > 0.25 else (lo, mid)
    t = lo
    out = forward_marginal(sched, np.array([1.0]), t, np.array([0.0]))
    assert out[0] == pytest.approx(0.5, abs=1e-9)


def test_velocity_from_score_cases(vp):
    # standard-normal data: score = -x gives a stationary flow
    x = NoiseStream(3).normal((5,))
    np.testing.assert_allclose(velocity_from_score(vp, x, 0.5, -x), np.zeros(5), atol=1e-15)
    # plug-ins at beta(t) = 1 and 0.5
    t1 = (1.0 - vp.beta_min) / (vp.beta_max - vp.beta_min)
    assert vp.beta(t1) == pytest.approx(1.0)
    np.testing.assert_allclose(
        velocity_from_score(vp, np.array([2.0]), t1, np.array([0.0])), [-1.0], rtol=1e-12
    )
    t2 = (0.5 - vp.beta_min) / (vp.beta_max - vp.beta_min)
    np.testing.assert_allclose(
        velocity_from_score(vp, np.array([0.0]), t2, np.array([4.0])), [-1.0], rtol=1e-12
    )


def test_velocity_from_score_rejects_flow_matching(fm):
    with pytest.raises(UnsupportedFamilyError):
        velocity_from_score(fm, np.array([1.0]), 0.5, np.array([1.0]))


def test_delta_beta_hand_value():
    assert delta_beta(0.5, 0.25) == pytest.approx(1.0 - math.sqrt(3.0), rel=1e-12)


def test_eps_from_velocity_fm_roundtrip(fm):
    z0 = NoiseStream(4).normal((6,))
    eps = NoiseStream(5).normal((6,))
    t = 0.3
    x = forward_marginal(fm, z0, t, eps)
    v = (eps - z0) / fm.horizon
    np.testing.assert_allclose(eps_from_velocity(fm, x, t, v), eps, rtol=1e-10)


def test_degenerate_zero_beta_schedule_is_constructible():
    sched = Schedule(beta_min=0.0, beta_max=0.0)
    assert sched.beta(0.7) == 0.0
    assert sched.alpha_bar(0.7) == 1.0
