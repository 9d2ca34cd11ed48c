import numpy as np
import pytest

from sparselb.model import FluidState
from sparselb.fluid_async import (
    driver_of,
    integrate_async,
    rhs_async,
    update_capacity,
)
from sparselb.fixed_point import y_star


def test_driver_empty_state():
    y = np.zeros((4, 4))
    y[0, 0] = 1.0
    drv = driver_of(y, 0.7, 0.85)
    assert drv.n == 0
    assert drv.zeta == pytest.approx(0.7)
    assert drv.u[0] == 0.0


def test_driver_capacity_values():
    # all mass idle with estimate 3: u_k = delta * k for k <= 3
    y = np.zeros((6, 6))
    y[0, 3] = 1.0
    drv = driver_of(y, 0.7, 0.3)
    assert np.allclose(drv.u[:5], [0.0, 0.3, 0.6, 0.9, 1.2])
    # capacity below the minimum estimate exceeds lam, so the dispatch level
    # drops to the highest level whose capacity still fits under lam
    assert drv.n == 2
    assert drv.zeta == pytest.approx(0.7 - 0.6)


def test_driver_zeta_zero_at_capacity_boundary():
    # u_1 = delta * v_0 = lam exactly
    y = np.zeros((4, 4))
    y[0, 1] = 0.5
    y[1, 1] = 0.5
    drv = driver_of(y, 0.5, 1.0)
    assert drv.n == 1
    assert drv.zeta == pytest.approx(0.0, abs=1e-12)


def test_update_capacity_formula_on_random_states():
    rng = np.random.default_rng(23)
    for _ in range(20):
        v = rng.random(6)
        delta = rng.uniform(0.1, 3.0)
        u = update_capacity(v, delta)
        for k in range(len(v) + 1):
            direct = delta * sum((k - i) * v[i] for i in range(min(k, len(v))))
            assert u[k] == pytest.approx(direct, abs=1e-12)


def test_rhs_zero_at_fixed_point():
    for lam, delta in [(0.7, 0.85), (0.7, 2.5), (0.5, 1.0)]:
        fp = y_star(lam, delta)
        dy = rhs_async(fp.y_star.y, lam, delta)
        assert np.abs(dy).max() < 1e-8


def test_rhs_empty_state_flows_up():
    lam, delta = 0.7, 0.85
    y = np.zeros((4, 4))
    y[0, 0] = 1.0
    dy = rhs_async(y, lam, delta)
    assert dy[0, 0] == pytest.approx(-lam)
    assert dy[1, 1] == pytest.approx(lam)


def test_rhs_conserves_mass_on_random_states():
    rng = np.random.default_rng(29)
    for _ in range(25):
        y = np.triu(rng.random((7, 7)))
        y /= y.sum()
        assert rhs_async(y, 0.6, 0.9).sum() == pytest.approx(0.0, abs=1e-13)


def test_integration_reaches_fixed_point():
    for lam, delta in [(0.7, 0.85), (0.7, 2.5), (0.5, 1.0)]:
        fp = y_star(lam, delta, jmax=40)
        dt = min(1.0 / delta, 1.0) / 100
        run = integrate_async(
            FluidState.empty(40), lam, delta, 200.0, dt=dt, store_times=[200.0]
        )
        assert np.abs(run.final() - fp.y_star.y).max() < 1e-4


def test_fast_updates_leave_no_queueing():
    run = integrate_async(
        FluidState.empty(40), 0.7, 2.5, 200.0, dt=0.004, store_times=[200.0]
    )
    v = run.final().sum(axis=1)
    assert v[2] < 1e-6


def test_slow_updates_create_queueing():
    run = integrate_async(FluidState.empty(40), 0.7, 0.85, 10.0, dt=1e-3)
    v2 = np.array([s.sum(axis=1)[2] for s in run.states])
    w2 = np.array([s.sum(axis=0)[2] for s in run.states])
    assert v2.max() > 1e-3
    assert w2.max() > 1e-3


def test_zeta_bounded_along_trajectory():
    lam, delta = 0.7, 0.85
    run = integrate_async(FluidState.empty(40), lam, delta, 20.0, dt=1e-3)
    for y in run.states:
        drv = driver_of(y, lam, delta)
        assert -1e-12 <= drv.zeta <= lam + 1e-12


def test_min_level_follows_dispatch_level():
    # start with everyone idle but estimates stuck at 3: the dispatch level
    # drops below the minimum estimate and mass immediately builds there
    lam, delta = 0.7, 0.3
    y0 = np.zeros((41, 41))
    y0[0, 3] = 1.0
    drv0 = driver_of(y0, lam, delta)
    assert drv0.n == 2
    run = integrate_async(y0, lam, delta, 0.05, dt=1e-3, store_times=[0.01, 0.05])
    w = run.states[1].sum(axis=0)
    m_after = int(np.flatnonzero(w > 1e-9)[0])
    assert m_after <= drv0.n + 1


def test_stationary_support_is_bounded():
    from sparselb.fixed_point import m_star

    lam, delta = 0.7, 0.3
    run = integrate_async(
        FluidState.empty(58), lam, delta, 300.0, dt=5e-3, store_times=[300.0]
    )
    v = run.final().sum(axis=1)
    assert v[m_star(lam, delta) + 2 :].max() < 1e-6


def test_mass_and_positivity():
    run = integrate_async(FluidState.empty(40), 0.7, 0.85, 30.0, dt=1e-3)
    totals = run.states.sum(axis=(1, 2))
    assert np.abs(totals - 1.0).max() < 1e-9
    assert run.states.min() >= 0.0
