import math

import numpy as np
import pytest

from sparselb.fixed_point import (
    h_value,
    m_star,
    m_star_det,
    q_tilde,
    solve_nu,
    y_star,
)


def nu_quadratic_level1(lam, delta):
    """Independent oracle: with a single stationary level the idle-fraction
    equation reduces to a quadratic (1+nu)(delta+nu) = rhs."""
    a = 1.0 / (1.0 + delta)
    rhs = delta * delta / ((1.0 - lam) / (a * a) - 1.0)
    b = 1.0 + delta
    c = delta - rhs
    return (-b + math.sqrt(b * b - 4 * c)) / 2.0


def nu_quadratic_level0(lam, delta):
    """Independent oracle for the zero-level case."""
    a = 1.0 / (1.0 + delta)
    k = (1.0 - lam - a) / (a * a * delta * delta)
    qa = k
    qb = k * (1.0 + delta) - 1.0
    qc = k * delta - 1.0 - delta
    return (-qb + math.sqrt(qb * qb - 4.0 * qa * qc)) / (2.0 * qa)


def test_m_star_values():
    assert m_star(0.7, 0.85) == 1
    assert m_star(0.7, 2.5) == 0
    assert m_star(0.5, 1.0) == 1  # boundary: lam = 1 - (1+delta)^-1 exactly
    assert m_star(0.7, 0.3) == 4
    assert m_star(0.7, 0.05) == 24


def test_m_star_closed_form_agreement_grid():
    lams = np.linspace(0.07, 0.93, 10)
    deltas = np.linspace(0.11, 3.41, 10)
    for lam in lams:
        for delta in deltas:
            scan = m_star(lam, delta)
            closed = math.floor(-math.log1p(-lam) / math.log1p(delta))
            assert scan == closed


def test_m_star_zero_iff_fast_updates():
    for lam in (0.3, 0.5, 0.7, 0.9):
        thresh = lam / (1 - lam)
        assert m_star(lam, thresh * 1.001) == 0
        assert m_star(lam, thresh * 0.999) >= 1


def test_solve_nu_against_quadratic_oracles():
    # frozen oracle values recomputed here from the quadratics
    nu1 = nu_quadratic_level1(0.7, 0.85)
    assert nu1 == pytest.approx(4.272592788435048, abs=1e-9)
    assert solve_nu(0.7, 0.85, 1) == pytest.approx(nu1, abs=1e-9)

    nu0 = nu_quadratic_level0(0.7, 2.5)
    assert nu0 == pytest.approx(35.65042945434554, abs=1e-9)
    assert solve_nu(0.7, 2.5, 0) == pytest.approx(nu0, abs=1e-9)


def test_solve_nu_boundary_case_is_zero():
    assert solve_nu(0.5, 1.0, 1) == 0.0


def test_h_is_decreasing_with_stated_limits():
    for lam, delta in [(0.7, 0.85), (0.6, 0.4), (0.9, 1.7)]:
        m = m_star(lam, delta)
        a = 1.0 / (1.0 + delta)
        grid = np.linspace(0.0, 50.0, 200)
        vals = [h_value(nu, lam, delta, m) for nu in grid]
        assert all(x > y for x, y in zip(vals, vals[1:]))
        assert vals[0] == pytest.approx(a**m, abs=1e-12)
        assert h_value(1e9, lam, delta, m) == pytest.approx(a ** (m + 1), rel=1e-6)


def test_y_star_boundary_case_entries():
    fp = y_star(0.5, 1.0)
    y = fp.y_star.y
    assert fp.nu == 0.0
    assert y[0, 1] == pytest.approx(0.5)
    assert y[1, 1] == pytest.approx(0.5)
    assert np.abs(y[:, 2]).max() == 0.0  # second column empty in this case


def test_y_star_idle_fraction_and_normalization():
    for lam, delta in [(0.7, 0.85), (0.7, 2.5), (0.3, 0.2), (0.9, 1.0)]:
        fp = y_star(lam, delta)
        y = fp.y_star.y
        assert y.sum() == pytest.approx(1.0, abs=1e-12)
        idle = y[0, fp.m_star] + y[0, fp.m_star + 1]
        assert idle == pytest.approx(1.0 - lam, abs=1e-10)
        # support confined to the two stationary columns
        mask = np.ones(y.shape[1], dtype=bool)
        mask[[fp.m_star, fp.m_star + 1]] = False
        assert np.abs(y[:, mask]).max() == 0.0
        assert fp.residual < 1e-8


def test_q_tilde_values():
    assert y_star(0.5, 1.0).q_tilde == pytest.approx(0.5, abs=1e-12)
    # frozen oracle values (nu from the quadratics above)
    assert y_star(0.7, 0.85).q_tilde == pytest.approx(1.072318373869227, abs=1e-9)
    assert y_star(0.7, 2.5).q_tilde == pytest.approx(0.7, abs=1e-9)


def test_q_tilde_matches_moment_sum():
    for lam, delta in [(0.7, 0.85), (0.7, 2.5), (0.4, 0.15), (0.9, 0.6)]:
        fp = y_star(lam, delta)
        v = fp.y_star.y.sum(axis=1)
        moment = float(np.dot(np.arange(len(v)), v))
        assert fp.q_tilde == pytest.approx(moment, abs=1e-10)


def test_q_tilde_bounds_and_monotonicity():
    for lam, delta in [(0.7, 0.85), (0.7, 0.3), (0.5, 0.2)]:
        fp = y_star(lam, delta)
        assert fp.m_star - lam / delta - 1e-12 <= fp.q_tilde
        assert fp.q_tilde <= fp.m_star + 1 - lam / delta + 1e-12
    assert y_star(0.7, 0.05).q_tilde > y_star(0.7, 0.1).q_tilde
    # strictly decreasing while queueing persists, then saturated at lam
    # (every queue holds 0 or 1 jobs, so the mean equals the utilization)
    deltas = np.linspace(0.1, 3.0, 25)
    q_vals = [y_star(0.7, d).q_tilde for d in deltas]
    assert all(a >= b - 1e-9 for a, b in zip(q_vals, q_vals[1:]))
    below = [q for d, q in zip(deltas, q_vals) if d < 0.7 / 0.3]
    assert all(a > b for a, b in zip(below, below[1:]))
    assert y_star(0.7, 3.0).q_tilde == pytest.approx(0.7, abs=1e-9)


def test_m_star_det_values_and_dominance():
    assert m_star_det(0.7, 0.85) == 1
    assert m_star_det(0.7, 2.5) == 0
    assert m_star_det(0.7, 0.3) == 2
    for lam in (0.3, 0.5, 0.7, 0.9):
        for delta in (0.1, 0.5, 1.0, 2.5):
            assert m_star_det(lam, delta) <= m_star(lam, delta)


def test_m_star_det_level1_feasibility():
    # level 1 is feasible exactly when 1 - e^{-1/delta} <= lam/delta
    for lam, delta in [(0.7, 0.85), (0.2, 0.5), (0.9, 3.0)]:
        feasible = 1.0 - math.exp(-1.0 / delta) <= lam / delta
        assert (m_star_det(lam, delta) >= 1) == feasible
