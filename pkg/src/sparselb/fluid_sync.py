"""Fluid limit under synchronized status updates.

Between epochs the occupancy fractions follow a piecewise-smooth ODE whose
assignment flux targets the minimum estimate level; at each epoch every
column collapses onto the diagonal (estimates snap to true queue lengths).
The module also carries the Poisson drain quantities A/B, the queue-length
bound scan, and trajectory-level consistency checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import (
    FluidState,
    check_truncation,
    min_estimate_level,
)

# An estimate level counts as occupied above this mass; the step bisection
# at level switches drives the depleting column to within it of zero.
SWITCH_TOL = 1e-10


class IntegrationError(RuntimeError):
    pass


def rhs_sync(y: np.ndarray | FluidState, lam: float) -> np.ndarray:
    """Time derivative of the occupancy array between update epochs.

    Service moves mass (i, j) -> (i-1, j); arrivals move mass
    (i, m) -> (i+1, m+1) at total rate lam, spread over the minimum
    occupied estimate level m proportionally to its queue composition.
    """
    if isinstance(y, FluidState):
        y = y.y
    w = y.sum(axis=0)
    m = min_estimate_level(w, SWITCH_TOL)
    dy = np.zeros_like(y)
    dy[:-1, :] += y[1:, :]
    dy[1:, :] -= y[1:, :]
    arr = y[:, m] / w[m]  # assignment split over level m
    dy[:, m] -= lam * arr
    if m + 1 < y.shape[1]:
        dy[1:, m + 1] += lam * arr[:-1]
    return dy


def apply_sync_update(y: np.ndarray | FluidState) -> np.ndarray:
    """Epoch jump: every estimate snaps to the true queue length, so each
    row collapses onto the diagonal.  Queue-length marginals are untouched."""
    if isinstance(y, FluidState):
        y = y.y
    out = np.zeros_like(y)
    np.fill_diagonal(out, y.sum(axis=1))
    return out


@dataclass
class SyncFluidRun:
    """Stored trajectory: states are right-continuous (post-jump at epochs);
    pre_update_states holds the left limits at each applied epoch."""

    times: np.ndarray
    states: np.ndarray
    update_epochs: np.ndarray
    pre_update_states: np.ndarray
    lam: float
    clamped: float = 0.0

    def state(self, idx: int) -> FluidState:
        return FluidState(self.states[idx])

    def at_time(self, t: float) -> np.ndarray:
        idx = int(np.argmin(np.abs(self.times - t)))
        return self.states[idx]


def _rk4(y: np.ndarray, h: float, lam: float) -> np.ndarray:
    k1 = rhs_sync(y, lam)
    k2 = rhs_sync(y + 0.5 * h * k1, lam)
    k3 = rhs_sync(y + 0.5 * h * k2, lam)
    k4 = rhs_sync(y + h * k3, lam)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def split_step_at_switch(step, y: np.ndarray, h: float, m: int):
    """Bisect a step length onto the point where column m drains to zero.

    The depleting column shrinks linearly, so bisection converges fast.
    Only endpoints with the column mass in [0, SWITCH_TOL] are accepted; a
    negative landing would leave negative entries behind.
    """
    lo, hi = 0.0, h
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        y_mid = step(y, mid)
        wm = y_mid[:, m].sum()
        if -1e-13 <= wm <= SWITCH_TOL:
            return mid, y_mid
        if wm > 0.0:
            lo = mid
        else:
            hi = mid
    raise IntegrationError("switch-point bisection did not converge")


def _advance(y: np.ndarray, span: float, dt: float, lam: float) -> np.ndarray:
    """Integrate over a span containing no epochs, splitting steps exactly
    at minimum-estimate switch points (where the lowest occupied column
    hits zero mass)."""
    remaining = span
    while remaining > 1e-14:
        m = min_estimate_level(y.sum(axis=0), SWITCH_TOL)
        h = min(dt, remaining)
        y_new = _rk4(y, h, lam)
        if y_new[:, m].sum() < -1e-13:
            h, y_new = split_step_at_switch(lambda z, hh: _rk4(z, hh, lam), y, h, m)
        y = y_new
        remaining -= h
    return y


def _merge_marks(
    t_end: float, epochs: np.ndarray, store_times: np.ndarray
) -> list[tuple[float, bool, bool]]:
    """Sorted (time, is_epoch, is_store) marks, merging near-equal times."""
    marks: dict[float, list[bool]] = {}
    eps = 1e-12 * max(1.0, t_end)

    def _put(t: float, epoch: bool, store: bool) -> None:
        for known in marks:
            if abs(known - t) <= eps:
                marks[known][0] |= epoch
                marks[known][1] |= store
                return
        marks[t] = [epoch, store]

    for t in epochs:
        _put(float(t), True, False)
    for t in store_times:
        _put(float(t), False, True)
    _put(t_end, False, True)
    return sorted((t, e, s) for t, (e, s) in marks.items() if 0.0 < t <= t_end + eps)


def integrate_sync(
    y0: FluidState | np.ndarray,
    lam: float,
    delta: float,
    t_end: float,
    dt: float | None = None,
    epochs: np.ndarray | None = None,
    store_times: np.ndarray | None = None,
) -> SyncFluidRun:
    """Integrate the synchronous fluid limit on [0, t_end].

    Update epochs default to k/delta (deterministic schedule); pass an
    explicit epoch array for exponentially spaced epochs.  Classic fixed-step
    4th-order integration, split exactly at epochs, stored grid points, and
    estimate-level switches.
    """
    y = np.array(y0.y if isinstance(y0, FluidState) else y0, dtype=float)
    period = 1.0 / delta
    if dt is None:
        dt = min(period, 1.0) / 1000.0
    if dt > min(period, 1.0) / 100.0:
        raise ValueError("dt too coarse: need dt <= min(1/delta, 1)/100")
    if epochs is None:
        epochs = np.arange(1, math.floor(t_end / period + 1e-12) + 1) * period
    else:
        epochs = np.asarray(sorted(t for t in epochs if 0.0 < t <= t_end))
    if store_times is None:
        store_times = np.linspace(0.0, t_end, 1001)
    marks = _merge_marks(t_end, epochs, np.asarray(store_times, dtype=float))

    times = [0.0]
    states = [y.copy()]
    epoch_times: list[float] = []
    pre_states: list[np.ndarray] = []
    clamped = 0.0
    t = 0.0
    for t_next, is_epoch, _ in marks:
        y = _advance(y, t_next - t, dt, lam)
        low = y.min()
        if low < 0.0:
            if low < -1e-12:
                raise IntegrationError(f"state entry fell to {low}")
            clamped = max(clamped, -low)
            y = np.maximum(y, 0.0)
        check_truncation(y)
        if is_epoch:
            epoch_times.append(t_next)
            pre_states.append(y.copy())
            y = apply_sync_update(y)
        times.append(t_next)
        states.append(y.copy())
        t = t_next
    return SyncFluidRun(
        times=np.asarray(times),
        states=np.asarray(states),
        update_epochs=np.asarray(epoch_times),
        pre_update_states=np.asarray(pre_states) if pre_states else np.zeros((0,) + y.shape),
        lam=lam,
        clamped=clamped,
    )


# ---------------------------------------------------------------------------
# Poisson drain quantities and the queue-length bound scan.


@dataclass(frozen=True)
class PoissonMoments:
    """For a queue of L unit-rate jobs left alone for time t: pmf of the
    number of potential completions G ~ Poisson(t), expected remaining work
    A = E[max(L - G, 0)], expected completions B = E[min(G, L)] = L - A."""

    level: int
    t: float
    pmf: np.ndarray
    a: float
    b: float


def poisson_ab(level: int, t: float) -> PoissonMoments:
    """Direct pmf computation of A and B (B derived via A + B = L)."""
    if level < 0 or t < 0.0:
        raise ValueError("need level >= 0 and t >= 0")
    pmf = np.empty(level + 1)
    pmf[0] = math.exp(-t)
    for l in range(level):
        pmf[l + 1] = pmf[l] * t / (l + 1)
    a = float(np.dot(level - np.arange(level + 1), pmf))
    return PoissonMoments(level=level, t=t, pmf=pmf, a=a, b=level - a)


def sigma(level: int, lam: float, t_period: float) -> float:
    """Drain margin of level: the expected completions B(level, T) scaled
    down by the relative headroom, compared against lam*T elsewhere."""
    return (1.0 - (lam * t_period + 1.0) / level) * poisson_ab(level, t_period).b


@dataclass(frozen=True)
class SyncAnalysis:
    """Queue-length bound for the synchronous scheme: s_star is the lowest
    level whose drain margin beats the per-epoch arrival volume."""

    lam: float
    t_period: float
    s_star: int
    delta_margin: float
    sigma_values: np.ndarray  # sigma at levels 1..s_star


def queue_bound(lam: float, t_period: float) -> SyncAnalysis:
    """Scan L = 1, 2, ... for the first level with lam*T < sigma(L)."""
    if not 0.0 < lam < 1.0 or not t_period > 0.0:
        raise ValueError("need 0 < lam < 1 and T > 0")
    target = lam * t_period
    sigmas = []
    level = 0
    while True:
        level += 1
        val = sigma(level, lam, t_period)
        sigmas.append(val)
        if target < val:
            return SyncAnalysis(
                lam=lam,
                t_period=t_period,
                s_star=level,
                delta_margin=val - target,
                sigma_values=np.asarray(sigmas),
            )
        if level > 100000:
            raise IntegrationError("queue-bound scan failed to terminate")


# ---------------------------------------------------------------------------
# Trajectory-level consistency checks.


@dataclass
class CheckReport:
    """Named residuals from trajectory checks; a check passes when its
    residual stays within tolerance."""

    residuals: dict[str, float] = field(default_factory=dict)
    tolerances: dict[str, float] = field(default_factory=dict)

    def record(self, name: str, residual: float, tol: float) -> None:
        self.residuals[name] = max(residual, self.residuals.get(name, 0.0))
        self.tolerances[name] = tol

    @property
    def violations(self) -> dict[str, float]:
        return {
            k: r for k, r in self.residuals.items() if r > self.tolerances[k]
        }

    @property
    def passed(self) -> bool:
        return not self.violations


def check_trajectory_invariants(
    run: SyncFluidRun,
    slope_tol: float = 1e-3,
    monotone_tol: float = 1e-9,
    balance_tol: float = 1e-5,
    mass_tol: float = 1e-9,
) -> CheckReport:
    """Verify structural facts of a stored synchronous trajectory:

    - mass conservation at every stored state;
    - between epochs the minimum-estimate column drains at slope -lam and
      the next column fills at +lam;
    - the queue mass above K never increases while the minimum estimate
      stays below K;
    - the terminal queue mass balances arrivals minus integrated busy
      fraction.
    """
    report = CheckReport()
    times, states = run.times, run.states
    lam = run.lam

    totals = states.sum(axis=(1, 2))
    report.record("mass_conservation", float(np.abs(totals - 1.0).max()), mass_tol)

    epoch_set = set(np.round(run.update_epochs, 12))
    n_levels = states.shape[2]
    v_all = states.sum(axis=2)
    w_all = states.sum(axis=1)
    m_all = np.array([min_estimate_level(w, SWITCH_TOL) for w in w_all])
    idx_lv = np.arange(n_levels)

    for k in range(len(times) - 1):
        t0, t1 = times[k], times[k + 1]
        h = t1 - t0
        if h <= 1e-12 or round(t1, 12) in epoch_set or round(t0, 12) in epoch_set:
            continue
        if m_all[k] != m_all[k + 1]:
            continue  # slope checks only apply away from level switches
        m = m_all[k]
        dw_m = (w_all[k + 1, m] - w_all[k, m]) / h
        report.record("min_level_drain_slope", abs(dw_m + lam), slope_tol)
        if m + 1 < n_levels:
            dw_up = (w_all[k + 1, m + 1] - w_all[k, m + 1]) / h
            report.record("next_level_fill_slope", abs(dw_up - lam), slope_tol)

    # Tail-mass monotonicity while the minimum estimate sits below K.
    q_gt = {}
    max_support = int(np.max(np.nonzero(v_all.sum(axis=0) > 1e-12))) if v_all.any() else 0
    for level in range(1, max_support + 2):
        above = idx_lv > level
        q_gt[level] = v_all[:, above] @ (idx_lv[above] - level)
    for k in range(len(times) - 1):
        if times[k + 1] - times[k] <= 1e-12:
            continue
        for level in q_gt:
            if m_all[k] <= level - 1 and m_all[k + 1] <= level - 1:
                rise = q_gt[level][k + 1] - q_gt[level][k]
                report.record("tail_mass_monotone", max(rise, 0.0), monotone_tol)

    # Arrival/departure balance: Q(t_end) = Q(0) + lam*t_end - int(1 - v0).
    q_mass = v_all @ idx_lv
    busy = 1.0 - v_all[:, 0]
    integral = float(np.trapezoid(busy, times))
    balance = q_mass[-1] - (q_mass[0] + lam * times[-1] - integral)
    report.record("queue_balance", abs(balance), balance_tol)
    return report
