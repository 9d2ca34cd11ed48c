"""Dispatching policies: decision rules, estimate bookkeeping, update
schedules, and message accounting.

Message counting is pull-based: one message per status report, dispatch
decisions themselves are free.  JSQ(d) is the exception, paying 2d probe
messages per job at dispatch time.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .model import ModelParams


class PolicyKind(str, Enum):
    SUJSQ_DET = "sujsq-det"
    SUJSQ_EXP = "sujsq-exp"
    AUJSQ_DET = "aujsq-det"
    AUJSQ_EXP = "aujsq-exp"
    SUJSQ_DET_IDLE = "sujsq-det-idle"
    JIQ = "jiq"
    JIQ_P = "jiq-p"
    JSQ_D = "jsq-d"
    RANDOM = "random"
    ROUND_ROBIN = "round-robin"


# Kinds that keep a per-server queue estimate at the dispatcher.
ESTIMATE_KINDS = frozenset(
    {
        PolicyKind.SUJSQ_DET,
        PolicyKind.SUJSQ_EXP,
        PolicyKind.AUJSQ_DET,
        PolicyKind.AUJSQ_EXP,
        PolicyKind.SUJSQ_DET_IDLE,
    }
)
SYNC_KINDS = frozenset(
    {PolicyKind.SUJSQ_DET, PolicyKind.SUJSQ_EXP, PolicyKind.SUJSQ_DET_IDLE}
)
TOKEN_KINDS = frozenset({PolicyKind.JIQ, PolicyKind.JIQ_P})


@dataclass(frozen=True)
class PolicySpec:
    """Tagged policy selector.  Exactly the parameters required by the kind
    must be present: delta for estimate kinds, d for jsq-d, p for jiq-p."""

    kind: PolicyKind
    delta: float | None = None
    d: int | None = None
    p: float | None = None

    def __post_init__(self) -> None:
        k = self.kind
        if k in ESTIMATE_KINDS:
            if self.delta is None or not self.delta > 0.0:
                raise ValueError(f"{k.value} requires delta > 0")
            if self.d is not None or self.p is not None:
                raise ValueError(f"{k.value} takes no d/p parameter")
        elif k is PolicyKind.JSQ_D:
            if self.d is None or self.d < 1:
                raise ValueError("jsq-d requires an integer d >= 1")
            if self.delta is not None or self.p is not None:
                raise ValueError("jsq-d takes no delta/p parameter")
        elif k is PolicyKind.JIQ_P:
            if self.p is None or not 0.0 <= self.p <= 1.0:
                raise ValueError("jiq-p requires p in [0, 1]")
            if self.delta is not None or self.d is not None:
                raise ValueError("jiq-p takes no delta/d parameter")
        else:
            if self.delta is not None or self.d is not None or self.p is not None:
                raise ValueError(f"{k.value} takes no parameter")

    @property
    def uses_estimates(self) -> bool:
        return self.kind in ESTIMATE_KINDS

    @property
    def param(self) -> float | int | None:
        """The kind's own parameter (delta, d, or p), if any."""
        if self.kind in ESTIMATE_KINDS:
            return self.delta
        if self.kind is PolicyKind.JSQ_D:
            return self.d
        if self.kind is PolicyKind.JIQ_P:
            return self.p
        return None

    @classmethod
    def parse(cls, text: str) -> "PolicySpec":
        """Parse selector strings like "sujsq-det:0.85", "jsq-d:2", "jiq"."""
        name, sep, arg = text.strip().partition(":")
        try:
            kind = PolicyKind(name)
        except ValueError:
            raise ValueError(f"unknown policy kind {name!r}") from None
        if not sep:
            return cls(kind)
        if kind in ESTIMATE_KINDS:
            return cls(kind, delta=float(arg))
        if kind is PolicyKind.JSQ_D:
            return cls(kind, d=int(arg))
        if kind is PolicyKind.JIQ_P:
            return cls(kind, p=float(arg))
        raise ValueError(f"policy {name!r} takes no parameter, got {arg!r}")

    def __str__(self) -> str:
        if self.param is None:
            return self.kind.value
        return f"{self.kind.value}:{self.param:g}"

    def with_param(self, value: float) -> "PolicySpec":
        """Copy of this selector with its own parameter replaced by value."""
        if self.kind in ESTIMATE_KINDS:
            return PolicySpec(self.kind, delta=float(value))
        if self.kind is PolicyKind.JSQ_D:
            return PolicySpec(self.kind, d=int(value))
        if self.kind is PolicyKind.JIQ_P:
            return PolicySpec(self.kind, p=float(value))
        raise ValueError(f"{self.kind.value} takes no parameter")


class DispatcherView:
    """Dispatcher-side state owned by a single simulation: per-server queue
    estimates for the estimate-based kinds, idle tokens for JIQ kinds, and
    the round-robin cursor."""

    def __init__(self, spec: PolicySpec, n_servers: int):
        self.spec = spec
        self.n_servers = n_servers
        self.estimates: np.ndarray | None = (
            np.zeros(n_servers, dtype=np.int64) if spec.uses_estimates else None
        )
        self.idle_tokens: list[int] = []
        self.rr_counter = 0


def dispatch(
    spec: PolicySpec,
    view: DispatcherView,
    queues: np.ndarray,
    rng: np.random.Generator,
) -> tuple[int, int]:
    """Pick the target server for one arriving job.

    Returns (server index, messages incurred by the decision).
    """
    kind = spec.kind
    if kind in ESTIMATE_KINDS:
        est = view.estimates
        lowest = np.flatnonzero(est == est.min())
        if lowest.size == 1:
            return int(lowest[0]), 0
        return int(lowest[rng.integers(lowest.size)]), 0
    if kind in TOKEN_KINDS:
        tokens = view.idle_tokens
        if tokens:
            i = int(rng.integers(len(tokens)))
            tokens[i], tokens[-1] = tokens[-1], tokens[i]
            return tokens.pop(), 0
        return int(rng.integers(view.n_servers)), 0
    if kind is PolicyKind.JSQ_D:
        cand = rng.choice(view.n_servers, size=spec.d, replace=False)
        lens = np.asarray(queues)[cand]
        ties = cand[lens == lens.min()]
        if ties.size == 1:
            return int(ties[0]), 2 * spec.d
        return int(ties[rng.integers(ties.size)]), 2 * spec.d
    if kind is PolicyKind.RANDOM:
        return int(rng.integers(view.n_servers)), 0
    # round-robin: cyclic sweep over server indices
    server = view.rr_counter % view.n_servers
    view.rr_counter += 1
    return server, 0


def on_assign(view: DispatcherView, server: int) -> None:
    """Bookkeeping after a job is sent: bump the server's estimate."""
    if view.estimates is not None:
        view.estimates[server] += 1


def on_update(
    spec: PolicySpec, view: DispatcherView, server: int, true_len: int
) -> int:
    """Apply one server's status report; returns messages sent."""
    if spec.kind is PolicyKind.SUJSQ_DET_IDLE:
        if true_len == 0:
            view.estimates[server] = 0
            return 1
        return 0
    view.estimates[server] = true_len
    return 1


def apply_global_update(
    spec: PolicySpec, view: DispatcherView, queues: np.ndarray
) -> int:
    """Synchronous epoch: every server reports at once (idle variant: only
    the idle ones).  Returns messages sent."""
    if spec.kind is PolicyKind.SUJSQ_DET_IDLE:
        idle = queues == 0
        view.estimates[idle] = 0
        return int(idle.sum())
    view.estimates[:] = queues
    return view.n_servers


def on_idle(
    spec: PolicySpec, view: DispatcherView, server: int, rng: np.random.Generator
) -> int:
    """A server just drained its queue; JIQ kinds may emit a token."""
    if spec.kind is PolicyKind.JIQ:
        view.idle_tokens.append(server)
        return 1
    if spec.kind is PolicyKind.JIQ_P:
        # Degenerate p values skip the draw so that p=1 replays JIQ and p=0
        # replays Random under the same stream.
        if spec.p >= 1.0:
            view.idle_tokens.append(server)
            return 1
        if spec.p <= 0.0:
            return 0
        if rng.random() < spec.p:
            view.idle_tokens.append(server)
            return 1
        return 0
    return 0


def schedule_updates(spec: PolicySpec, params: ModelParams, rng: np.random.Generator):
    """Infinite stream of update events as (time, server) pairs; server is
    None for synchronous (all-at-once) epochs.

    sujsq-det / sujsq-det-idle: fixed epochs k/delta.
    sujsq-exp: global epochs with i.i.d. Exponential(delta) gaps.
    aujsq-det: per-server clocks with period 1/delta and independent
        uniform initial phases.
    aujsq-exp: per-server Poisson clocks of rate delta (generated as the
        superposed rate-N*delta stream with uniform server marks).
    """
    if not spec.uses_estimates:
        raise ValueError(f"{spec.kind.value} has no update schedule")
    delta = spec.delta
    n = params.n_servers
    if spec.kind in (PolicyKind.SUJSQ_DET, PolicyKind.SUJSQ_DET_IDLE):
        k = 1
        while True:
            yield k / delta, None
            k += 1
    elif spec.kind is PolicyKind.SUJSQ_EXP:
        t = 0.0
        while True:
            t += rng.exponential(1.0 / delta)
            yield t, None
    elif spec.kind is PolicyKind.AUJSQ_DET:
        clocks = [(rng.uniform(0.0, 1.0 / delta), s) for s in range(n)]
        heapq.heapify(clocks)
        while True:
            t, s = heapq.heappop(clocks)
            yield t, s
            heapq.heappush(clocks, (t + 1.0 / delta, s))
    else:  # AUJSQ_EXP
        t = 0.0
        while True:
            t += rng.exponential(1.0 / (delta * n))
            yield t, int(rng.integers(n))
