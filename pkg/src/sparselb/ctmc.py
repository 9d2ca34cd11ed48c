"""Exact stationary analysis of the small-N Markov models.

Only the exponential-update variants are Markovian on the occupancy state.
Server exchangeability reduces the state to occupancy counts over
(queue, estimate) pairs; arrivals that would push the minimum estimate past
the cap are rejected and their rate recorded as truncation loss.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelParams
from .policies import PolicyKind, PolicySpec

MAX_STATES = 50000


class ChainError(RuntimeError):
    pass


State = tuple[int, ...]  # counts over enumerated (i, j) pairs


@dataclass
class TruncatedChain:
    cap: int
    pairs: list[tuple[int, int]]
    pair_index: dict[tuple[int, int], int]
    states: list[State]
    state_index: dict[State, int]
    generator: np.ndarray
    truncation_rates: np.ndarray
    params: ModelParams
    policy: PolicySpec

    @property
    def n_states(self) -> int:
        return len(self.states)


def _enumerate_pairs(cap: int) -> list[tuple[int, int]]:
    return [(i, j) for j in range(cap + 1) for i in range(j + 1)]


def _transitions(
    state: State,
    pairs: list[tuple[int, int]],
    pair_index: dict[tuple[int, int], int],
    params: ModelParams,
    policy: PolicySpec,
    cap: int,
) -> tuple[list[tuple[State, float]], float]:
    """Outgoing (state, rate) list plus the rejected-arrival rate."""
    lam_total = params.lam * params.n_servers
    delta = params.delta
    moves: list[tuple[State, float]] = []
    trunc = 0.0

    def moved(src: int, dst: int) -> State:
        nxt = list(state)
        nxt[src] -= 1
        nxt[dst] += 1
        return tuple(nxt)

    # Arrivals: uniformly random server among those at the minimum estimate.
    w = {}
    for idx, c in enumerate(state):
        if c:
            _, j = pairs[idx]
            w[j] = w.get(j, 0) + c
    m = min(w)
    if m >= cap:
        trunc += lam_total
    else:
        for idx, c in enumerate(state):
            i, j = pairs[idx]
            if c and j == m:
                rate = lam_total * c / w[m]
                moves.append((moved(idx, pair_index[(i + 1, j + 1)]), rate))

    # Services: each busy server completes at unit rate.
    for idx, c in enumerate(state):
        i, j = pairs[idx]
        if c and i >= 1:
            moves.append((moved(idx, pair_index[(i - 1, j)]), float(c)))

    # Updates.
    if policy.kind is PolicyKind.AUJSQ_EXP:
        for idx, c in enumerate(state):
            i, j = pairs[idx]
            if c and j > i:
                moves.append((moved(idx, pair_index[(i, i)]), delta * c))
    else:  # SUJSQ_EXP: one global collapse at rate delta
        collapsed = [0] * len(state)
        for idx, c in enumerate(state):
            i, _ = pairs[idx]
            collapsed[pair_index[(i, i)]] += c
        collapsed = tuple(collapsed)
        if collapsed != state:
            moves.append((collapsed, delta))
    return moves, trunc


def build_generator(
    params: ModelParams, policy: PolicySpec, cap: int
) -> TruncatedChain:
    """Enumerate reachable occupancy states from the all-idle start and
    assemble the dense rate matrix."""
    if policy.kind not in (PolicyKind.AUJSQ_EXP, PolicyKind.SUJSQ_EXP):
        raise ChainError(
            "only exponential-update kinds are Markovian on this state space"
        )
    if params.delta is None:
        raise ChainError("params.delta is required")
    pairs = _enumerate_pairs(cap)
    pair_index = {p: k for k, p in enumerate(pairs)}
    init = [0] * len(pairs)
    init[pair_index[(0, 0)]] = params.n_servers
    init = tuple(init)

    states: list[State] = [init]
    state_index: dict[State, int] = {init: 0}
    edges: list[tuple[int, int, float]] = []
    trunc_rates: list[float] = []
    frontier = [init]
    while frontier:
        nxt_frontier = []
        for s in frontier:
            moves, trunc = _transitions(s, pairs, pair_index, params, policy, cap)
            si = state_index[s]
            while len(trunc_rates) <= si:
                trunc_rates.append(0.0)
            trunc_rates[si] = trunc
            for target, rate in moves:
                if target not in state_index:
                    if len(states) >= MAX_STATES:
                        raise ChainError(
                            f"state space exceeds budget of {MAX_STATES}"
                        )
                    state_index[target] = len(states)
                    states.append(target)
                    nxt_frontier.append(target)
                edges.append((si, state_index[target], rate))
        frontier = nxt_frontier

    n = len(states)
    gen = np.zeros((n, n))
    for a, b, rate in edges:
        gen[a, b] += rate
    np.fill_diagonal(gen, gen.diagonal() - gen.sum(axis=1))
    return TruncatedChain(
        cap=cap,
        pairs=pairs,
        pair_index=pair_index,
        states=states,
        state_index=state_index,
        generator=gen,
        truncation_rates=np.asarray(trunc_rates),
        params=params,
        policy=policy,
    )


def stationary(chain: TruncatedChain) -> np.ndarray:
    """Solve pi G = 0, sum(pi) = 1 by a dense linear solve."""
    gen = chain.generator
    n = gen.shape[0]
    a = gen.T.copy()
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        sinks = [k for k in range(n) if gen[k].max() <= 0.0 and gen[k, k] == 0.0]
        raise ChainError(
            f"singular or reducible chain; absorbing states: {sinks}"
        ) from None
    if pi.min() < -1e-10:
        raise ChainError(f"stationary solve produced pi_min={pi.min()}")
    pi = np.maximum(pi, 0.0)
    pi /= pi.sum()
    residual = float(np.abs(pi @ gen).max())
    if residual > 1e-10:
        raise ChainError(f"stationary residual {residual} exceeds 1e-10")
    return pi


def queue_marginal(chain: TruncatedChain, dist: np.ndarray) -> np.ndarray:
    """Stationary distribution of a single server's queue length."""
    probs = np.zeros(chain.cap + 1)
    n = chain.params.n_servers
    for s, p in zip(chain.states, dist):
        for idx, c in enumerate(s):
            if c:
                probs[chain.pairs[idx][0]] += p * c / n
    return probs


def truncation_loss(chain: TruncatedChain, dist: np.ndarray) -> float:
    """Fraction of offered arrivals rejected at the cap."""
    lam_total = chain.params.lam * chain.params.n_servers
    return float(dist @ chain.truncation_rates) / lam_total


def oracle_metrics(chain: TruncatedChain, dist: np.ndarray) -> tuple[float, float]:
    """(mean queue per server, mean wait) from the stationary law; the wait
    comes from the flow identity mean_queue = lam * (wait + service)."""
    n = chain.params.n_servers
    mean_queue = 0.0
    for s, p in zip(chain.states, dist):
        jobs = sum(c * chain.pairs[idx][0] for idx, c in enumerate(s))
        mean_queue += p * jobs / n
    mean_wait = mean_queue / chain.params.lam - 1.0
    return mean_queue, mean_wait
