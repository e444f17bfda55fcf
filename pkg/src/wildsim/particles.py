"""The N-agent random-matching system and the tagged agent's history graph.

Meetings arrive as a Poisson process of intensity ``lambda * N / m``; each
picks a uniform m-subset of agents, which then interact through the kernel.
Every agent therefore meets at rate ``lambda``.

History graphs are swept backwards in time from the tagged agent.  Only
one connected component ever grows during that sweep (everything in it is
linked to the tagged agent), so "creates a cycle" reduces to "touches the
current component in two or more places", and a plain membership set does
the job a union-find would do for many components.
"""

from __future__ import annotations

import bisect
import heapq
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .kernels import Kernel
from .laws import SampleEnsemble


@dataclass
class SimConfig:
    N: int
    kernel: Kernel
    initial: object
    T: float = 1.0
    lam: float = 1.0
    seed: int = 0
    m: int | None = None

    def __post_init__(self):
        if self.m is None:
            self.m = self.kernel.m
        if self.m != self.kernel.m:
            raise ValueError(f"arity {self.m} differs from kernel arity {self.kernel.m}")
        if self.N < self.m:
            raise ValueError(f"population {self.N} smaller than arity {self.m}")
        if self.T < 0:
            raise ValueError("horizon T must be non-negative")
        if self.lam <= 0:
            raise ValueError("meeting rate must be positive")


@dataclass
class EventLog:
    times: np.ndarray
    members: np.ndarray  # (K, m), sorted within each row
    final_states: np.ndarray
    initial_states: np.ndarray
    N: int

    def __len__(self):
        return len(self.times)


@dataclass
class InteractionGraph:
    agent: int
    events: np.ndarray  # event indices, latest first
    redundant: np.ndarray  # one flag per entry of ``events``
    agents: frozenset = field(default_factory=frozenset)

    @property
    def n_redundant(self) -> int:
        return int(self.redundant.sum())

    @property
    def n_tree_edges(self) -> int:
        return len(self.events) - self.n_redundant

    @property
    def is_tree(self) -> bool:
        return self.n_redundant == 0


def replica_rng(seed: int, replica: int):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replica,)))


def uniform_subsets(N: int, m: int, size: int, rng) -> np.ndarray:
    """``size`` uniform m-subsets of range(N) by a partial Fisher-Yates shuffle.

    Runs the first m swaps of a shuffle for every row at once, keeping only
    the positions that have been displaced.
    """
    picks = np.empty((size, m), dtype=np.int64)
    moved_pos = np.full((size, m), -1, dtype=np.int64)
    moved_val = np.empty((size, m), dtype=np.int64)

    def lookup(pos, upto):
        val = pos.copy()
        for j in range(upto):
            hit = moved_pos[:, j] == pos
            val[hit] = moved_val[hit, j]
        return val

    for i in range(m):
        r = i + (rng.random(size) * (N - i)).astype(np.int64)
        here = np.full(size, i, dtype=np.int64)
        picks[:, i] = lookup(r, i)
        moved_pos[:, i] = r
        moved_val[:, i] = lookup(here, i)
    _sort_rows(picks)
    return picks


def _sort_rows(a):
    # odd-even transposition network on columns; far faster than sort(axis=1) for small m
    m = a.shape[1]
    for rnd in range(m):
        for i in range(rnd % 2, m - 1, 2):
            lo = np.minimum(a[:, i], a[:, i + 1])
            a[:, i + 1] = np.maximum(a[:, i], a[:, i + 1])
            a[:, i] = lo


def sample_events(N: int, m: int, lam: float, T: float, rng):
    """Meeting times on [0, T] and the sorted m-subset of each meeting."""
    rate = lam * N / m
    expected = rate * T
    chunk = int(expected + 10 * math.sqrt(expected) + 10)
    gaps = rng.exponential(1.0 / rate, chunk)
    times = np.cumsum(gaps)
    while times.size and times[-1] <= T:
        more = np.cumsum(rng.exponential(1.0 / rate, chunk)) + times[-1]
        times = np.concatenate([times, more])
    times = times[times <= T]
    return times, uniform_subsets(N, m, len(times), rng)


def _draw_replica(config: SimConfig, rng, horizon: float, with_states: bool = True):
    times, members = sample_events(config.N, config.m, config.lam, horizon, rng)
    if not with_states:
        return times, members, None, None
    initial = np.asarray(config.initial.sample(rng, config.N), dtype=float)
    noise = config.kernel.draw_noise(rng, len(times))
    return times, members, initial, noise


def run(config: SimConfig, replica: int = 0) -> EventLog:
    """Simulate the whole population on [0, T].

    Replica ``r`` of a seed always uses the same random stream, so
    ``run(config, r)`` reproduces what :func:`tagged_law` sees in replica r
    when ``T`` equals the observation time.
    """
    rng = replica_rng(config.seed, replica)
    times, members, initial, noise = _draw_replica(config, rng, config.T)
    states = initial.copy()
    kernel = config.kernel
    for k, who in enumerate(members):
        states[who] = kernel.apply(states[who], noise=None if noise is None else noise[k])
    return EventLog(times, members, states, initial, config.N)


class _AgentEvents:
    """Lazy per-agent lists of event indices (ascending)."""

    def __init__(self, members):
        self.flat = members.ravel()
        self.m = members.shape[1] if members.ndim == 2 else 1
        self.cache = {}

    def __call__(self, agent):
        if agent not in self.cache:
            # an agent appears at most once per meeting
            self.cache[agent] = (np.flatnonzero(self.flat == agent) // self.m).tolist()
        return self.cache[agent]


def _sweep(members: np.ndarray, agent: int, prune: bool):
    """Backward sweep from the end of ``members`` (already cut at time t).

    Follows each line of the current component back to its previous meeting.
    A meeting reached from two or more lines at once is redundant.  With
    ``prune`` a redundant meeting adds nobody; without it every participant
    joins, which gives the full set of meetings the tagged state depends on.
    """
    events_of = _AgentEvents(members)
    in_graph = {agent}
    heap = []
    mine = events_of(agent)
    if mine:
        heap.append((-mine[-1], agent))
    visited, flags = [], []
    while heap:
        e = -heap[0][0]
        lines = []
        while heap and -heap[0][0] == e:
            lines.append(heapq.heappop(heap)[1])
        redundant = len(lines) >= 2
        visited.append(e)
        flags.append(redundant)
        for a in lines:
            evs = events_of(a)
            i = bisect.bisect_left(evs, e)
            if i > 0:
                heapq.heappush(heap, (-evs[i - 1], a))
        if redundant and prune:
            continue
        for b in members[e].tolist():
            if b in in_graph:
                continue
            in_graph.add(b)
            evs = events_of(b)
            i = bisect.bisect_left(evs, e)
            if i > 0:
                heapq.heappush(heap, (-evs[i - 1], b))
    return np.array(visited, dtype=np.int64), np.array(flags, dtype=bool), frozenset(in_graph)


def history_graph(log: EventLog, agent: int, t: float | None = None) -> InteractionGraph:
    """The tagged agent's history graph at time ``t`` with redundant lines flagged."""
    if not 0 <= agent < log.N:
        raise ValueError(f"unknown agent {agent} (population {log.N})")
    cut = len(log.times) if t is None else int(np.searchsorted(log.times, t, side="right"))
    events, flags, agents = _sweep(log.members[:cut], agent, prune=True)
    return InteractionGraph(agent, events, flags, agents)


def _tagged_value(members, initial, noise, kernel, agent):
    events, _, agents = _sweep(members, agent, prune=False)
    state = {a: initial[a] for a in agents}
    for e in sorted(events.tolist()):
        who = members[e]
        new = kernel.apply(np.array([state[a] for a in who.tolist()]),
                           noise=None if noise is None else noise[e])
        for a, v in zip(who.tolist(), new):
            state[a] = v
    return float(state[agent])


def _tagged_chunk(args):
    config, t, start, stop = args
    out = np.empty(stop - start)
    for i, r in enumerate(range(start, stop)):
        times, members, initial, noise = _draw_replica(config, replica_rng(config.seed, r), t)
        out[i] = _tagged_value(members, initial, noise, config.kernel, 0)
    return out


def _chunks(replicas, workers):
    size = max(1, -(-replicas // max(1, 4 * workers)))
    return [(s, min(s + size, replicas)) for s in range(0, replicas, size)]


def _map(fn, tasks, workers):
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(fn, tasks))
    return [fn(task) for task in tasks]


def tagged_law(config: SimConfig, t: float, replicas: int, workers: int = 1) -> SampleEnsemble:
    """States of agent 0 at time ``t`` over independent replicas.

    Only the meetings agent 0's state depends on are replayed; the rest of
    the population is drawn but never evolved.
    """
    if replicas < 1:
        raise ValueError("replicas must be at least 1")
    if not 0 <= t <= config.T:
        raise ValueError(f"observation time {t} outside [0, {config.T}]")
    parts = _map(_tagged_chunk, [(config, t, a, b) for a, b in _chunks(replicas, workers)], workers)
    return SampleEnsemble(np.concatenate(parts),
                          metadata={"t": t, "N": config.N, "kernel": config.kernel.kind,
                                    "seed": config.seed, "replicas": replicas})


@dataclass
class RedundancyReport:
    N: int
    m: int
    t: float
    replicas: int
    counts: np.ndarray
    tree_edges: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.counts.mean())

    @property
    def stderr(self) -> float:
        return float(self.counts.std(ddof=1) / math.sqrt(len(self.counts))) if len(self.counts) > 1 else 0.0

    @property
    def tree_fraction(self) -> float:
        return float(np.mean(self.counts == 0))


def _redundancy_chunk(args):
    config, t, start, stop = args
    counts = np.empty(stop - start, dtype=np.int64)
    edges = np.empty(stop - start, dtype=np.int64)
    for i, r in enumerate(range(start, stop)):
        times, members, _, _ = _draw_replica(config, replica_rng(config.seed, r), t, with_states=False)
        _, flags, _ = _sweep(members, 0, prune=True)
        counts[i] = flags.sum()
        edges[i] = len(flags) - counts[i]
    return counts, edges


def redundant_stats(config: SimConfig, t: float, replicas: int, workers: int = 1) -> RedundancyReport:
    """Redundant-line counts of agent 0's history graph over replicas."""
    if replicas < 1:
        raise ValueError("replicas must be at least 1")
    parts = _map(_redundancy_chunk, [(config, t, a, b) for a, b in _chunks(replicas, workers)], workers)
    counts = np.concatenate([p[0] for p in parts])
    edges = np.concatenate([p[1] for p in parts])
    return RedundancyReport(config.N, config.m, t, replicas, counts, edges)


def ks_distance(a: SampleEnsemble, b: SampleEnsemble) -> float:
    """Two-sample Kolmogorov-Smirnov statistic between (weighted) ensembles."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both ensembles must be non-empty")
    grid = np.union1d(a.values, b.values)

    def ecdf(ens):
        order = np.argsort(ens.values, kind="stable")
        x = ens.values[order]
        if ens.weights is None:
            return np.searchsorted(x, grid, side="right") / len(x)
        w = ens.weights[order]
        cum = np.concatenate([[0.0], np.cumsum(w)])
        return cum[np.searchsorted(x, grid, side="right")]

    return float(np.max(np.abs(ecdf(a) - ecdf(b))))


def compare_micro_macro(config: SimConfig, t: float, replicas: int, samples: int,
                        workers: int = 1) -> dict:
    """KS distance between the tagged agent's law and draws of the limit law."""
    from .wildsum import sample_mu_t_many

    micro = tagged_law(config, t, replicas, workers)
    macro = SampleEnsemble(sample_mu_t_many(t, config.kernel, config.initial, samples,
                                            np.random.SeedSequence(config.seed, spawn_key=(2**31,)),
                                            workers=workers))
    return {"ks": ks_distance(micro, macro), "replicas": replicas, "samples": samples,
            "t": t, "N": config.N}
