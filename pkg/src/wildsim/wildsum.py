"""The macroscopic law mu_t as a mixture over random interaction trees.

mu_t = sum_n p_n(t) * (uniform average over ordered trees with n nodes of
the law at the root when base draws sit on the leaves).  Sampling follows
that recipe literally: draw n, draw a uniform tree, evaluate it.  For finite
state spaces with a deterministic kernel the mixture is computed exactly.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from typing import Callable

import numpy as np

from .branching import closed_law, p_closed
from .errors import NumericBudgetError
from .kernels import Kernel
from .laws import DiscreteLaw, SampleEnsemble
from .trees import (
    DEFAULT_ENUMERATION_CAP,
    OrderedTree,
    count_trees,
    enumerate_trees,
    sample_tree,
)

__all__ = [
    "DiscreteLaw",
    "SampleEnsemble",
    "ExactSolution",
    "sample_tree_law",
    "sample_mu_t",
    "sample_mu_t_many",
    "expect_mu_t",
    "expect_panel",
    "exact_mu_t_discrete",
    "cauchy_residual",
    "cauchy_residual_panel",
    "cauchy_residual_exact",
    "test_panel",
]

DEFAULT_TAIL_EPS = 1e-12
BLOCK_SIZE = 4096
DEFAULT_EXACT_BUDGET = 10**7


def _sigmoid(x, shift=0.0):
    return 0.5 * (1.0 + np.tanh(0.5 * (np.asarray(x) - shift)))


def test_panel() -> dict[str, Callable]:
    """Fixed set of test functions used for residual and rate checks."""
    panel = {"x": lambda x: x, "x2": lambda x: np.asarray(x) ** 2}
    for w in (0.5, 1.0, 2.0):
        panel[f"cos_{w:g}"] = lambda x, w=w: np.cos(w * np.asarray(x))
        panel[f"sin_{w:g}"] = lambda x, w=w: np.sin(w * np.asarray(x))
    panel["sigmoid_0"] = lambda x: _sigmoid(x, 0.0)
    panel["sigmoid_1"] = lambda x: _sigmoid(x, 1.0)
    return panel


test_panel.__test__ = False  # not a pytest test


def sample_tree_law(tree: OrderedTree, kernel: Kernel, base, rng) -> float:
    """One draw from the law at the root of ``tree``.

    Leaves get independent draws from ``base``; nodes are evaluated from the
    latest-born to the root, and the root's first output is returned.
    """
    if tree.m != kernel.m:
        raise ValueError(f"tree arity {tree.m} differs from kernel arity {kernel.m}")
    if tree.n_nodes == 0:
        return float(base.sample(rng))
    kids = tree.children()
    value = [0.0] * tree.n_nodes
    for k in range(tree.n_nodes - 1, -1, -1):
        inputs = np.array([
            value[c] if c is not None else float(base.sample(rng)) for c in kids[k]
        ])
        value[k] = float(kernel.first_output(inputs[None, :], rng)[0])
    return value[0]


@lru_cache(maxsize=64)
def _size_cdf(m: int, t: float, tail_eps: float):
    law = closed_law(m, t, tol=tail_eps)
    return np.cumsum(law.probs), law.tail


def _draw_sizes(m, t, rng, size, tail_eps):
    cdf, _ = _size_cdf(m, float(t), float(tail_eps))
    u = rng.random(size)
    # the <= tail_eps of mass beyond the table lands on the last row
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)


def _sample_batch(t, kernel, base, rng, size, tail_eps):
    """Vectorised ``size`` draws of mu_t, same recipe as the scalar path.

    Rows are sorted by tree size so that at step k the rows still growing
    form a prefix.  Leaf storage is unordered (chosen leaf is replaced by the
    first child, the others are appended); the chosen leaf is still uniform,
    so the tree law is unchanged.
    """
    m = kernel.m
    n = _draw_sizes(m, t, rng, size, tail_eps)
    order = np.argsort(-n, kind="stable")
    ns = n[order]
    out = np.empty(size)
    n_top = int(ns[0]) if size else 0
    if n_top == 0:
        out[:] = base.sample(rng, size)
        return out
    active = np.array([np.count_nonzero(ns > k) for k in range(n_top)])
    leaf_cap = (m - 1) * ns + 1
    leaf_off = np.concatenate([[0], np.cumsum(leaf_cap)[:-1]])
    node_off = np.concatenate([[0], np.cumsum(ns)[:-1]])
    leaves = np.full(int(leaf_cap.sum()), -1, dtype=np.int64)
    parent_code = np.empty(int(ns.sum()), dtype=np.int64)
    slots = np.arange(1, m)
    for k in range(n_top):
        a = active[k]
        n_leaves = (m - 1) * k + 1
        pick = leaf_off[:a] + (rng.random(a) * n_leaves).astype(np.int64)
        parent_code[node_off[:a] + k] = leaves[pick]
        leaves[pick] = k * m
        leaves[(leaf_off[:a] + n_leaves)[:, None] + (slots - 1)] = k * m + slots
    # child values per node slot; internal slots are overwritten before use
    cv_off = m * node_off
    child_val = base.sample(rng, int(ns.sum()) * m)
    grid = np.arange(m)
    for k in range(n_top - 1, -1, -1):
        a = active[k]
        vals = kernel.first_output(child_val[(cv_off[:a] + k * m)[:, None] + grid], rng)
        code = parent_code[node_off[:a] + k]
        root = code < 0
        if root.any():
            out[np.flatnonzero(root)] = vals[root]
        inner = ~root
        child_val[cv_off[:a][inner] + code[inner]] = vals[inner]
    flat = ns == 0
    if flat.any():
        out[np.flatnonzero(flat)] = base.sample(rng, int(flat.sum()))
    result = np.empty(size)
    result[order] = out
    return result


def sample_mu_t(t: float, kernel: Kernel, base, rng, tail_eps: float = DEFAULT_TAIL_EPS, size=None):
    """Draw from mu_t: interaction count, then a uniform tree, then the tree law.

    With ``size=None`` a single float is returned through
    :func:`sample_tree` and :func:`sample_tree_law`; with an integer
    ``size`` the same recipe runs vectorised over a batch.
    """
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t!r}")
    if size is not None:
        return _sample_batch(t, kernel, base, rng, int(size), tail_eps)
    n = int(_draw_sizes(kernel.m, t, rng, None, tail_eps))
    return sample_tree_law(sample_tree(kernel.m, n, rng), kernel, base, rng)


def _block_task(args):
    t, kernel, base, seq, size, tail_eps = args
    return _sample_batch(t, kernel, base, np.random.default_rng(seq), size, tail_eps)


def _seed_sequence(seed):
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def sample_mu_t_many(t, kernel, base, n_samples, seed, tail_eps=DEFAULT_TAIL_EPS, workers=1):
    """``n_samples`` draws of mu_t split in fixed blocks with their own streams.

    Block ``i`` always uses child ``i`` of the seed sequence, so the output
    does not depend on ``workers``.
    """
    n_blocks = -(-n_samples // BLOCK_SIZE)
    children = _seed_sequence(seed).spawn(n_blocks)
    sizes = [min(BLOCK_SIZE, n_samples - i * BLOCK_SIZE) for i in range(n_blocks)]
    tasks = [(t, kernel, base, c, s, tail_eps) for c, s in zip(children, sizes)]
    if workers > 1 and n_blocks > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_block_task, tasks))
    else:
        parts = [_block_task(task) for task in tasks]
    return np.concatenate(parts) if parts else np.empty(0)


def expect_mu_t(f: Callable, t: float, kernel: Kernel, base, n_samples: int, seed,
                workers: int = 1) -> tuple[float, float]:
    """Monte Carlo ``<mu_t, f>`` with its standard error."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    x = sample_mu_t_many(t, kernel, base, n_samples, seed, workers=workers)
    return SampleEnsemble(x).expect(f)


def expect_panel(panel: dict, t, kernel, base, n_samples, seed, workers=1) -> dict:
    """``expect_mu_t`` for every function of ``panel`` on one shared sample."""
    ens = SampleEnsemble(sample_mu_t_many(t, kernel, base, n_samples, seed, workers=workers))
    return {name: ens.expect(f) for name, f in panel.items()}


@dataclass
class ResidualReport:
    name: str
    t: float
    dt: float
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def stderr(self) -> float:
        return math.hypot(self.lhs_se, self.rhs_se)


def cauchy_residual_panel(panel: dict, t: float, dt: float, kernel: Kernel, base,
                          n_samples: int, seed, workers: int = 1) -> list[ResidualReport]:
    """Residual of ``d mu_t/dt = mu_t^{o m} - mu_t`` along each test function.

    The time derivative is a central difference of independent Monte Carlo
    estimates at ``t +- dt``.  ``<mu_t^{o m}, f>`` is estimated by running
    one kernel step on m independent draws of mu_t.
    """
    if not 0 < dt <= 0.1:
        raise ValueError(f"dt must lie in (0, 0.1], got {dt!r}")
    if t - dt < 0:
        raise ValueError("need t - dt >= 0")
    s_plus, s_minus, s_now, s_pair, s_kernel = _seed_sequence(seed).spawn(5)
    plus = SampleEnsemble(sample_mu_t_many(t + dt, kernel, base, n_samples, s_plus, workers=workers))
    minus = SampleEnsemble(sample_mu_t_many(t - dt, kernel, base, n_samples, s_minus, workers=workers))
    now = SampleEnsemble(sample_mu_t_many(t, kernel, base, n_samples, s_now, workers=workers))
    inputs = sample_mu_t_many(t, kernel, base, n_samples * kernel.m, s_pair, workers=workers)
    after = SampleEnsemble(kernel.first_output(inputs.reshape(n_samples, kernel.m),
                                               np.random.default_rng(s_kernel)))
    reports = []
    for name, f in panel.items():
        (a, sa), (b, sb) = plus.expect(f), minus.expect(f)
        (c, sc), (d, sd) = after.expect(f), now.expect(f)
        reports.append(ResidualReport(
            name, t, dt,
            lhs=(a - b) / (2 * dt), lhs_se=math.hypot(sa, sb) / (2 * dt),
            rhs=c - d, rhs_se=math.hypot(sc, sd),
        ))
    return reports


def cauchy_residual(f: Callable, t: float, dt: float, kernel: Kernel, base,
                    n_samples: int, seed, workers: int = 1) -> ResidualReport:
    return cauchy_residual_panel({"f": f}, t, dt, kernel, base, n_samples, seed, workers)[0]


# exact computation on a finite state space


@dataclass
class ExactSolution:
    """Truncated mixture ``sum_{n <= n_max} p_n(t) nu_n`` on a finite support.

    ``probs`` sums to ``1 - tail``; :meth:`law` renormalises on request.
    """

    support: tuple
    probs: np.ndarray
    tail: float
    n_max: int
    t: float

    def law(self) -> DiscreteLaw:
        p = self.probs / self.probs.sum()
        return DiscreteLaw(self.support, tuple(p / math.fsum(p)))

    def expect(self, f) -> float:
        return math.fsum(p * float(f(x)) for x, p in zip(self.support, self.probs))


def _kernel_table(base: DiscreteLaw, kernel: Kernel) -> np.ndarray:
    """Index of the first output for every tuple of support indices."""
    if not kernel.deterministic:
        raise ValueError("exact evaluation needs a deterministic kernel")
    support = np.asarray(base.support)
    index = {x: i for i, x in enumerate(base.support)}
    s, m = len(support), kernel.m
    combos = np.array(list(product(range(s), repeat=m)))
    out = kernel.first_output(support[combos])
    try:
        table = np.array([index[float(v)] for v in out])
    except KeyError as exc:
        raise ValueError(f"kernel output {exc.args[0]} is outside the support") from None
    return table.reshape((s,) * m)


def _push(table: np.ndarray, laws) -> np.ndarray:
    """Law of the first output when independent inputs have the given laws."""
    joint = laws[0]
    for law in laws[1:]:
        joint = np.multiply.outer(joint, law)
    return np.bincount(table.ravel(), weights=joint.ravel(), minlength=table.shape[0])


def _tree_law(tree: OrderedTree, table, leaf):
    kids = tree.children()
    law = [None] * tree.n_nodes
    for k in range(tree.n_nodes - 1, -1, -1):
        law[k] = _push(table, [law[c] if c is not None else leaf for c in kids[k]])
    return law[0]


def uniform_tree_laws(base: DiscreteLaw, kernel: Kernel, n_max: int, method: str = "enumerate",
                      budget: int = DEFAULT_EXACT_BUDGET, cap: int = DEFAULT_ENUMERATION_CAP):
    """Root law averaged uniformly over ordered trees with n nodes, n = 0..n_max.

    ``method="enumerate"`` walks every tree; ``method="recursive"`` splits a
    uniform tree at its root, where sizes ``(i_1..i_m)`` of the m subtrees
    have probability ``multinomial(n; i) prod count(i_j) / count(n + 1)``.
    """
    table = _kernel_table(base, kernel)
    m, s = kernel.m, len(base.support)
    leaf = np.asarray(base.probs)
    if method == "enumerate":
        work = sum(count_trees(m, n) * max(n, 1) for n in range(n_max + 1)) * s**m
        if work > budget:
            raise NumericBudgetError(f"exact evaluation needs ~{work} operations (budget {budget})")
        laws = [leaf]
        for n in range(1, n_max + 1):
            trees = enumerate_trees(m, n, cap)
            laws.append(sum(_tree_law(tr, table, leaf) for tr in trees) / len(trees))
        return laws
    if method == "recursive":
        # The split weight multinomial(n; i) prod #(i_j) / #(n+1) factorises as
        # prod c(i_j) / ((m-1)(n+1) c(n+1)) with c(i) = #(i) / ((m-1)^i i!), so
        # the sum over compositions is an m-fold convolution of c(i) * law_i,
        # which the push (multilinear in its inputs) lets us build up slot by slot.
        r = 1.0 / (m - 1)

        def c(i):
            return math.exp(math.lgamma(i + r) - math.lgamma(r) - math.lgamma(i + 1))

        laws = [leaf]
        scaled = [leaf * c(0)]
        partial = [[] for _ in range(m)]  # partial[j][k]: j+1 slots holding k nodes in total
        for n in range(n_max):
            a = np.array(scaled)  # (n+1, s)
            partial[0].append(scaled[n])
            for j in range(1, m):
                prev = np.array(partial[j - 1][::-1])  # index k -> k-slot partial at n-k
                partial[j].append(np.einsum("ka,kb->ab", prev.reshape(n + 1, -1), a).ravel())
            joint = partial[m - 1][n]
            law = np.bincount(table.ravel(), weights=joint, minlength=s) / ((m - 1) * (n + 1) * c(n + 1))
            laws.append(law)
            scaled.append(law * c(n + 1))
        return laws
    raise ValueError(f"unknown method {method!r}")


def exact_mu_t_discrete(base: DiscreteLaw, kernel: Kernel, t: float, n_max: int,
                        method: str = "enumerate", budget: int = DEFAULT_EXACT_BUDGET) -> ExactSolution:
    """Exact mu_t on a finite support, truncated after ``n_max`` interactions.

    Raises
    ------
    NumericBudgetError
        If enumerating the trees would exceed ``budget`` elementary steps.
    """
    laws = uniform_tree_laws(base, kernel, n_max, method, budget)
    weights = np.array([p_closed(kernel.m, n, t) for n in range(n_max + 1)])
    probs = sum(w * law for w, law in zip(weights, laws))
    return ExactSolution(base.support, probs, max(0.0, 1.0 - math.fsum(weights)), n_max, t)


def cauchy_residual_exact(f: Callable, t: float, dt: float, base: DiscreteLaw, kernel: Kernel,
                          n_max: int, method: str = "recursive") -> float:
    """Residual of the Cauchy problem computed without sampling noise.

    Truncation error is of order the tail mass at ``n_max`` and the
    central difference contributes O(dt^2).
    """
    laws = uniform_tree_laws(base, kernel, n_max, method)
    table = _kernel_table(base, kernel)

    def mixture(s):
        return sum(p_closed(kernel.m, n, s) * law for n, law in enumerate(laws))

    fx = np.array([float(f(x)) for x in base.support])
    lhs = (mixture(t + dt) @ fx - mixture(t - dt) @ fx) / (2 * dt)
    now = mixture(t)
    rhs = _push(table, [now] * kernel.m) @ fx - now @ fx
    return abs(lhs - rhs)
