"""Invariant checks run by ``wildsim selftest``.

Every check writes its data under the output directory and one summary
row to ``checks.csv``.  Nothing time-dependent is written, so a fixed seed
gives byte-identical files on every run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .branching import closed_law, geometric_dominating, p_closed, p_finite_N, p_kolmogorov, redundant_mean_bound
from .econo import e_sequence, e_sequence_ratio, eta, fixed_point
from .kernels import CappedSumKernel, SumKernel, WealthKernel, weights_from_spec
from .laws import DiscreteLaw, Exponential, Normal, SampleEnsemble
from .particles import SimConfig, ks_distance, redundant_stats, tagged_law
from .trees import count_by_decomposition, count_trees, enumerate_trees
from .wildsum import cauchy_residual_exact, sample_mu_t_many


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    relation: str  # "<", "<=", ">=" or "=="

    @property
    def passed(self) -> bool:
        v, th = self.value, self.threshold
        return {"<": v < th, "<=": v <= th, ">=": v >= th, "==": v == th}[self.relation]


def _write(path: Path, columns, rows):
    from .cli import fmt

    with open(path, "w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def _branching(out):
    rows, worst = [], 0.0
    for m in (2, 3, 4):
        for t in (0.5, 1.0, 2.0):
            ode = p_kolmogorov(m, 40, t)
            for n in range(41):
                pc = p_closed(m, n, t)
                rows.append((m, t, n, pc, ode.probs[n]))
                worst = max(worst, abs(pc - ode.probs[n]))
    _write(out / "branching.csv", ["m", "t", "n", "closed", "kolmogorov"], rows)
    law = closed_law(3, 1.0)
    mean_err = abs(law.mean() - math.expm1(2.0) / 2)
    return [Check("closed_vs_kolmogorov", worst, 1e-8, "<"),
            Check("closed_tail", law.tail, 1e-10, "<"),
            Check("closed_mean_error", mean_err, 1e-8, "<")]


def _trees(out):
    rows, bad = [], 0
    for m in (2, 3, 4):
        for n in range(1, 7):
            prod = count_trees(m, n)
            dec = count_by_decomposition(m, n - 1)
            enum = len(enumerate_trees(m, n)) if prod <= 10**5 else prod
            rows.append((m, n, prod, dec, enum))
            bad += (prod != dec) + (prod != enum)
    _write(out / "trees.csv", ["m", "n", "product", "decomposition", "enumerated"], rows)
    return [Check("tree_count_mismatches", bad, 0, "==")]


def _finite_n(out):
    rows, sups = [], []
    limit = p_kolmogorov(2, 60, 1.0)
    dominated = True
    for N in (100, 1000, 10000):
        law = p_finite_N(2, N, 60, 1.0)
        sups.append(float(np.max(np.abs(law.probs - limit.probs))))
        dominated &= all(law.tail_sums()[k] <= sum(geometric_dominating(2, j, 1.0) for j in range(k + 1, 400))
                         for k in range(0, 60, 5))
        rows.append((N, sups[-1]))
    _write(out / "finite_n.csv", ["N", "sup_diff"], rows)
    decreasing = float(sups[0] > sups[1] > sups[2])
    return [Check("finite_n_decreasing", decreasing, 1.0, "=="),
            Check("finite_n_sup_at_1e4", sups[-1], 1e-2, "<"),
            Check("geometric_domination", float(dominated), 1.0, "==")]


def _sum_variance(out, seed, threads, scale):
    n = 20000 * scale
    x = sample_mu_t_many(1.0, SumKernel(2), Normal(), n, np.random.SeedSequence(seed, spawn_key=(1,)),
                         workers=threads)
    var, se = SampleEnsemble(x).variance_with_se()
    sim = SimConfig(N=500, kernel=SumKernel(2), initial=Normal(), T=1.0, seed=seed)
    tag = tagged_law(sim, 1.0, 1000 * scale, threads)
    tvar, tse = tag.variance_with_se()
    _write(out / "sum_variance.csv", ["source", "variance", "stderr", "target"],
           [("wild_sum", var, se, math.e), ("particles", tvar, tse, math.e)])
    return [Check("sum_variance_wild_z", abs(var - math.e) / se, 4.0, "<"),
            Check("sum_variance_particles_z", abs(tvar - math.e) / tse, 4.0, "<")]


def _micro_macro(out, seed, threads, scale):
    k = WealthKernel(weights_from_spec(2, {"family": "uniform"}))
    n = 2000 * scale
    sim = SimConfig(N=1000, kernel=k, initial=Exponential(), T=1.0, seed=seed)
    micro = tagged_law(sim, 1.0, n, threads)
    macro = SampleEnsemble(sample_mu_t_many(1.0, k, Exponential(), n,
                                            np.random.SeedSequence(seed, spawn_key=(2,)), workers=threads))
    d = ks_distance(micro, macro)
    _write(out / "micro_macro.csv", ["N", "replicas", "ks"], [(1000, n, d)])
    # KS null 99.9% quantile ~1.95 sqrt(2/n)
    return [Check("micro_macro_ks", d, 1.95 * math.sqrt(2 / n) + 0.01, "<")]


def _redundancy(out, seed, threads, scale):
    rows, ok = [], True
    for N in (250, 1000):
        sim = SimConfig(N=N, kernel=SumKernel(2), initial=Normal(), T=1.0, seed=seed)
        rep = redundant_stats(sim, 1.0, 2000 * scale, threads)
        bound = redundant_mean_bound(2, N, 1.0, 40)
        rows.append((N, rep.mean, rep.stderr, rep.tree_fraction, bound))
        ok &= rep.mean <= bound
    _write(out / "redundancy.csv", ["N", "mean", "stderr", "tree_fraction", "bound"], rows)
    return [Check("redundancy_below_bound", float(ok), 1.0, "=="),
            Check("tree_fraction_increases", float(rows[1][3] >= rows[0][3]), 1.0, "==")]


def _residual(out):
    base = DiscreteLaw((0, 1, 2, 3, 4), (0.4, 0.3, 0.2, 0.1, 0.0))
    rows, worst = [], 0.0
    for t in (0.5, 1.0):
        r = cauchy_residual_exact(lambda x: np.cos(x), t, 1e-2, base, CappedSumKernel(2, 4), 40)
        rows.append((t, r))
        worst = max(worst, r)
    _write(out / "residual_exact.csv", ["t", "residual"], rows)
    return [Check("exact_residual", worst, 1e-4, "<")]


def _econo(out, seed, scale):
    spec = weights_from_spec(2, {"family": "uniform"})
    e = e_sequence(2, Fraction(1, 3), 3, exact=True)
    exact_ok = e[1:] == [Fraction(2, 3), Fraction(5, 9), Fraction(40, 81)]
    a = e_sequence(2, 1 / 3, 200)
    b = e_sequence_ratio(2, 1 / 3, 200)
    rel = max(abs(x - y) / abs(y) for x, y in zip(a, b))
    fp = fixed_point(spec, SampleEnsemble(np.ones(20000 * scale)), ensemble_size=20000 * scale,
                     seed=np.random.SeedSequence(seed, spawn_key=(3,)))
    z = abs(fp.second_moment - 1.5) / fp.second_moment_se
    _write(out / "econo.csv", ["quantity", "value"],
           [("eta", eta(spec)[0]), ("e_1", float(e[1])), ("e_2", float(e[2])), ("e_3", float(e[3])),
            ("fixed_point_second_moment", fp.second_moment), ("fixed_point_se", fp.second_moment_se),
            ("fixed_point_iterations", fp.iterations)])
    return [Check("e_sequence_exact", float(exact_ok), 1.0, "=="),
            Check("e_sequence_paths_rel", rel, 1e-14, "<"),
            Check("fixed_point_second_moment_z", z, 4.0, "<")]


def run_selftest(seed: int, out_dir: Path, threads: int = 1, quick: bool = False, stream=None) -> bool:
    import sys

    stream = stream or sys.stdout
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scale = 1 if quick else 5
    checks = []
    checks += _branching(out_dir)
    checks += _trees(out_dir)
    checks += _finite_n(out_dir)
    checks += _sum_variance(out_dir, seed, threads, scale)
    checks += _micro_macro(out_dir, seed, threads, scale)
    checks += _redundancy(out_dir, seed, threads, scale)
    checks += _residual(out_dir)
    checks += _econo(out_dir, seed, scale)
    _write(out_dir / "checks.csv", ["check", "value", "threshold", "relation", "passed"],
           [(c.name, float(c.value), float(c.threshold), c.relation, c.passed) for c in checks])
    width = max(len(c.name) for c in checks)
    for c in checks:
        print(f"{c.name:<{width}}  {float(c.value):<24.6g} {c.relation} {float(c.threshold):<10.3g} "
              f"{'PASS' if c.passed else 'FAIL'}", file=stream)
    return all(c.passed for c in checks)
