"""Acceptance gate: one test and one summary line per criterion."""

import math
import subprocess
import sys
from collections import Counter
from fractions import Fraction

import numpy as np
from scipy import stats

from wildsim.branching import closed_law, p_closed, p_finite_N, p_kolmogorov, redundant_mean_bound
from wildsim.econo import e_sequence, rate_fit
from wildsim.kernels import IdentityKernel, SumKernel, WealthKernel, weights_from_spec
from wildsim.laws import Exponential, Normal, SampleEnsemble
from wildsim.particles import SimConfig, ks_distance, redundant_stats, tagged_law
from wildsim.trees import count_by_decomposition, count_trees, enumerate_trees, sample_tree
from wildsim.wildsum import cauchy_residual_panel, expect_mu_t, sample_mu_t_many, test_panel

SEED = 20240601
U2 = weights_from_spec(2, {"family": "uniform"})
U3 = weights_from_spec(3, {"family": "uniform", "lo": 0.0, "hi": 2 / 3})


def test_criterion_01_closed_form_matches_ode(report):
    worst = 0.0
    for m in (2, 3, 4):
        for t in (0.5, 1.0, 2.0, 3.0):
            ode = p_kolmogorov(m, 40, t, 1e-3)
            worst = max(worst, max(abs(p_closed(m, n, t) - ode.probs[n]) for n in range(41)))
    ok = worst < 1e-8
    report(1, ok, f"max |closed - kolmogorov| = {worst:.3e} (< 1e-8)")
    assert ok


def test_criterion_02_normalization_and_mean(report):
    worst_tail, worst_mean = 0.0, 0.0
    for m in (2, 3, 4):
        for t in (0.5, 1.0, 2.0, 3.0):
            law = closed_law(m, t)
            total = math.fsum(law.probs)
            worst_tail = max(worst_tail, law.tail, abs(total + law.tail - 1))
            worst_mean = max(worst_mean, abs(law.mean() - math.expm1((m - 1) * t) / (m - 1)))
    ok = worst_tail < 1e-10 and worst_mean < 1e-8
    report(2, ok, f"max tail = {worst_tail:.2e} (< 1e-10), max mean error = {worst_mean:.2e} (< 1e-8)")
    assert ok


def test_criterion_03_tree_combinatorics(report):
    mismatches = 0
    for m in (2, 3, 4):
        for n in range(0, 9):
            product = math.prod((m - 1) * k + 1 for k in range(1, n))
            mismatches += count_trees(m, n) != product
            mismatches += count_by_decomposition(m, n) != count_trees(m, n + 1)
            if count_trees(m, n) <= 10**5:
                mismatches += len(enumerate_trees(m, n)) != count_trees(m, n)
    rng = np.random.default_rng(SEED)
    pvals = []
    for m, n in [(2, 3), (3, 2), (3, 3)]:
        freq = Counter(sample_tree(m, n, rng).history for _ in range(10**5))
        counts = [freq.get(t.history, 0) for t in enumerate_trees(m, n)]
        pvals.append(stats.chisquare(counts).pvalue)
    ok = mismatches == 0 and min(pvals) > 1e-3
    report(3, ok, f"count mismatches = {mismatches}, chi-square p-values = "
                  + ", ".join(f"{p:.3f}" for p in pvals) + " (> 0.001)")
    assert ok


def test_criterion_04_finite_n_convergence(report):
    t, n_max = 1.0, 80
    ok, parts = True, []
    for m in (2, 3):
        limit = np.array([p_closed(m, n, t) for n in range(n_max + 1)])
        q = -math.expm1(-m * t)
        geo_tail = q ** np.arange(1, n_max + 2)  # P(n > k) under the dominating geometric law
        sups = []
        for N in (100, 1000, 10000):
            law = p_finite_N(m, N, n_max, t)
            sups.append(float(np.max(np.abs(law.probs - limit))))
            ok &= bool(np.all(law.tail_sums() <= geo_tail + 1e-15))
        ok &= sups[0] > sups[1] > sups[2] and sups[2] < 1e-2
        parts.append(f"m={m}: " + " > ".join(f"{s:.2e}" for s in sups))
    report(4, ok, "; ".join(parts) + "; geometric tail domination at every n <= 80")
    assert ok


def test_criterion_05_sum_kernel_variance(report):
    ok, parts = True, []
    for m in (2, 3):
        target = math.exp(m - 1)
        x = sample_mu_t_many(1.0, SumKernel(m), Normal(), 10**5, np.random.SeedSequence(SEED, spawn_key=(m,)))
        v1, s1 = SampleEnsemble(x).variance_with_se()
        sim = SimConfig(N=2000, kernel=SumKernel(m), initial=Normal(), T=1.0, seed=SEED + m)
        v2, s2 = tagged_law(sim, 1.0, 10**4).variance_with_se()
        z1, z2 = abs(v1 - target) / s1, abs(v2 - target) / s2
        ok &= z1 < 4 and z2 < 4
        parts.append(f"m={m}: wild {v1:.4f} ({z1:.2f} SE), particles {v2:.4f} ({z2:.2f} SE) vs {target:.4f}")
    report(5, ok, "; ".join(parts) + " (< 4 SE)")
    assert ok


def test_criterion_06_micro_macro_ks(report):
    k = WealthKernel(U2)
    sim = SimConfig(N=2000, kernel=k, initial=Exponential(), T=1.0, seed=SEED)
    micro = tagged_law(sim, 1.0, 10**4)
    macro = SampleEnsemble(sample_mu_t_many(1.0, k, Exponential(), 10**4, np.random.SeedSequence(SEED + 6)))
    d = ks_distance(micro, macro)
    ok = d < 0.03
    report(6, ok, f"KS(tagged_law N=2000, sample_mu_t) = {d:.4f} (< 0.03)")
    assert ok


REDUNDANCY_REPLICAS = 2 * 10**5  # 10^4 cannot resolve N=8000 (about 2 events expected in total)


def test_criterion_07_redundancy_scaling(report):
    m, t = 2, 1.0
    reps = {}
    for N in (500, 2000, 8000):
        sim = SimConfig(N=N, kernel=SumKernel(m), initial=Normal(), T=t, seed=SEED + N)
        reps[N] = redundant_stats(sim, t, REDUNDANCY_REPLICAS)
    ok, parts = True, []
    for a, b in ((500, 2000), (2000, 8000)):
        ra, rb = reps[a], reps[b]
        factor = ra.mean / rb.mean if rb.mean > 0 else math.inf
        sep = (ra.mean - rb.mean) / math.hypot(ra.stderr, rb.stderr)
        ok &= factor >= 2 and sep >= 3
        parts.append(f"{a}->{b}: factor {factor:.2f} (>= 2), separation {sep:.1f} SE (>= 3)")
    for N, r in reps.items():
        bound = redundant_mean_bound(m, N, t, 40)
        ok &= r.mean <= bound
        parts.append(f"N={N}: mean {r.mean:.2e} <= bound {bound:.2e}")
    report(7, ok, f"m=2, {REDUNDANCY_REPLICAS} replicas; " + "; ".join(parts))
    assert ok


def test_criterion_08_cauchy_residual(report):
    panel = test_panel()
    n_samples = 10**5
    kernels = {
        "identity": {2: IdentityKernel(2), 3: IdentityKernel(3)},
        "sum": {2: SumKernel(2), 3: SumKernel(3)},
        "wealth": {2: WealthKernel(U2), 3: WealthKernel(U3)},
    }
    ok, worst, count = True, -math.inf, 0
    for i, (name, by_m) in enumerate(kernels.items()):
        for m, k in by_m.items():
            for j, t in enumerate((0.5, 1.0)):
                reps = cauchy_residual_panel(panel, t, 1e-2, k, Normal() if name == "sum" else Exponential(),
                                             n_samples, np.random.SeedSequence(SEED, spawn_key=(8, i, m, j)))
                for r in reps:
                    excess = r.residual - (5e-3 + 4 * r.stderr)
                    worst = max(worst, excess)
                    ok &= excess < 0
                    count += 1
    report(8, ok, f"{count} (kernel, m, t, f) cases; max residual - (5e-3 + 4 SE) = {worst:.3e} (< 0)")
    assert ok


def test_criterion_09_econophysics_rate(report):
    k = WealthKernel(U2)
    parts, ok = [], True
    for t in (1.0, 2.0, 4.0):
        est, se = expect_mu_t(lambda x: x**2, t, k, Exponential(), 10**5,
                              np.random.SeedSequence(SEED, spawn_key=(9, int(t))))
        target = abs(2.0 - 1.5) * math.exp(-t / 3)
        z = abs(abs(est - 1.5) - target) / se
        ok &= z < 3
        parts.append(f"t={t:g}: gap {abs(est - 1.5):.4f} vs {target:.4f} ({z:.2f} SE)")
    rep = rate_fit(U2, Exponential(), [0, 0.5, 1, 2, 3, 4, 6], 10**5, seed=SEED)
    rate_ok = rep.fitted_rate is not None and 0.7 / 3 <= rep.fitted_rate <= 1.3 / 3
    ok &= rate_ok
    e = e_sequence(2, Fraction(1, 3), 3, exact=True)
    exact_ok = e[1:] == [Fraction(2, 3), Fraction(5, 9), Fraction(40, 81)]
    a = 2 / 3
    seq = np.array(e_sequence(2, 1 / 3, 200))
    scaled = seq[1:] * np.arange(1, 201) ** (1 - a)
    bounded = bool(np.all(np.isfinite(scaled)) and scaled.max() < 2 * scaled[-1])
    ok &= exact_ok and bounded
    parts.append(f"fitted rate {rep.fitted_rate:.4f} in [{0.7 / 3:.4f}, {1.3 / 3:.4f}]")
    parts.append(f"e_1..e_3 exact = {exact_ok}, max e_n n^(1-a) = {scaled.max():.4f} (n <= 200)")
    report(9, ok, "; ".join(parts))
    assert ok


def test_criterion_10_selftest_determinism(report, tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        proc = subprocess.run([sys.executable, "-m", "wildsim.cli", "selftest", "--seed", str(SEED),
                               "--out-dir", str(out)], capture_output=True, text=True)
        outs.append((proc.returncode, out))
    names = sorted(p.name for p in outs[0][1].iterdir())
    same = names == sorted(p.name for p in outs[1][1].iterdir()) and all(
        (outs[0][1] / n).read_bytes() == (outs[1][1] / n).read_bytes() for n in names)
    ok = same and outs[0][0] == 0 and outs[1][0] == 0
    report(10, ok, f"{len(names)} result files byte-identical = {same}, selftest exit codes = "
                   f"{outs[0][0]}, {outs[1][0]}")
    assert ok
