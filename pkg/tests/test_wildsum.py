import math

import numpy as np
import pytest

from wildsim.branching import closed_law, p_closed
from wildsim.econo import second_moment_curve
from wildsim.errors import NumericBudgetError
from wildsim.kernels import CappedSumKernel, IdentityKernel, SumKernel, WealthKernel, weights_from_spec
from wildsim.laws import DiscreteLaw, Exponential, Normal, PointMass, SampleEnsemble
from wildsim.trees import OrderedTree, enumerate_trees
from wildsim.wildsum import (
    cauchy_residual,
    cauchy_residual_exact,
    exact_mu_t_discrete,
    expect_mu_t,
    sample_mu_t,
    sample_mu_t_many,
    sample_tree_law,
    uniform_tree_laws,
)

WEALTH2 = WealthKernel(weights_from_spec(2, {"family": "uniform"}))


def test_tree_law_examples():
    rng = np.random.default_rng(0)
    assert sample_tree_law(OrderedTree(3, (0,)), SumKernel(3), PointMass(1.0), rng) == 3.0
    x = [sample_tree_law(OrderedTree(2, ()), SumKernel(2), Normal(), rng) for _ in range(5)]
    assert len(set(x)) == 5


def test_tree_law_arity_mismatch():
    with pytest.raises(ValueError):
        sample_tree_law(OrderedTree(3, (0,)), SumKernel(2), Normal(), np.random.default_rng(0))


def test_t0_is_base():
    x = sample_mu_t_many(0.0, SumKernel(2), PointMass(2.5), 100, 1)
    assert np.all(x == 2.5)


def test_scalar_and_batch_paths_agree_in_law():
    rng = np.random.default_rng(4)
    a = np.array([sample_mu_t(1.0, SumKernel(2), Normal(), rng) for _ in range(4000)])
    b = sample_mu_t_many(1.0, SumKernel(2), Normal(), 4000, 5)
    from scipy import stats
    assert stats.ks_2samp(a, b).pvalue > 1e-3


def test_seed_determinism_and_worker_independence():
    a = sample_mu_t_many(1.0, WEALTH2, Exponential(), 10000, 11, workers=1)
    b = sample_mu_t_many(1.0, WEALTH2, Exponential(), 10000, 11, workers=2)
    assert np.array_equal(a, b)


def test_expect_constant_function():
    est, se = expect_mu_t(lambda x: np.ones_like(x), 1.0, SumKernel(2), Normal(), 1000, 0)
    assert est == 1.0 and se == 0.0


def test_identity_kernel_keeps_mean():
    est, se = expect_mu_t(lambda x: x, 2.0, IdentityKernel(2), Exponential(), 20000, 3)
    assert abs(est - 1.0) < 4 * se


def test_sum_kernel_second_moment():
    est, se = expect_mu_t(lambda x: x**2, 1.0, SumKernel(2), Normal(), 10**5, 2)
    assert abs(est - math.e) < 3 * se


@pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
def test_wealth_mean_preserved(t):
    est, se = expect_mu_t(lambda x: x, t, WEALTH2, PointMass(1.0), 20000, 7)
    assert abs(est - 1.0) < 4 * se


@pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
def test_second_moment_curve(t):
    est, se = expect_mu_t(lambda x: x**2, t, WEALTH2, Exponential(), 10**5, 8)
    target = second_moment_curve(WEALTH2.weights, 1.0, 2.0, t)
    assert abs(est - target) < 3 * se


def test_exact_identity_is_base():
    base = DiscreteLaw((0, 1, 2), (0.2, 0.5, 0.3))
    sol = exact_mu_t_discrete(base, IdentityKernel(2), 1.0, 6)
    assert np.allclose(sol.probs / sol.probs.sum(), base.probs, atol=1e-14)


def test_exact_t0_is_base():
    base = DiscreteLaw((0, 1, 2), (0.5, 0.5, 0.0))
    sol = exact_mu_t_discrete(base, CappedSumKernel(2, 2), 0.0, 5)
    assert np.allclose(sol.probs, base.probs)


def test_enumerate_and_recursive_agree():
    base = DiscreteLaw((0, 1, 2, 3), (0.4, 0.3, 0.2, 0.1))
    k = CappedSumKernel(2, 3)
    a = uniform_tree_laws(base, k, 6, "enumerate")
    b = uniform_tree_laws(base, k, 6, "recursive")
    for x, y in zip(a, b):
        assert np.allclose(x, y, atol=1e-14)


def test_enumerate_matches_explicit_tree_average():
    base = DiscreteLaw((0, 1, 2), (0.5, 0.3, 0.2))
    k = CappedSumKernel(3, 2)
    laws = uniform_tree_laws(base, k, 2, "enumerate")
    rng = np.random.default_rng(0)
    trees = enumerate_trees(3, 2)
    draws = np.array([sample_tree_law(trees[i % 3], k, base, rng) for i in range(30000)])
    freq = np.array([(draws == v).mean() for v in base.support])
    assert np.all(np.abs(freq - laws[2]) < 4 * np.sqrt(laws[2] * (1 - laws[2]) / len(draws)) + 1e-12)


def test_exact_matches_monte_carlo():
    base = DiscreteLaw((0, 1, 2, 3, 4), (0.5, 0.3, 0.2, 0.0, 0.0))
    k = CappedSumKernel(2, 4)
    sol = exact_mu_t_discrete(base, k, 0.5, 40, method="recursive")
    x = sample_mu_t_many(0.5, k, base, 10**5, 9)
    for v, p in zip(sol.support, sol.probs):
        se = math.sqrt(max(p * (1 - p), 1e-12) / len(x))
        assert abs((x == v).mean() - p) < 4 * se + 1e-9


def test_exact_budget():
    base = DiscreteLaw((0, 1, 2), (0.5, 0.3, 0.2))
    with pytest.raises(NumericBudgetError):
        exact_mu_t_discrete(base, CappedSumKernel(2, 2), 1.0, 12, budget=10**4)


def test_exact_rejects_random_kernel():
    base = DiscreteLaw((0, 1), (0.5, 0.5))
    with pytest.raises(ValueError):
        exact_mu_t_discrete(base, WEALTH2, 1.0, 3)


@pytest.mark.parametrize("m", [2, 3])
def test_exact_residual_small(m):
    base = DiscreteLaw((0, 1, 2, 3), (0.4, 0.3, 0.3, 0.0))
    for t in (0.5, 1.0):
        n_max = closed_law(m, t + 1e-2, tol=1e-9).n_max
        r = cauchy_residual_exact(np.cos, t, 1e-2, base, CappedSumKernel(m, 3), n_max)
        assert r < 1e-4  # O(dt^2) central difference plus truncation


def test_exact_residual_detects_wrong_weights():
    # swapping in the m=2 weights for an m=3 tree family breaks the equation
    base = DiscreteLaw((0, 1, 2, 3), (0.4, 0.3, 0.3, 0.0))
    k = CappedSumKernel(3, 3)
    laws = uniform_tree_laws(base, k, 30, "recursive")
    fx = np.cos(np.array(base.support))

    def mix(s):
        return sum(p_closed(2, n, s) * law for n, law in enumerate(laws))

    from wildsim.wildsum import _kernel_table, _push
    lhs = (mix(1.01) @ fx - mix(0.99) @ fx) / 0.02
    now = mix(1.0)
    rhs = _push(_kernel_table(base, k), [now] * 3) @ fx - now @ fx
    assert abs(lhs - rhs) > 1e-2


def test_mc_residual_identity_and_wealth_mean():
    r = cauchy_residual(lambda x: x, 1.0, 1e-2, IdentityKernel(2), Normal(), 20000, 1)
    assert r.residual < 4 * r.stderr + 1e-12
    r = cauchy_residual(lambda x: x, 1.0, 1e-2, WEALTH2, Exponential(), 20000, 2)
    assert r.residual < 4 * r.stderr


def test_residual_preconditions():
    with pytest.raises(ValueError):
        cauchy_residual(lambda x: x, 1.0, 0.5, SumKernel(2), Normal(), 100, 1)
    with pytest.raises(ValueError):
        cauchy_residual(lambda x: x, 0.001, 0.01, SumKernel(2), Normal(), 100, 1)


def test_ensemble_weights_validated():
    with pytest.raises(ValueError):
        SampleEnsemble([1.0, 2.0], weights=[0.3, 0.3])
    e = SampleEnsemble([1.0, 3.0], weights=[0.25, 0.75])
    assert e.mean() == 2.5
