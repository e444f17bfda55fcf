import numpy as np
import pytest
from scipy import stats

from wildsim.kernels import (
    CappedSumKernel,
    IdentityKernel,
    SumKernel,
    WealthKernel,
    apply_kernel,
    kernel_from_spec,
    validate_weight_spec,
    weights_from_spec,
)


def test_identity_and_sum():
    x = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(apply_kernel(IdentityKernel(3), x), x)
    assert np.array_equal(apply_kernel(SumKernel(3), x), [6.0, 6.0, 6.0])


def test_capped_sum():
    assert np.array_equal(CappedSumKernel(2, 4).apply([3.0, 3.0]), [4.0, 4.0])


def test_wealth_realized_weights():
    k = WealthKernel(weights_from_spec(2, {"family": "uniform"}))
    noise = np.array([[0.25, 0.5], [0.1, 0.2]])
    out = k.apply([2.0, 4.0], noise=noise)
    assert out[0] == 0.25 * 2 + 0.5 * 4


def test_arity_mismatch():
    with pytest.raises(ValueError):
        SumKernel(3).apply([1.0, 2.0])


@pytest.mark.parametrize("m,spec,eta", [
    (2, {"family": "uniform"}, 1 / 3),
    (3, {"family": "uniform", "lo": 0.0, "hi": 2 / 3}, 5 / 9),
    (2, {"family": "scaled_beta", "alpha": 2.0, "beta": 2.0}, 1 - 2 * 0.3),
])
def test_validation_passes(m, spec, eta):
    rep = validate_weight_spec(weights_from_spec(m, spec), 10**4, rng=0)
    assert rep.passed, rep.reasons
    assert rep.eta == pytest.approx(eta, rel=1e-12)
    assert abs(rep.mean - 1 / m) < 3 * rep.mean_se


def test_validation_rejects_bernoulli():
    rep = validate_weight_spec(weights_from_spec(2, {"family": "discrete", "values": [0, 1], "probs": [0.5, 0.5]}),
                               10**4, rng=0)
    assert not rep.passed
    assert any("Bernoulli" in r for r in rep.reasons)


def test_validation_rejects_wrong_mean_and_support():
    rep = validate_weight_spec(weights_from_spec(2, {"family": "uniform", "lo": 0.0, "hi": 0.5}), 10**4, rng=0)
    assert not rep.passed
    rep = validate_weight_spec(weights_from_spec(2, {"family": "uniform", "lo": -0.5, "hi": 1.5}), 10**4, rng=0)
    assert not rep.passed


def test_validation_needs_samples():
    with pytest.raises(ValueError):
        validate_weight_spec(weights_from_spec(2, {"family": "uniform"}), 100)


def test_wealth_exchangeable():
    k = WealthKernel(weights_from_spec(2, {"family": "uniform"}))
    X = np.tile([0.3, 2.0], (10**5, 1))
    a = k.first_output(X, np.random.default_rng(1))
    b = k.first_output(X[:, ::-1], np.random.default_rng(2))
    assert stats.ks_2samp(a, b).pvalue > 1e-3


def test_wealth_first_moment():
    rng = np.random.default_rng(3)
    k = WealthKernel(weights_from_spec(2, {"family": "uniform"}))
    X = rng.exponential(size=(10**5, 2))
    y = k.first_output(X, rng)
    se = np.hypot(y.std(ddof=1), X.std(ddof=1)) / np.sqrt(len(y))
    assert abs(y.mean() - X.mean()) < 3 * se


def test_kernel_from_spec():
    assert kernel_from_spec({"kind": "sum", "m": 3}) == SumKernel(3)
    k = kernel_from_spec({"kind": "wealth", "m": 2, "weights": {"family": "uniform", "lo": 0.0, "hi": 1.0}})
    assert isinstance(k, WealthKernel) and k.m == 2
    with pytest.raises(ValueError):
        kernel_from_spec({"kind": "sum", "m": 2, "extra": 1})
    with pytest.raises(ValueError):
        kernel_from_spec({"kind": "bogus", "m": 2})
