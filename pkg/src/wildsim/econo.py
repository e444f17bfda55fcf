"""Wealth-exchange model: rate constant, fixed point and convergence rate.

With i.i.d. weights of mean 1/m the map ``S_m(mu) = law(sum_i H_i X_i)``
keeps the mean and contracts the second moment by ``1 - eta`` where
``eta = 1 - E[H_1^2 + ... + H_m^2]``.  The macroscopic law approaches the
fixed point gamma at rate eta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .kernels import WealthKernel, WeightSpec, validate_weight_spec
from .laws import SampleEnsemble
from .particles import ks_distance
from .wildsum import expect_panel, test_panel


def eta(spec: WeightSpec, n_samples: int = 0, rng=None) -> tuple[float, float]:
    """Rate ``1 - E[sum H_i^2]`` and its standard error.

    Built-in weight families have closed forms (standard error 0).  Passing
    ``n_samples > 0`` forces a Monte Carlo estimate instead.
    """
    report = validate_weight_spec(spec, max(n_samples, 10**4), rng)
    if not report.passed:
        raise ValueError("invalid weight law: " + "; ".join(report.reasons))
    if n_samples > 0:
        return 1.0 - report.sum_sq, report.sum_sq_se
    return report.eta, 0.0


def second_moment_fixed_point(spec: WeightSpec, mean: float) -> float:
    """``M2* = (m - 1) M1^2 / (m eta)``, the fixed point of the moment recursion."""
    m = spec.m
    return (m - 1) * mean**2 / (m * (1.0 - spec.sum_of_squares))


def second_moment_curve(spec: WeightSpec, mean: float, second: float, t):
    """Exact ``M2(t)`` under ``dM2/dt = -eta M2 + ((m-1)/m) M1^2``."""
    star = second_moment_fixed_point(spec, mean)
    return star + (second - star) * np.exp(-(1.0 - spec.sum_of_squares) * np.asarray(t, dtype=float))


def min_iterations(spec: WeightSpec, tol: float = 1e-3) -> int:
    """Iterations after which the second-moment error has shrunk by ``tol``."""
    return math.ceil(math.log(tol) / math.log(spec.sum_of_squares))


@dataclass
class FixedPointResult:
    ensemble: SampleEnsemble
    iterations: int
    converged: bool
    ks_history: list
    mean_se: float
    second_moment_se: float

    @property
    def mean(self):
        return self.ensemble.mean()

    @property
    def second_moment(self):
        return self.ensemble.moment(2)


def fixed_point(spec: WeightSpec, initial: SampleEnsemble, iterations: int = 50,
                ensemble_size: int = 10**5, seed=0, ks_tol: float = 1e-2,
                patience: int = 3, min_iter: int | None = None) -> FixedPointResult:
    """Approximate gamma by iterating ``S_m`` on a sample.

    Each step resamples m inputs with replacement from the current ensemble
    and mixes them with fresh weights.  Iteration stops once the KS distance
    between successive ensembles stays below ``ks_tol`` for ``patience``
    steps in a row, but never before ``min_iter`` steps (default: enough for
    the second-moment error to contract by 10^3).

    The standard errors reported for the mean and second moment accumulate
    the sampling noise of every step, propagated through the linear moment
    recursion.
    """
    if initial.weights is not None:
        raise ValueError("initial ensemble must be unweighted")
    x = initial.values
    if not np.all(np.isfinite(x)):
        raise ValueError("initial ensemble has non-finite values")
    m = spec.m
    eta_val = 1.0 - spec.sum_of_squares
    if min_iter is None:
        min_iter = min_iterations(spec)
    rng = np.random.default_rng(seed)
    kernel = WealthKernel(spec)
    n0 = len(x)
    # covariance of (mean, second moment) estimates
    cov = np.cov(np.vstack([x, x * x])) / n0
    history, calm, converged, k = [], 0, False, 0
    prev = initial
    for k in range(1, iterations + 1):
        idx = rng.integers(len(x), size=(ensemble_size, m))
        y = kernel.first_output(x[idx], rng)
        m1 = float(x.mean())
        J = np.array([[1.0, 0.0], [2.0 * (m - 1) / m * m1, 1.0 - eta_val]])
        cov = J @ cov @ J.T + np.cov(np.vstack([y, y * y])) / ensemble_size
        cur = SampleEnsemble(y)
        d = ks_distance(prev, cur)
        history.append(d)
        calm = calm + 1 if d < ks_tol else 0
        x, prev = y, cur
        if k >= min_iter and calm >= patience:
            converged = True
            break
    return FixedPointResult(prev, k, converged, history,
                            math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1]))


def e_sequence(m: int, eta_val, n_max: int, exact: bool = False) -> list:
    """``e_n = a/n (1 + e_1 + ... + e_{n-1})`` with ``e_0 = 1``, ``a = (1-eta)/(m-1)``.

    Pass ``eta_val`` as a :class:`fractions.Fraction` with ``exact=True`` to
    get exact rationals.
    """
    if not 0 < eta_val < 1:
        raise ValueError("eta must lie in (0, 1)")
    if m < 2:
        raise ValueError("m must be at least 2")
    one = Fraction(1) if exact else 1.0
    a = (one - eta_val) / (m - 1)
    out = [one]
    partial = 0 * one  # e_1 + ... + e_{n-1}
    for n in range(1, n_max + 1):
        out.append(a / n * (1 + partial))
        partial += out[-1]
    return out


def e_sequence_ratio(m: int, eta_val, n_max: int, exact: bool = False) -> list:
    """Same sequence via ``e_n = e_{n-1} (n - 1 + a) / n``."""
    one = Fraction(1) if exact else 1.0
    a = (one - eta_val) / (m - 1)
    out = [one]
    for n in range(1, n_max + 1):
        out.append(out[-1] * (n - 1 + a) / n)
    return out


@dataclass
class RateReport:
    eta: float
    a: float
    e_sequence: list
    fitted_rate: float | None
    fitted_constant: float | None
    gap_curve: list  # (t, gap, stderr, argmax function name)
    window: list = field(default_factory=list)
    insufficient_signal: bool = False


def _fit(ts, gaps, ses):
    """Weighted least squares of log(gap) on t; returns (rate, constant)."""
    ts, gaps, ses = map(np.asarray, (ts, gaps, ses))
    w = (gaps / ses) ** 2  # 1 / var(log gap) by the delta method
    A = np.vstack([np.ones_like(ts), ts]).T
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(A * sw[:, None], np.log(gaps) * sw, rcond=None)
    return float(-coef[1]), float(math.exp(coef[0]))


def rate_fit(spec: WeightSpec, base, t_grid, samples_per_t: int = 10**5, seed=0,
             gamma: SampleEnsemble | None = None, gamma_size: int = 10**6, e_max: int = 200,
             workers: int = 1) -> RateReport:
    """Measure how fast ``mu_t`` approaches gamma on the test panel.

    Parameters
    ----------
    spec : WeightSpec
        Weight law of the wealth-exchange kernel.
    base : law
        Initial law mu_0.
    t_grid : sequence of float
        At least 4 times spanning at least ``2 / eta``.
    samples_per_t : int
        Monte Carlo draws of mu_t at each time.
    seed : int
        Root seed; gamma and every time point get their own streams.
    gamma : SampleEnsemble, optional
        Precomputed fixed point; computed from ``gamma_size`` draws of
        ``base`` otherwise.  Either way it is rescaled to the mean of
        ``base``: S_m is linear, so the fixed point with mean c is c times
        the one with mean 1, and this removes the random walk the iteration
        puts on the mean.

    Returns
    -------
    RateReport
        The gap curve (maximum over the panel of ``|<mu_t,f> - <gamma,f>|``)
        and the slope of a weighted fit of ``log gap`` against ``t`` over the
        points where the gap exceeds 5 standard errors.
    """
    ts = sorted(float(t) for t in t_grid)
    eta_val, _ = eta(spec)
    if len(ts) < 4 or ts[-1] - ts[0] < 2 / eta_val:
        raise ValueError(f"t_grid needs >= 4 points spanning >= 2/eta = {2 / eta_val:.4g}")
    root = np.random.SeedSequence(seed)
    s_gamma, s_init, s_times = root.spawn(3)
    panel = test_panel()
    if gamma is None:
        init = SampleEnsemble(base.sample(np.random.default_rng(s_init), gamma_size))
        gamma = fixed_point(spec, init, ensemble_size=gamma_size, seed=s_gamma).ensemble
    gamma = SampleEnsemble(gamma.values * (base.mean / gamma.mean()), gamma.weights)
    ref = {name: gamma.expect(f) for name, f in panel.items()}
    kernel = WealthKernel(spec)
    curve = []
    for t, s in zip(ts, s_times.spawn(len(ts))):
        est = expect_panel(panel, t, kernel, base, samples_per_t, s, workers)
        best = max(panel, key=lambda k: abs(est[k][0] - ref[k][0]))
        gap = abs(est[best][0] - ref[best][0])
        curve.append((t, gap, math.hypot(est[best][1], ref[best][1]), best))
    window = [c for c in curve if c[1] > 5 * c[2]]
    a = (1 - eta_val) / (spec.m - 1)
    seq = e_sequence(spec.m, eta_val, e_max)
    if len(window) < 3:
        return RateReport(eta_val, a, seq, None, None, curve, window, insufficient_signal=True)
    rate, const = _fit([c[0] for c in window], [c[1] for c in window], [c[2] for c in window])
    return RateReport(eta_val, a, seq, rate, const, curve, window)
