"""Laws of the number of interactions in a tagged history up to time t.

Time is measured after the change of clock that makes each agent meet at
rate 1.  All truncated laws keep their missing probability in ``tail``
instead of being renormalised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .trees import count_trees

DEFAULT_STEP = 1e-3
LOG_SPACE_FROM = 50


@dataclass
class BranchingLaw:
    m: int
    t: float
    probs: np.ndarray
    source: str
    N: int | None = None
    tail: float = field(init=False)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        self.tail = max(0.0, 1.0 - math.fsum(self.probs))

    @property
    def n_max(self) -> int:
        return len(self.probs) - 1

    def mean(self) -> float:
        return math.fsum(np.arange(len(self.probs)) * self.probs)

    def tail_sums(self) -> np.ndarray:
        """``P(n > k)`` for k = 0..n_max, computed from the recorded mass."""
        return self.tail + np.concatenate([np.cumsum(self.probs[::-1])[::-1][1:], [0.0]])


def _check(m, n, t):
    if int(m) != m or m < 2:
        raise ValueError(f"arity must be an integer >= 2, got {m!r}")
    if int(n) != n or n < 0:
        raise ValueError(f"count must be a non-negative integer, got {n!r}")
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t!r}")


def p_closed(m: int, n: int, t: float) -> float:
    """Probability of exactly ``n`` interactions by time ``t`` in the limit law.

    ``count_trees(m, n) / ((m-1)^n n!) * exp(-t) * (1 - exp(-(m-1) t))^n``,
    evaluated in log space once ``n`` exceeds 50.
    """
    _check(m, n, t)
    q = -math.expm1(-(m - 1) * t)
    if n == 0:
        return math.exp(-t)
    if q == 0.0:
        return 0.0
    if n <= LOG_SPACE_FROM:
        coef = count_trees(m, n) / ((m - 1) ** n * math.factorial(n))
        return coef * math.exp(-t) * q**n
    r = 1.0 / (m - 1)
    log_coef = math.lgamma(n + r) - math.lgamma(r) - math.lgamma(n + 1)
    return math.exp(log_coef - t + n * math.log(q))


def closed_law(m: int, t: float, n_max: int | None = None, tol: float = 1e-10) -> BranchingLaw:
    """Vector of ``p_closed(m, n, t)`` for n = 0..n_max.

    With ``n_max=None`` the support is extended until rigorous bounds on both
    the missing mass and the missing first moment drop below ``tol``.  Terms
    come from the ratio ``p[n+1]/p[n] = q (n + r)/(n + 1)`` with
    ``q = 1 - exp(-(m-1)t)`` and ``r = 1/(m-1)``; that ratio never exceeds
    ``q``, which gives the geometric tail bounds.
    """
    _check(m, 0, t)
    q = -math.expm1(-(m - 1) * t)
    r = 1.0 / (m - 1)
    if n_max is None:
        if q == 0.0:
            n_max = 0
        else:
            # p_n <= exp(-t) q^n * max(1, n^(r-1)) <= exp(-t) q^n, so solve for the tail
            n_max = 1
            while True:
                p_next = math.exp(-t + (n_max + 1) * math.log(q))
                mass = p_next / (1 - q)
                moment = p_next * ((n_max + 1) / (1 - q) + q / (1 - q) ** 2)
                if mass < tol and moment < tol:
                    break
                n_max = max(n_max + 1, int(n_max * 1.25))
    n = np.arange(n_max)
    ratios = q * (n + r) / (n + 1)
    probs = math.exp(-t) * np.concatenate([[1.0], np.cumprod(ratios)])
    return BranchingLaw(m, t, probs, "closed_form")


def _rk4_pure_birth(rates: np.ndarray, t: float, step: float, occupation: bool = False):
    """Forward equations of a pure-birth chain started at 0, fixed-step RK4.

    ``dp[0] = -rates[0] p[0]``, ``dp[n] = rates[n-1] p[n-1] - rates[n] p[n]``.
    When the fastest rate makes ``step`` too coarse for RK4 the step is
    divided evenly, which keeps the grid fixed and reproducible.  With
    ``occupation`` the time integral of each ``p[n]`` is returned too.
    """
    if not 0 < step <= 0.1:
        raise ValueError(f"step must lie in (0, 0.1], got {step!r}")
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t!r}")
    rates = np.asarray(rates, dtype=float)
    steps = math.ceil(t / step - 1e-12) if t > 0 else 0
    max_rate = rates.max(initial=0.0)
    if steps and max_rate * (t / steps) > 0.5:
        steps = math.ceil(t * max_rate / 0.5)
    h = t / steps if steps else 0.0

    def deriv(p):
        d = -rates * p
        d[1:] += rates[:-1] * p[:-1]
        return d

    p = np.zeros(len(rates))
    p[0] = 1.0
    occ = np.zeros(len(rates))
    for _ in range(steps):
        k1 = deriv(p)
        k2 = deriv(p + 0.5 * h * k1)
        k3 = deriv(p + 0.5 * h * k2)
        k4 = deriv(p + h * k3)
        if occupation:
            # RK4 on the augmented system occ' = p
            occ += h / 6 * (p + 2 * (p + 0.5 * h * k1) + 2 * (p + 0.5 * h * k2) + (p + h * k3))
        p = p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return (p, occ) if occupation else p


def limit_rates(m: int, n_max: int) -> np.ndarray:
    return (m - 1) * np.arange(n_max + 1, dtype=float) + 1.0


def p_kolmogorov(m: int, n_max: int, t: float, step: float = DEFAULT_STEP) -> BranchingLaw:
    """Integrate the limiting forward system with rates ``(m-1) n + 1``.

    Truncated at ``n_max``; probability that leaves state ``n_max`` shows up
    as tail mass.
    """
    _check(m, 0, t)
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    p = _rk4_pure_birth(limit_rates(m, n_max), t, step)
    return BranchingLaw(m, t, p, "kolmogorov")


def max_reachable(m: int, N: int) -> int:
    """Largest n with ``(m-1) n + 1 <= N``: a history cannot have more leaves than agents."""
    return (N - 1) // (m - 1)


def lambda_finite_exact(m: int, n: int, N: int) -> Fraction:
    if N < m:
        raise ValueError(f"population {N} smaller than arity {m}")
    lines = (m - 1) * n + 1
    if lines > N:
        raise ValueError(f"history with {lines} lines does not fit in a population of {N}")
    return Fraction(lines * math.comb(N - lines, m - 1), math.comb(N - 1, m - 1))


def lambda_finite(m: int, n: int, N: int) -> float:
    """Rate at which a history with ``n`` interactions grows in a population of N.

    ``((m-1)n+1) * C(N - (m-1)n - 1, m-1) / C(N-1, m-1)``: each of the
    ``(m-1)n+1`` lines meets ``m-1`` agents from outside the history.  The
    value is exactly 1 at ``n = 0`` and below ``(m-1)n+1`` for ``n >= 1``.
    """
    _check(m, n, 0.0)
    return float(lambda_finite_exact(m, n, N))


def finite_rates(m: int, N: int, n_max: int) -> np.ndarray:
    top = max_reachable(m, N)
    return np.array(
        [lambda_finite(m, n, N) if n <= top else 0.0 for n in range(n_max + 1)]
    )


def p_finite_N(m: int, N: int, n_max: int, t: float, step: float = DEFAULT_STEP) -> BranchingLaw:
    """Law of the history size in a population of ``N`` agents.

    States that would need more than ``N`` lines are unreachable; the last
    reachable state has rate 0 and is absorbing.
    """
    _check(m, 0, t)
    if N < m:
        raise ValueError(f"population {N} smaller than arity {m}")
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    p = _rk4_pure_birth(finite_rates(m, N, n_max), t, step)
    return BranchingLaw(m, t, p, "finite_N", N=N)


def geometric_dominating(m: int, n: int, t: float) -> float:
    """``exp(-mt) (1 - exp(-mt))^n``: the law under rates ``m (n + 1)``."""
    _check(m, n, t)
    return math.exp(-m * t) * (-math.expm1(-m * t)) ** n


def geometric_law(m: int, t: float, n_max: int) -> BranchingLaw:
    _check(m, n_max, t)
    q = -math.expm1(-m * t)
    n = np.arange(n_max + 1)
    with np.errstate(divide="ignore"):
        probs = np.exp(-m * t + n * np.log(q)) if q > 0 else (n == 0).astype(float)
    return BranchingLaw(m, t, probs, "geometric_bound")


def _redundant_rate_bound(m: int, N: int, n):
    """Per-history-size term of the redundant-line bound: ``(N/m) C(L,2) / C(N,m)``."""
    lines = (m - 1) * np.asarray(n, dtype=float) + 1
    return (N / m) * lines * (lines - 1) / 2 / math.comb(N, m)


def redundant_mean_bound(m: int, N: int, t: float, n_max: int, step: float = DEFAULT_STEP) -> float:
    """Upper bound on the mean number of redundant lines in a tagged history.

    Sums ``(N/m) C((m-1)n+1, 2) / C(N, m) * p_{N,n}(t)`` for n <= n_max and
    closes the series with the same terms weighted by the dominating
    geometric law, which is valid because the summand increases with n.

    The bound is only meaningful for ``m = 2`` at moderate ``t``; see the
    README section on redundant lines.
    """
    _check(m, n_max, t)
    law = p_finite_N(m, N, max(n_max, 1), t, step)
    n = np.arange(law.n_max + 1)
    head = math.fsum(_redundant_rate_bound(m, N, n) * law.probs)
    # geometric tail: sum_{n > n_max} (a n^2 + b n + c) (1-q) q^n with n = K + j
    q = -math.expm1(-m * t)
    if q == 0.0:
        return head
    K = law.n_max + 1
    scale = (N / m) / math.comb(N, m) / 2
    ej = q / (1 - q)
    ej2 = q * (1 + q) / (1 - q) ** 2
    # L(L-1) with L = (m-1)(K+j) + 1 expands to quadratic in j
    a = (m - 1) ** 2
    l0 = (m - 1) * K + 1
    poly = a * ej2 + (2 * l0 - 1) * (m - 1) * ej + l0 * (l0 - 1)
    tail = scale * math.exp(K * math.log(q)) * poly
    return head + tail


def redundant_rate(m: int, N: int, n: int) -> float:
    """Exact rate of meetings containing at least two lines of a size-n history."""
    lines = (m - 1) * n + 1
    if lines > N:
        return 0.0
    total = math.comb(N, m)
    free = math.comb(N - lines, m) + lines * math.comb(N - lines, m - 1)
    return float(Fraction(N, m) * Fraction(total - free, total))


def redundant_mean_exact(m: int, N: int, t: float, n_max: int | None = None,
                         step: float = DEFAULT_STEP) -> float:
    """Expected number of redundant lines found by the backward sweep.

    Between two tree edges a history of size n collects redundant meetings
    at the constant rate :func:`redundant_rate`, so the expectation is that
    rate times the expected time spent at size n, summed over n.
    """
    _check(m, 0, t)
    if n_max is None:
        n_max = min(max_reachable(m, N), closed_law(m, t, tol=1e-13).n_max + 10)
    n_max = max(n_max, 1)
    _, occ = _rk4_pure_birth(finite_rates(m, N, n_max), t, step, occupation=True)
    rates = np.array([redundant_rate(m, N, n) for n in range(n_max + 1)])
    return math.fsum(rates * occ)
