"""Interaction kernels: how m meeting agents update their states.

Every kernel exposes the same small surface:

``apply(states, rng=None, noise=None)``
    new states of the m participants.
``first_output(X, rng)``
    vectorised first output for a batch ``X`` of shape ``(B, m)``; this is
    all the macroscopic solution needs.
``draw_noise(rng, size)``
    pre-drawn randomness for ``size`` meetings (``None`` for deterministic
    kernels), so a meeting can be replayed exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _check_arity(m):
    if int(m) != m or m < 2:
        raise ValueError(f"arity must be an integer >= 2, got {m!r}")


@dataclass(frozen=True)
class UniformWeights:
    lo: float = 0.0
    hi: float = 1.0
    family = "uniform"

    def sample(self, rng, size):
        return rng.uniform(self.lo, self.hi, size)

    @property
    def mean(self):
        return (self.lo + self.hi) / 2

    @property
    def second_moment(self):
        return (self.lo**2 + self.lo * self.hi + self.hi**2) / 3

    @property
    def bounds(self):
        return self.lo, self.hi

    def is_zero_one(self):
        return False

    def to_json(self):
        return {"family": self.family, "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class ScaledBetaWeights:
    alpha: float
    beta: float
    scale: float = 1.0
    family = "scaled_beta"

    def sample(self, rng, size):
        return self.scale * rng.beta(self.alpha, self.beta, size)

    @property
    def mean(self):
        return self.scale * self.alpha / (self.alpha + self.beta)

    @property
    def second_moment(self):
        a, b = self.alpha, self.beta
        return self.scale**2 * a * (a + 1) / ((a + b) * (a + b + 1))

    @property
    def bounds(self):
        return 0.0, self.scale

    def is_zero_one(self):
        return False

    def to_json(self):
        return {"family": self.family, "alpha": self.alpha, "beta": self.beta, "scale": self.scale}


@dataclass(frozen=True)
class DiscreteWeights:
    values: tuple
    probs: tuple
    family = "discrete"

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if len(self.values) != len(self.probs) or not self.values:
            raise ValueError("values and probs must be non-empty and of equal length")
        if any(p < 0 for p in self.probs) or abs(math.fsum(self.probs) - 1) > 1e-12:
            raise ValueError("probs must be non-negative and sum to 1")

    def sample(self, rng, size):
        return np.asarray(self.values)[rng.choice(len(self.values), size=size, p=self.probs)]

    @property
    def mean(self):
        return math.fsum(v * p for v, p in zip(self.values, self.probs))

    @property
    def second_moment(self):
        return math.fsum(v * v * p for v, p in zip(self.values, self.probs))

    @property
    def bounds(self):
        live = [v for v, p in zip(self.values, self.probs) if p > 0]
        return min(live), max(live)

    def is_zero_one(self):
        return all(v in (0.0, 1.0) for v, p in zip(self.values, self.probs) if p > 0)

    def to_json(self):
        return {"family": self.family, "values": list(self.values), "probs": list(self.probs)}


@dataclass(frozen=True)
class WeightSpec:
    """Law of the i.i.d. weights H_1..H_m of the wealth-exchange kernel."""

    m: int
    family: UniformWeights | ScaledBetaWeights | DiscreteWeights

    def __post_init__(self):
        _check_arity(self.m)

    def sample(self, rng, size):
        return self.family.sample(rng, size)

    @property
    def sum_of_squares(self) -> float:
        """Closed-form ``E[H_1^2 + ... + H_m^2]``."""
        return self.m * self.family.second_moment

    def to_json(self):
        return self.family.to_json()


def weights_from_spec(m: int, spec: dict) -> WeightSpec:
    spec = dict(spec)
    family = spec.pop("family", None)
    allowed = {
        "uniform": ({"lo", "hi"}, lambda d: UniformWeights(float(d.get("lo", 0.0)), float(d.get("hi", 1.0)))),
        "scaled_beta": ({"alpha", "beta", "scale"},
                        lambda d: ScaledBetaWeights(float(d["alpha"]), float(d["beta"]), float(d.get("scale", 1.0)))),
        "discrete": ({"values", "probs"}, lambda d: DiscreteWeights(tuple(d["values"]), tuple(d["probs"]))),
    }
    if family not in allowed:
        raise ValueError(f"unknown weight family {family!r}; expected one of {sorted(allowed)}")
    keys, build = allowed[family]
    extra = set(spec) - keys
    if extra:
        raise ValueError(f"unknown keys for {family} weights: {sorted(extra)}")
    return WeightSpec(m, build(spec))


@dataclass(frozen=True)
class WeightReport:
    m: int
    n_samples: int
    mean: float
    mean_se: float
    sum_sq: float
    sum_sq_se: float
    exact_mean: float
    exact_sum_sq: float
    passed: bool
    reasons: tuple

    @property
    def eta(self) -> float:
        return 1.0 - self.exact_sum_sq


def validate_weight_spec(spec: WeightSpec, n_samples: int = 10**4, rng=None) -> WeightReport:
    """Check the weight law is admissible for the wealth-exchange model.

    Requirements: support inside [0, 1], mean 1/m, ``E[sum H_i^2] < 1`` and
    not a {0, 1}-valued law.  The mean is judged on a Monte Carlo estimate
    (fails beyond 3 standard errors) and on the closed form.
    """
    if n_samples < 10**4:
        raise ValueError("n_samples must be at least 10^4")
    rng = np.random.default_rng(rng)
    m = spec.m
    h = spec.sample(rng, (n_samples, m))
    per_draw = h.mean(axis=1)
    sq = (h**2).sum(axis=1)
    mean, mean_se = float(per_draw.mean()), float(per_draw.std(ddof=1) / math.sqrt(n_samples))
    sum_sq, sum_sq_se = float(sq.mean()), float(sq.std(ddof=1) / math.sqrt(n_samples))
    reasons = []
    lo, hi = spec.family.bounds
    if lo < 0 or hi > 1:
        reasons.append(f"support [{lo}, {hi}] not inside [0, 1]")
    if spec.family.is_zero_one():
        reasons.append("weights are {0,1}-valued (Bernoulli)")
    if abs(mean - 1 / m) > 3 * mean_se + 1e-12:
        reasons.append(f"Monte Carlo mean {mean:.6g} is more than 3 standard errors from 1/m")
    if abs(spec.family.mean - 1 / m) > 1e-9:
        reasons.append(f"exact mean {spec.family.mean:.6g} differs from 1/m")
    if spec.sum_of_squares >= 1 or sum_sq >= 1:
        reasons.append("E[sum H_i^2] >= 1")
    return WeightReport(m, n_samples, mean, mean_se, sum_sq, sum_sq_se,
                        spec.family.mean, spec.sum_of_squares, not reasons, tuple(reasons))


class Kernel:
    """Base class; subclasses set ``m``, ``kind`` and ``deterministic``."""

    m: int
    kind: str
    deterministic = True

    def draw_noise(self, rng, size):
        return None

    def apply(self, states, rng=None, noise=None):
        raise NotImplementedError

    def first_output(self, X, rng=None):
        raise NotImplementedError

    def _check_states(self, states):
        x = np.asarray(states, dtype=float)
        if x.shape != (self.m,):
            raise ValueError(f"{self.kind} kernel expects {self.m} states, got shape {x.shape}")
        return x


@dataclass(frozen=True)
class IdentityKernel(Kernel):
    m: int = 2
    kind = "identity"

    def __post_init__(self):
        _check_arity(self.m)

    def apply(self, states, rng=None, noise=None):
        return self._check_states(states).copy()

    def first_output(self, X, rng=None):
        return np.asarray(X, dtype=float)[:, 0].copy()

    def to_json(self):
        return {"kind": self.kind, "m": self.m}


@dataclass(frozen=True)
class SumKernel(Kernel):
    """Information pooling: every participant leaves with the total."""

    m: int = 2
    kind = "sum"

    def __post_init__(self):
        _check_arity(self.m)

    def apply(self, states, rng=None, noise=None):
        x = self._check_states(states)
        return np.full(self.m, x.sum())

    def first_output(self, X, rng=None):
        return np.asarray(X, dtype=float).sum(axis=1)

    def to_json(self):
        return {"kind": self.kind, "m": self.m}


@dataclass(frozen=True)
class CappedSumKernel(Kernel):
    """Pooling on the integers {0..cap}: totals above ``cap`` are absorbed at ``cap``."""

    m: int = 2
    cap: int = 4
    kind = "capped_sum"

    def __post_init__(self):
        _check_arity(self.m)

    def apply(self, states, rng=None, noise=None):
        x = self._check_states(states)
        return np.full(self.m, min(x.sum(), float(self.cap)))

    def first_output(self, X, rng=None):
        return np.minimum(np.asarray(X, dtype=float).sum(axis=1), float(self.cap))

    def to_json(self):
        return {"kind": self.kind, "m": self.m, "cap": self.cap}


@dataclass(frozen=True)
class WealthKernel(Kernel):
    """Random-weight mixing: output j is ``sum_i H_i^(j) x_i``.

    Each output slot gets its own independent weight vector, which keeps the
    kernel exchangeable and gives every output the same marginal law.
    """

    weights: WeightSpec
    kind = "wealth"
    deterministic = False

    @property
    def m(self):
        return self.weights.m

    def draw_noise(self, rng, size):
        return self.weights.sample(rng, (size, self.m, self.m))

    def apply(self, states, rng=None, noise=None):
        x = self._check_states(states)
        if noise is None:
            noise = self.weights.sample(rng, (self.m, self.m))
        return noise @ x

    def first_output(self, X, rng=None):
        X = np.asarray(X, dtype=float)
        H = self.weights.sample(rng, X.shape)
        return np.einsum("ij,ij->i", H, X)

    def to_json(self):
        return {"kind": self.kind, "m": self.m, "weights": self.weights.to_json()}


def apply_kernel(kernel: Kernel, states, rng=None):
    """Apply ``kernel`` to one meeting of ``kernel.m`` agents."""
    return kernel.apply(states, rng)


def kernel_from_spec(spec: dict) -> Kernel:
    """Build a kernel from its JSON description.

    ``{"kind": "wealth", "m": 2, "weights": {"family": "uniform", "lo": 0, "hi": 1}}``,
    ``{"kind": "sum", "m": 3}``, ``{"kind": "identity", "m": 2}`` or
    ``{"kind": "capped_sum", "m": 2, "cap": 4}``.
    """
    kind = spec.get("kind")
    keys = {"identity": {"m"}, "sum": {"m"}, "capped_sum": {"m", "cap"}, "wealth": {"m", "weights"}}
    if kind not in keys:
        raise ValueError(f"unknown kernel kind {kind!r}; expected one of {sorted(keys)}")
    extra = set(spec) - keys[kind] - {"kind"}
    if extra:
        raise ValueError(f"unknown keys for {kind} kernel: {sorted(extra)}")
    if "m" not in spec:
        raise ValueError(f"{kind} kernel needs an arity 'm'")
    m = int(spec["m"])
    if kind == "identity":
        return IdentityKernel(m)
    if kind == "sum":
        return SumKernel(m)
    if kind == "capped_sum":
        return CappedSumKernel(m, int(spec.get("cap", 4)))
    if "weights" not in spec:
        raise ValueError("wealth kernel needs a 'weights' object")
    return WealthKernel(weights_from_spec(m, spec["weights"]))
