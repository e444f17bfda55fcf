"""Probability laws on the real line: base samplers and empirical ensembles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class Normal:
    loc: float = 0.0
    scale: float = 1.0
    kind = "normal"

    def sample(self, rng, size=None):
        return rng.normal(self.loc, self.scale, size)

    @property
    def mean(self):
        return self.loc

    @property
    def second_moment(self):
        return self.loc**2 + self.scale**2

    def to_json(self):
        return {"kind": self.kind, "loc": self.loc, "scale": self.scale}


@dataclass(frozen=True)
class Exponential:
    scale: float = 1.0
    kind = "exponential"

    def sample(self, rng, size=None):
        return rng.exponential(self.scale, size)

    @property
    def mean(self):
        return self.scale

    @property
    def second_moment(self):
        return 2 * self.scale**2

    def to_json(self):
        return {"kind": self.kind, "scale": self.scale}


@dataclass(frozen=True)
class PointMass:
    value: float = 1.0
    kind = "point"

    def sample(self, rng, size=None):
        if size is None:
            return float(self.value)
        return np.full(size, float(self.value))

    @property
    def mean(self):
        return self.value

    @property
    def second_moment(self):
        return self.value**2

    def to_json(self):
        return {"kind": self.kind, "value": self.value}


@dataclass(frozen=True)
class Uniform:
    lo: float = 0.0
    hi: float = 1.0
    kind = "uniform"

    def sample(self, rng, size=None):
        return rng.uniform(self.lo, self.hi, size)

    @property
    def mean(self):
        return (self.lo + self.hi) / 2

    @property
    def second_moment(self):
        return (self.lo**2 + self.lo * self.hi + self.hi**2) / 3

    def to_json(self):
        return {"kind": self.kind, "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class DiscreteLaw:
    """Finitely supported law; doubles as a base sampler."""

    support: tuple
    probs: tuple
    kind = "discrete"

    def __post_init__(self):
        support = tuple(float(x) for x in self.support)
        probs = tuple(float(p) for p in self.probs)
        if len(support) != len(probs) or not support:
            raise ValueError("support and probs must be non-empty and of equal length")
        if len(set(support)) != len(support):
            raise ValueError("support points must be distinct")
        if any(p < 0 for p in probs) or abs(math.fsum(probs) - 1.0) > 1e-12:
            raise ValueError("probs must be non-negative and sum to 1")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)

    def sample(self, rng, size=None):
        idx = rng.choice(len(self.support), size=size, p=self.probs)
        return np.asarray(self.support)[idx] if size is not None else self.support[idx]

    def expect(self, f) -> float:
        return math.fsum(p * f(x) for x, p in zip(self.support, self.probs))

    @property
    def mean(self):
        return self.expect(lambda x: x)

    @property
    def second_moment(self):
        return self.expect(lambda x: x * x)

    def to_json(self):
        return {"kind": self.kind, "values": list(self.support), "probs": list(self.probs)}


_LAWS = {
    "normal": lambda d: Normal(float(d.get("loc", 0.0)), float(d.get("scale", 1.0))),
    "exponential": lambda d: Exponential(float(d.get("scale", 1.0))),
    "point": lambda d: PointMass(float(d.get("value", 1.0))),
    "uniform": lambda d: Uniform(float(d.get("lo", 0.0)), float(d.get("hi", 1.0))),
    "discrete": lambda d: DiscreteLaw(tuple(d["values"]), tuple(d["probs"])),
}
_LAW_KEYS = {
    "normal": {"loc", "scale"},
    "exponential": {"scale"},
    "point": {"value"},
    "uniform": {"lo", "hi"},
    "discrete": {"values", "probs"},
}


def law_from_spec(spec: dict):
    """Build a base law from ``{"kind": ..., <params>}``."""
    kind = spec.get("kind")
    if kind not in _LAWS:
        raise ValueError(f"unknown law kind {kind!r}; expected one of {sorted(_LAWS)}")
    extra = set(spec) - _LAW_KEYS[kind] - {"kind"}
    if extra:
        raise ValueError(f"unknown keys for {kind} law: {sorted(extra)}")
    return _LAWS[kind](spec)


@dataclass
class SampleEnsemble:
    """Weighted sample standing in for a law on the real line."""

    values: np.ndarray
    weights: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).ravel()
            if w.shape != self.values.shape:
                raise ValueError("weights and values differ in length")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("weights must be non-negative and sum to 1")
            self.weights = w

    def __len__(self):
        return len(self.values)

    def expect(self, f: Callable = None) -> tuple[float, float]:
        """Weighted mean of ``f(values)`` and its standard error."""
        y = self.values if f is None else np.asarray(f(self.values), dtype=float)
        y = np.broadcast_to(y, self.values.shape)
        n = len(y)
        if self.weights is None:
            est = float(np.mean(y))
            se = float(np.std(y, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
            return est, se
        w = self.weights
        est = float(np.dot(w, y))
        # effective sample size for the standard error of a weighted mean
        n_eff = 1.0 / float(np.dot(w, w))
        var = float(np.dot(w, (y - est) ** 2))
        return est, math.sqrt(var / n_eff) if n_eff > 1 else 0.0

    def mean(self) -> float:
        return self.expect()[0]

    def moment(self, k: int) -> float:
        return self.expect(lambda x: x**k)[0]

    def variance_with_se(self) -> tuple[float, float]:
        """Unweighted sample variance and its large-sample standard error."""
        x = self.values
        n = len(x)
        c = x - x.mean()
        var = float(np.dot(c, c) / (n - 1))
        m4 = float(np.mean(c**4))
        return var, math.sqrt(max(m4 - var**2, 0.0) / n)
