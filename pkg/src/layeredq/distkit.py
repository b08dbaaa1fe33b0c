"""Parametric nonnegative distributions with closed-form transforms.

Four families are supported: exponential, deterministic, a mixture of two
adjacent Erlang distributions sharing one rate, and the two-phase
hyperexponential.  These are exactly the families produced by the classical
two-moment fitting rules, so every transform used downstream stays in closed
form.

Transforms accept complex arguments and are the analytic continuation of the
real closed forms; the module-level :func:`lst` enforces ``Re(s) >= 0`` while
the per-class ``lst`` methods do not (callers that deliberately step slightly
outside the half plane, e.g. finite differences at the origin, use those).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import special

__all__ = [
    "Exponential",
    "Deterministic",
    "ErlangMixture",
    "Hyper2",
    "DistSpec",
    "MomentSummary",
    "lst",
    "moments",
    "fit_two_moment",
    "sample",
    "dist_from_config",
    "dist_to_config",
]

# below this the variance is treated as zero when fitting
_SCV_EPS = 1e-12


@dataclass(frozen=True)
class MomentSummary:
    m1: float
    m2: float
    scv: float


class _Dist:
    """Shared behaviour; subclasses provide the closed forms."""

    def lst(self, s):
        raise NotImplementedError

    def lst_d1(self, s):
        raise NotImplementedError

    def log_lst(self, s):
        """Continuous branch of ``log(lst(s))`` on ``Re(s) >= 0``."""
        raise NotImplementedError

    def one_minus_lst(self, s):
        """``1 - lst(s)`` without cancellation for small ``|s|``."""
        raise NotImplementedError

    def raw_moments(self) -> tuple[float, float]:
        raise NotImplementedError

    def moments(self) -> MomentSummary:
        m1, m2 = self.raw_moments()
        return MomentSummary(m1, m2, max(m2 / (m1 * m1) - 1.0, 0.0))

    @property
    def mean(self) -> float:
        return self.raw_moments()[0]

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def encode(self) -> tuple[int, np.ndarray]:
        """Family code and parameter vector for the compiled simulator."""
        raise NotImplementedError


@dataclass(frozen=True)
class Exponential(_Dist):
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"exponential rate must be positive, got {self.rate}")

    def lst(self, s):
        return self.rate / (self.rate + np.asarray(s))

    def lst_d1(self, s):
        return -self.rate / (self.rate + np.asarray(s)) ** 2

    def log_lst(self, s):
        return -special.log1p(np.asarray(s) / self.rate)

    def one_minus_lst(self, s):
        s = np.asarray(s)
        return s / (self.rate + s)

    def raw_moments(self):
        return 1.0 / self.rate, 2.0 / self.rate**2

    def sample(self, rng, size=None):
        return rng.exponential(1.0 / self.rate, size)

    def encode(self):
        return 0, np.array([self.rate, 0.0, 0.0])


@dataclass(frozen=True)
class Deterministic(_Dist):
    value: float

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError(f"deterministic value must be positive, got {self.value}")

    def lst(self, s):
        return np.exp(-self.value * np.asarray(s))

    def lst_d1(self, s):
        return -self.value * np.exp(-self.value * np.asarray(s))

    def log_lst(self, s):
        return -self.value * np.asarray(s)

    def one_minus_lst(self, s):
        return -np.expm1(-self.value * np.asarray(s))

    def raw_moments(self):
        return self.value, self.value**2

    def sample(self, rng, size=None):
        if size is None:
            return self.value
        return np.full(size, self.value)

    def encode(self):
        return 1, np.array([self.value, 0.0, 0.0])


@dataclass(frozen=True)
class ErlangMixture(_Dist):
    """Erlang(k, rate) with probability ``q``, Erlang(k-1, rate) otherwise."""

    k: int
    rate: float
    q: float

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 2:
            raise ValueError(f"Erlang mixture needs integer k >= 2, got {self.k}")
        if not self.rate > 0:
            raise ValueError(f"Erlang rate must be positive, got {self.rate}")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"Erlang mixture weight must lie in [0, 1], got {self.q}")

    def lst(self, s):
        u = self.rate / (self.rate + np.asarray(s))
        return u ** (self.k - 1) * (self.q * u + 1.0 - self.q)

    def lst_d1(self, s):
        s = np.asarray(s)
        k, g, q = self.k, self.rate, self.q
        u = g / (g + s)
        du = -g / (g + s) ** 2
        return du * ((k - 1) * u ** (k - 2) * (q * u + 1.0 - q) + q * u ** (k - 1))

    def log_lst(self, s):
        s = np.asarray(s)
        t = s / (self.rate + s)
        # each factor keeps its argument in (-pi/2, pi/2), so the sum is continuous
        return -(self.k - 1) * special.log1p(s / self.rate) + special.log1p(-self.q * t)

    def one_minus_lst(self, s):
        s = np.asarray(s)
        t = s / (self.rate + s)
        u = 1.0 - t
        # 1 - u**m = t * (1 + u + ... + u**(m-1))
        geo = sum(u**j for j in range(self.k - 1))
        return t * geo + u ** (self.k - 1) * self.q * t

    def raw_moments(self):
        k, g, q = self.k, self.rate, self.q
        m1 = (k - 1 + q) / g
        m2 = (q * k * (k + 1) + (1.0 - q) * (k - 1) * k) / g**2
        return m1, m2

    def sample(self, rng, size=None):
        if size is None:
            shape = self.k if rng.random() < self.q else self.k - 1
            return rng.gamma(shape, 1.0 / self.rate)
        shapes = np.where(rng.random(size) < self.q, self.k, self.k - 1)
        return rng.gamma(shapes, 1.0 / self.rate)

    def encode(self):
        return 2, np.array([float(self.k), self.rate, self.q])


@dataclass(frozen=True)
class Hyper2(_Dist):
    """Exponential(rate1) with probability ``p1``, Exponential(rate2) otherwise."""

    p1: float
    rate1: float
    rate2: float

    def __post_init__(self):
        if not 0.0 < self.p1 < 1.0:
            raise ValueError(f"hyperexponential p1 must lie in (0, 1), got {self.p1}")
        if not (self.rate1 > 0 and self.rate2 > 0):
            raise ValueError("hyperexponential rates must be positive")

    @classmethod
    def balanced(cls, m1: float, scv: float) -> "Hyper2":
        """Balanced-means fit: ``p1/rate1 == p2/rate2``."""
        if not scv > 1.0:
            raise ValueError(f"balanced H2 fit needs scv > 1, got {scv}")
        p1 = 0.5 * (1.0 + math.sqrt((scv - 1.0) / (scv + 1.0)))
        return cls(p1, 2.0 * p1 / m1, 2.0 * (1.0 - p1) / m1)

    def lst(self, s):
        s = np.asarray(s)
        p2 = 1.0 - self.p1
        return self.p1 * self.rate1 / (self.rate1 + s) + p2 * self.rate2 / (self.rate2 + s)

    def lst_d1(self, s):
        s = np.asarray(s)
        p2 = 1.0 - self.p1
        return -self.p1 * self.rate1 / (self.rate1 + s) ** 2 - p2 * self.rate2 / (self.rate2 + s) ** 2

    def log_lst(self, s):
        s = np.asarray(s)
        r1, r2, p1 = self.rate1, self.rate2, self.p1
        lin = (p1 / r2 + (1.0 - p1) / r1) * s
        return special.log1p(lin) - special.log1p(s / r1) - special.log1p(s / r2)

    def one_minus_lst(self, s):
        s = np.asarray(s)
        return self.p1 * s / (self.rate1 + s) + (1.0 - self.p1) * s / (self.rate2 + s)

    def raw_moments(self):
        p2 = 1.0 - self.p1
        m1 = self.p1 / self.rate1 + p2 / self.rate2
        m2 = 2.0 * self.p1 / self.rate1**2 + 2.0 * p2 / self.rate2**2
        return m1, m2

    def sample(self, rng, size=None):
        if size is None:
            rate = self.rate1 if rng.random() < self.p1 else self.rate2
            return rng.exponential(1.0 / rate)
        rates = np.where(rng.random(size) < self.p1, self.rate1, self.rate2)
        return rng.exponential(1.0 / rates)

    def encode(self):
        return 3, np.array([self.p1, self.rate1, self.rate2])


DistSpec = Union[Exponential, Deterministic, ErlangMixture, Hyper2]


def lst(dist: DistSpec, s):
    """Laplace-Stieltjes transform ``E[exp(-s X)]`` for ``Re(s) >= 0``."""
    s_arr = np.asarray(s)
    if np.any(np.real(s_arr) < 0):
        raise ValueError("lst is only defined for Re(s) >= 0")
    return dist.lst(s)


def moments(dist: DistSpec) -> MomentSummary:
    return dist.moments()


def fit_two_moment(m1: float, m2: float) -> DistSpec:
    """Fit a distribution to a mean and a second raw moment.

    scv = 0 gives a point mass, scv = 1 an exponential, scv in (0, 1) a
    mixture of Erlang(k-1) and Erlang(k) with ``1/k <= scv <= 1/(k-1)``, and
    scv > 1 a hyperexponential with balanced means.  At an exact bracket
    boundary the smaller ``k`` is taken.
    """
    if not m1 > 0:
        raise ValueError(f"mean must be positive, got {m1}")
    scv = m2 / (m1 * m1) - 1.0
    if scv < -_SCV_EPS:
        raise ValueError(f"negative variance: m2={m2} < m1**2={m1 * m1}")
    if scv <= _SCV_EPS:
        return Deterministic(m1)
    if abs(scv - 1.0) <= _SCV_EPS:
        return Exponential(1.0 / m1)
    if scv > 1.0:
        return Hyper2.balanced(m1, scv)
    k = max(2, math.ceil(1.0 / scv - 1e-9))
    # weight on the (k-1)-phase branch in the usual parametrisation
    p = (k * scv - math.sqrt(max(k * (1.0 + scv) - k * k * scv, 0.0))) / (1.0 + scv)
    p = min(max(p, 0.0), 1.0)
    return ErlangMixture(k, (k - p) / m1, 1.0 - p)


def sample(dist: DistSpec, rng: np.random.Generator, size=None):
    return dist.sample(rng, size)


_FAMILIES = {
    "exponential": (Exponential, ("rate",)),
    "deterministic": (Deterministic, ("value",)),
    "erlang_mixture": (ErlangMixture, ("k", "rate", "q")),
    "hyper2": (Hyper2, ("p1", "rate1", "rate2")),
}


def dist_from_config(cfg: dict) -> DistSpec:
    """Build a distribution from ``{family: ..., params: {...}}``.

    ``hyper2`` also accepts ``{mean, scv}`` for a balanced-means fit, and every
    family accepts ``{mean, scv}`` via the two-moment fit when ``family`` is
    ``fit``.
    """
    family = cfg.get("family")
    params = dict(cfg.get("params", {}))
    if family == "fit":
        mean, scv = float(params["mean"]), float(params["scv"])
        return fit_two_moment(mean, (1.0 + scv) * mean * mean)
    if family == "hyper2" and "scv" in params:
        return Hyper2.balanced(float(params["mean"]), float(params["scv"]))
    if family not in _FAMILIES:
        raise ValueError(f"unknown distribution family {family!r}")
    cls, names = _FAMILIES[family]
    missing = [n for n in names if n not in params]
    if missing:
        raise ValueError(f"{family}: missing parameter(s) {missing}")
    args = [int(params[n]) if n == "k" else float(params[n]) for n in names]
    return cls(*args)


def dist_to_config(dist: DistSpec) -> dict:
    for family, (cls, names) in _FAMILIES.items():
        if type(dist) is cls:
            return {"family": family, "params": {n: getattr(dist, n) for n in names}}
    raise TypeError(f"not a distribution: {dist!r}")
