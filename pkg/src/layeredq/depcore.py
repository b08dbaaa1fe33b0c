"""One-dependent downtimes.

Consecutive downtimes are linked through

    E[exp(-s D(k+1)) | D(k) = t] = chi(s) * exp(-g(s) t),

so ``D(k+1)`` is an independent part with transform ``chi`` plus the value of
a subordinator (transform ``exp(-g(s) t)``) run for the previous downtime.
The function ``g`` is kept constructive (a small set of tagged forms) so that
it always has a completely monotone derivative and the simulator can draw
its increments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from . import _fastlst
from .distkit import DistSpec, Exponential, dist_from_config, dist_to_config, fit_two_moment

__all__ = [
    "ZeroG",
    "LinearG",
    "CompoundPoissonG",
    "LogLSTG",
    "GFunction",
    "DependencePair",
    "DowntimeStats",
    "stationary_lst",
    "stationary_moments",
    "lag1_stats",
    "phase_compound_pair",
    "independent_pair",
    "from_derivatives",
    "pair_from_config",
    "pair_to_config",
]

_MAX_FACTORS = 100_000


@dataclass(frozen=True)
class ZeroG:
    """g = 0: downtimes are independent."""

    def __call__(self, s):
        return np.zeros_like(np.asarray(s))

    d1 = 0.0
    d2 = 0.0
    samplable = True

    def encode(self):
        return 0, 0.0, 0, np.zeros(3)


@dataclass(frozen=True)
class LinearG:
    """g(s) = s x: the next downtime gains exactly ``x`` per unit of the previous one."""

    x: float

    def __post_init__(self):
        if not 0.0 <= self.x < 1.0:
            raise ValueError(f"linear increment slope must lie in [0, 1), got {self.x}")

    def __call__(self, s):
        return self.x * np.asarray(s)

    @property
    def d1(self):
        return self.x

    d2 = 0.0
    samplable = True

    def encode(self):
        return 1, float(self.x), 0, np.zeros(3)


@dataclass(frozen=True)
class CompoundPoissonG:
    """g(s) = theta (1 - J(s)): Poisson(theta t) many i.i.d. jumps per previous downtime t."""

    theta: float
    jump: DistSpec

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"compound Poisson intensity must be positive, got {self.theta}")

    def __call__(self, s):
        return self.theta * self.jump.one_minus_lst(s)

    @property
    def d1(self):
        return self.theta * self.jump.raw_moments()[0]

    @property
    def d2(self):
        return -self.theta * self.jump.raw_moments()[1]

    samplable = True

    def encode(self):
        code, prm = self.jump.encode()
        return 2, float(self.theta), code, prm


@dataclass(frozen=True)
class LogLSTG:
    """g(s) = -log(base(s)): increments per unit time distributed as ``base``.

    Only an exponential base gives a simulator-friendly (gamma) increment process.
    """

    base: DistSpec

    def __call__(self, s):
        return -self.base.log_lst(s)

    @property
    def d1(self):
        return self.base.raw_moments()[0]

    @property
    def d2(self):
        m1, m2 = self.base.raw_moments()
        return -(m2 - m1 * m1)

    @property
    def samplable(self):
        return isinstance(self.base, Exponential)

    def encode(self):
        code, prm = self.base.encode()
        return 3, 0.0, code, prm


GFunction = Union[ZeroG, LinearG, CompoundPoissonG, LogLSTG]


@dataclass(frozen=True)
class DependencePair:
    chi: DistSpec
    g: GFunction = ZeroG()

    def __post_init__(self):
        if not self.g.d1 < 1.0:
            raise ValueError(f"g'(0) = {self.g.d1} >= 1: stationary downtime has infinite mean")

    @property
    def chi1(self) -> float:
        """chi'(0), minus the mean of the independent component."""
        return -self.chi.raw_moments()[0]

    @property
    def chi2(self) -> float:
        return self.chi.raw_moments()[1]

    @property
    def g1(self) -> float:
        return float(self.g.d1)

    @property
    def g2(self) -> float:
        return float(self.g.d2)

    def dtilde(self, s, tol: float = 1e-15):
        return stationary_lst(self, s, tol)


@dataclass(frozen=True)
class DowntimeStats:
    mean: float
    m2: float
    joint: float

    @property
    def variance(self) -> float:
        return self.m2 - self.mean**2

    @property
    def covariance(self) -> float:
        return self.joint - self.mean**2

    @property
    def r(self) -> float:
        return self.covariance / self.variance


def stationary_lst(pair: DependencePair, s, tol: float = 1e-15, *, return_bound: bool = False):
    """Stationary downtime transform as the product of ``chi`` over iterates of ``g``.

    The product stops once a factor is within ``tol * (1 - g'(0))`` of one,
    with that threshold further scaled by ``|1 - chi(s)|`` when this is below
    one.  Later factors deviate by at most a geometric sequence with ratio
    close to ``g'(0)``, so ``tol`` bounds the truncation error relative to
    ``|1 - D(s)|``; this keeps derivatives at the origin (complex step) and
    differences of nearby transforms accurate.  The bound is returned
    alongside the value when ``return_bound`` is set.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    g1 = pair.g1
    if g1 >= 1.0:
        raise ValueError(f"product diverges: g'(0) = {g1} >= 1")
    x = np.array(s, dtype=complex)
    scalar = x.ndim == 0
    shape = x.shape
    x = x.ravel()
    if not return_bound:
        ccode, cprm = pair.chi.encode()
        vals, ok = _fastlst.dtilde_array(x, ccode, cprm, *pair.g.encode(), tol * (1.0 - g1), _MAX_FACTORS)
        if not ok:
            raise RuntimeError("stationary_lst: product did not converge")
        return vals[0] if scalar else vals.reshape(shape)
    return _stationary_lst_reference(pair, x, tol, scalar, shape)


def _stationary_lst_reference(pair, x, tol, scalar, shape):
    """Pure numpy version of the product; also returns the remainder bound."""
    g1 = pair.g1
    out = np.ones_like(x)
    active = np.ones(x.shape, dtype=bool)
    thresh = tol * (1.0 - g1) * np.minimum(1.0, np.abs(pair.chi.one_minus_lst(x)))
    last_dev = np.zeros(x.shape)
    for _ in range(_MAX_FACTORS):
        xa = x[active]
        f = pair.chi.lst(xa)
        out[active] *= f
        dev = np.abs(pair.chi.one_minus_lst(xa))
        last_dev[active] = dev
        still = (dev >= thresh[active]) & (dev > 0)
        if isinstance(pair.g, ZeroG):
            still[:] = False
        idx = np.flatnonzero(active)
        active[idx[~still]] = False
        if not active.any():
            break
        x[active] = pair.g(x[active])
    else:
        raise RuntimeError("stationary_lst: product did not converge")
    if scalar:
        out = out[0]
        last_dev = last_dev[0]
    else:
        out = out.reshape(shape)
        last_dev = last_dev.reshape(shape)
    # sum of geometric tail of factor deviations
    bound = np.abs(out) * last_dev * g1 / (1.0 - g1) * 2.0
    return out, bound


def stationary_moments(pair: DependencePair) -> tuple[float, float]:
    g1, g2, c1, c2 = pair.g1, pair.g2, pair.chi1, pair.chi2
    if g1 >= 1.0:
        raise ValueError(f"g'(0) = {g1} >= 1")
    m1 = c1 / (g1 - 1.0)
    m2 = (c2 - m1 * (2.0 * c1 * g1 + g2)) / (1.0 - g1 * g1)
    return m1, m2


def lag1_stats(pair: DependencePair) -> DowntimeStats:
    m1, m2 = stationary_moments(pair)
    joint = -pair.chi1 * m1 + pair.g1 * m2
    return DowntimeStats(m1, m2, joint)


def phase_compound_pair(delta: float) -> DependencePair:
    """Downtime made of ``1 + Poisson(D(k))`` exponential(delta) phases.

    chi(s) = delta/(delta+s), g(s) = s/(delta+s); the stationary downtime is
    exponential(delta - 1) and the lag-1 correlation is ``1/delta``.
    """
    if not delta > 1.0:
        raise ValueError(f"stationary downtime only exists for delta > 1, got {delta}")
    jump = Exponential(delta)
    return DependencePair(jump, CompoundPoissonG(1.0, jump))


def independent_pair(dist: DistSpec) -> DependencePair:
    return DependencePair(dist, ZeroG())


def from_derivatives(
    chi1: float, chi2: float, g1: float, g2: float, *, kappa: float = 2.0, increment: str = "compound"
) -> DependencePair:
    """Build a pair with prescribed ``chi'(0), chi''(0), g'(0), g''(0)``.

    ``chi`` is a two-moment fit of (-chi1, chi2).  ``g`` is zero when g1 = 0,
    linear when g2 = 0, and otherwise a compound Poisson form with intensity
    ``theta = kappa * g1**2 / -g2`` and jump moments ``(g1/theta, -g2/theta)``;
    kappa = 2 makes the jumps exponential.  ``increment="loglst"`` instead fits
    the per-unit increment distribution directly (``g = -log`` of its LST).
    """
    if not chi1 < 0:
        raise ValueError(f"infeasible: chi'(0) = {chi1} must be < 0")
    if chi2 < chi1 * chi1 * (1.0 - 1e-12):
        raise ValueError(f"infeasible: chi''(0) = {chi2} < chi'(0)**2 = {chi1 * chi1} (negative variance)")
    if not 0.0 <= g1 < 1.0:
        raise ValueError(f"infeasible: g'(0) = {g1} must lie in [0, 1)")
    if g2 > 0:
        raise ValueError(f"infeasible: g''(0) = {g2} > 0 (negative increment variance)")
    if g1 == 0.0 and g2 != 0.0:
        raise ValueError(f"infeasible: g'(0) = 0 requires g''(0) = 0, got {g2}")
    if kappa < 1.0:
        raise ValueError(f"kappa = {kappa} < 1 gives a negative jump variance")
    chi = fit_two_moment(-chi1, max(chi2, chi1 * chi1))
    if g1 == 0.0:
        g: GFunction = ZeroG()
    elif g2 == 0.0:
        g = LinearG(g1)
    elif increment == "loglst":
        g = LogLSTG(fit_two_moment(g1, g1 * g1 - g2))
    elif increment == "compound":
        theta = kappa * g1 * g1 / -g2
        g = CompoundPoissonG(theta, fit_two_moment(g1 / theta, -g2 / theta))
    else:
        raise ValueError(f"unknown increment form {increment!r}")
    return DependencePair(chi, g)


def pair_from_config(cfg: dict) -> DependencePair:
    chi = dist_from_config(cfg["chi"])
    gcfg = cfg.get("g", {"tag": "zero"})
    tag = gcfg.get("tag", "zero")
    params = gcfg.get("params", {})
    if tag == "zero":
        g: GFunction = ZeroG()
    elif tag == "linear":
        g = LinearG(float(params["x"]))
    elif tag == "compound_poisson":
        g = CompoundPoissonG(float(params["theta"]), dist_from_config(params["jump"]))
    elif tag == "loglst":
        g = LogLSTG(dist_from_config(params["base"]))
    else:
        raise ValueError(f"unknown g tag {tag!r}")
    return DependencePair(chi, g)


def pair_to_config(pair: DependencePair) -> dict:
    g = pair.g
    if isinstance(g, ZeroG):
        gcfg = {"tag": "zero", "params": {}}
    elif isinstance(g, LinearG):
        gcfg = {"tag": "linear", "params": {"x": g.x}}
    elif isinstance(g, CompoundPoissonG):
        gcfg = {"tag": "compound_poisson", "params": {"theta": g.theta, "jump": dist_to_config(g.jump)}}
    else:
        gcfg = {"tag": "loglst", "params": {"base": dist_to_config(g.base)}}
    return {"chi": dist_to_config(pair.chi), "g": gcfg}
