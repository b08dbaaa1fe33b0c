"""Two machines sharing one repairman, and the vacation-queue approximation built on it.

Each machine ``i`` serves its own queue (Poisson(lam_i) arrivals, service
``B_i``), breaks down after exponential(sigma_i) uptimes and then joins a
FCFS repair buffer in front of a single repairman (repair time ``R_i``).  A
machine's downtime is its wait in the buffer plus its repair, so consecutive
downtimes of one machine are correlated through the other machine.

For exponential repairs the downtime moments and lag-1 covariance follow
from a five-state embedded chain; :func:`moment_match` turns them into a
:class:`~layeredq.depcore.DependencePair` and :func:`approximate_queue`
into a :class:`~layeredq.vacq.VacQueueSpec` whose exact analysis serves as
the approximation of the first-layer queue.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .depcore import DependencePair, DowntimeStats, from_derivatives, independent_pair, lag1_stats
from .distkit import DistSpec, Exponential, dist_from_config, dist_to_config, fit_two_moment
from .vacq import VacQueueSpec

log = logging.getLogger(__name__)

__all__ = [
    "MachineSpec",
    "LayeredSpec",
    "MachineStatePi",
    "MatchResult",
    "AnalyticPathUnavailable",
    "STATES",
    "transition_matrix",
    "dtmc_stationary",
    "breakdown_probs",
    "repeat_probs",
    "downtime_stats",
    "simulated_stats",
    "moment_match",
    "approximate_queue",
    "independent_baseline",
    "layered_from_config",
    "layered_to_config",
    "with_lam",
]

# machine state codes: 1 up, 2 waiting for the repairman, 3 in repair
STATES = ((1, 1), (1, 3), (3, 1), (2, 3), (3, 2))


class AnalyticPathUnavailable(ValueError):
    """Raised when closed-form downtime statistics need exponential repairs."""


@dataclass(frozen=True)
class MachineSpec:
    lam: float
    service: DistSpec
    sigma: float
    repair: DistSpec


@dataclass(frozen=True)
class LayeredSpec:
    m1: MachineSpec
    m2: MachineSpec

    def machine(self, i: int) -> MachineSpec:
        if i not in (1, 2):
            raise ValueError(f"machine index must be 1 or 2, got {i}")
        return self.m1 if i == 1 else self.m2

    def swapped(self) -> "LayeredSpec":
        return LayeredSpec(self.m2, self.m1)

    @property
    def exponential_repairs(self) -> bool:
        return isinstance(self.m1.repair, Exponential) and isinstance(self.m2.repair, Exponential)

    def rates(self) -> tuple[float, float, float, float]:
        """(sigma1, sigma2, nu1, nu2); needs exponential repairs."""
        if not self.exponential_repairs:
            raise AnalyticPathUnavailable(
                "closed-form downtime statistics need exponential repair times; use simulated_stats"
            )
        return self.m1.sigma, self.m2.sigma, self.m1.repair.rate, self.m2.repair.rate


@dataclass(frozen=True)
class MachineStatePi:
    probs: np.ndarray
    states: tuple = STATES

    def __getitem__(self, state):
        return float(self.probs[self.states.index(tuple(state))])


@dataclass(frozen=True)
class MatchResult:
    chi1: float
    chi2: float
    g1: float
    g2: float
    policy: str
    fallback: bool = False
    notes: tuple = field(default_factory=tuple)

    def residuals(self, stats: DowntimeStats) -> np.ndarray:
        """Mismatch of the three moment equations (mean, second moment, joint)."""
        m1 = self.chi1 / (self.g1 - 1.0)
        m2 = (self.chi2 - stats.mean * (2.0 * self.chi1 * self.g1 + self.g2)) / (1.0 - self.g1**2)
        joint = -self.chi1 * stats.mean + self.g1 * stats.m2
        return np.array([m1 - stats.mean, m2 - stats.m2, joint - stats.joint])


def transition_matrix(spec: LayeredSpec) -> np.ndarray:
    s1, s2, n1, n2 = spec.rates()
    P = np.zeros((5, 5))
    i = {s: k for k, s in enumerate(STATES)}
    P[i[(1, 1)], i[(3, 1)]] = s1 / (s1 + s2)
    P[i[(1, 1)], i[(1, 3)]] = s2 / (s1 + s2)
    P[i[(1, 3)], i[(1, 1)]] = n2 / (s1 + n2)
    P[i[(1, 3)], i[(2, 3)]] = s1 / (s1 + n2)
    P[i[(3, 1)], i[(1, 1)]] = n1 / (n1 + s2)
    P[i[(3, 1)], i[(3, 2)]] = s2 / (n1 + s2)
    P[i[(2, 3)], i[(3, 1)]] = 1.0
    P[i[(3, 2)], i[(1, 3)]] = 1.0
    return P


def dtmc_stationary(spec: LayeredSpec) -> MachineStatePi:
    """Stationary law of the embedded chain by a direct linear solve."""
    P = transition_matrix(spec)
    s1, s2, _, _ = spec.rates()
    if s1 + s2 == 0:
        raise ValueError("both breakdown rates are zero: the embedded chain never moves")
    A = P.T - np.eye(5)
    A[-1, :] = 1.0
    b = np.zeros(5)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    return MachineStatePi(pi)


def breakdown_probs(spec: LayeredSpec) -> tuple[float, float]:
    """(z_up, z_down): the other machine is up / in repair when machine 1 breaks down."""
    s1, s2, n1, n2 = spec.rates()
    den = (s2 + n1) * (s1 + s2 + n2)
    z_up = (s1 * n1 + (s2 + n1) * n2) / den
    z_down = s2 * (s1 + s2 + n1) / den
    return z_up, z_down


def repeat_probs(spec: LayeredSpec) -> tuple[float, float]:
    """(v, w): other machine in repair at machine 1's next breakdown, given it is up / waiting
    when machine 1's repair ends."""
    s1, s2, _, n2 = spec.rates()
    den = s1 + s2 + n2
    return s2 / den, (s1 + s2) / den


def downtime_stats(spec: LayeredSpec, machine: int = 1) -> DowntimeStats:
    """Stationary mean, second moment and lag-1 joint moment of a machine's downtimes."""
    if machine == 2:
        return downtime_stats(spec.swapped(), 1)
    spec.machine(machine)
    s1, s2, n1, n2 = spec.rates()
    _, z_down = breakdown_probs(spec)
    mean = z_down / n2 + 1.0 / n1
    m2 = 2.0 * z_down / n2**2 + 2.0 * z_down / (n1 * n2) + 2.0 / n1**2
    cov = s1 * s2 / ((s2 + n1) ** 2 * n2 * (s1 + s2 + n2))
    return DowntimeStats(mean, m2, cov + mean * mean)


def simulated_stats(spec: LayeredSpec, machine: int = 1, simcfg=None) -> DowntimeStats:
    """Downtime statistics estimated from a simulation of the machine layer alone."""
    from .desim import SimConfig, simulate_downtimes

    est = simulate_downtimes(spec, simcfg or SimConfig.downtime_default())
    d = est.machine(machine)
    return DowntimeStats(d.mean.value, d.m2.value, d.joint.value)


_POLICIES = ("repair-scv", "increment-scv", "explicit")


def moment_match(
    stats: DowntimeStats,
    policy: str = "repair-scv",
    *,
    repair_scv: float = 1.0,
    increment_scv: float = 1.0,
    chi2: float | None = None,
) -> MatchResult:
    """Derivatives of (chi, g) at 0 that reproduce mean, second moment and lag-1 joint moment.

    The three moment equations pin ``g'(0) = r`` and ``chi'(0) = -(1 - r) E[D]``;
    the remaining freedom is fixed by ``policy``:

    * ``repair-scv``: the independent part gets the repair-time SCV,
    * ``increment-scv``: the per-unit increment gets SCV ``increment_scv``
      (``g''(0) = -scv * r**2``),
    * ``explicit``: ``chi''(0) = chi2``.

    If the policy yields ``g''(0) > 0`` (no increment distribution has that),
    ``g''(0)`` is set to 0 and ``chi''(0)`` recomputed; ``fallback`` records this.
    If it yields a ``chi''(0)`` below ``chi'(0)**2``, ``g''(0)`` is lowered so
    that chi becomes deterministic.
    """
    if policy not in _POLICIES:
        raise ValueError(f"unknown policy {policy!r}; choose from {_POLICIES}")
    r = stats.r
    if not 0.0 <= r < 1.0:
        if -1e-12 < r < 0.0:
            r = 0.0
        else:
            raise ValueError(f"lag-1 correlation {r} outside [0, 1)")
    m1, m2 = stats.mean, stats.m2
    g1 = r
    c1 = -(1.0 - r) * m1
    base = m2 * (1.0 - g1 * g1) + 2.0 * m1 * c1 * g1  # chi2 - m1*g2

    notes = []
    if g1 == 0.0:
        return MatchResult(c1, m2, 0.0, 0.0, policy, False, ("independent",))
    if policy == "repair-scv":
        c2 = (1.0 + repair_scv) * c1 * c1
        g2 = (c2 - base) / m1
    elif policy == "increment-scv":
        g2 = -increment_scv * g1 * g1
        c2 = base + m1 * g2
    else:
        if chi2 is None:
            raise ValueError("policy 'explicit' needs chi2")
        c2 = float(chi2)
        g2 = (c2 - base) / m1
    fallback = False
    if g2 > 0.0:
        fallback = True
        notes.append(f"g''(0) = {g2:.6g} > 0 replaced by 0")
        g2 = 0.0
        c2 = base
    if c2 < c1 * c1:
        fallback = True
        notes.append(f"chi''(0) = {c2:.6g} below chi'(0)^2; chi made deterministic")
        c2 = c1 * c1
        g2 = (c2 - base) / m1
        if g2 > 0.0:
            raise ValueError("moment equations admit no feasible (chi, g) for these statistics")
    return MatchResult(c1, c2, g1, g2, policy, fallback, tuple(notes))


def _match_for(spec: LayeredSpec, machine: int, stats: DowntimeStats | None, policy: str, **kw) -> MatchResult:
    if stats is None:
        stats = downtime_stats(spec, machine)
    scv = spec.machine(machine).repair.moments().scv
    return moment_match(stats, policy, repair_scv=scv, **kw)


def approximate_queue(
    spec: LayeredSpec,
    machine: int = 1,
    *,
    stats: DowntimeStats | None = None,
    policy: str = "repair-scv",
    increment: str = "loglst",
    **kw,
) -> VacQueueSpec:
    """Vacation-queue stand-in for queue ``machine`` of the layered model.

    ``stats`` defaults to the closed-form statistics (exponential repairs);
    pass :func:`simulated_stats` output for other repair laws.
    """
    m = spec.machine(machine)
    res = _match_for(spec, machine, stats, policy, **kw)
    if res.fallback:
        log.info("moment match fallback: %s", "; ".join(res.notes))
    pair = from_derivatives(res.chi1, res.chi2, res.g1, res.g2, increment=increment)
    return VacQueueSpec(m.lam, m.service, m.sigma, pair)


def independent_baseline(spec: LayeredSpec, machine: int = 1, *, stats: DowntimeStats | None = None) -> VacQueueSpec:
    """Same downtime marginal, consecutive downtimes treated as independent."""
    m = spec.machine(machine)
    if stats is None:
        stats = downtime_stats(spec, machine)
    pair = independent_pair(fit_two_moment(stats.mean, stats.m2))
    return VacQueueSpec(m.lam, m.service, m.sigma, pair)


def matched_pair_stats(pair: DependencePair) -> DowntimeStats:
    return lag1_stats(pair)


def _machine_from_config(cfg: dict, path: str) -> MachineSpec:
    try:
        return MachineSpec(
            lam=float(cfg["lam"]),
            service=dist_from_config(cfg["service"]),
            sigma=float(cfg["sigma"]),
            repair=dist_from_config(cfg["repair"]),
        )
    except KeyError as exc:
        raise ValueError(f"{path}: missing key {exc.args[0]!r}") from None


def layered_from_config(cfg: dict) -> LayeredSpec:
    """``{machines: [{lam, service, sigma, repair}, {...}]}``."""
    machines = cfg.get("machines")
    if not isinstance(machines, list) or len(machines) != 2:
        raise ValueError("model.machines: expected a list of exactly two machines")
    return LayeredSpec(*(_machine_from_config(m, f"model.machines[{i}]") for i, m in enumerate(machines)))


def layered_to_config(spec: LayeredSpec) -> dict:
    return {
        "machines": [
            {"lam": m.lam, "service": dist_to_config(m.service), "sigma": m.sigma, "repair": dist_to_config(m.repair)}
            for m in (spec.m1, spec.m2)
        ]
    }


def with_lam(spec: LayeredSpec, machine: int, lam: float) -> LayeredSpec:
    if machine == 1:
        return LayeredSpec(replace(spec.m1, lam=lam), spec.m2)
    return LayeredSpec(spec.m1, replace(spec.m2, lam=lam))
