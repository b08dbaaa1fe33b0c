"""Discrete-event simulation of the layered machine-repair model and of the vacation queue.

Both simulators run compiled event loops (:mod:`layeredq._simkernels`).
Each replication is one long run split into equal time batches after a
warm-up period; confidence intervals are t-intervals over all batches of all
replications.  Replication ``k`` is seeded from
``SeedSequence(seed).spawn(replications)[k]``, so results depend only on the
configuration.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from . import _simkernels as K
from .depcore import DowntimeStats
from .repairlayer import LayeredSpec, downtime_stats
from .vacq import UnstableError, VacQueueSpec

log = logging.getLogger(__name__)

__all__ = [
    "SimConfig",
    "Estimate",
    "QueueEstimates",
    "DowntimeEstimates",
    "LayeredSimResult",
    "VacqSimResult",
    "simulate_layered",
    "simulate_downtimes",
    "simulate_vacq",
    "relative_error",
    "replication_seeds",
]


@dataclass(frozen=True)
class SimConfig:
    warmup: float = 1e3
    horizon: float = 1e6
    replications: int = 1
    seed: int = 20240101
    batches: int = 32
    nhist: int = 512
    workers: int = 1

    def __post_init__(self):
        if not self.horizon > self.warmup >= 0:
            raise ValueError(f"need horizon > warmup >= 0, got {self.horizon} and {self.warmup}")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.batches < 20:
            raise ValueError("at least 20 batches are needed for batch-means intervals")
        if self.nhist < 2:
            raise ValueError("nhist must be at least 2")

    @classmethod
    def downtime_default(cls) -> "SimConfig":
        return cls(warmup=1e3, horizon=2e6)

    def with_horizon(self, horizon: float) -> "SimConfig":
        return SimConfig(self.warmup, horizon, self.replications, self.seed, self.batches, self.nhist, self.workers)


@dataclass(frozen=True)
class Estimate:
    value: float
    half_width: float
    replications: int
    batches: int = 0
    seed: int | None = None

    @property
    def se(self) -> float:
        """Standard error implied by the 95% half-width."""
        if self.batches < 2:
            return float("nan")
        return self.half_width / sps.t.ppf(0.975, self.batches - 1)

    def contains(self, x: float, k: float = 3.0) -> bool:
        return abs(x - self.value) <= k * self.se


def replication_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def _estimate(overall: float, per_batch: np.ndarray, reps: int, seed) -> Estimate:
    x = np.asarray(per_batch, dtype=float)
    x = x[np.isfinite(x)]
    n = x.size
    if n < 2:
        return Estimate(float(overall), float("inf"), reps, n, seed)
    hw = sps.t.ppf(0.975, n - 1) * x.std(ddof=1) / np.sqrt(n)
    return Estimate(float(overall), float(hw), reps, n, seed)


def _ratio(num, den):
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.asarray(num, float) / np.asarray(den, float)


@dataclass(frozen=True)
class QueueEstimates:
    mean: Estimate
    p0: Estimate
    pmf: np.ndarray
    pmf_half_width: np.ndarray
    sojourn: Estimate
    p_up: Estimate
    lam: float
    batch_pmf: np.ndarray | None = field(default=None, repr=False)

    def pgf(self, p) -> float:
        """PGF of the simulated time-average pmf (last bin lumps the tail)."""
        p = np.asarray(p, dtype=float)
        return np.polyval(self.pmf[::-1], p)

    def pgf_estimate(self, p: float) -> Estimate:
        """PGF at a real ``p`` in [0, 1] with a batch-means interval."""
        if self.batch_pmf is None:
            raise ValueError("per-batch pmfs were not kept")
        powers = float(p) ** np.arange(self.pmf.size)
        return _estimate(float(self.pmf @ powers), self.batch_pmf @ powers, self.mean.replications, self.mean.seed)

    @property
    def little_gap(self) -> float:
        """E[L] - lam * E[sojourn], which should vanish."""
        return self.mean.value - self.lam * self.sojourn.value


@dataclass(frozen=True)
class DowntimeEstimates:
    mean: Estimate
    m2: Estimate
    joint: Estimate
    cov: Estimate
    r: Estimate
    count: int

    def as_stats(self) -> DowntimeStats:
        return DowntimeStats(self.mean.value, self.m2.value, self.joint.value)


@dataclass(frozen=True)
class LayeredSimResult:
    queues: tuple
    machines: tuple
    config: SimConfig
    seeds: tuple
    truncated: bool = False

    def queue(self, i: int) -> QueueEstimates:
        return self.queues[i - 1]

    def machine(self, i: int) -> DowntimeEstimates:
        return self.machines[i - 1]


@dataclass(frozen=True)
class VacqSimResult:
    queue: QueueEstimates
    downtimes: DowntimeEstimates
    n_pmf: np.ndarray
    m_pmf: np.ndarray
    n_p0: Estimate
    config: SimConfig
    seeds: tuple = field(default_factory=tuple)
    truncated: bool = False


def _run_all(fn, seeds, workers):
    if workers <= 1 or len(seeds) == 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, seeds))


def _queue_estimates(hist, area, soj, sojn, upt, blen, lam, reps, seed) -> QueueEstimates:
    # hist: (nb_total, nhist) time histograms; others: (nb_total,)
    total_time = blen * area.size
    pmf = hist.sum(axis=0) / total_time
    per_batch_pmf = hist / blen
    pmf_hw = sps.t.ppf(0.975, max(area.size - 1, 1)) * per_batch_pmf.std(axis=0, ddof=1) / np.sqrt(area.size)
    mean = _estimate(area.sum() / total_time, area / blen, reps, seed)
    p0 = _estimate(pmf[0], per_batch_pmf[:, 0], reps, seed)
    sojourn = _estimate(soj.sum() / max(sojn.sum(), 1.0), _ratio(soj, sojn), reps, seed)
    p_up = _estimate(upt.sum() / total_time, upt / blen, reps, seed)
    return QueueEstimates(mean, p0, pmf, pmf_hw, sojourn, p_up, lam, per_batch_pmf)


def _downtime_estimates(dsum, d2sum, dcnt, jsum, jcnt, reps, seed) -> DowntimeEstimates:
    m = dsum.sum() / dcnt.sum()
    m2 = d2sum.sum() / dcnt.sum()
    j = jsum.sum() / jcnt.sum()
    bm = _ratio(dsum, dcnt)
    bm2 = _ratio(d2sum, dcnt)
    bj = _ratio(jsum, jcnt)
    bcov = bj - bm * bm
    br = bcov / (bm2 - bm * bm)
    cov = j - m * m
    r = cov / (m2 - m * m)
    return DowntimeEstimates(
        _estimate(m, bm, reps, seed),
        _estimate(m2, bm2, reps, seed),
        _estimate(j, bj, reps, seed),
        _estimate(cov, bcov, reps, seed),
        _estimate(r, br, reps, seed),
        int(dcnt.sum()),
    )


def _stability_warning(spec: LayeredSpec) -> None:
    for i in (1, 2):
        m = spec.machine(i)
        if m.lam == 0:
            continue
        try:
            ed = downtime_stats(spec, i).mean
        except ValueError:
            continue
        bound = 1.0 / (1.0 + m.sigma * ed)
        rho = m.lam * m.service.mean
        if rho >= bound:
            warnings.warn(
                f"queue {i} is unstable (rho = {rho:.4g} >= {bound:.4g}); the queue drifts upward "
                f"at about {rho - bound:.3g} customers per mean service time and results are truncated",
                RuntimeWarning,
                stacklevel=3,
            )


def simulate_layered(spec: LayeredSpec, cfg: SimConfig) -> LayeredSimResult:
    """Simulate both machines, their queues and the shared repairman."""
    if spec.exponential_repairs:
        _stability_warning(spec)
    ms = (spec.m1, spec.m2)
    lam = np.array([m.lam for m in ms], dtype=float)
    sigma = np.array([m.sigma for m in ms], dtype=float)
    enc_s = [m.service.encode() for m in ms]
    enc_r = [m.repair.encode() for m in ms]
    scode = np.array([e[0] for e in enc_s], dtype=np.int64)
    sprm = np.array([e[1] for e in enc_s])
    rcode = np.array([e[0] for e in enc_r], dtype=np.int64)
    rprm = np.array([e[1] for e in enc_r])
    seeds = replication_seeds(cfg.seed, cfg.replications)

    def one(seed):
        return K.layered_run(
            seed, lam, scode, sprm, sigma, rcode, rprm, float(cfg.warmup), float(cfg.horizon), cfg.batches, cfg.nhist
        )

    outs = _run_all(one, seeds, cfg.workers)
    truncated = any(o[-1] != 0 for o in outs)
    if truncated:
        warnings.warn("queue length exceeded the simulator buffer; run truncated", RuntimeWarning, stacklevel=2)
    cat = [np.concatenate([o[k] for o in outs], axis=1) for k in range(10)]
    hist, area, soj, sojn, dsum, d2sum, dcnt, jsum, jcnt, upt = cat
    blen = (cfg.horizon - cfg.warmup) / cfg.batches
    queues = tuple(
        _queue_estimates(hist[i], area[i], soj[i], sojn[i], upt[i], blen, lam[i], cfg.replications, cfg.seed)
        for i in range(2)
    )
    machines = []
    for i in range(2):
        if dcnt[i].sum() > 1 and jcnt[i].sum() > 0:
            machines.append(_downtime_estimates(dsum[i], d2sum[i], dcnt[i], jsum[i], jcnt[i], cfg.replications, cfg.seed))
        else:
            machines.append(None)
    for i, d in enumerate(machines):
        if d is not None and d.count < 1000:
            warnings.warn(f"machine {i + 1}: only {d.count} downtimes observed; intervals are wide", RuntimeWarning)
    return LayeredSimResult(queues, tuple(machines), cfg, tuple(seeds), truncated)


def simulate_downtimes(spec: LayeredSpec, cfg: SimConfig) -> LayeredSimResult:
    """Machine layer only (no arrivals); cheap way to estimate downtime statistics."""
    from dataclasses import replace

    quiet = LayeredSpec(replace(spec.m1, lam=0.0), replace(spec.m2, lam=0.0))
    return simulate_layered(quiet, cfg)


def simulate_vacq(spec: VacQueueSpec, cfg: SimConfig) -> VacqSimResult:
    """Simulate the single-server queue with one-dependent downtimes."""
    g = spec.pair.g
    if not g.samplable:
        raise ValueError(
            f"cannot sample increments of {type(g).__name__} with base {type(getattr(g, 'base', None)).__name__}; "
            "only zero, linear, compound Poisson and exponential-base log forms are samplable"
        )
    if not spec.is_stable():
        raise UnstableError("refusing to simulate an unstable queue: " + spec.stability_report())
    scode, sprm = spec.service.encode()
    ccode, cprm = spec.pair.chi.encode()
    gcode, gparam, jcode, jprm = g.encode()
    seeds = replication_seeds(cfg.seed, cfg.replications)

    def one(seed):
        return K.vacq_run(
            seed, float(spec.lam), scode, sprm, float(spec.sigma), ccode, cprm, gcode, gparam, jcode, jprm,
            float(cfg.warmup), float(cfg.horizon), cfg.batches, cfg.nhist,
        )

    outs = _run_all(one, seeds, cfg.workers)
    truncated = any(o[-1] != 0 for o in outs)
    cat = [np.concatenate([o[k] for o in outs], axis=1 if k == 0 else 0) for k in range(12)]
    hist, area, soj, sojn, nh, mh, dsum, d2sum, dcnt, jsum, jcnt, upt = cat
    blen = (cfg.horizon - cfg.warmup) / cfg.batches
    queue = _queue_estimates(hist[0], area, soj, sojn, upt, blen, spec.lam, cfg.replications, cfg.seed)
    dts = _downtime_estimates(dsum, d2sum, dcnt, jsum, jcnt, cfg.replications, cfg.seed)
    n_pmf = nh.sum(axis=0) / nh.sum()
    m_pmf = mh.sum(axis=0) / mh.sum()
    n_p0 = _estimate(n_pmf[0], _ratio(nh[:, 0], nh.sum(axis=1)), cfg.replications, cfg.seed)
    return VacqSimResult(queue, dts, n_pmf, m_pmf, n_p0, cfg, tuple(seeds), truncated)


def relative_error(approx: float, sim: Estimate) -> Estimate:
    """Percent relative error 100 |approx - sim| / sim with a delta-method half-width."""
    if not sim.value > 0:
        raise ValueError("relative error needs a positive simulated value")
    delta = 100.0 * abs(approx - sim.value) / sim.value
    hw = 100.0 * abs(approx) / sim.value**2 * sim.half_width
    return Estimate(delta, hw, sim.replications, sim.batches, sim.seed)
