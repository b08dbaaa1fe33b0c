"""Queue length of an M/G/1 queue with exponential uptimes and one-dependent vacations.

The server works for exponential(sigma) uptimes and then takes a downtime
whose length depends on the previous one through a
:class:`~layeredq.depcore.DependencePair`.  A service interrupted by a
breakdown restarts from scratch.  The functions here evaluate the
generating functions of the queue length at uptime starts (``N``), at an
arbitrary time during an uptime and during a downtime, and at an arbitrary
time (``L``), and extract the mean and the pmf of ``L``.

The building blocks ``A(p)`` and ``K(p)`` (queue evolution across one
uptime) share a pole at the busy-period root ``mu``; everything is therefore
computed in forms multiplied by ``(p - B(sigma + lam(1-p)))`` where needed,
and remaining removable singularities (at ``p = 1``, ``mu`` and the root
``phi`` of ``1 - E(p)``) are bridged by Cauchy interpolation.

The results are exact for independent downtimes.  With dependence the
queue length at the start of a downtime is treated as independent of that
downtime's length, although both grow with the previous downtime, so the
mean is underestimated (by about 20% for the phase pair at delta = 2 with
rho = 0.6).
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field

import numpy as np

from . import _numerics as nm
from .depcore import DependencePair, stationary_lst, stationary_moments
from .distkit import DistSpec

log = logging.getLogger(__name__)

__all__ = [
    "VacQueueSpec",
    "UnstableError",
    "PoleError",
    "TransientKernel",
    "QueueSummary",
    "busy_root",
    "kernel",
    "phi_root",
    "boundary_constants",
    "pgf_N",
    "pgf_L_up",
    "pgf_L_up_alt",
    "pgf_L_down",
    "pgf_L",
    "mean_L",
    "mean_L_richardson",
    "pmf_L",
    "summary",
    "analysis",
]


class UnstableError(ValueError):
    pass


class PoleError(ValueError):
    pass


@dataclass(frozen=True)
class VacQueueSpec:
    lam: float
    service: DistSpec
    sigma: float
    pair: DependencePair

    @property
    def rho(self) -> float:
        return self.lam * self.service.raw_moments()[0]

    @property
    def mean_downtime(self) -> float:
        return stationary_moments(self.pair)[0]

    @property
    def p_up(self) -> float:
        return 1.0 / (1.0 + self.sigma * self.mean_downtime)

    def stability_report(self) -> str:
        return f"rho = lam*E[B] = {self.rho:.6g}, bound E[U]/(E[U]+E[D]) = {self.p_up:.6g}"

    def is_stable(self) -> bool:
        return self.lam >= 0 and self.sigma > 0 and self.rho < self.p_up

    def check_stable(self) -> None:
        if not self.is_stable():
            raise UnstableError("unstable queue: " + self.stability_report())


def _busy_complement(spec: VacQueueSpec, tol: float, max_iter: int) -> float:
    # iterate on v = 1 - p, which keeps full relative accuracy when mu is close to 1
    v = 1.0
    for _ in range(max_iter):
        nxt = float(np.real(spec.service.one_minus_lst(spec.sigma + spec.lam * v)))
        # relative to v: an absolute 1e-13 is too loose once mu is within 1e-8 of 1
        if abs(nxt - v) < tol * v:
            return nxt
        v = nxt
    raise RuntimeError(f"busy_root: no convergence after {max_iter} iterations (last step {abs(nxt - v):.3e})")


def busy_root(spec: VacQueueSpec, *, tol: float = 1e-13, max_iter: int = 100_000) -> float:
    """Root in (0, 1) of ``p = B(sigma + lam (1 - p))`` by fixed-point iteration from 0."""
    if not spec.sigma > 0:
        raise ValueError("breakdown rate must be positive")
    return 1.0 - _busy_complement(spec, tol, max_iter)


@dataclass(frozen=True)
class TransientKernel:
    """Evaluators for the uptime kernel ``A, K`` and the two-cycle coefficients ``E, F, G``.

    Methods ending in ``_hat`` return the quantity multiplied by
    ``delta(p)**k`` (k = 1 for A, K; k = 2 for E, F, G) and are finite at
    ``p = mu``.  The plain methods refuse points within ``pole_radius`` of mu.
    Internally everything is written in ``u = 1 - p`` so that points near
    ``p = 1`` keep their relative accuracy.
    """

    spec: VacQueueSpec
    mu: float
    one_minus_mu: float
    lim_ak: float
    c_nmu: float
    pole_radius: float = 1e-6
    dtol: float = 1e-15

    @property
    def r2(self) -> float:
        return self.spec.lam * self.one_minus_mu

    def dtilde(self, s):
        return stationary_lst(self.spec.pair, s, self.dtol)

    def _u(self, p):
        return 1.0 - np.asarray(p, dtype=complex)

    def _delta_u(self, u, w):
        return self.spec.service.one_minus_lst(w) - u

    def delta(self, p):
        u = self._u(p)
        return self._delta_u(u, self.spec.sigma + self.spec.lam * u)

    def _a_hat_u(self, u, w):
        return self.spec.sigma / w * (1.0 - u) * self.spec.service.one_minus_lst(w)

    def _k_hat_u(self, u, w):
        s = self.spec
        return -s.sigma / (s.sigma + self.r2) * u * s.service.lst(w)

    def a_hat(self, p):
        u = self._u(p)
        return self._a_hat_u(u, self.spec.sigma + self.spec.lam * u)

    def k_hat(self, p):
        u = self._u(p)
        return self._k_hat_u(u, self.spec.sigma + self.spec.lam * u)

    def _check_pole(self, p):
        if np.any(np.abs(np.asarray(p) - self.mu) < self.pole_radius):
            raise PoleError(f"evaluation within {self.pole_radius} of the pole mu = {self.mu}; use the *_hat forms")

    def A(self, p):
        self._check_pole(p)
        return self.a_hat(p) / self.delta(p)

    def K(self, p):
        self._check_pole(p)
        return self.k_hat(p) / self.delta(p)

    def efg_hat(self, p):
        """(E, F, G) times delta**2, plus delta itself."""
        return self.efg_hat_u(self._u(p))

    def efg_hat_u(self, u):
        """As :meth:`efg_hat`, parametrised by ``u = 1 - p``."""
        s = self.spec
        u = np.asarray(u, dtype=complex)
        w = s.sigma + s.lam * u
        a = s.lam * u
        ga = s.pair.g(a)
        ch = s.pair.chi.lst(a)
        d1 = self.dtilde(a + ga)
        d2 = self.dtilde(self.r2 + ga)
        ah, kh, dl = self._a_hat_u(u, w), self._k_hat_u(u, w), self._delta_u(u, w)
        e = ch * ah * ah * d1
        f = ch * kh * (ah * d1 + dl * d2 * self.lim_ak)
        g = ch * kh * dl * d2 * self.c_nmu
        return e, f, g, dl

    def E(self, p):
        self._check_pole(p)
        e, _, _, dl = self.efg_hat(p)
        return e / dl**2

    def F(self, p):
        self._check_pole(p)
        _, f, _, dl = self.efg_hat(p)
        return f / dl**2

    def G(self, p):
        self._check_pole(p)
        _, _, g, dl = self.efg_hat(p)
        return g / dl**2

    def one_minus_E(self, p):
        e, _, _, dl = self.efg_hat(p)
        return (dl * dl - e) / (dl * dl)


def kernel(spec: VacQueueSpec) -> TransientKernel:
    spec.check_stable()
    if not spec.sigma > 0:
        raise ValueError("breakdown rate must be positive")
    v = _busy_complement(spec, 1e-13, 100_000)
    mu = 1.0 - v
    lam, sig = spec.lam, spec.sigma
    w0 = sig + lam * v
    bprime = float(np.real(spec.service.lst_d1(w0)))
    denom = 1.0 + lam * bprime
    lim_ak = sig / w0 + lam * mu * sig * v / (denom * w0 * w0)
    c_nmu = sig * v / (w0 * denom)
    return TransientKernel(spec, mu, v, lim_ak, c_nmu)


def _phi_of(ker: TransientKernel, eps: float = 1e-10) -> tuple[float, float]:
    """Bisection for the root of 1 - E, carried out in u = 1 - p.

    Returns ``(1 - phi, |1 - E(phi)|)``; keeping ``1 - phi`` avoids losing
    digits when phi is close to 1 (rare breakdowns).
    """

    def h(u):
        e, _, _, dl = ker.efg_hat_u(u)
        return float(np.real((dl * dl - e) / (dl * dl)))

    # p in (eps, mu - eps)  <=>  u in (1 - mu + eps, 1 - eps)
    lo, hi = ker.one_minus_mu + min(eps, 1e-3 * ker.one_minus_mu), 1.0 - eps
    hlo, hhi = h(lo), h(hi)
    if not (hlo < 0 and hhi > 0):
        raise RuntimeError(
            f"phi_root: no sign change of 1-E(p) on (eps, mu-eps): values {hhi:.3g} at p={1 - hi:.3g}, "
            f"{hlo:.3g} at p={1 - lo:.12g}"
        )
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        hm = h(mid)
        if hm == 0.0:
            lo = hi = mid
            break
        if hm < 0:
            lo = mid
        else:
            hi = mid
    u_phi = lo if abs(h(lo)) <= abs(h(hi)) else hi
    return u_phi, abs(h(u_phi))


def phi_root(spec: VacQueueSpec) -> float:
    """Unique root of ``1 - E(p)`` in ``(0, mu)``, located by bisection."""
    return analysis(spec).phi


@dataclass
class _Analysis:
    spec: VacQueueSpec
    ker: TransientKernel
    u_phi: float
    phi_residual: float
    x: float  # E[mu^N]
    y: float  # E[N mu^N]
    derivs_cs: tuple[float, float, float]
    derivs_cd: tuple[float, float, float]
    kappa_b: float
    kappa_c: float
    p_up: float
    _mean: float | None = field(default=None, repr=False)

    @property
    def phi(self) -> float:
        return 1.0 - self.u_phi

    # -- embedded epochs -------------------------------------------------

    def _pgf_n_raw(self, p):
        e, f, g, dl = self.ker.efg_hat(p)
        with np.errstate(invalid="ignore", divide="ignore"):
            return (f * self.x + g * self.y) / (dl * dl - e)

    def _near_radius(self, z0: float) -> float:
        others = [abs(z0 - z) for z in (0.0, self.phi, self.ker.mu, 1.0) if z != z0]
        # around p = 1 the circle must stay clear of the singularity just beyond 1,
        # which approaches 1 in heavy traffic; the raw formulas lose only
        # about eps/|1 - p| relative accuracy, so a tiny circle suffices there
        cap = 1e-6 if z0 == 1.0 else 1e-3
        return min(cap, 0.4 * min(others))

    def pgf_n(self, p):
        p = np.atleast_1d(np.asarray(p, dtype=complex))
        vals = self._pgf_n_raw(p)
        for z0 in (self.phi, 1.0):
            vals = nm.fix_removable(self._pgf_n_raw, p, z0, self._near_radius(z0), vals)
        at_one = p == 1.0
        if at_one.any():
            # l'Hopital with the derivatives used for the boundary constants
            e1, f1, g1 = self.derivs_cs
            vals[at_one] = -(f1 * self.x + g1 * self.y) / e1
        return vals

    # -- arbitrary epochs ----------------------------------------------------

    def pgf_up(self, p):
        p = np.atleast_1d(np.asarray(p, dtype=complex))
        a = self.spec.lam * (1.0 - p)
        return self.pgf_n(p) / self.ker.dtilde(a)

    def pgf_up_alt(self, p):
        """Up-time PGF from one application of the uptime kernel to ``N``."""
        p = np.atleast_1d(np.asarray(p, dtype=complex))

        def raw(q):
            return (self.ker.a_hat(q) * self.pgf_n(q) + self.ker.k_hat(q) * self.x) / self.ker.delta(q)

        vals = raw(p)
        mu = self.ker.mu
        return nm.fix_removable(raw, p, mu, self._near_radius(mu), vals)

    def _kappa_diff(self, r, ch, ga):
        """Vector of  int_0^inf e^{-cu} [D(r + b u) - ch D(r + ga + b u)] du."""
        b, c = self.kappa_b, self.kappa_c
        dt = self.ker.dtilde
        if b == 0.0:
            return (dt(r) - ch * dt(r + ga)) / c
        upper = (np.log(max(1.0, 2.0 / c)) + 41.0) / c

        def integrand(u):
            bu = b * u[:, None]
            ecu = np.exp(-c * u)[:, None]
            return ecu * (dt(r[None, :] + bu) - ch[None, :] * dt((r + ga)[None, :] + bu))

        # the bracket is a difference of O(1) products, so its values carry
        # rounding noise of a few ulps of max(1, |ch|)
        noise = 64.0 * np.finfo(float).eps * (1.0 + float(np.max(np.abs(ch))))
        val, _ = nm.gk_vector(integrand, 0.0, upper, atol=1e-13, rtol=1e-12, noise=noise)
        return val

    def _pgf_down_raw(self, p):
        spec, ker = self.spec, self.ker
        a = spec.lam * (1.0 - p)
        ga = spec.pair.g(a)
        ch = spec.pair.chi.lst(a)
        dl = ker.delta(p)
        A = ker.a_hat(p) / dl
        K = ker.k_hat(p) / dl
        X = self.pgf_n(p)
        q1 = A * (A * X + K * self.x)
        q2 = K * (ker.lim_ak * self.x + ker.c_nmu * self.y)
        r2 = np.full_like(a, ker.r2)
        i1 = self._kappa_diff(a, ch, ga)
        i2 = self._kappa_diff(r2, ch, ga)
        return (q1 * i1 + q2 * i2) / a

    def pgf_down(self, p):
        p = np.atleast_1d(np.asarray(p, dtype=complex))
        ok = np.abs(p - 1.0) > 0
        vals = np.ones_like(p)
        if ok.any():
            vals[ok] = self._pgf_down_raw(p[ok])
        for z0 in (1.0, self.ker.mu):
            vals = nm.fix_removable(self._pgf_down_raw, p, z0, self._near_radius(z0), vals)
        return vals

    def pgf_l(self, p):
        return self.p_up * self.pgf_up(p) + (1.0 - self.p_up) * self.pgf_down(p)

    # -- moments / pmf ------------------------------------------------------------

    def richardson_mean(self) -> float:
        """One-sided difference quotients at p < 1 with Richardson extrapolation.

        The first step is scaled down until it is small compared with the
        reciprocal of the resulting mean (the distance to the nearest
        singularity beyond 1 shrinks like that in heavy traffic).
        """
        f = lambda p: self.pgf_l(p)[0]
        h0 = 1e-2
        est = nm.richardson_backward(f, 1.0, 1.0, h0=h0)
        for _ in range(6):
            want = 0.02 / (1.0 + abs(est))
            if h0 <= want:
                break
            h0 = want
            est = nm.richardson_backward(f, 1.0, 1.0, h0=h0)
        return est

    def mean(self) -> float:
        """Derivative of the PGF at 1 from Cauchy integrals on shrinking circles.

        The PGF continues analytically beyond p = 1 up to a singularity whose
        distance from 1 is of order 1/E[L]; the first circle is sized from a
        one-sided estimate and then shrunk by 4 until two consecutive
        estimates agree.
        """
        if self._mean is None:
            rough = self.richardson_mean()
            radius = min(0.1, 0.1 / (1.0 + abs(rough)))
            ests = []
            d = float("nan")
            for _ in range(8):
                try:
                    d = float(np.real(nm.contour_derivative(self.pgf_l, 1.0, radius, n=32)))
                except nm.QuadratureError:
                    # circle reaches too close to a singularity of the continuation
                    d = float("nan")
                ests.append(d)
                if len(ests) > 1 and np.isfinite(ests[-2]) and abs(d - ests[-2]) <= 1e-8 * abs(d):
                    break
                radius /= 4.0
            else:
                # rounding grows like 1/radius**2, truncation shrinks fast: take the closest pair
                gaps = [abs(x - y) / abs(y) for x, y in zip(ests, ests[1:])]
                gaps = [g if np.isfinite(g) else np.inf for g in gaps]
                k = int(np.argmin(gaps))
                d = ests[k + 1]
                log.warning("mean_L: contour estimates did not settle; best relative agreement %.2e", gaps[k])
            if not abs(d - rough) <= 1e-4 * abs(d) + 1e-10:
                log.warning("mean_L: contour %r and one-sided %r estimates disagree", d, rough)
            self._mean = d
        return self._mean


def _build(spec: VacQueueSpec) -> _Analysis:
    ker = kernel(spec)
    u_phi, resid = _phi_of(ker)

    def fun(which):
        idx = {"E": 0, "F": 1, "G": 2}[which]

        def h(p):
            parts = ker.efg_hat(p)
            return parts[idx] / parts[3] ** 2

        return h

    cs = tuple(nm.complex_step(fun(w), 1.0) for w in "EFG")
    cd = tuple(nm.central_difference(fun(w), 1.0, 1e-5) for w in "EFG")
    e1, f1, g1 = cs
    _, fphi, gphi, dphi = ker.efg_hat_u(u_phi)
    fphi = float(np.real(fphi / dphi**2))
    gphi = float(np.real(gphi / dphi**2))
    mat = np.array([[f1, g1], [fphi, gphi]])
    rhs = np.array([-e1, 0.0])
    # rows live on very different scales when sigma is small; equilibrate first
    scale = np.abs(mat).max(axis=1)
    if not np.all(scale > 0):
        raise RuntimeError(f"boundary system singular (zero row, matrix {mat.tolist()})")
    mat, rhs = mat / scale[:, None], rhs / scale
    cond = np.linalg.cond(mat)
    if not np.isfinite(cond) or cond > 1e14:
        raise RuntimeError(f"boundary system singular (condition number {cond:.3e})")
    x, y = np.linalg.solve(mat, rhs)
    if cond > 1e8:
        log.warning("boundary system badly conditioned: %.3e", cond)
    pair = spec.pair
    return _Analysis(
        spec=spec,
        ker=ker,
        u_phi=u_phi,
        phi_residual=resid,
        x=float(x),
        y=float(y),
        derivs_cs=cs,
        derivs_cd=cd,
        kappa_b=pair.g1,
        kappa_c=-pair.chi1,
        p_up=spec.p_up,
    )


@functools.lru_cache(maxsize=256)
def analysis(spec: VacQueueSpec) -> _Analysis:
    """Build (and cache) the kernel, root and boundary constants for ``spec``."""
    if spec.lam == 0:
        raise ValueError("lam = 0: the queue is empty; nothing to analyse")
    return _build(spec)


def boundary_constants(spec: VacQueueSpec) -> tuple[float, float]:
    """``(E[mu^N], E[N mu^N])`` from normalisation at p=1 and the root phi."""
    an = analysis(spec)
    return an.x, an.y


def _out(vals, p):
    return vals[0] if np.ndim(p) == 0 else vals


def pgf_N(spec: VacQueueSpec, p):
    return _out(analysis(spec).pgf_n(p), p)


def pgf_L_up(spec: VacQueueSpec, p):
    return _out(analysis(spec).pgf_up(p), p)


def pgf_L_up_alt(spec: VacQueueSpec, p):
    return _out(analysis(spec).pgf_up_alt(p), p)


def pgf_L_down(spec: VacQueueSpec, p):
    return _out(analysis(spec).pgf_down(p), p)


def pgf_L(spec: VacQueueSpec, p):
    return _out(analysis(spec).pgf_l(p), p)


def mean_L(spec: VacQueueSpec) -> float:
    spec.check_stable()
    if spec.lam == 0:
        return 0.0
    return analysis(spec).mean()


def mean_L_richardson(spec: VacQueueSpec) -> float:
    """Independent check of :func:`mean_L` using only points p < 1."""
    return analysis(spec).richardson_mean()


def pmf_L(spec: VacQueueSpec, n_max: int = 256, *, alias: float = 1e-10) -> np.ndarray:
    """P(L = n) for n = 0..n_max by trapezoidal inversion on a circle.

    Uses ``2 n_max`` points on radius ``alias**(1/(2 n_max))``, which bounds the
    aliasing error of every coefficient by about ``alias``.
    """
    spec.check_stable()
    if n_max > 4096:
        raise ValueError("n_max must not exceed 4096")
    if spec.lam == 0:
        out = np.zeros(n_max + 1)
        out[0] = 1.0
        return out
    an = analysis(spec)
    n = 2 * n_max
    radius = float(np.exp(np.log(alias) / n))
    j = np.arange(n // 2 + 1)
    pts = radius * np.exp(2j * np.pi * j / n)
    half = an.pgf_l(pts)
    full = np.concatenate([half, np.conj(half[1:-1][::-1])])
    coef = np.fft.fft(full).real / n
    return coef[: n_max + 1] / radius ** np.arange(n_max + 1)


@dataclass(frozen=True)
class QueueSummary:
    p_up: float
    p_down: float
    mean: float
    pmf: np.ndarray
    e_mu_n: float
    e_n_mu_n: float
    phi: float
    mu: float


def summary(spec: VacQueueSpec, n_max: int = 128) -> QueueSummary:
    an = analysis(spec)
    return QueueSummary(
        p_up=an.p_up,
        p_down=1.0 - an.p_up,
        mean=mean_L(spec),
        pmf=pmf_L(spec, n_max),
        e_mu_n=an.x,
        e_n_mu_n=an.y,
        phi=an.phi,
        mu=an.ker.mu,
    )


SUMMARY_FIELDS = ("lam", "sigma", "rho", "p_up", "mu", "phi", "e_mu_n", "e_n_mu_n", "mean")


def summary_row(spec: VacQueueSpec, s: QueueSummary) -> dict:
    """Flat record in the fixed CSV field order ``SUMMARY_FIELDS`` (+ pmf_0..)."""
    row = {
        "lam": spec.lam,
        "sigma": spec.sigma,
        "rho": spec.rho,
        "p_up": s.p_up,
        "mu": s.mu,
        "phi": s.phi,
        "e_mu_n": s.e_mu_n,
        "e_n_mu_n": s.e_n_mu_n,
        "mean": s.mean,
    }
    for i, v in enumerate(s.pmf):
        row[f"pmf_{i}"] = float(v)
    return row
