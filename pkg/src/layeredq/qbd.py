"""Exact queue-length law of a first-layer queue by matrix-geometric analysis.

When the queue's service time is exponential and both repair times are
phase-type (exponential, hyperexponential, Erlang mixture), the pair
(queue length, machine-layer state) is a level-independent QBD.  Its
rate matrix ``R`` is computed by logarithmic reduction, after which
``P(L = n) = pi_0 R^n 1``.  This gives reference values that carry no
simulation noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distkit import DistSpec, ErlangMixture, Exponential, Hyper2
from .depcore import DowntimeStats
from .repairlayer import LayeredSpec

__all__ = ["phase_type", "machine_layer", "ExactQueue", "exact_queue", "supports_exact", "phase_type_downtime_stats"]


def phase_type(dist: DistSpec) -> tuple[np.ndarray, np.ndarray]:
    """(initial vector, sub-generator) of a phase-type representation."""
    if isinstance(dist, Exponential):
        return np.array([1.0]), np.array([[-dist.rate]])
    if isinstance(dist, Hyper2):
        return np.array([dist.p1, 1.0 - dist.p1]), np.diag([-dist.rate1, -dist.rate2])
    if isinstance(dist, ErlangMixture) and (dist.k >= 2 or dist.q == 1.0):
        k = dist.k
        S = -dist.rate * np.eye(k) + dist.rate * np.eye(k, k=1)
        alpha = np.zeros(k)
        alpha[0] = dist.q
        if k >= 2:
            alpha[1] = 1.0 - dist.q
        return alpha, S
    raise ValueError(f"no phase-type representation available for {type(dist).__name__}")


def supports_exact(spec: LayeredSpec, machine: int = 1) -> bool:
    try:
        phase_type(spec.m1.repair)
        phase_type(spec.m2.repair)
    except ValueError:
        return False
    return isinstance(spec.machine(machine).service, Exponential)


def machine_layer(spec: LayeredSpec, machine: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Generator of the machine layer and the indicator of ``machine`` being up.

    States: both up; one machine in repair phase j with the other up; one in
    repair phase j with the other waiting.
    """
    a1, S1 = phase_type(spec.m1.repair)
    a2, S2 = phase_type(spec.m2.repair)
    k1, k2 = len(a1), len(a2)
    s1, s2 = spec.m1.sigma, spec.m2.sigma
    e1, e2 = -S1.sum(axis=1), -S2.sum(axis=1)
    # index blocks
    UU = 0
    R1U = 1
    UR2 = R1U + k1
    R1W = UR2 + k2
    WR2 = R1W + k1
    n = WR2 + k2
    Q = np.zeros((n, n))
    Q[UU, R1U:R1U + k1] += s1 * a1
    Q[UU, UR2:UR2 + k2] += s2 * a2
    Q[R1U:R1U + k1, R1U:R1U + k1] += S1
    Q[R1U:R1U + k1, UU] += e1
    Q[R1U:R1U + k1, R1W:R1W + k1] += s2 * np.eye(k1)
    Q[UR2:UR2 + k2, UR2:UR2 + k2] += S2
    Q[UR2:UR2 + k2, UU] += e2
    Q[UR2:UR2 + k2, WR2:WR2 + k2] += s1 * np.eye(k2)
    Q[R1W:R1W + k1, R1W:R1W + k1] += S1
    Q[R1W:R1W + k1, UR2:UR2 + k2] += np.outer(e1, a2)
    Q[WR2:WR2 + k2, WR2:WR2 + k2] += S2
    Q[WR2:WR2 + k2, R1U:R1U + k1] += np.outer(e2, a1)
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    up = np.zeros(n)
    up[UU] = 1.0
    if machine == 1:
        up[UR2:UR2 + k2] = 1.0
    elif machine == 2:
        up[R1U:R1U + k1] = 1.0
    else:
        raise ValueError(f"machine index must be 1 or 2, got {machine}")
    return Q, up


def _ph_moments(alpha, S):
    """Per-phase residual means and second moments, plus the mean and second moment from alpha."""
    inv = np.linalg.inv(-S)
    one = np.ones(len(alpha))
    r1 = inv @ one
    r2 = 2.0 * inv @ r1
    return r1, r2, float(alpha @ r1), float(alpha @ r2)


def phase_type_downtime_stats(spec: LayeredSpec, machine: int = 1) -> DowntimeStats:
    """Mean, second moment and lag-1 joint moment of a machine's downtimes for phase-type repairs.

    A downtime is the residual repair ``W`` of the other machine (zero if it
    is up at the breakdown) plus the own repair ``R``.  The other machine's
    state at a breakdown is its stationary law given this machine is up, and
    the next downtime depends on the current one only through whether the
    other machine broke down during ``R``.
    """
    if machine == 2:
        return phase_type_downtime_stats(spec.swapped(), 1)
    Q, up = machine_layer(spec, 1)
    m = Q.shape[0]
    aug = np.vstack([Q.T, np.ones(m)])
    rhs = np.zeros(m + 1)
    rhs[-1] = 1.0
    theta = np.linalg.lstsq(aug, rhs, rcond=None)[0]
    a1, S1 = phase_type(spec.m1.repair)
    a2, S2 = phase_type(spec.m2.repair)
    k1, k2 = len(a1), len(a2)
    s1, s2 = spec.m1.sigma, spec.m2.sigma
    w1, w2, _, _ = _ph_moments(a2, S2)
    _, _, er, er2 = _ph_moments(a1, S1)
    # other machine at a breakdown of machine 1: up (index 0) or repair phase j
    cond = np.concatenate([[theta[0]], theta[1 + k1:1 + k1 + k2]])
    cond = cond / cond.sum()
    ew = float(cond[1:] @ w1)
    ew2 = float(cond[1:] @ w2)
    mean = ew + er
    m2 = ew2 + 2.0 * ew * er + er2
    # other machine alone while machine 1 is up: states (up, repair phases)
    e2 = -S2.sum(axis=1)
    G2 = np.zeros((1 + k2, 1 + k2))
    G2[0, 1:] = s2 * a2
    G2[1:, 1:] = S2
    G2[1:, 0] = e2
    np.fill_diagonal(G2, 0.0)
    np.fill_diagonal(G2, -G2.sum(axis=1))
    at_break = s1 * np.linalg.inv(s1 * np.eye(1 + k2) - G2)
    resid = np.concatenate([[0.0], w1])
    h_up = float(at_break[0] @ resid) + er
    h_rep = float(np.concatenate([[0.0], a2]) @ at_break @ resid) + er
    # own repair against the other machine breaking during it
    res = np.linalg.inv(s2 * np.eye(k1) - S1)
    exit1 = -S1.sum(axis=1)
    p_quiet = float(a1 @ res @ exit1)  # E[exp(-s2 R)]
    r_quiet = float(a1 @ res @ res @ exit1)  # E[R exp(-s2 R)]
    joint = ew * (p_quiet * h_up + (1.0 - p_quiet) * h_rep) + r_quiet * h_up + (er - r_quiet) * h_rep
    return DowntimeStats(mean, m2, joint)


def _log_reduction(A0, A1, A2, tol=1e-14, max_iter=60):
    """Minimal nonnegative G with A2 + A1 G + A0 G^2 = 0 (A0 up, A2 down)."""
    m = A1.shape[0]
    inv = np.linalg.inv(-A1)
    B0 = inv @ A0
    B2 = inv @ A2
    G = B2.copy()
    T = B0.copy()
    one = np.ones(m)
    for _ in range(max_iter):
        U = B0 @ B2 + B2 @ B0
        M = np.linalg.inv(np.eye(m) - U)
        B0 = M @ (B0 @ B0)
        B2 = M @ (B2 @ B2)
        step = T @ B2
        G = G + step
        T = T @ B0
        if np.max(np.abs(one - G @ one)) < tol or np.max(np.abs(step)) < 1e-17:
            break
    return G


@dataclass(frozen=True)
class ExactQueue:
    mean: float
    p0: float
    p_up: float
    pi0: np.ndarray
    R: np.ndarray

    def pmf(self, n_max: int) -> np.ndarray:
        out = np.empty(n_max + 1)
        v = self.pi0.copy()
        for n in range(n_max + 1):
            out[n] = v.sum()
            v = v @ self.R
        return out

    def pgf(self, p):
        """E[p^L] = pi_0 (I - p R)^{-1} 1."""
        p = np.atleast_1d(np.asarray(p, dtype=float))
        m = self.R.shape[0]
        vals = np.array([self.pi0 @ np.linalg.solve(np.eye(m) - x * self.R, np.ones(m)) for x in p])
        return vals if vals.size > 1 else float(vals[0])


def exact_queue(spec: LayeredSpec, machine: int = 1) -> ExactQueue:
    """Exact stationary law of queue ``machine`` (exponential service, phase-type repairs)."""
    ms = spec.machine(machine)
    if not isinstance(ms.service, Exponential):
        raise ValueError("exact queue analysis needs exponential service")
    Q, up = machine_layer(spec, machine)
    m = Q.shape[0]
    lam, mu = ms.lam, ms.service.rate
    # stationary machine-layer law
    Aug = np.vstack([Q.T, np.ones(m)])
    rhs = np.zeros(m + 1)
    rhs[-1] = 1.0
    theta = np.linalg.lstsq(Aug, rhs, rcond=None)[0]
    p_up = float(theta @ up)
    if lam == 0:
        return ExactQueue(0.0, 1.0, p_up, theta, np.zeros((m, m)))
    if not lam < mu * p_up:
        raise ValueError(f"queue {machine} is unstable: lam = {lam} >= mu * P(up) = {mu * p_up}")
    A0 = lam * np.eye(m)
    A2 = mu * np.diag(up)
    A1 = Q - A0 - A2
    G = _log_reduction(A0, A1, A2)
    R = A0 @ np.linalg.inv(-(A1 + A0 @ G))
    B1 = Q - A0
    # pi0 (B1 + R A2) = 0 with pi0 (I - R)^{-1} 1 = 1
    inv_ir = np.linalg.inv(np.eye(m) - R)
    M = (B1 + R @ A2).T
    M = np.vstack([M, (inv_ir @ np.ones(m))])
    rhs = np.zeros(m + 1)
    rhs[-1] = 1.0
    pi0 = np.linalg.lstsq(M, rhs, rcond=None)[0]
    mean = float(pi0 @ R @ inv_ir @ inv_ir @ np.ones(m))
    return ExactQueue(mean, float(pi0.sum()), p_up, pi0, R)
