"""Small numerical kernels: vector Gauss-Kronrod, contour tricks, differentiation."""

from __future__ import annotations

import numpy as np

# 7-point Gauss / 15-point Kronrod abscissae on [-1, 1] (QUADPACK qk15)
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KW = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GW = np.zeros(15)
# gauss nodes are the odd-indexed kronrod abscissae
_GW[[1, 3, 5]] = _WG[:3]
_GW[7] = _WG[3]
_GW[[13, 11, 9]] = _WG[:3]


class QuadratureError(RuntimeError):
    def __init__(self, msg: str, error_estimate: float):
        super().__init__(f"{msg} (achieved error estimate {error_estimate:.3e})")
        self.error_estimate = error_estimate


def gk_vector(
    f, lo: float, hi: float, *, atol: float = 1e-13, rtol: float = 1e-12, noise: float = 0.0, max_intervals: int = 4000
):
    """Adaptive G7/K15 quadrature of a vector-valued (complex) integrand.

    ``f`` maps a 1-D array of abscissae of length n to an array of shape
    (n, m).  All components share one subdivision; an interval is accepted
    once the Kronrod/Gauss difference of every component is below its share
    (proportional to interval length) of ``max(atol, rtol*|I|)``, or below
    ``noise * length`` when the integrand values are only known to within
    ``noise`` (rounding in a difference of O(1) terms, say).
    """
    length = hi - lo
    a = np.array([lo])
    b = np.array([hi])
    accepted = None
    acc_err = None
    n_done = 0
    while True:
        mid = 0.5 * (a + b)
        half = 0.5 * (b - a)
        x = (mid[:, None] + half[:, None] * _NODES[None, :]).ravel()
        vals = np.asarray(f(x))
        vals = vals.reshape(a.size, 15, -1)
        kron = np.einsum("j,ijk->ik", _KW, vals) * half[:, None]
        gauss = np.einsum("j,ijk->ik", _GW, vals) * half[:, None]
        err = np.abs(kron - gauss)
        total = kron.sum(axis=0) + (accepted if accepted is not None else 0.0)
        tol = np.maximum(atol, rtol * np.abs(total))
        share = np.maximum(tol[None, :] / length, noise) * (b - a)[:, None]
        ok = np.all(err <= share, axis=1)
        ok |= (b - a) < 1e-14 * max(1.0, abs(length))
        good_sum = kron[ok].sum(axis=0)
        good_err = err[ok].sum(axis=0)
        accepted = good_sum if accepted is None else accepted + good_sum
        acc_err = good_err if acc_err is None else acc_err + good_err
        n_done += int(ok.sum())
        if ok.all():
            return accepted, acc_err
        a_bad, b_bad = a[~ok], b[~ok]
        if n_done + 2 * a_bad.size > max_intervals:
            est = float(np.max(acc_err + err[~ok].sum(axis=0)))
            raise QuadratureError("vector Gauss-Kronrod did not converge", est)
        m_bad = 0.5 * (a_bad + b_bad)
        a = np.concatenate([a_bad, m_bad])
        b = np.concatenate([m_bad, b_bad])


def fix_removable(f_raw, p: np.ndarray, z0: complex, radius: float, values: np.ndarray, *, trigger: float | None = None, n: int = 16):
    """Replace ``values`` near a removable singularity ``z0`` by barycentric Cauchy interpolation.

    ``f_raw`` is evaluated on a circle of the given radius around ``z0`` and
    the points of ``p`` closer than ``trigger`` (default radius/10) to ``z0``
    are interpolated from those samples.
    """
    if trigger is None:
        trigger = radius / 10.0
    near = np.abs(p - z0) < trigger
    if not near.any():
        return values
    t = radius * np.exp(2j * np.pi * np.arange(n) / n)
    fz = np.asarray(f_raw(z0 + t))
    pn = p[near]
    w = t[None, :] / (t[None, :] - (pn[:, None] - z0))
    values = values.copy()
    values[near] = (w * fz[None, :]).sum(axis=1) / w.sum(axis=1)
    return values


def contour_derivative(f, z0: float, radius: float, n: int = 32, order: int = 1, real_axis_symmetric: bool = True):
    """Taylor coefficient based derivative from samples on a circle around ``z0``.

    With ``real_axis_symmetric`` the function is assumed real on the real axis
    so only the upper half circle is evaluated.
    """
    theta = 2.0 * np.pi * np.arange(n) / n
    if real_axis_symmetric:
        half = theta[: n // 2 + 1]
        fh = np.asarray(f(z0 + radius * np.exp(1j * half)))
        fz = np.concatenate([fh, np.conj(fh[1:-1][::-1])])
    else:
        fz = np.asarray(f(z0 + radius * np.exp(1j * theta)))
    coef = np.mean(fz * np.exp(-1j * order * theta)) / radius**order
    fact = float(np.prod(np.arange(1, order + 1)))
    return coef * fact


def complex_step(f, x: float, h: float = 1e-20) -> float:
    return float(np.imag(f(x + 1j * h)) / h)


def central_difference(f, x: float, h: float = 1e-5) -> float:
    return float(np.real(f(x + h) - f(x - h)) / (2.0 * h))


def richardson_backward(f, x: float, fx: float, h0: float = 1e-2, levels: int = 6) -> float:
    """One-sided derivative from ``(f(x) - f(x-h))/h`` with Richardson extrapolation in h."""
    table = []
    h = h0
    for i in range(levels):
        row = [(fx - float(np.real(f(x - h)))) / h]
        for j in range(1, i + 1):
            prev = table[i - 1][j - 1]
            row.append(row[j - 1] + (row[j - 1] - prev) / (2.0**j - 1.0))
        table.append(row)
        h /= 2.0
    return table[-1][-1]
