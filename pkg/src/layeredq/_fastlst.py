"""Compiled evaluation of the stationary downtime product.

Distributions travel as ``(code, params[3])`` (see ``DistSpec.encode``) and
g-functions as ``(gcode, gparam, jump_code, jump_params)``:

    gcode 0  zero
    gcode 1  linear, slope gparam
    gcode 2  compound Poisson, intensity gparam, jumps (jump_code, jump_params)
    gcode 3  -log of the LST of (jump_code, jump_params)
"""

from __future__ import annotations

import numba as nb
import numpy as np


@nb.njit(cache=True)
def _log1p(z):
    u = 1.0 + z
    if u == 1.0:
        return z
    return np.log(u) * z / (u - 1.0)


@nb.njit(cache=True)
def lst1(code, prm, s):
    if code == 0:
        return prm[0] / (prm[0] + s)
    if code == 1:
        return np.exp(-prm[0] * s)
    if code == 2:
        k = int(prm[0])
        u = prm[1] / (prm[1] + s)
        return u ** (k - 1) * (prm[2] * u + 1.0 - prm[2])
    return prm[0] * prm[1] / (prm[1] + s) + (1.0 - prm[0]) * prm[2] / (prm[2] + s)


@nb.njit(cache=True)
def one_minus_lst1(code, prm, s):
    if code == 0:
        return s / (prm[0] + s)
    if code == 1:
        return -np.expm1(-prm[0] * s)
    if code == 2:
        k = int(prm[0])
        t = s / (prm[1] + s)
        u = 1.0 - t
        geo = 0.0j
        uj = 1.0 + 0.0j
        for _ in range(k - 1):
            geo += uj
            uj *= u
        return t * geo + uj * prm[2] * t
    return prm[0] * s / (prm[1] + s) + (1.0 - prm[0]) * s / (prm[2] + s)


@nb.njit(cache=True)
def log_lst1(code, prm, s):
    if code == 0:
        return -_log1p(s / prm[0])
    if code == 1:
        return -prm[0] * s
    if code == 2:
        k = int(prm[0])
        t = s / (prm[1] + s)
        return -(k - 1) * _log1p(s / prm[1]) + _log1p(-prm[2] * t)
    p1, r1, r2 = prm[0], prm[1], prm[2]
    lin = (p1 / r2 + (1.0 - p1) / r1) * s
    return _log1p(lin) - _log1p(s / r1) - _log1p(s / r2)


@nb.njit(cache=True)
def gfun1(gcode, gparam, jcode, jprm, s):
    if gcode == 0:
        return 0.0j
    if gcode == 1:
        return gparam * s
    if gcode == 2:
        return gparam * one_minus_lst1(jcode, jprm, s)
    return -log_lst1(jcode, jprm, s)


@nb.njit(cache=True)
def dtilde_array(x, ccode, cprm, gcode, gparam, jcode, jprm, tol_scaled, max_factors):
    """Product of chi over g-iterates for every entry of ``x``.

    Stops per entry once the factor deviation drops below
    ``tol_scaled * min(1, |1 - chi(x)|)``.  Returns the products and a flag
    that is False when some entry hit ``max_factors``.
    """
    out = np.empty(x.shape[0], dtype=np.complex128)
    ok = True
    for i in range(x.shape[0]):
        s = x[i]
        dev0 = abs(one_minus_lst1(ccode, cprm, s))
        thresh = tol_scaled * min(1.0, dev0)
        prod = 1.0 + 0.0j
        n = 0
        while True:
            prod *= lst1(ccode, cprm, s)
            dev = abs(one_minus_lst1(ccode, cprm, s))
            n += 1
            if gcode == 0 or dev < thresh or dev == 0.0:
                break
            if n >= max_factors:
                ok = False
                break
            s = gfun1(gcode, gparam, jcode, jprm, s)
        out[i] = prod
    return out, ok
