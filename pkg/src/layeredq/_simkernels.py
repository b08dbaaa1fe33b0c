"""numba event loops behind :mod:`layeredq.desim`.

Distributions are passed as ``(code, params)`` pairs (see ``DistSpec.encode``).
Statistics are accumulated per time batch after the warm-up period so that
batch-means confidence intervals can be formed by the caller.
"""

from __future__ import annotations

import numba as nb
import numpy as np

INF = np.inf
RING = 1 << 20


@nb.njit(cache=True)
def draw(code, prm):
    if code == 0:
        return np.random.exponential(1.0 / prm[0])
    if code == 1:
        return prm[0]
    if code == 2:
        k = int(prm[0])
        shape = k if np.random.random() < prm[2] else k - 1
        return np.random.gamma(shape, 1.0 / prm[1])
    rate = prm[1] if np.random.random() < prm[0] else prm[2]
    return np.random.exponential(1.0 / rate)


@nb.njit(cache=True)
def increment(gcode, gparam, jcode, jprm, t):
    """Draw the dependent part of the next downtime given the previous one ``t``."""
    if gcode == 0:
        return 0.0
    if gcode == 1:
        return gparam * t
    if gcode == 2:
        n = np.random.poisson(gparam * t)
        tot = 0.0
        for _ in range(n):
            tot += draw(jcode, jprm)
        return tot
    # gamma process with exponential(rate) marginals per unit time
    if t <= 0.0:
        return 0.0
    return np.random.gamma(t, 1.0 / jprm[0])


@nb.njit(cache=True)
def _hist_add(hist, b, level, dt):
    nbin = hist.shape[1]
    if level < nbin - 1:
        hist[b, level] += dt
    else:
        hist[b, nbin - 1] += dt


@nb.njit(cache=True, nogil=True)
def layered_run(
    seed,
    lam,
    scode,
    sprm,
    sigma,
    rcode,
    rprm,
    warmup,
    horizon,
    nbatch,
    nhist,
):
    """One replication of the two-machine model.

    Returns per-batch arrays (index ``[machine, batch, ...]``):
    histogram of time spent at each queue length, queue-length area, sojourn
    sum/count, downtime sum/square sum/count, lag-1 product sum/count, up
    time, plus a status flag (0 ok, 1 queue ring overflow).
    """
    np.random.seed(seed)
    blen = (horizon - warmup) / nbatch
    hist = np.zeros((2, nbatch, nhist))
    area = np.zeros((2, nbatch))
    soj = np.zeros((2, nbatch))
    sojn = np.zeros((2, nbatch))
    dsum = np.zeros((2, nbatch))
    d2sum = np.zeros((2, nbatch))
    dcnt = np.zeros((2, nbatch))
    jsum = np.zeros((2, nbatch))
    jcnt = np.zeros((2, nbatch))
    upt = np.zeros((2, nbatch))
    ring = np.zeros((2, RING))
    head = np.zeros(2, dtype=np.int64)
    q = np.zeros(2, dtype=np.int64)

    t = 0.0
    # machine state: 1 up, 2 waiting, 3 in repair
    mstate = np.ones(2, dtype=np.int64)
    brk = np.full(2, INF)
    dep = np.full(2, INF)
    arr = np.full(2, INF)
    down_start = np.zeros(2)
    prev_down = np.full(2, -1.0)
    rep_end = INF
    in_repair = -1
    waiting = -1
    for i in range(2):
        if sigma[i] > 0:
            brk[i] = np.random.exponential(1.0 / sigma[i])
        if lam[i] > 0:
            arr[i] = np.random.exponential(1.0 / lam[i])
    status = 0

    while True:
        # next event; earlier entries win exact ties (breakdowns first)
        tn = brk[0]
        ev = 0
        if brk[1] < tn:
            tn = brk[1]
            ev = 1
        if rep_end < tn:
            tn = rep_end
            ev = 2
        if arr[0] < tn:
            tn = arr[0]
            ev = 3
        if arr[1] < tn:
            tn = arr[1]
            ev = 4
        if dep[0] < tn:
            tn = dep[0]
            ev = 5
        if dep[1] < tn:
            tn = dep[1]
            ev = 6
        if tn > horizon:
            tn = horizon
            ev = -1

        # accumulate time-weighted statistics over (t, tn]
        if tn > warmup:
            a = t if t > warmup else warmup
            while a < tn:
                b = int((a - warmup) / blen)
                if b >= nbatch:
                    b = nbatch - 1
                bend = warmup + (b + 1) * blen
                e = tn if tn < bend else bend
                if b == nbatch - 1:
                    e = tn
                dt = e - a
                for i in range(2):
                    _hist_add(hist[i], b, q[i], dt)
                    area[i, b] += q[i] * dt
                    if mstate[i] == 1:
                        upt[i, b] += dt
                a = e
        t = tn
        if ev == -1:
            break
        bidx = int((t - warmup) / blen) if t > warmup else 0
        if bidx >= nbatch:
            bidx = nbatch - 1

        if ev == 0 or ev == 1:
            i = ev
            mstate[i] = 2
            brk[i] = INF
            dep[i] = INF  # interrupted service is lost, redrawn later
            down_start[i] = t
            if in_repair < 0:
                in_repair = i
                mstate[i] = 3
                rep_end = t + draw(rcode[i], rprm[i])
            else:
                waiting = i
        elif ev == 2:
            i = in_repair
            d = t - down_start[i]
            if down_start[i] >= warmup:
                dsum[i, bidx] += d
                d2sum[i, bidx] += d * d
                dcnt[i, bidx] += 1.0
                if prev_down[i] >= 0.0:
                    jsum[i, bidx] += d * prev_down[i]
                    jcnt[i, bidx] += 1.0
                prev_down[i] = d
            mstate[i] = 1
            if sigma[i] > 0:
                brk[i] = t + np.random.exponential(1.0 / sigma[i])
            if q[i] > 0:
                dep[i] = t + draw(scode[i], sprm[i])
            in_repair = -1
            rep_end = INF
            if waiting >= 0:
                in_repair = waiting
                waiting = -1
                mstate[in_repair] = 3
                rep_end = t + draw(rcode[in_repair], rprm[in_repair])
        elif ev == 3 or ev == 4:
            i = ev - 3
            if q[i] >= RING:
                status = 1
                break
            ring[i, (head[i] + q[i]) % RING] = t
            q[i] += 1
            arr[i] = t + np.random.exponential(1.0 / lam[i])
            if mstate[i] == 1 and dep[i] == INF:
                dep[i] = t + draw(scode[i], sprm[i])
        else:
            i = ev - 5
            at = ring[i, head[i]]
            head[i] = (head[i] + 1) % RING
            q[i] -= 1
            if t > warmup:
                soj[i, bidx] += t - at
                sojn[i, bidx] += 1.0
            dep[i] = INF
            if q[i] > 0:
                dep[i] = t + draw(scode[i], sprm[i])
    return hist, area, soj, sojn, dsum, d2sum, dcnt, jsum, jcnt, upt, status


@nb.njit(cache=True, nogil=True)
def vacq_run(
    seed,
    lam,
    scode,
    sprm,
    sigma,
    ccode,
    cprm,
    gcode,
    gparam,
    jcode,
    jprm,
    warmup,
    horizon,
    nbatch,
    nhist,
):
    """One replication of the single-server queue with one-dependent downtimes.

    Besides the time-average statistics it histograms the queue length at
    uptime starts (``nh``) and downtime starts (``mh``), and collects the
    downtime sequence moments as in :func:`layered_run`.
    """
    np.random.seed(seed)
    blen = (horizon - warmup) / nbatch
    hist = np.zeros((1, nbatch, nhist))
    area = np.zeros(nbatch)
    soj = np.zeros(nbatch)
    sojn = np.zeros(nbatch)
    nh = np.zeros((nbatch, nhist))
    mh = np.zeros((nbatch, nhist))
    dsum = np.zeros(nbatch)
    d2sum = np.zeros(nbatch)
    dcnt = np.zeros(nbatch)
    jsum = np.zeros(nbatch)
    jcnt = np.zeros(nbatch)
    upt = np.zeros(nbatch)
    ring = np.zeros(RING)
    head = 0
    q = 0
    t = 0.0
    up = True
    # start from a stationary-ish downtime memory: one chi draw
    last_d = draw(ccode, cprm)
    prev_rec = -1.0
    switch = np.random.exponential(1.0 / sigma)
    dep = INF
    arr = np.random.exponential(1.0 / lam) if lam > 0 else INF
    status = 0
    while True:
        tn = switch
        ev = 0
        if arr < tn:
            tn = arr
            ev = 1
        if dep < tn:
            tn = dep
            ev = 2
        if tn > horizon:
            tn = horizon
            ev = -1
        if tn > warmup:
            a = t if t > warmup else warmup
            while a < tn:
                b = int((a - warmup) / blen)
                if b >= nbatch:
                    b = nbatch - 1
                bend = warmup + (b + 1) * blen
                e = tn if tn < bend else bend
                if b == nbatch - 1:
                    e = tn
                dt = e - a
                _hist_add(hist[0], b, q, dt)
                area[b] += q * dt
                if up:
                    upt[b] += dt
                a = e
        t = tn
        if ev == -1:
            break
        bidx = int((t - warmup) / blen) if t > warmup else 0
        if bidx >= nbatch:
            bidx = nbatch - 1
        if ev == 0:
            if up:
                up = False
                dep = INF
                d = draw(ccode, cprm) + increment(gcode, gparam, jcode, jprm, last_d)
                if t > warmup:
                    mh[bidx, min(q, nhist - 1)] += 1.0
                    dsum[bidx] += d
                    d2sum[bidx] += d * d
                    dcnt[bidx] += 1.0
                    if prev_rec >= 0.0:
                        jsum[bidx] += d * prev_rec
                        jcnt[bidx] += 1.0
                    prev_rec = d
                last_d = d
                switch = t + d
            else:
                up = True
                if t > warmup:
                    nh[bidx, min(q, nhist - 1)] += 1.0
                switch = t + np.random.exponential(1.0 / sigma)
                if q > 0:
                    dep = t + draw(scode, sprm)
        elif ev == 1:
            if q >= RING:
                status = 1
                break
            ring[(head + q) % RING] = t
            q += 1
            arr = t + np.random.exponential(1.0 / lam)
            if up and dep == INF:
                dep = t + draw(scode, sprm)
        else:
            at = ring[head]
            head = (head + 1) % RING
            q -= 1
            if t > warmup:
                soj[bidx] += t - at
                sojn[bidx] += 1.0
            dep = INF
            if q > 0:
                dep = t + draw(scode, sprm)
    return hist, area, soj, sojn, nh, mh, dsum, d2sum, dcnt, jsum, jcnt, upt, status
