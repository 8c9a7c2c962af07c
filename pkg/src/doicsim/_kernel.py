"""Compiled slot loop for the shipped policies.

Mirrors the reference loop in :mod:`doicsim.engine` operation for operation
so that both produce identical reports from identical streams. Idle stretches
are skipped in one step since nothing can happen until the next arrival.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

DOIC, CSMA, CNC, STATIC = 0, 1, 2, 3
POLICY_CODES = {"doic": DOIC, "csma": CSMA, "cnc": CNC, "static-priority": STATIC}

# integer state slots
T, CH, FRAME, FSTART, IDLE, BUSY, CLOSED, MSTART, VIOL, FSTABLE, UNSTABLE, HN, HSTRIDE, DEPS, AUX = range(15)
N_STATE = 15

DONE, NEED_CHANNEL, NEED_ARRIVALS, NEED_GROW, HALT_UNSTABLE = range(5)


@njit(cache=True)
def _power(g, i_inst, p_max):
    p = i_inst / g
    if p >= p_max:
        return p_max
    while p * g > i_inst:
        p = np.nextafter(p, 0.0)
    return p


@njit(cache=True)
def _sort_order(order, y, es):
    n = y.size
    for i in range(n):
        order[i] = i
    for a in range(1, n):
        cur = order[a]
        kc = y[cur] / es[cur]
        b = a - 1
        while b >= 0:
            prev = order[b]
            kp = y[prev] / es[prev]
            if kp < kc or (kp == kc and prev > cur):
                order[b + 1] = prev
                b -= 1
            else:
                break
        order[b + 1] = cur


@njit(cache=True)
def advance(
    st, qbuf, qhead, qlen, hol, y, order, fdsum, fdcnt,
    dsum, dcnt, qarea, arr_total, arr_meas, hist_y, hist_k,
    arr, arr_ptr, gam, gg, uu,
    policy, lam, bounds, es, V, i_inst, p_max, log_base, L,
    horizon, warmup, queue_cap, thr,
):
    n = qlen.size
    cap = qbuf.shape[1]
    ln_b = math.log(log_base)
    hist_cap = hist_y.shape[0]
    while True:
        t = st[T]
        if t >= horizon:
            return DONE
        if st[CH] >= gam.shape[1]:
            return NEED_CHANNEL
        for i in range(n):
            if arr_ptr[i] >= arr.shape[1]:
                st[AUX] = i
                return NEED_ARRIVALS
            if qlen[i] >= cap:
                st[AUX] = i
                return NEED_GROW
        total = 0
        for i in range(n):
            total += qlen[i]
        if total == 0:
            nxt = arr[0, arr_ptr[0]]
            for i in range(1, n):
                if arr[i, arr_ptr[i]] < nxt:
                    nxt = arr[i, arr_ptr[i]]
            if nxt >= horizon:
                st[IDLE] += horizon - t
                st[T] = horizon
                return DONE
            if nxt > t:
                st[IDLE] += nxt - t
                t = nxt
                st[T] = t
        measuring = st[FRAME] >= warmup
        for i in range(n):
            if arr[i, arr_ptr[i]] == t:
                pos = (qhead[i] + qlen[i]) % cap
                qbuf[i, pos] = t
                if qlen[i] == 0:
                    hol[i] = L
                qlen[i] += 1
                arr_ptr[i] += 1
                arr_total[i] += 1
                if measuring:
                    arr_meas[i] += 1
        st[BUSY] += 1
        if measuring:
            for i in range(n):
                qarea[i] += qlen[i]
        k = st[CH]
        st[CH] = k + 1

        su = -1
        if policy == DOIC or policy == STATIC:
            for j in range(n):
                if qlen[order[j]] > 0:
                    su = order[j]
                    break
        elif policy == CSMA:
            cnt = 0
            for i in range(n):
                if qlen[i] > 0:
                    cnt += 1
            pick = int(uu[k] * cnt)
            if pick > cnt - 1:
                pick = cnt - 1
            for i in range(n):
                if qlen[i] > 0:
                    if pick == 0:
                        su = i
                        break
                    pick -= 1
        else:
            best_w = -np.inf
            for i in range(n):
                if qlen[i] > 0:
                    p_i = _power(gg[i, k], i_inst, p_max)
                    w = qlen[i] * (math.log1p(p_i * gam[i, k]) / ln_b)
                    if w > best_w:
                        best_w = w
                        su = i

        if su >= 0:
            g = gg[su, k]
            p = _power(g, i_inst, p_max)
            r = math.log1p(p * gam[su, k]) / ln_b
            if p < 0.0 or p > p_max or p * g > i_inst:
                st[VIOL] += 1
            sent = min(r, hol[su])
            hol[su] -= sent
            if not hol[su] > 0.0:
                a = qbuf[su, qhead[su]]
                qhead[su] = (qhead[su] + 1) % cap
                qlen[su] -= 1
                d = t - a + 1
                fdsum[su] += d
                fdcnt[su] += 1
                st[DEPS] += 1
                if measuring:
                    dsum[su] += d
                    dcnt[su] += 1
                hol[su] = L if qlen[su] > 0 else 0.0

        total = 0
        for i in range(n):
            total += qlen[i]
            if qlen[i] > queue_cap:
                st[UNSTABLE] = 1
        if st[UNSTABLE] == 1:
            st[T] = t + 1
            return HALT_UNSTABLE

        if total == 0:
            if policy == DOIC:
                for i in range(n):
                    r_i = bounds[i] if V < y[i] * lam[i] else 0.0
                    y[i] = max(0.0, y[i] + (fdsum[i] - r_i * fdcnt[i]))
            for i in range(n):
                fdsum[i] = 0.0
                fdcnt[i] = 0
            st[CLOSED] += 1
            closed = st[CLOSED]
            if closed % st[HSTRIDE] == 0:
                if st[HN] == hist_cap:
                    half = 0
                    for row in range(1, hist_cap, 2):
                        hist_y[half, :] = hist_y[row, :]
                        hist_k[half] = hist_k[row]
                        half += 1
                    st[HN] = half
                    st[HSTRIDE] *= 2
                if closed % st[HSTRIDE] == 0:
                    hist_y[st[HN], :] = y
                    hist_k[st[HN]] = closed
                    st[HN] += 1
            if st[FSTABLE] < 0:
                mx = -np.inf
                for i in range(n):
                    v = y[i] / closed
                    if v > mx:
                        mx = v
                if mx < thr:
                    st[FSTABLE] = closed
            st[FRAME] += 1
            st[FSTART] = t + 1
            st[IDLE] = 0
            st[BUSY] = 0
            if st[FRAME] == warmup:
                st[MSTART] = t + 1
            if policy == DOIC:
                _sort_order(order, y, es)
        st[T] = t + 1
