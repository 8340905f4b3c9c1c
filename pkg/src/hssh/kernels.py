"""Selective-scan recurrence kernels.

The token recurrence (forward and its adjoint) is the hot inner loop of
training, so both directions ship in two forms: numba ``@njit`` loops and
a vectorised pure-numpy fallback.  The numba path is used whenever numba
imports cleanly and the environment variable ``HSSH_NUMBA`` is not ``0``;
``benchmarks/bench_scan.py`` times one against the other.

Recurrence, per batch b, channel c, state n over tokens t = 1..L:

    abar[t] = exp(delta[b,t,c] * a[c,n])          (decay, in (0,1) for a<0)
    h[t]    = abar[t] * h[t-1] + delta[b,t,c] * bm[b,t,n] * u[b,t,c]
    y[b,t,c] = sum_n cm[b,t,n] * h[t][c,n] + d[c] * u[b,t,c]

All arrays are float64 and C-contiguous.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("HSSH_NUMBA", "1") != "0"


def scan_forward_numpy(u, delta, a, bm, cm, d):
    """Vectorised per-token scan; returns (y, h) with h saved for backward."""
    B, L, C = u.shape
    N = a.shape[1]
    h = np.zeros((B, C, N))
    hs = np.empty((B, L, C, N))
    y = np.empty((B, L, C))
    for t in range(L):
        abar = np.exp(delta[:, t, :, None] * a[None, :, :])
        h = abar * h + delta[:, t, :, None] * bm[:, t, None, :] * u[:, t, :, None]
        hs[:, t] = h
        y[:, t] = (h * cm[:, t, None, :]).sum(axis=-1) + d[None, :] * u[:, t]
    return y, hs


def scan_backward_numpy(gy, u, delta, a, bm, cm, d, hs):
    """Adjoint of :func:`scan_forward_numpy` for all six inputs."""
    B, L, C = u.shape
    N = a.shape[1]
    gu = np.zeros((B, L, C))
    gdelta = np.zeros((B, L, C))
    ga = np.zeros((C, N))
    gbm = np.zeros((B, L, N))
    gcm = np.zeros((B, L, N))
    gd = np.zeros(C)
    gh = np.zeros((B, C, N))
    for t in range(L - 1, -1, -1):
        ht = hs[:, t]
        gcm[:, t] = (gy[:, t, :, None] * ht).sum(axis=1)
        gd += (gy[:, t] * u[:, t]).sum(axis=0)
        gu[:, t] += gy[:, t] * d[None, :]
        gh += gy[:, t, :, None] * cm[:, t, None, :]
        abar = np.exp(delta[:, t, :, None] * a[None, :, :])
        h_prev = hs[:, t - 1] if t > 0 else np.zeros((B, C, N))
        gabar = gh * h_prev
        gdelta[:, t] += (gabar * a[None, :, :] * abar).sum(axis=-1)
        gdelta[:, t] += (gh * bm[:, t, None, :]).sum(axis=-1) * u[:, t]
        ga += (gabar * delta[:, t, :, None] * abar).sum(axis=0)
        gbm[:, t] = (gh * delta[:, t, :, None] * u[:, t, :, None]).sum(axis=1)
        gu[:, t] += (gh * bm[:, t, None, :]).sum(axis=-1) * delta[:, t]
        gh = gh * abar
    return gu, gdelta, ga, gbm, gcm, gd


def _scan_forward_loops(u, delta, a, bm, cm, d):
    B, L, C = u.shape
    N = a.shape[1]
    hs = np.zeros((B, L, C, N))
    y = np.zeros((B, L, C))
    for b in range(B):
        for c in range(C):
            for n in range(N):
                h = 0.0
                for t in range(L):
                    dt = delta[b, t, c]
                    h = np.exp(dt * a[c, n]) * h + dt * bm[b, t, n] * u[b, t, c]
                    hs[b, t, c, n] = h
        for t in range(L):
            for c in range(C):
                acc = 0.0
                for n in range(N):
                    acc += cm[b, t, n] * hs[b, t, c, n]
                y[b, t, c] = acc + d[c] * u[b, t, c]
    return y, hs


def _scan_backward_loops(gy, u, delta, a, bm, cm, d, hs):
    B, L, C = u.shape
    N = a.shape[1]
    gu = np.zeros((B, L, C))
    gdelta = np.zeros((B, L, C))
    ga = np.zeros((C, N))
    gbm = np.zeros((B, L, N))
    gcm = np.zeros((B, L, N))
    gd = np.zeros(C)
    for b in range(B):
        gh = np.zeros((C, N))
        for t in range(L - 1, -1, -1):
            for c in range(C):
                gyv = gy[b, t, c]
                gd[c] += gyv * u[b, t, c]
                gu[b, t, c] += gyv * d[c]
                for n in range(N):
                    gcm[b, t, n] += gyv * hs[b, t, c, n]
                    gh[c, n] += gyv * cm[b, t, n]
            for c in range(C):
                dt = delta[b, t, c]
                gdt = 0.0
                guv = 0.0
                for n in range(N):
                    abar = np.exp(dt * a[c, n])
                    h_prev = hs[b, t - 1, c, n] if t > 0 else 0.0
                    gabar = gh[c, n] * h_prev
                    gdt += gabar * a[c, n] * abar
                    gdt += gh[c, n] * bm[b, t, n] * u[b, t, c]
                    ga[c, n] += gabar * dt * abar
                    gbm[b, t, n] += gh[c, n] * dt * u[b, t, c]
                    guv += gh[c, n] * bm[b, t, n] * dt
                    gh[c, n] = gh[c, n] * abar
                gdelta[b, t, c] = gdt
                gu[b, t, c] += guv
    return gu, gdelta, ga, gbm, gcm, gd


if HAS_NUMBA:
    scan_forward_numba = njit(cache=True)(_scan_forward_loops)
    scan_backward_numba = njit(cache=True)(_scan_backward_loops)
else:  # pragma: no cover
    scan_forward_numba = None
    scan_backward_numba = None

if USE_NUMBA:
    scan_forward = scan_forward_numba
    scan_backward = scan_backward_numba
else:
    scan_forward = scan_forward_numpy
    scan_backward = scan_backward_numpy
