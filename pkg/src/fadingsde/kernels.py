"""Inner loops of the path simulator.

Two interchangeable backends advance a batch of paths over one chunk of time
steps and fold the visited states into per-block extrema of |X|, |Y|, |Z|:

* ``numba``: one compiled, GIL-free call per (path, chunk)
* ``numpy``: all paths at once, vectorised across paths

The backend is picked by the ``FADINGSDE_BACKEND`` environment variable
(``numba`` or ``numpy``); the default is numba when it imports.
"""
from __future__ import annotations

import math
import os

import numpy as np
from scipy.signal import lfilter

try:
    import numba
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

EXPLODE_LEVEL = 1e150


def backend_name(requested=None):
    name = (requested or os.environ.get("FADINGSDE_BACKEND") or ("numba" if HAVE_NUMBA else "numpy")).lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}; use 'numba' or 'numpy'")
    if name == "numba" and not HAVE_NUMBA:
        return "numpy"
    return name


def _drift_scalar(code, p, x):
    if code == 0:
        return p[0] * x
    if code == 1:
        return p[0] * x ** int(p[1])
    if code == 2:
        acc = 0.0
        for i in range(p.shape[0] - 1, -1, -1):
            acc = acc * x + p[i]
        return acc
    if code == 3:
        return p[0] * math.tanh(x / p[0]) + p[1] * x
    if code == 4:
        return x * (p[0] + math.sin(x))
    # piecewise linear: p = [m, xs..., ys...]
    m = int(p[0])
    xs = p[1:1 + m]
    ys = p[1 + m:1 + 2 * m]
    if x <= xs[0]:
        return ys[0] + (ys[1] - ys[0]) / (xs[1] - xs[0]) * (x - xs[0])
    if x >= xs[m - 1]:
        return ys[m - 1] + (ys[m - 1] - ys[m - 2]) / (xs[m - 1] - xs[m - 2]) * (x - xs[m - 1])
    lo, hi = 0, m - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if xs[mid] <= x:
            lo = mid
        else:
            hi = mid
    w = (x - xs[lo]) / (xs[hi] - xs[lo])
    return ys[lo] + w * (ys[hi] - ys[lo])


def _advance_path(code, p, has_x, state, dt, decay, gx, gy, z, k0, n_total, n_blocks,
                  bmax, bmin, acc, rec, rec_every):
    """Advance one path over ``z.shape[0]`` steps starting at global step ``k0``.

    ``state`` = [x, y, exploded_flag, explode_time]; ``acc`` = [sum |r|, count].
    ``bmax``/``bmin`` have shape (3, n_blocks) for (X, Y, Z).
    """
    x = state[0]
    y = state[1]
    if state[2] != 0.0:
        return
    m = z.shape[0]
    for i in range(m):
        k = k0 + i
        fx = 0.0
        if has_x:
            fx = _drift(code, p, x)
            xn = x - fx * dt + gx[i] * z[i]
        else:
            xn = 0.0
        yn = decay * y + gy[i] * z[i]
        if has_x:
            if not (abs(xn) <= EXPLODE_LEVEL):
                state[2] = 1.0
                state[3] = (k + 1) * dt
                b = (k * n_blocks) // n_total
                for j in range(b, n_blocks):
                    for q in range(3):
                        bmax[q, j] = np.inf
                        bmin[q, j] = np.inf
                break
            r = ((xn - yn) - (x - y)) / dt + fx - y
            acc[0] += abs(r)
            acc[1] += 1.0
        x = xn
        y = yn
        b = (k * n_blocks) // n_total
        ax = abs(x)
        ay = abs(y)
        az = abs(x - y)
        if ax > bmax[0, b]:
            bmax[0, b] = ax
        if ax < bmin[0, b]:
            bmin[0, b] = ax
        if ay > bmax[1, b]:
            bmax[1, b] = ay
        if ay < bmin[1, b]:
            bmin[1, b] = ay
        if az > bmax[2, b]:
            bmax[2, b] = az
        if az < bmin[2, b]:
            bmin[2, b] = az
        if rec_every > 0 and (k + 1) % rec_every == 0:
            j = (k + 1) // rec_every
            rec[0, j] = x
            rec[1, j] = y
    state[0] = x
    state[1] = y


if HAVE_NUMBA:
    _drift = njit(cache=True, nogil=True)(_drift_scalar)
    advance_path_numba = njit(cache=True, nogil=True)(_advance_path)
else:  # pragma: no cover
    _drift = _drift_scalar
    advance_path_numba = None


def advance_batch_numpy(drift, has_x, states, dt, decay, gx, gy, z, k0, n_total, n_blocks,
                        bmax, bmin, acc, rec, rec_every):
    """Numpy twin of ``_advance_path`` acting on all paths at once.

    ``states`` has shape (P, 4), ``z`` (P, m), ``bmax``/``bmin`` (P, 3, n_blocks),
    ``acc`` (P, 2), ``rec`` (P, 2, n_rec) or None.
    """
    P, m = z.shape
    alive = states[:, 2] == 0.0
    if not alive.any():
        return
    # Y: linear recursion, done by a filter along time
    drive = gy[None, :] * z
    ys, _ = lfilter([1.0], [1.0, -decay], drive, axis=1, zi=(decay * states[:, 1])[:, None])
    yprev = np.concatenate([states[:, 1:2], ys[:, :-1]], axis=1)
    if has_x:
        xs = np.empty((P, m))
        fxs = np.empty((P, m))
        x = states[:, 0].copy()
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(m):
                fx = drift(x)
                fxs[:, i] = fx
                x = x - fx * dt + gx[i] * z[:, i]
                xs[:, i] = x
        xprev = np.concatenate([states[:, 0:1], xs[:, :-1]], axis=1)
        with np.errstate(over="ignore", invalid="ignore"):
            bad = ~(np.abs(xs) <= EXPLODE_LEVEL)
    else:
        xs = np.zeros((P, m))
        bad = np.zeros((P, m), dtype=bool)

    steps = k0 + np.arange(m)
    blocks = (steps * n_blocks) // n_total
    starts = np.concatenate([[0], np.nonzero(np.diff(blocks))[0] + 1])
    ublocks = blocks[starts]

    for pidx in np.nonzero(alive)[0]:
        hit = np.nonzero(bad[pidx])[0]
        end = int(hit[0]) if hit.size else m
        if has_x and end > 0:
            xp, yp = xprev[pidx, :end], yprev[pidx, :end]
            r = ((xs[pidx, :end] - ys[pidx, :end]) - (xp - yp)) / dt + fxs[pidx, :end] - yp
            acc[pidx, 0] += float(np.sum(np.abs(r)))
            acc[pidx, 1] += end
        if end > 0:
            segs = starts[starts < end]
            vals = (np.abs(xs[pidx, :end]), np.abs(ys[pidx, :end]), np.abs(xs[pidx, :end] - ys[pidx, :end]))
            for q in range(3):
                hi = np.maximum.reduceat(vals[q], segs)
                lo = np.minimum.reduceat(vals[q], segs)
                ub = ublocks[:segs.size]
                bmax[pidx, q, ub] = np.maximum(bmax[pidx, q, ub], hi)
                bmin[pidx, q, ub] = np.minimum(bmin[pidx, q, ub], lo)
        if rec is not None and rec_every > 0 and end > 0:
            kk = steps[:end] + 1
            sel = np.nonzero(kk % rec_every == 0)[0]
            rec[pidx, 0, kk[sel] // rec_every] = xs[pidx, sel]
            rec[pidx, 1, kk[sel] // rec_every] = ys[pidx, sel]
        if hit.size:
            k = k0 + end
            states[pidx, 2] = 1.0
            states[pidx, 3] = (k + 1) * dt
            b = (k * n_blocks) // n_total
            bmax[pidx, :, b:] = np.inf
            bmin[pidx, :, b:] = np.inf
        else:
            states[pidx, 0] = xs[pidx, -1]
            states[pidx, 1] = ys[pidx, -1]
