"""Vectorised adaptive Simpson quadrature.

Many intervals are refined at once: every pass evaluates the integrand on
all still-active panels with a single array call, so integrating a schedule
over thousands of unit intervals costs a handful of numpy calls.
"""
from __future__ import annotations

import numpy as np

__all__ = ["QuadratureError", "adaptive_simpson", "integrate_pieces", "gauss_legendre"]


class QuadratureError(ArithmeticError):
    """Refinement hit ``max_depth`` before meeting the tolerance.

    ``estimate`` holds the best available values for every requested interval.
    """

    def __init__(self, message, estimate):
        super().__init__(message)
        self.estimate = estimate


def adaptive_simpson(func, a, b, rtol=1e-8, atol=1e-12, max_depth=30, initial_panels=4):
    """Integrate ``func`` over each ``[a[i], b[i]]``.

    ``func(x, idx)`` receives a flat array of abscissae and the index of the
    interval each one belongs to, and must return an array of the same shape.
    The panel tolerance starts at ``max(atol, rtol * |coarse estimate|)`` and
    is halved on every split. Richardson correction is applied on acceptance.
    Panels still unresolved at ``max_depth`` are accepted as long as their
    summed error estimate stays inside the interval's tolerance (this covers
    kinks and integrable derivative singularities); otherwise
    :class:`QuadratureError` is raised.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    n = a.size
    out = np.zeros(n)
    if n == 0:
        return out

    # seed panels: split every interval in `initial_panels` equal pieces
    k = int(initial_panels)
    frac = np.arange(k + 1) / k
    edges = a[:, None] + (b - a)[:, None] * frac[None, :]
    pa = edges[:, :-1].ravel()
    pb = edges[:, 1:].ravel()
    owner = np.repeat(np.arange(n), k)
    pm = 0.5 * (pa + pb)
    xs = np.concatenate([pa, pm, pb])
    fs = np.asarray(func(xs, np.concatenate([owner, owner, owner])), dtype=float)
    m = pa.size
    fa, fm, fb = fs[:m], fs[m:2 * m], fs[2 * m:]
    whole = (pb - pa) / 6.0 * (fa + 4.0 * fm + fb)

    coarse = np.zeros(n)
    np.add.at(coarse, owner, whole)
    budget = np.maximum(atol, rtol * np.abs(coarse))
    tol = budget[owner] / k
    depth = np.zeros(m, dtype=np.int64)
    stuck_err = np.zeros(n)

    while pa.size:
        lm = 0.5 * (pa + pm)
        rm = 0.5 * (pm + pb)
        f2 = np.asarray(func(np.concatenate([lm, rm]), np.concatenate([owner, owner])), dtype=float)
        flm, frm = f2[:pa.size], f2[pa.size:]
        h = (pb - pa) / 12.0
        left = h * (fa + 4.0 * flm + fm)
        right = h * (fm + 4.0 * frm + fb)
        err = left + right - whole
        ok = np.abs(err) <= 15.0 * tol
        stuck = ~ok & (depth >= max_depth)
        if stuck.any():
            np.add.at(stuck_err, owner[stuck], np.abs(err[stuck]))
        done = ok | stuck
        if done.any():
            np.add.at(out, owner[done], (left + right + err / 15.0)[done])
        go = ~done
        if not go.any():
            break
        # children: [pa, pm] and [pm, pb]
        pa, pm, pb = (
            np.concatenate([pa[go], pm[go]]),
            np.concatenate([lm[go], rm[go]]),
            np.concatenate([pm[go], pb[go]]),
        )
        fa, fm, fb = (
            np.concatenate([fa[go], fm[go]]),
            np.concatenate([flm[go], frm[go]]),
            np.concatenate([fm[go], fb[go]]),
        )
        whole = np.concatenate([left[go], right[go]])
        tol = np.concatenate([tol[go], tol[go]]) * 0.5
        depth = np.concatenate([depth[go], depth[go]]) + 1
        owner = np.concatenate([owner[go], owner[go]])

    if np.any(~(stuck_err <= budget)):
        raise QuadratureError("adaptive Simpson did not converge within max_depth", out)
    return out


def integrate_pieces(func, a, b, breaks=None, **kw):
    """Adaptive Simpson over ``[a[i], b[i]]`` after splitting at known kinks.

    ``breaks(a, b)`` returns ``(points, owner)``: interior break points and the
    interval index each one belongs to. The integrand is smooth between them.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    found = None if breaks is None else breaks(a, b)
    if found is None:
        return adaptive_simpson(func, a, b, **kw)
    pts, own = found
    pts = np.asarray(pts, dtype=float)
    own = np.asarray(own, dtype=np.int64)
    inside = (pts > a[own]) & (pts < b[own])
    pts, own = pts[inside], own[inside]
    if pts.size == 0:
        return adaptive_simpson(func, a, b, **kw)
    idx = np.arange(a.size)
    allp = np.concatenate([a, b, pts])
    allo = np.concatenate([idx, idx, own])
    order = np.lexsort((allp, allo))
    allp, allo = allp[order], allo[order]
    same = allo[1:] == allo[:-1]
    sa, sb, so = allp[:-1][same], allp[1:][same], allo[:-1][same]
    keep = sb > sa
    sa, sb, so = sa[keep], sb[keep], so[keep]

    def sub(x, j):
        return func(x, so[j])

    # relative tolerance is per sub-piece, which is stricter than per interval
    try:
        parts = adaptive_simpson(sub, sa, sb, **kw)
    except QuadratureError as exc:
        est = np.zeros(a.size)
        np.add.at(est, so, exc.estimate)
        raise QuadratureError(str(exc), est) from None
    out = np.zeros(a.size)
    np.add.at(out, so, parts)
    return out


_GL_CACHE = {}


def gauss_legendre(order):
    """Nodes and weights on [0, 1]."""
    if order not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(order)
        _GL_CACHE[order] = (0.5 * (x + 1.0), 0.5 * w)
    return _GL_CACHE[order]
