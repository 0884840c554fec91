"""Noise schedules sigma^2(t) and the integral statistics built from them.

Everything downstream works from three integrals of a schedule:

* ``theta_sq(n)``: the noise energy on the unit interval ``[n, n+1]``;
* ``capital_theta_sq(n)``: the same energies discounted by ``exp(-2(n-j))``;
* ``ou_variance(t)``: the variance of the unit-rate OU process driven by the
  schedule, ``v(t) = int_0^t exp(-2(t-s)) sigma^2(s) ds``.

``exp(2s)``-weighted integrals are never formed directly (they overflow near
s = 355); the discounted recursion ``v(t+h) = exp(-2h) v(t) + increment`` is
used instead.
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConstructionError, DomainError
from .expr import Expression, as_rule, rule_to_json
from .quadrature import gauss_legendre, integrate_pieces

__all__ = [
    "Asymptotics", "NoiseSchedule", "ParametricSchedule", "PiecewiseLinearSchedule",
    "PiecewiseConstantSchedule", "SpikySchedule", "CompositeSchedule",
    "ScheduleStatistics", "L2ScheduleWarning",
    "sigma_sq_eval", "theta_sq", "theta_sq_array", "schedule_statistics",
    "capital_theta_sq", "ou_variance", "ou_variance_integers", "ou_step_variances",
    "admissible_start", "sigma_capital_sq", "build_spiky_schedule",
    "schedule_from_dict", "load_schedule", "pointwise_log_diagnostic",
]

THETA_RTOL = 1e-8
THETA_ATOL = 1e-12
MAX_DEPTH = 30
E_E = math.e  # log of the admissibility level exp(e)


class L2ScheduleWarning(UserWarning):
    """Sigma is square integrable; the Sigma-based analysis is not needed."""


@dataclass(frozen=True)
class Asymptotics:
    """Closed-form limits carried by a family.

    ``L`` is the limit of theta^2(n) log n (``math.inf`` allowed),
    ``sigma_limit`` the full limit of Sigma^2(t) when it exists, and
    ``in_L2`` whether sigma is square integrable on [0, inf).
    """

    L: float
    in_L2: bool
    sigma_limit: float | None = None


class NoiseSchedule:
    """Base class. Subclasses implement ``_eval`` on arrays of t >= 0."""

    kind = "abstract"
    family = "abstract"
    continuous = True

    def _eval(self, t):
        raise NotImplementedError

    def sigma_sq(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(np.isnan(t)):
            raise DomainError("schedule is defined for t >= 0 only")
        return np.maximum(self._eval(t), 0.0)

    def __call__(self, t):
        return self.sigma_sq(t)

    def breaks(self, a, b):
        """Interior kinks of sigma^2 inside ``[a[i], b[i]]`` as ``(points, owner)``."""
        return None

    def theta_sq_exact(self, n):
        return None

    def ou_increment_exact(self, a, b):
        return None

    def asymptotics(self):
        return None

    def to_dict(self):
        raise NotImplementedError

    @property
    def spec_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def __repr__(self):
        try:
            return f"{type(self).__name__}({self.to_dict()})"
        except TypeError:
            return f"{type(self).__name__}(<callable rules>)"


# --------------------------------------------------------------------------
# parametric families

def _const_eval(p, t):
    return np.full(t.shape, p["c"])


def _const_theta(p, n):
    return np.full(np.shape(n), p["c"], dtype=float)


def _const_ou(p, a, b):
    return p["c"] * -np.expm1(-2.0 * (b - a)) / 2.0


def _const_asym(p):
    if p["c"] == 0:
        return Asymptotics(0.0, True, 0.0)
    return Asymptotics(math.inf, False, math.inf)


def _exp_eval(p, t):
    return p["a"] * np.exp(-p["rate"] * t)


def _exp_theta(p, n):
    n = np.asarray(n, dtype=float)
    r = p["rate"]
    return p["a"] * np.exp(-r * n) * -np.expm1(-r) / r


def _exp_ou(p, a, b):
    # a * int_a^b exp(-2(b-s) - r s) ds, written without exp(2s)
    r = p["rate"]
    h = b - a
    k = 2.0 - r
    if abs(k) < 1e-12:
        return p["a"] * np.exp(-r * b) * h
    return p["a"] * np.exp(-r * b) * -np.expm1(-k * h) / k


def _exp_asym(p):
    return Asymptotics(0.0, True, 0.0)


def _power_eval(p, t):
    return p["a"] * (1.0 + t) ** (-p["p"])


def _power_theta(p, n):
    n = np.asarray(n, dtype=float)
    q = p["p"]
    if q == 1.0:
        return p["a"] * np.log1p(1.0 / (n + 1.0))
    return p["a"] * ((n + 2.0) ** (1.0 - q) - (n + 1.0) ** (1.0 - q)) / (1.0 - q)


def _power_asym(p):
    if p["a"] == 0:
        return Asymptotics(0.0, True, 0.0)
    if p["p"] == 0:
        return Asymptotics(math.inf, False, math.inf)
    return Asymptotics(0.0, p["p"] > 1.0, 0.0)


def _log_eval(p, t):
    return p["L"] / np.log(t + p["c"])


def _log_asym(p):
    # sigma^2 log t -> L gives theta^2(n) log n -> L and v(t) log t -> L/2
    L = p["L"]
    return Asymptotics(L, L == 0, L / 2.0)


def _cw_eval(p, t):
    return p["L"] / np.log(t + p["c"]) ** p["p"]


def _cw_asym(p):
    L, q = p["L"], p["p"]
    if L == 0:
        return Asymptotics(0.0, True, 0.0)
    if q > 1:
        return Asymptotics(0.0, False, 0.0)
    if q < 1:
        return Asymptotics(math.inf, False, math.inf)
    return Asymptotics(L, False, L / 2.0)


def _expr_eval(p, t):
    return p["_fn"](t)


_FAMILIES = {
    "constant": dict(defaults={"c": 1.0}, eval=_const_eval, theta=_const_theta, ou=_const_ou, asym=_const_asym),
    "exp_decay": dict(defaults={"a": 1.0, "rate": 1.0}, eval=_exp_eval, theta=_exp_theta, ou=_exp_ou, asym=_exp_asym),
    "power_decay": dict(defaults={"a": 1.0, "p": 1.0}, eval=_power_eval, theta=_power_theta, asym=_power_asym),
    "log": dict(defaults={"L": 1.0, "c": math.e}, eval=_log_eval, asym=_log_asym),
    "chan_williams": dict(defaults={"L": 1.0, "p": 1.0, "c": math.e}, eval=_cw_eval, asym=_cw_asym),
    "expression": dict(defaults={"expr": None}, eval=_expr_eval),
}
_ALIASES = {"log_family": "log", "exp": "exp_decay", "power": "power_decay", "const": "constant",
            "expr": "expression"}


class ParametricSchedule(NoiseSchedule):
    """A named closed-form family.

    ================  =====================================  =================
    family            sigma^2(t)                             params
    ================  =====================================  =================
    constant          c                                      c >= 0
    exp_decay         a exp(-rate t)                         a >= 0, rate > 0
    power_decay       a (1 + t)^(-p)                         a >= 0, p >= 0
    log               L / log(t + c)                         L >= 0, c > 1
    chan_williams     L / log(t + c)^p                       L >= 0, p > 0, c > 1
    expression        any restricted numpy expression in t   expr
    ================  =====================================  =================

    The asymptotic regime of ``log`` and ``chan_williams`` does not depend on
    ``c``; finite-horizon statistics do.
    """

    kind = "parametric"

    def __init__(self, family, **params):
        family = _ALIASES.get(family, family)
        if family not in _FAMILIES:
            raise ConstructionError(f"unknown schedule family {family!r}")
        spec = _FAMILIES[family]
        unknown = set(params) - set(spec["defaults"])
        if unknown:
            raise ConstructionError(f"unknown parameters for {family}: {sorted(unknown)}")
        p = dict(spec["defaults"])
        p.update(params)
        self.family = family
        self._spec = spec
        if family == "expression":
            if not p["expr"]:
                raise ConstructionError("expression family needs an 'expr' parameter")
            p["expr"] = str(p["expr"])
            p["_fn"] = Expression(p["expr"], var="t")
        else:
            p = {k: float(v) for k, v in p.items()}
            self._validate(family, p)
        self.params = p

    @staticmethod
    def _validate(family, p):
        if family == "constant" and p["c"] < 0:
            raise ConstructionError("constant schedule needs c >= 0")
        if family == "exp_decay" and (p["a"] < 0 or p["rate"] <= 0):
            raise ConstructionError("exp_decay needs a >= 0 and rate > 0")
        if family == "power_decay" and (p["a"] < 0 or p["p"] < 0):
            raise ConstructionError("power_decay needs a >= 0 and p >= 0")
        if family in ("log", "chan_williams"):
            if p["L"] < 0 or p["c"] <= 1:
                raise ConstructionError(f"{family} needs L >= 0 and c > 1")
            if family == "chan_williams" and p["p"] <= 0:
                raise ConstructionError("chan_williams needs p > 0")

    def _eval(self, t):
        return self._spec["eval"](self.params, t)

    def theta_sq_exact(self, n):
        fn = self._spec.get("theta")
        return None if fn is None else fn(self.params, n)

    def ou_increment_exact(self, a, b):
        fn = self._spec.get("ou")
        return None if fn is None else fn(self.params, np.asarray(a, float), np.asarray(b, float))

    def asymptotics(self):
        fn = self._spec.get("asym")
        return None if fn is None else fn(self.params)

    def to_dict(self):
        return {"family": self.family, "params": {k: v for k, v in self.params.items() if not k.startswith("_")}}


# --------------------------------------------------------------------------
# knot-based schedules

class _KnotSchedule(NoiseSchedule):
    def __init__(self, knots):
        k = np.asarray(knots, dtype=float)
        if k.ndim != 2 or k.shape[1] != 2 or k.shape[0] < 1:
            raise ConstructionError("knots must be a list of [t, sigma^2] pairs")
        t, v = k[:, 0], k[:, 1]
        if t[0] != 0.0:
            raise ConstructionError("the first knot must sit at t = 0")
        if np.any(np.diff(t) <= 0):
            raise ConstructionError("knot times must be strictly increasing")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ConstructionError("knot values must be finite and >= 0")
        self.t = t
        self.v = v
        self._cum = self._cumulative()

    def breaks(self, a, b):
        if self.t.size < 2:
            return None
        # knots falling in each [a, b]
        lo = np.searchsorted(self.t, a, side="right")
        hi = np.searchsorted(self.t, b, side="left")
        cnt = np.maximum(hi - lo, 0)
        owner = np.repeat(np.arange(a.size), cnt)
        start = np.repeat(lo, cnt)
        offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        return self.t[start + offs], owner

    def _F(self, x):
        raise NotImplementedError

    def theta_sq_exact(self, n):
        n = np.asarray(n, dtype=float)
        return self._F(n + 1.0) - self._F(n)

    def asymptotics(self):
        last = self.v[-1]
        if last == 0:
            return Asymptotics(0.0, True, 0.0)
        return Asymptotics(math.inf, False, math.inf)

    def to_dict(self):
        return {"family": self.family, "knots": [[float(a), float(b)] for a, b in zip(self.t, self.v)]}


class PiecewiseLinearSchedule(_KnotSchedule):
    """Linear interpolation between knots, constant after the last one."""

    kind = family = "piecewise_linear"

    def _eval(self, t):
        return np.interp(t, self.t, self.v)

    def _cumulative(self):
        seg = np.diff(self.t) * 0.5 * (self.v[1:] + self.v[:-1])
        return np.concatenate([[0.0], np.cumsum(seg)])

    def _F(self, x):
        x = np.asarray(x, dtype=float)
        i = np.clip(np.searchsorted(self.t, x, side="right") - 1, 0, self.t.size - 1)
        vx = np.interp(x, self.t, self.v)
        return self._cum[i] + (x - self.t[i]) * 0.5 * (self.v[i] + vx)


class PiecewiseConstantSchedule(_KnotSchedule):
    """Step function, value ``v_i`` on ``[t_i, t_{i+1})``.

    Discontinuous, so it only exists as an exact oracle for the integral
    statistics; pass ``allow_discontinuous=True`` to build one.
    """

    kind = family = "piecewise_constant"
    continuous = False

    def __init__(self, knots, allow_discontinuous=False):
        if not allow_discontinuous:
            raise ConstructionError("piecewise_constant schedules are discontinuous; oracle use only "
                                    "(pass allow_discontinuous=True)")
        super().__init__(knots)

    def _eval(self, t):
        i = np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, self.t.size - 1)
        return self.v[i]

    def _cumulative(self):
        return np.concatenate([[0.0], np.cumsum(np.diff(self.t) * self.v[:-1])])

    def _F(self, x):
        x = np.asarray(x, dtype=float)
        i = np.clip(np.searchsorted(self.t, x, side="right") - 1, 0, self.t.size - 1)
        return self._cum[i] + (x - self.t[i]) * self.v[i]


class SpikySchedule(NoiseSchedule):
    """Continuous piecewise-linear schedule with a spike at every integer.

    On ``[k, k+1)``: a ramp from ``l_k`` down to the plateau ``q_k`` over
    ``[k, k+eps_k]``, the plateau on ``(k+eps_k, k+1-eps_k)``, and a ramp up to
    ``l_{k+1}`` over ``[k+1-eps_k, k+1)``. So ``sigma^2(k) = l_k`` while
    ``theta^2(k) = q_k (1-eps_k) + eps_k (l_k + l_{k+1}) / 2``.

    Rules are numbers, expression strings in ``k`` or vectorised callables.
    """

    kind = family = "spiky"
    CHECK_K = 4096

    def __init__(self, l, q, eps):
        self._raw = (l, q, eps)
        self.l, self.q, self.eps = as_rule(l), as_rule(q), as_rule(eps)
        self._check(np.arange(self.CHECK_K + 1, dtype=float))

    def _check(self, k):
        e, l, q = self.eps(k), self.l(k), self.q(k)
        if np.any(~(e > 0)) or np.any(~(e < 0.5)):
            raise ConstructionError("spiky schedule needs 0 < eps_k < 1/2")
        # l_0 = 0 is allowed so that the rule l_k = k is admissible
        if np.any(~(l >= 0)) or np.any(~(q > 0)):
            raise ConstructionError("spiky schedule needs l_k >= 0 and q_k > 0")

    def _eval(self, t):
        k = np.floor(t)
        s = t - k
        e, q = self.eps(k), self.q(k)
        lk, lk1 = self.l(k), self.l(k + 1.0)
        down = lk - (lk - q) / e * s
        up = lk1 + (lk1 - q) / e * (s - 1.0)
        return np.where(s <= e, down, np.where(s < 1.0 - e, q, up))

    def breaks(self, a, b):
        k0 = np.floor(a)
        span = int(np.max(np.ceil(b) - k0)) if a.size else 0
        pts = []
        for j in range(max(span, 1) + 1):
            k = k0 + j
            e = self.eps(k)
            pts += [k + e, k + 1.0 - e, k + 1.0]
        pts = np.stack(pts, axis=1)
        owner = np.repeat(np.arange(a.size), pts.shape[1])
        return pts.ravel(), owner

    def theta_sq_exact(self, n):
        k = np.asarray(n, dtype=float)
        e = self.eps(k)
        return self.q(k) * (1.0 - e) + 0.5 * e * (self.l(k + 1.0) + self.l(k))

    def to_dict(self):
        l, q, e = self._raw
        return {"family": "spiky", "l": rule_to_json(l), "q": rule_to_json(q), "eps": rule_to_json(e)}


class CompositeSchedule(NoiseSchedule):
    """Sum of component schedules."""

    kind = family = "sum"

    def __init__(self, components):
        self.components = list(components)
        if not self.components:
            raise ConstructionError("composite schedule needs at least one component")
        self.continuous = all(c.continuous for c in self.components)

    def _eval(self, t):
        return sum(c._eval(t) for c in self.components)

    def breaks(self, a, b):
        pts, own = [], []
        for c in self.components:
            r = c.breaks(a, b)
            if r is not None:
                pts.append(np.asarray(r[0]))
                own.append(np.asarray(r[1]))
        if not pts:
            return None
        return np.concatenate(pts), np.concatenate(own)

    def theta_sq_exact(self, n):
        parts = [c.theta_sq_exact(n) for c in self.components]
        return None if any(p is None for p in parts) else sum(parts)

    def ou_increment_exact(self, a, b):
        parts = [c.ou_increment_exact(a, b) for c in self.components]
        return None if any(p is None for p in parts) else sum(parts)

    def asymptotics(self):
        parts = [c.asymptotics() for c in self.components]
        if any(p is None for p in parts):
            return None
        sl = [p.sigma_limit for p in parts]
        return Asymptotics(
            sum(p.L for p in parts),
            all(p.in_L2 for p in parts),
            None if any(s is None for s in sl) else sum(sl),
        )

    def to_dict(self):
        return {"family": "sum", "components": [c.to_dict() for c in self.components]}


def build_spiky_schedule(l, q, eps):
    """Build the spiky schedule from rules for ``l_k``, ``q_k`` and ``eps_k``."""
    return SpikySchedule(l, q, eps)


def schedule_from_dict(d):
    d = dict(d)
    fam = _ALIASES.get(d.get("family"), d.get("family"))
    if fam == "piecewise_linear":
        return PiecewiseLinearSchedule(d["knots"])
    if fam == "piecewise_constant":
        return PiecewiseConstantSchedule(d["knots"], allow_discontinuous=d.get("allow_discontinuous", False))
    if fam == "spiky":
        return SpikySchedule(d["l"], d["q"], d["eps"])
    if fam == "sum":
        return CompositeSchedule([schedule_from_dict(c) for c in d["components"]])
    if fam is None:
        raise ConstructionError("schedule definition needs a 'family' key")
    params = d.get("params")
    if params is None:
        # flat form: {"family": "log", "L": 1}
        params = {k: v for k, v in d.items() if k != "family"}
    return ParametricSchedule(fam, **params)


def load_schedule(source):
    """Schedule from a dict, a JSON string, or a path to a JSON file."""
    if isinstance(source, NoiseSchedule):
        return source
    if isinstance(source, dict):
        return schedule_from_dict(source)
    text = str(source)
    p = Path(text)
    if not text.lstrip().startswith("{") and p.exists():
        text = p.read_text()
    return schedule_from_dict(json.loads(text))


# --------------------------------------------------------------------------
# statistics

def sigma_sq_eval(schedule, t):
    """sigma^2(t) as a float; raises DomainError for t < 0."""
    if t < 0:
        raise DomainError(f"t must be >= 0, got {t}")
    return float(schedule.sigma_sq(np.asarray([t], dtype=float))[0])


def _integrate(schedule, a, b, weight=None, rtol=THETA_RTOL, atol=THETA_ATOL, max_depth=MAX_DEPTH):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if weight is None:
        def f(x, idx):
            return schedule.sigma_sq(x)
    else:
        def f(x, idx):
            return weight(x, idx) * schedule.sigma_sq(x)
    return integrate_pieces(f, a, b, breaks=schedule.breaks, rtol=rtol, atol=atol, max_depth=max_depth)


def theta_sq_array(schedule, N, rtol=THETA_RTOL):
    """theta^2(n) for n = 0..N-1; closed form when the family has one."""
    n = np.arange(int(N), dtype=float)
    exact = schedule.theta_sq_exact(n)
    if exact is not None:
        return np.maximum(np.asarray(exact, dtype=float), 0.0)
    return np.maximum(_integrate(schedule, n, n + 1.0, rtol=rtol), 0.0)


def theta_sq(schedule, n):
    """Noise energy on ``[n, n+1]``."""
    if n < 0 or int(n) != n:
        raise DomainError("n must be a non-negative integer")
    n = int(n)
    arr = np.asarray([n], dtype=float)
    exact = schedule.theta_sq_exact(arr)
    if exact is not None:
        return float(max(exact[0], 0.0))
    return float(max(_integrate(schedule, arr, arr + 1.0)[0], 0.0))


@dataclass
class ScheduleStatistics:
    """theta^2(0..N-1) and Theta^2(1..N) over ``horizon`` unit intervals.

    ``capital_theta_sq[n-1]`` stores Theta^2(n).
    """

    theta_sq: np.ndarray
    capital_theta_sq: np.ndarray = field(repr=False)
    horizon: int

    @classmethod
    def from_theta_sq(cls, theta_sq):
        th = np.asarray(theta_sq, dtype=float)
        if np.any(th < 0):
            raise DomainError("theta^2 values must be non-negative")
        return cls(th, _theta_recursion(th), int(th.size))


def _theta_recursion(th):
    out = np.empty(th.size)
    c = math.exp(-2.0)
    acc = 0.0
    for i, v in enumerate(th):
        acc = c * (acc + v)
        out[i] = acc
    return out


def schedule_statistics(schedule, horizon, rtol=THETA_RTOL):
    return ScheduleStatistics.from_theta_sq(theta_sq_array(schedule, horizon, rtol=rtol))


def capital_theta_sq(stats, n):
    """Theta^2(n), 1 <= n <= horizon, from the forward recursion."""
    if n < 1 or n > stats.horizon or int(n) != n:
        raise DomainError(f"n must be an integer in [1, {stats.horizon}]")
    return float(stats.capital_theta_sq[int(n) - 1])


def _ou_increments(schedule, a, b, rtol=THETA_RTOL):
    """int_a^b exp(-2(b-s)) sigma^2(s) ds for arrays a, b."""
    exact = schedule.ou_increment_exact(a, b)
    if exact is not None:
        return np.asarray(exact, dtype=float)
    b = np.asarray(b, dtype=float)

    def w(x, idx):
        return np.exp(-2.0 * (b[idx] - x))

    return _integrate(schedule, a, b, weight=w, rtol=rtol)


def ou_variance_integers(schedule, N, rtol=THETA_RTOL):
    """v(0..N) on the integer grid via the exact one-step recursion."""
    n = np.arange(int(N), dtype=float)
    inc = np.maximum(_ou_increments(schedule, n, n + 1.0, rtol=rtol), 0.0)
    v = np.empty(int(N) + 1)
    v[0] = 0.0
    c = math.exp(-2.0)
    acc = 0.0
    for i, x in enumerate(inc):
        acc = c * acc + x
        v[i + 1] = acc
    return v


def ou_variance(schedule, t, rtol=THETA_RTOL):
    """v(t) = int_0^t exp(-2(t-s)) sigma^2(s) ds for scalar or array t >= 0."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("t must be >= 0")
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    n = np.floor(t)
    vint = ou_variance_integers(schedule, int(n.max()) if t.size else 0, rtol=rtol)
    base = vint[n.astype(np.int64)]
    frac = t - n
    part = np.zeros(t.size)
    m = frac > 0
    if m.any():
        part[m] = _ou_increments(schedule, n[m], t[m], rtol=rtol)
    out = np.maximum(np.exp(-2.0 * frac) * base + part, 0.0)
    return float(out[0]) if scalar else out


def ou_step_variances(schedule, t0, dt, m, order=8):
    """Variances of the exact OU transition over ``m`` steps of size ``dt``.

    Entry k is ``int_{t_k}^{t_k+dt} exp(-2(t_k+dt-s)) sigma^2(s) ds`` with
    ``t_k = t0 + k dt``; fixed-order Gauss-Legendre per step unless the
    family has a closed form.
    """
    a = t0 + dt * np.arange(m, dtype=float)
    b = a + dt
    exact = schedule.ou_increment_exact(a, b)
    if exact is not None:
        return np.maximum(np.asarray(exact, dtype=float), 0.0)
    x, w = gauss_legendre(order)
    s = a[:, None] + dt * x[None, :]
    vals = schedule.sigma_sq(s) * np.exp(-2.0 * dt * (1.0 - x))[None, :]
    return np.maximum(dt * vals @ w, 0.0)


def _log_weighted_mass(schedule, t, vint):
    """log int_0^t exp(2s) sigma^2(s) ds = 2t + log v(t), finite-precision safe."""
    n = int(math.floor(t))
    v = vint[n] * math.exp(-2.0 * (t - n))
    if t > n:
        v += float(_ou_increments(schedule, np.array([float(n)]), np.array([t]))[0])
    return -math.inf if v <= 0 else 2.0 * t + math.log(v)


def admissible_start(schedule, t_max=2 ** 20):
    """Smallest T with ``int_0^T exp(2s) sigma^2(s) ds = exp(e)``.

    Bisection in log space on the non-decreasing map
    ``t -> 2t + log v(t)``. Raises DomainError if the level is not reached
    before ``t_max`` (sigma numerically in L^2 with tiny mass).
    """
    N = 16
    while True:
        vint = ou_variance_integers(schedule, N)
        idx = np.arange(N + 1)
        with np.errstate(divide="ignore"):
            g = 2.0 * idx + np.log(vint)
        hit = np.nonzero(g > E_E)[0]
        if hit.size:
            hi = float(hit[0])
            break
        if N >= t_max:
            raise DomainError("int_0^t exp(2s) sigma^2(s) ds never exceeds exp(e); Sigma is undefined")
        N *= 2
    lo = max(hi - 1.0, 0.0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _log_weighted_mass(schedule, mid, vint) > E_E:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-12 * max(1.0, hi):
            break
    return hi


def sigma_capital_sq(schedule, t, T=None):
    """Sigma^2(t) = v(t) log t for t >= max(T, 1).

    ``T`` may be passed to skip the admissibility search. Schedules known to
    be square integrable raise an ``L2ScheduleWarning``; the value is still
    returned.
    """
    if T is None:
        T = admissible_start(schedule)
    start = max(T, 1.0)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < start):
        raise DomainError(f"Sigma is defined for t >= T = {start:.12g}")
    asym = schedule.asymptotics()
    if asym is not None and asym.in_L2:
        warnings.warn("sigma is square integrable; Sigma analysis is not required", L2ScheduleWarning,
                      stacklevel=2)
    v = ou_variance(schedule, t_arr)
    return v * np.log(t_arr)


def pointwise_log_diagnostic(schedule, k):
    """sigma^2(k) log k, the pointwise quantity that fails for non-monotone sigma."""
    k = np.asarray(k, dtype=float)
    return schedule.sigma_sq(k) * np.log(k)

