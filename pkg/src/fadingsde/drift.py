"""Mean-reversion functions f and the deterministic fluctuation-bound calculus."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .classifier import Regime
from .errors import ConstructionError, DomainError, UnsupportedOperation

__all__ = [
    "DriftFunction", "FluctuationBounds", "EnvelopeConstants", "DEFAULT_ENVELOPE",
    "drift_from_dict", "load_drift", "h_f", "max_abs_f", "underline_x", "f_plus", "f_minus",
    "overline_x", "x_plus", "x_minus", "y_envelope", "x_bounds", "sign_check_grid",
    "UNBOUNDED_MARKER",
]

UNBOUNDED_MARKER = "unboundedness not excluded"

# numeric family codes shared with the compiled kernels
CODES = {
    "linear": 0, "odd_power": 1, "polynomial": 2, "saturating": 3,
    "oscillating": 4, "piecewise_linear": 5,
}
_ALIASES = {"cubic": "odd_power", "poly": "polynomial", "tanh": "saturating", "piecewise": "piecewise_linear"}

SCAN_POINTS = 512
REFINE_PEAKS = 8
QUIET_SHELLS = 6
SHELL_SPACING = 0.02
SHELL_MAX_POINTS = 2 ** 16
MAX_SCAN_POINTS = 2 ** 20
GOLDEN_RTOL = 1e-9
BISECT_RTOL = 1e-13


def sign_check_grid(n=4096, lo=1e-8, hi=1e8):
    """Log-spaced positive points; the check runs on this grid and its negation."""
    return np.geomspace(lo, hi, n)


def _pw_eval(xs, ys, x):
    x = np.asarray(x, dtype=float)
    out = np.interp(x, xs, ys)
    s0 = (ys[1] - ys[0]) / (xs[1] - xs[0])
    s1 = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
    out = np.where(x < xs[0], ys[0] + s0 * (x - xs[0]), out)
    return np.where(x > xs[-1], ys[-1] + s1 * (x - xs[-1]), out)


class DriftFunction:
    """A continuous f with x f(x) > 0 for x != 0.

    Families and their parameters:

    * ``linear``: ``k * x``, k > 0
    * ``odd_power``: ``c * x**n``, n odd, c > 0
    * ``polynomial``: ``sum(coeffs[i] * x**i)``; the sign condition is checked on the grid
    * ``saturating``: ``a * tanh(x / a) + slope * x``; coercive only when slope > 0
    * ``oscillating``: ``x * (a + sin(x))``, a > 1; coercive but not monotone
    * ``piecewise_linear``: interpolation through ``knots`` [[x, f(x)], ...] with
      linear extrapolation from the end segments
    * ``callable``: any vectorised python function (numpy backend only, not serialisable)

    ``monotone`` and ``coercive`` default to what the family implies. A declared
    ``monotone=True`` is validated on the sign-check grid.
    """

    def __init__(self, kind, monotone=None, coercive=None, one_sided_lipschitz=None, func=None, **params):
        kind = _ALIASES.get(kind, kind)
        if kind not in CODES and kind != "callable":
            raise ConstructionError(f"unknown drift family {kind!r}")
        self.kind = kind
        self.params = self._normalise(kind, params)
        self.one_sided_lipschitz = one_sided_lipschitz
        if kind == "callable":
            if func is None:
                raise ConstructionError("callable drift needs func=")
            self._func = func
        else:
            self._func = None
        self._check_sign()
        grid_monotone = self._check_monotone_grid()
        if monotone is None:
            data_driven = kind in ("polynomial", "piecewise_linear", "callable")
            monotone = grid_monotone if data_driven else self._family_monotone()
        elif monotone and not grid_monotone:
            raise ConstructionError(f"{kind} drift declared monotone but decreases on the check grid")
        if coercive is None:
            coercive = self._family_coercive()
        self.monotone = bool(monotone)
        self.coercive = bool(coercive)

    # construction helpers
    @staticmethod
    def _normalise(kind, p):
        p = dict(p)
        if kind == "linear":
            k = float(p.pop("k", 1.0))
            if not k > 0:
                raise ConstructionError("linear drift needs k > 0")
            out = {"k": k}
        elif kind == "odd_power":
            n = int(p.pop("n", 3))
            c = float(p.pop("c", 1.0))
            if n < 1 or n % 2 == 0 or not c > 0:
                raise ConstructionError("odd_power drift needs odd n >= 1 and c > 0")
            out = {"n": n, "c": c}
        elif kind == "polynomial":
            coeffs = [float(v) for v in p.pop("coeffs")]
            if not coeffs or coeffs[0] != 0.0:
                raise ConstructionError("polynomial drift needs coeffs[0] == 0 so that f(0) = 0")
            while len(coeffs) > 1 and coeffs[-1] == 0.0:
                coeffs.pop()
            out = {"coeffs": coeffs}
        elif kind == "saturating":
            a = float(p.pop("a", 1.0))
            slope = float(p.pop("slope", 0.0))
            if not a > 0 or slope < 0:
                raise ConstructionError("saturating drift needs a > 0 and slope >= 0")
            out = {"a": a, "slope": slope}
        elif kind == "oscillating":
            a = float(p.pop("a", 1.2))
            if not a > 1:
                raise ConstructionError("oscillating drift x(a + sin x) needs a > 1")
            out = {"a": a}
        elif kind == "piecewise_linear":
            knots = np.asarray(p.pop("knots"), dtype=float)
            if knots.ndim != 2 or knots.shape[1] != 2 or knots.shape[0] < 2:
                raise ConstructionError("piecewise_linear drift needs knots [[x, f(x)], ...] with at least 2 rows")
            if np.any(np.diff(knots[:, 0]) <= 0):
                raise ConstructionError("knot abscissae must be strictly increasing")
            out = {"knots": knots.tolist()}
        else:
            out = {}
        if p:
            raise ConstructionError(f"unexpected parameters for {kind}: {sorted(p)}")
        return out

    def _family_monotone(self):
        return self.kind in ("linear", "odd_power", "saturating")

    def _family_coercive(self):
        k, p = self.kind, self.params
        if k in ("linear", "odd_power", "oscillating"):
            return True
        if k == "saturating":
            return p["slope"] > 0
        if k == "polynomial":
            c = p["coeffs"]
            return (len(c) - 1) % 2 == 1 and c[-1] > 0
        if k == "piecewise_linear":
            kn = np.asarray(p["knots"])
            s0 = (kn[1, 1] - kn[0, 1]) / (kn[1, 0] - kn[0, 0])
            s1 = (kn[-1, 1] - kn[-2, 1]) / (kn[-1, 0] - kn[-2, 0])
            return s0 > 0 and s1 > 0
        return False

    def _check_sign(self):
        g = sign_check_grid()
        with np.errstate(over="ignore", invalid="ignore"):
            fp, fn, f0 = self(g), self(-g), self(np.zeros(1))[0]
        if f0 != 0.0:
            raise ConstructionError(f"f(0) = {f0} but must be 0")
        bad = ~(fp > 0) | ~(fn < 0)
        # overflow to +-inf still has the right sign; nan does not
        if bad.any():
            i = int(np.argmax(bad))
            raise ConstructionError(f"sign condition x f(x) > 0 fails near x = +-{g[i]:.3g}")

    def _check_monotone_grid(self):
        g = sign_check_grid()
        x = np.concatenate([-g[::-1], [0.0], g])
        with np.errstate(over="ignore", invalid="ignore"):
            v = self(x)
        return bool(np.all(np.diff(v) >= 0))

    # evaluation
    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        k, p = self.kind, self.params
        if k == "linear":
            return p["k"] * x
        if k == "odd_power":
            return p["c"] * x ** p["n"]
        if k == "polynomial":
            return np.polynomial.polynomial.polyval(x, p["coeffs"])
        if k == "saturating":
            return p["a"] * np.tanh(x / p["a"]) + p["slope"] * x
        if k == "oscillating":
            return x * (p["a"] + np.sin(x))
        if k == "piecewise_linear":
            kn = np.asarray(p["knots"])
            return _pw_eval(kn[:, 0], kn[:, 1], x)
        return np.asarray(self._func(x), dtype=float)

    def derivative_bound(self, lo, hi, n=1024):
        """Largest |f'| on [lo, hi] from finite differences (used for stiffness warnings)."""
        x = np.linspace(lo, hi, n)
        v = self(x)
        return float(np.max(np.abs(np.diff(v) / np.diff(x))))

    def kernel_spec(self):
        """(code, params) for the compiled kernels, or None for python callables."""
        k, p = self.kind, self.params
        if k == "callable":
            return None
        if k == "linear":
            arr = [p["k"]]
        elif k == "odd_power":
            arr = [p["c"], float(p["n"])]
        elif k == "polynomial":
            arr = list(p["coeffs"])
        elif k == "saturating":
            arr = [p["a"], p["slope"]]
        elif k == "oscillating":
            arr = [p["a"]]
        else:
            kn = np.asarray(p["knots"])
            arr = [float(len(kn))] + kn[:, 0].tolist() + kn[:, 1].tolist()
        return CODES[k], np.asarray(arr, dtype=np.float64)

    def reflected(self):
        """The drift z -> -f(-z); maps f^- and x_- problems onto f^+ and x_+."""
        if self.kind in ("linear", "odd_power", "saturating"):
            return self
        if self.kind == "polynomial":
            # -f(-z) = sum c_i (-1)^(i+1) z^i
            c = [(-1) ** (i + 1) * v for i, v in enumerate(self.params["coeffs"])]
            return DriftFunction("polynomial", self.monotone, self.coercive, coeffs=c)
        if self.kind == "piecewise_linear":
            kn = np.asarray(self.params["knots"])[::-1]
            return DriftFunction("piecewise_linear", self.monotone, self.coercive,
                                 knots=np.column_stack([-kn[:, 0], -kn[:, 1]]).tolist())
        f = self
        return DriftFunction("callable", self.monotone, self.coercive, func=lambda z: -f(-np.asarray(z)))

    # serialisation
    def to_dict(self):
        if self.kind == "callable":
            raise UnsupportedOperation("python callables cannot be serialised")
        d = {"family": self.kind, **self.params, "monotone": self.monotone, "coercive": self.coercive}
        if self.one_sided_lipschitz is not None:
            d["one_sided_lipschitz"] = self.one_sided_lipschitz
        return d

    @property
    def spec_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def __repr__(self):
        if self.kind == "callable":
            return "DriftFunction('callable')"
        return f"DriftFunction({self.kind!r}, {self.params})"


def drift_from_dict(d):
    d = dict(d)
    fam = d.pop("family", d.pop("kind", None))
    if fam is None:
        raise ConstructionError("drift definition needs a 'family'")
    return DriftFunction(fam, monotone=d.pop("monotone", None), coercive=d.pop("coercive", None),
                         one_sided_lipschitz=d.pop("one_sided_lipschitz", None), **d)


def load_drift(source):
    """Drift from a DriftFunction, dict, JSON text or JSON file path."""
    if isinstance(source, DriftFunction):
        return source
    if isinstance(source, dict):
        return drift_from_dict(source)
    text = str(source).strip()
    if not text.startswith("{"):
        with open(text) as fh:
            text = fh.read()
    return drift_from_dict(json.loads(text))


# --- h_f and its inverse ---------------------------------------------------

def _golden_max(g, a, b, rtol=GOLDEN_RTOL):
    """Maximise g on [a, b] (assumed unimodal there)."""
    r = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - r * (b - a), a + r * (b - a)
    gc, gd = g(c), g(d)
    while abs(b - a) > rtol * max(abs(a), abs(b), 1e-300):
        if gc >= gd:
            b, d, gd = d, c, gc
            c = b - r * (b - a)
            gc = g(c)
        else:
            a, c, gc = c, d, gd
            d = a + r * (b - a)
            gd = g(d)
    return max(gc, gd)


def max_abs_f(drift, x):
    """max over |u| <= x of |f(u)|."""
    x = float(x)
    if x < 0:
        raise DomainError("max_abs_f needs x >= 0")
    if x == 0:
        return 0.0
    if drift.monotone:
        return float(max(abs(drift(x)), abs(drift(-x))))
    n = int(min(max(SCAN_POINTS, math.ceil(2 * x / SHELL_SPACING)), MAX_SCAN_POINTS))
    u = np.linspace(-x, x, n + 1)
    v = np.abs(drift(u))
    best = float(v.max())
    # refine the few highest grid peaks; the global max need not sit next to the best grid point
    pad = np.concatenate([[-np.inf], v, [-np.inf]])
    peaks = np.nonzero((v >= pad[:-2]) & (v >= pad[2:]))[0]
    peaks = peaks[np.argsort(v[peaks])[::-1][:REFINE_PEAKS]]
    g = lambda s: float(abs(drift(s)))
    for i in peaks:
        best = max(best, _golden_max(g, u[max(i - 1, 0)], u[min(i + 1, n)]))
    return best


def h_f(drift, x):
    """2x + max_{|u|<=x} |f(u)|; accepts scalars or arrays."""
    if np.ndim(x):
        return np.array([h_f(drift, v) for v in np.ravel(x)]).reshape(np.shape(x))
    x = float(x)
    if x < 0:
        raise DomainError("h_f needs x >= 0")
    return 2.0 * x + max_abs_f(drift, x)


def underline_x(drift, y, tol=1e-10):
    """The root of h_f(x) = y, by bisection on a doubling bracket."""
    if np.ndim(y):
        return np.array([underline_x(drift, v, tol) for v in np.ravel(y)]).reshape(np.shape(y))
    y = float(y)
    if not y >= 0 or math.isinf(y):
        raise DomainError("underline_x needs finite y >= 0")
    if y == 0:
        return 0.0
    lo, hi = 0.0, 1.0
    while h_f(drift, hi) < y:
        lo, hi = hi, 2.0 * hi
        if hi > 1e308:
            raise OverflowError("bracket for h_f inverse overflowed")
    eps = tol * (1.0 + y)
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        r = h_f(drift, mid) - y
        if abs(r) <= eps or mid in (lo, hi):
            return mid
        if r < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --- generalised inverses ---------------------------------------------------

def _require_coercive(drift):
    if not drift.coercive:
        raise UnsupportedOperation("this needs a coercive drift (f -> +-inf at +-inf)")


def _bisect_last_le(g, lo, hi, level):
    """Given g(lo) <= level < g(hi), shrink to the crossing; returns the left end."""
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi) or hi - lo <= BISECT_RTOL * max(1.0, abs(hi)):
            break
        if g(mid) <= level:
            lo = mid
        else:
            hi = mid
    return lo


def _sup_level(g, level, monotone, quiet_shells=QUIET_SHELLS, spacing=SHELL_SPACING, max_points=SHELL_MAX_POINTS):
    """sup{z > 0 : g(z) = level} for a continuous g that tends to +inf.

    ``g`` must accept both scalars and arrays.

    For monotone g the ordinary inverse is bisected on a doubling bracket. For
    general g, dyadic shells [2^k, 2^(k+1)] are scanned until ``quiet_shells``
    consecutive shells stay above the level; the last grid point at or below
    the level is then refined by bisection. Shells are sampled at ``spacing``
    (at least 512 and at most ``max_points`` points), so dips narrower than the
    spacing can be missed.
    """
    if level <= 0 and g(0.0) >= level:
        return 0.0
    if monotone:
        lo, hi = 0.0, 1.0
        while g(hi) <= level:
            lo, hi = hi, 2.0 * hi
            if hi > 1e308:
                raise OverflowError("level not reached; is f really coercive?")
        return _bisect_last_le(g, lo, hi, level)
    last = None
    quiet = 0
    a, b = 0.0, 1.0
    while quiet < quiet_shells:
        # shells share endpoints, so a crossing at a shell boundary is not lost
        n = int(min(max(SCAN_POINTS, math.ceil((b - a) / spacing)), max_points))
        z = np.linspace(a, b, n + 1)
        le = np.nonzero(g(z) <= level)[0]
        if le.size:
            j = int(le[-1])
            last = (z[j], z[min(j + 1, n)])
            quiet = 0
        else:
            quiet += 1
        a, b = b, 2.0 * b
        if b > 1e308:
            raise OverflowError("level set does not close; is f really coercive?")
    if last is None:
        return 0.0
    lo, hi = last
    if lo == hi:
        return float(lo)
    return _bisect_last_le(lambda s: float(g(s)), float(lo), float(hi), level)


def f_plus(drift, x):
    """sup{z > 0 : f(z) = x} for x >= 0."""
    _require_coercive(drift)
    x = float(x)
    if x < 0:
        raise DomainError("f_plus needs x >= 0")
    g = _scalar(drift)
    return _sup_level(g, x, drift.monotone)


def f_minus(drift, x):
    """inf{z < 0 : f(z) = x} for x <= 0."""
    _require_coercive(drift)
    x = float(x)
    if x > 0:
        raise DomainError("f_minus needs x <= 0")
    return -f_plus(drift.reflected(), -x)


def _scalar(drift):
    def g(z):
        return drift(z) if np.ndim(z) else float(drift(z))
    return g


def overline_x(drift, y):
    """2y + max(f^+(y), -f^-(-y))."""
    if np.ndim(y):
        return np.array([overline_x(drift, v) for v in np.ravel(y)]).reshape(np.shape(y))
    y = float(y)
    if not y >= 0:
        raise DomainError("overline_x needs y >= 0")
    return 2.0 * y + max(f_plus(drift, y), -f_minus(drift, -y))


def x_plus(drift, y, method="auto", inner_points=SCAN_POINTS):
    """sup{x > 0 : min_{|a|<=y} f(x + a) = y}.

    ``method="grid"`` always evaluates the inner minimum on an a-grid (endpoints
    included); ``"auto"`` uses y + f^+(y) for monotone drifts.
    """
    _require_coercive(drift)
    y = float(y)
    if not y >= 0:
        raise DomainError("x_plus needs y >= 0")
    if y == 0:
        return 0.0
    if method == "auto" and drift.monotone:
        return y + f_plus(drift, y)
    a = np.linspace(-y, y, inner_points + 1)

    def m(x):
        if np.ndim(x):
            x = np.asarray(x)
            return np.min(drift(x[:, None] + a[None, :]), axis=1)
        return float(np.min(drift(x + a)))
    return _sup_level(m, y, False, max_points=4096)


def x_minus(drift, y, method="auto", inner_points=SCAN_POINTS):
    """Negated inf{x < 0 : max_{|a|<=y} f(x + a) = -y}; equals x_plus of the reflected drift."""
    return x_plus(drift.reflected(), y, method=method, inner_points=inner_points)


# --- envelopes and bounds ---------------------------------------------------

@dataclass(frozen=True)
class EnvelopeConstants:
    """Multipliers turning epsilon' into (y_lower, y_upper)."""

    lower: float = math.exp(-1.0) / (1.0 + math.exp(-1.0))
    upper: float = 1.0 / (1.0 - math.exp(-1.0)) + math.e


DEFAULT_ENVELOPE = EnvelopeConstants()


def y_envelope(epsilon_prime, constants=DEFAULT_ENVELOPE):
    e = float(epsilon_prime)
    if not e >= 0:
        raise DomainError("epsilon' must be >= 0")
    return constants.lower * e, constants.upper * e


@dataclass(frozen=True)
class FluctuationBounds:
    y_lower: float
    y_upper: float
    x_lower: float
    x_upper: float | None
    sharp: bool
    epsilon_prime: float
    marker: str | None = None

    def to_dict(self):
        return {
            "y_lower": self.y_lower, "y_upper": self.y_upper,
            "x_lower": self.x_lower, "x_upper": self.x_upper,
            "sharp": self.sharp, "epsilon_prime": self.epsilon_prime, "marker": self.marker,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["y_lower"]), float(d["y_upper"]), float(d["x_lower"]),
                   None if d.get("x_upper") is None else float(d["x_upper"]),
                   bool(d["sharp"]), float(d["epsilon_prime"]), d.get("marker"))


def x_bounds(drift, classification, constants=DEFAULT_ENVELOPE):
    """Bounds on limsup |X| for a bounded-non-convergent classification.

    When the classification carries an exact limit for the discounted noise
    energy the Y-level is sharp; otherwise the generic envelope is used.
    """
    if Regime(classification.regime) is not Regime.BOUNDED:
        raise DomainError(f"fluctuation bounds need a BoundedNonConvergent regime, got {classification.regime}")
    eps = float(classification.epsilon_prime)
    level = classification.sharp_level
    if level is not None:
        yl = yu = float(level)
        sharp = True
    else:
        yl, yu = y_envelope(eps, constants)
        sharp = False
    xl = underline_x(drift, yl)
    if drift.coercive:
        return FluctuationBounds(yl, yu, xl, overline_x(drift, yu), sharp, eps)
    return FluctuationBounds(yl, yu, xl, None, sharp, eps, UNBOUNDED_MARKER)
