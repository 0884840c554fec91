import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from fadingsde import (
    ConstructionError, DomainError, DriftFunction as D, ParametricSchedule, UnsupportedOperation,
    classify, f_minus, f_plus, h_f, overline_x, underline_x, x_bounds, x_minus, x_plus, y_envelope,
)
from fadingsde.classifier import Confidence, Regime, RegimeClassification
from fadingsde.drift import UNBOUNDED_MARKER, FluctuationBounds, drift_from_dict, load_drift, max_abs_f

Y_GRID = np.logspace(-6, 6, 25)


def osc_level_oracle(f, level, a, n=100_000):
    """Largest crossing of f(z) = level on (0, zmax] by dense scan and brentq."""
    # f(z) >= (a - 1) z, so every crossing lies below level / (a - 1)
    z = np.linspace(0.0, 1.01 * level / (a - 1) + 1.0, n + 1)
    g = f(z) - level
    idx = np.nonzero((g[:-1] <= 0) & (g[1:] > 0))[0]
    j = int(idx[-1])
    if g[j] == 0:
        return z[j]
    return brentq(lambda s: float(f(s)) - level, z[j], z[j + 1], xtol=1e-14, rtol=1e-14)


# construction

@pytest.mark.parametrize("kind, params", [
    ("linear", {"k": 0.0}), ("odd_power", {"n": 2}), ("odd_power", {"c": -1}),
    ("polynomial", {"coeffs": [1.0, 1.0]}), ("polynomial", {"coeffs": [0.0, -1.0]}),
    ("saturating", {"a": 0.0}), ("oscillating", {"a": 0.9}),
    ("piecewise_linear", {"knots": [[0.0, 0.0]]}), ("piecewise_linear", {"knots": [[-1, 1], [1, 1]]}),
    ("nonsense", {}),
])
def test_construction_errors(kind, params):
    with pytest.raises(ConstructionError):
        D(kind, **params)


def test_declared_monotone_is_validated():
    with pytest.raises(ConstructionError):
        D("oscillating", a=1.2, monotone=True)
    assert not D("oscillating", a=1.2).monotone
    assert D("polynomial", coeffs=[0, 1, 0, 1]).monotone


def test_family_flags(drifts):
    assert drifts["linear"].coercive and drifts["cubic"].coercive
    assert not drifts["saturating"].coercive
    assert drifts["saturating_coercive"].coercive
    assert drifts["oscillating"].coercive


def test_callable_drift_not_serialisable():
    d = D("callable", func=lambda x: x ** 3 + x)
    assert d(np.array([1.0]))[0] == 2.0
    with pytest.raises(UnsupportedOperation):
        d.to_dict()


def test_drift_round_trip(drifts, tmp_path):
    for d in drifts.values():
        back = drift_from_dict(json.loads(json.dumps(d.to_dict())))
        assert back.spec_hash == d.spec_hash
        x = np.linspace(-5, 5, 41)
        assert np.array_equal(back(x), d(x))
    p = tmp_path / "d.json"
    p.write_text(json.dumps(drifts["cubic"].to_dict()))
    assert load_drift(str(p)).spec_hash == drifts["cubic"].spec_hash


def test_piecewise_linear_extrapolates():
    d = D("piecewise_linear", knots=[[-1, -2], [0, 0], [1, 1]])
    assert d(np.array([3.0]))[0] == 3.0
    assert d(np.array([-3.0]))[0] == -6.0
    assert d.coercive and d.monotone


# h_f and underline_x

def test_h_f_examples(drifts):
    assert h_f(drifts["linear"], 1.0) == 3.0
    assert h_f(drifts["cubic"], 2.0) == 12.0
    u = np.linspace(-2, 2, 10_001)
    assert h_f(drifts["cubic"], 2.0) == pytest.approx(4 + np.max(np.abs(u ** 3)), rel=1e-12)
    for d in drifts.values():
        assert h_f(d, 0.0) == 0.0


@pytest.mark.parametrize("x", [0.5, 3.0, 7.7, 40.0])
def test_max_abs_f_non_monotone_grid_oracle(drifts, x):
    d = drifts["oscillating"]
    u = np.linspace(-x, x, 200_001)
    ref = float(np.max(np.abs(d(u))))
    assert max_abs_f(d, x) == pytest.approx(ref, rel=1e-8)
    assert max_abs_f(d, x) >= ref


def test_underline_x_examples(drifts):
    assert underline_x(drifts["linear"], 3.0) == pytest.approx(1.0, abs=1e-10 * 4 / 3 + 1e-15)
    x = underline_x(drifts["cubic"], 1.0)
    ref = brentq(lambda s: 2 * s + s ** 3 - 1, 0, 1, xtol=1e-15)
    assert x == pytest.approx(ref, abs=1e-9)
    assert x == pytest.approx(0.45340, abs=1e-4)
    for d in drifts.values():
        assert underline_x(d, 0.0) == 0.0
    with pytest.raises(DomainError):
        underline_x(drifts["linear"], -1.0)


@pytest.mark.parametrize("name", ["linear", "cubic", "saturating", "saturating_coercive", "oscillating"])
def test_underline_x_round_trip(drifts, name):
    d = drifts[name]
    for y in Y_GRID:
        assert abs(h_f(d, underline_x(d, y)) - y) <= 1e-9 * (1 + y)


@pytest.mark.parametrize("name", ["linear", "cubic", "saturating", "saturating_coercive", "oscillating"])
def test_h_f_strictly_increasing(drifts, name):
    h = h_f(drifts[name], np.linspace(0, 50, 501))
    assert np.all(np.diff(h) > 0)


@pytest.mark.parametrize("name", ["linear", "cubic", "saturating_coercive", "oscillating"])
def test_monotone_in_y_and_small_y_limit(drifts, name):
    d = drifts[name]
    ys = np.logspace(-4, 3, 30)
    ux = underline_x(d, ys)
    ox = overline_x(d, ys)
    assert np.all(np.diff(ux) > 0) and np.all(np.diff(ox) > 0)
    assert underline_x(d, 1e-8) < 1e-6
    assert overline_x(d, 0.0) == 0.0
    if name == "cubic":
        # f+(y) = y^(1/3) tends to 0 slower than y
        assert overline_x(d, 1e-8) == pytest.approx(2e-8 + 1e-8 ** (1 / 3), rel=1e-8)
        assert overline_x(d, 1e-12) < overline_x(d, 1e-8)
    else:
        assert overline_x(d, 1e-8) < 1e-6


# ordering: |f2| >= |f1| pointwise implies the bounds for f2 are smaller
ORDER_PAIRS = [
    (D("linear"), D("linear", k=2.0)),
    (D("linear"), D("polynomial", coeffs=[0, 1, 0, 1])),
    (D("saturating", a=1.0, slope=0.5), D("linear", k=1.5)),
]


@pytest.mark.parametrize("f1, f2", ORDER_PAIRS)
def test_ordering_in_f(f1, f2):
    g = np.concatenate([np.logspace(-8, 8, 400), -np.logspace(-8, 8, 400)])
    assert np.all(np.abs(f2(g)) >= np.abs(f1(g)))
    for y in np.logspace(-3, 3, 13):
        assert underline_x(f1, y) >= underline_x(f2, y) - 1e-12 * (1 + y)
        assert overline_x(f1, y) >= overline_x(f2, y) - 1e-12 * (1 + y)


# generalised inverses

def test_f_plus_minus_examples(drifts):
    assert f_plus(drifts["cubic"], 8.0) == pytest.approx(2.0, rel=1e-12)
    assert f_minus(drifts["cubic"], -8.0) == pytest.approx(-2.0, rel=1e-12)
    with pytest.raises(DomainError):
        f_plus(drifts["cubic"], -1.0)
    with pytest.raises(DomainError):
        f_minus(drifts["cubic"], 1.0)


@pytest.mark.parametrize("level", [0.5, 3.0, 10.0, 25.0, 80.0])
def test_f_plus_non_monotone_grid_oracle(drifts, level):
    d = drifts["oscillating"]
    ref = osc_level_oracle(d, level, 1.2)
    assert f_plus(d, level) == pytest.approx(ref, rel=1e-10)
    ref_neg = -osc_level_oracle(d.reflected(), level, 1.2)
    assert f_minus(d, -level) == pytest.approx(ref_neg, rel=1e-10)


def test_f_plus_picks_largest_crossing(drifts):
    d = drifts["oscillating"]
    level = 25.0
    z = np.linspace(0, 200, 100_001)
    crossings = np.nonzero(np.diff(np.sign(d(z) - level)))[0]
    assert crossings.size > 1
    assert f_plus(d, level) >= z[crossings[-1]]


def test_non_coercive_unsupported(drifts):
    d = drifts["saturating"]
    for fn, arg in ((f_plus, 0.5), (f_minus, -0.5), (overline_x, 0.5), (x_plus, 0.5), (x_minus, 0.5)):
        with pytest.raises(UnsupportedOperation):
            fn(d, arg)


def test_overline_x_examples(drifts):
    assert overline_x(drifts["cubic"], 1.0) == pytest.approx(3.0, rel=1e-12)
    assert overline_x(drifts["linear"], 2.0) == pytest.approx(6.0, rel=1e-12)


def test_x_plus_examples(drifts):
    assert x_plus(drifts["linear"], 1.0) == pytest.approx(2.0, rel=1e-12)
    assert x_plus(drifts["cubic"], 1.0) == pytest.approx(2.0, rel=1e-12)
    assert x_plus(drifts["cubic"], 1.0, method="grid") == pytest.approx(2.0, rel=1e-8)
    assert x_plus(drifts["linear"], 0.0) == 0.0


@pytest.mark.parametrize("name", ["linear", "cubic", "saturating_coercive"])
def test_increasing_f_consistency(drifts, name):
    d = drifts[name]
    for y in np.logspace(-2, 2, 9):
        inv = brentq(lambda s: float(d(s)) - y, 0, 1e4, xtol=1e-15, rtol=1e-15)
        assert f_plus(d, y) == pytest.approx(inv, rel=1e-8)
        assert x_plus(d, y) == pytest.approx(y + inv, rel=1e-8)
        assert x_plus(d, y, method="grid") == pytest.approx(x_plus(d, y), rel=1e-8)
        assert x_minus(d, y, method="grid") == pytest.approx(x_minus(d, y), rel=1e-8)


@pytest.mark.parametrize("name", ["linear", "cubic", "saturating_coercive", "oscillating"])
def test_dominance(drifts, name):
    d = drifts[name]
    for y in np.logspace(-2, 1.5, 8):
        lhs = y + max(x_plus(d, y), x_minus(d, y))
        assert lhs <= overline_x(d, y) * (1 + 1e-6)


@settings(max_examples=15)
@given(a=st.floats(1.05, 3.0), y=st.floats(0.05, 20.0))
def test_property_dominance_oscillating(a, y):
    d = D("oscillating", a=a)
    assert y + max(x_plus(d, y), x_minus(d, y)) <= overline_x(d, y) * (1 + 1e-6)


@given(y1=st.floats(1e-6, 1e6), y2=st.floats(1e-6, 1e6))
def test_property_underline_monotone(y1, y2):
    d = D("odd_power", n=3)
    lo, hi = sorted((y1, y2))
    assert underline_x(d, lo) <= underline_x(d, hi) + 1e-9 * (1 + hi)


def test_example_one_asymptotics():
    d = D("odd_power", n=3)
    small = math.sqrt(2 * 1e-6)
    assert underline_x(d, small) / small == pytest.approx(0.5, rel=0.05)
    large = math.sqrt(2 * 1e6)
    assert overline_x(d, large) / (2 * large) == pytest.approx(1.0, rel=0.05)


# envelopes and bounds

def test_y_envelope():
    lo, hi = y_envelope(1.0)
    assert lo == pytest.approx(0.26894142, abs=1e-8) and hi == pytest.approx(4.30025854, abs=1e-8)
    assert y_envelope(0.0) == (0.0, 0.0)
    lo2, hi2 = y_envelope(2.0)
    assert lo2 == 2 * lo and hi2 == 2 * hi
    assert lo2 == pytest.approx(0.53788, abs=1e-5) and hi2 == pytest.approx(8.600517, abs=1e-6)
    with pytest.raises(DomainError):
        y_envelope(-1.0)


def _generic(eps):
    return RegimeClassification(Regime.BOUNDED, 1.0, eps, Confidence.HIGH, {})


def test_x_bounds_sharp_cubic(drifts):
    b = x_bounds(drifts["cubic"], classify(ParametricSchedule("log", L=1.0)))
    assert b.sharp and b.y_lower == b.y_upper == pytest.approx(1.0)
    assert b.x_lower == pytest.approx(0.4534, abs=1e-4)
    assert b.x_upper == pytest.approx(3.0, rel=1e-10)


def test_x_bounds_generic_linear(drifts):
    b = x_bounds(drifts["linear"], _generic(1.0))
    assert not b.sharp
    assert b.x_lower == pytest.approx(0.26894142 / 3, rel=1e-8)
    assert b.x_lower == pytest.approx(0.08965, abs=1e-5)
    assert b.x_upper == pytest.approx(3 * 4.30025854, rel=1e-8)
    assert b.x_upper == pytest.approx(12.9008, abs=1e-4)
    assert FluctuationBounds.from_dict(json.loads(json.dumps(b.to_dict()))) == b


def test_x_bounds_non_coercive(drifts):
    b = x_bounds(drifts["saturating"], _generic(1.0))
    assert b.x_upper is None and b.marker == UNBOUNDED_MARKER
    assert b.x_lower > 0


def test_x_bounds_regime_mismatch(drifts):
    with pytest.raises(DomainError):
        x_bounds(drifts["linear"], classify(ParametricSchedule("constant")))
