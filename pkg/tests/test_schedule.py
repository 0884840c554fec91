import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from fadingsde import ConstructionError, DomainError, ParametricSchedule as P
from fadingsde.quadrature import QuadratureError, adaptive_simpson
from fadingsde.schedule import (
    L2ScheduleWarning, PiecewiseConstantSchedule, PiecewiseLinearSchedule, ScheduleStatistics,
    SpikySchedule, admissible_start, build_spiky_schedule, capital_theta_sq, load_schedule,
    ou_step_variances, ou_variance, pointwise_log_diagnostic, schedule_statistics, sigma_capital_sq,
    sigma_sq_eval, theta_sq, theta_sq_array,
)

from conftest import bundled_schedules, spiky


def mp_integral(schedule, a, b, weight=None):
    """Independent oracle: mpmath tanh-sinh quadrature of the scalar schedule."""
    def g(s):
        v = float(schedule.sigma_sq(np.array([float(s)]))[0])
        return v * (1 if weight is None else weight(s))
    inner = {float(k) for k in range(math.ceil(a), math.floor(b) + 1) if a < k < b}
    found = schedule.breaks(np.array([float(a)]), np.array([float(b)]))
    if found is not None:
        inner |= {float(x) for x in found[0] if a < x < b}
    pts = [a] + sorted(inner) + [b]
    return float(sum(mpmath.quad(g, [pts[i], pts[i + 1]]) for i in range(len(pts) - 1)))


# sigma_sq_eval

def test_sigma_sq_examples():
    assert sigma_sq_eval(P("constant", c=1.0), 7.3) == 1.0
    assert sigma_sq_eval(P("log", L=2.0), 0.0) == pytest.approx(2.0, abs=1e-15)
    assert sigma_sq_eval(spiky(), 1.5) == pytest.approx(0.5, abs=1e-15)


def test_sigma_sq_negative_time():
    with pytest.raises(DomainError):
        sigma_sq_eval(P("constant"), -0.1)


def test_sigma_sq_never_negative():
    s = P("expression", expr="sin(t)")
    assert np.all(s.sigma_sq(np.linspace(0, 20, 500)) >= 0)


def test_evaluation_deterministic(schedules):
    t = np.linspace(0, 50, 101)
    for s in schedules.values():
        assert np.array_equal(s.sigma_sq(t), s.sigma_sq(t))


# theta_sq

def test_theta_constant():
    assert theta_sq(P("constant", c=2.5), 17) == 2.5


def test_theta_spiky_closed_form_and_quadrature():
    s = spiky()
    assert theta_sq(s, 1) == pytest.approx(0.625, abs=1e-12)
    assert mp_integral(s, 1, 2) == pytest.approx(0.625, abs=1e-12)
    # the generic quadrature path, bypassing the closed form
    assert s.sigma_sq is not None
    q = float(adaptive_simpson(lambda x, i: s.sigma_sq(x), [1.0, 1.25, 1.75], [1.25, 1.75, 2.0]).sum())
    assert q == pytest.approx(0.625, abs=1e-9)


def test_theta_exp():
    assert theta_sq(P("exp_decay"), 0) == pytest.approx(1 - math.exp(-1), rel=1e-14)


@pytest.mark.parametrize("name", ["log_one", "loglog", "integrable_log", "power_half", "cw_two"])
def test_theta_matches_mpmath(name):
    s = bundled_schedules()[name]
    th = theta_sq_array(s, 40)
    for n in (0, 1, 7, 39):
        assert th[n] == pytest.approx(mp_integral(s, n, n + 1), rel=1e-8)


def test_theta_numeric_path_handles_sqrt_singularity():
    s = P("expression", expr="exp(-sqrt(t))")
    assert theta_sq(s, 0) == pytest.approx(2 - 4 / math.e, rel=1e-8)


def test_quadrature_error_carries_estimate():
    with pytest.raises(QuadratureError) as exc:
        adaptive_simpson(lambda x, i: np.where(x > 0.3, np.nan, 1.0), [0.0], [1.0], max_depth=5)
    assert exc.value.estimate.shape == (1,)


def test_theta_negative_index():
    with pytest.raises(DomainError):
        theta_sq(P("constant"), -1)


# Theta^2 and statistics

def test_capital_theta_examples():
    s = P("log", L=1.0)
    st_ = schedule_statistics(s, 64)
    assert capital_theta_sq(st_, 1) == pytest.approx(math.exp(-2) * st_.theta_sq[0], rel=1e-15)
    big = schedule_statistics(P("constant", c=1.0), 200)
    assert capital_theta_sq(big, 200) == pytest.approx(math.exp(-2) / (1 - math.exp(-2)), rel=1e-12)
    zero = ScheduleStatistics.from_theta_sq(np.zeros(10))
    assert capital_theta_sq(zero, 5) == 0.0
    for bad in (0, 65, 2.5):
        with pytest.raises(DomainError):
            capital_theta_sq(st_, bad)


def test_capital_theta_matches_brute_force_sum():
    th = theta_sq_array(bundled_schedules()["spiky"], 50)
    stats = ScheduleStatistics.from_theta_sq(th)
    for n in (1, 2, 10, 50):
        direct = math.fsum(math.exp(-2 * (n - j)) * th[j] for j in range(n))
        assert capital_theta_sq(stats, n) == pytest.approx(direct, rel=1e-13)


@pytest.mark.parametrize("name", list(bundled_schedules()))
def test_recursion_identity_and_nonnegativity(name):
    stats = schedule_statistics(bundled_schedules()[name], 256)
    th, Th = stats.theta_sq, stats.capital_theta_sq
    assert np.all(th >= 0) and np.all(Th >= 0)
    # Theta^2(n+1) = e^-2 (Theta^2(n) + theta^2(n)), with Theta^2(0) = 0
    prev = np.concatenate([[0.0], Th[:-1]])
    assert np.allclose(Th, math.exp(-2) * (prev + th), rtol=1e-14, atol=0)
    # theta^2(n) = e^2 Theta^2(n+1) - Theta^2(n)
    back = math.exp(2) * Th - prev
    assert np.allclose(back, th, rtol=1e-12, atol=1e-15 * max(th.max(), 1e-300))


@pytest.mark.parametrize("name", list(bundled_schedules()))
def test_additivity(name):
    s = bundled_schedules()[name]
    N = 64
    total = math.fsum(theta_sq_array(s, N))
    ref = mp_integral(s, 0, N)
    assert abs(total - ref) <= 1e-6 * (1 + ref)


# OU variance and Sigma

def test_ou_variance_constant():
    s = P("constant", c=1.7)
    t = np.array([0.0, 0.3, 1.0, 2.5, 10.0])
    assert np.allclose(ou_variance(s, t), 1.7 * (1 - np.exp(-2 * t)) / 2, rtol=1e-13, atol=0)
    assert ou_variance(P("constant", c=0.0), 5.0) == 0.0
    assert ou_variance(P("constant", c=1.0), 400.0) == pytest.approx(0.5, rel=1e-14)


def test_ou_variance_numeric_matches_mpmath():
    s = P("log", L=1.0)
    for t in (0.7, 3.0, 12.4):
        ref = mp_integral(s, 0, t, weight=lambda u, t=t: mpmath.exp(-2 * (t - u)))
        assert ou_variance(s, t) == pytest.approx(ref, rel=1e-8)


def test_ou_variance_negative():
    with pytest.raises(DomainError):
        ou_variance(P("constant"), -1.0)


def test_step_variances_sum_to_recursion():
    s = P("log", L=1.0)
    dt, m = 0.01, 500
    var = ou_step_variances(s, 0.0, dt, m)
    v = 0.0
    for x in var:
        v = math.exp(-2 * dt) * v + x
    assert v == pytest.approx(ou_variance(s, 5.0), rel=1e-9)


def test_sigma_capital_constant_at_e():
    s = P("constant", c=1.0)
    assert sigma_capital_sq(s, math.e) == pytest.approx((1 - math.exp(-2 * math.e)) / 2, rel=1e-12)


def test_sigma_capital_log_family_limit():
    # v(t) log t -> L/2 for sigma^2 = L/log(t+e); values at 1e3, 1e4 approach 1/2
    s = P("log", L=1.0)
    a, b = sigma_capital_sq(s, np.array([1e3, 1e4]))
    assert abs(b - 0.5) < abs(a - 0.5) < 1e-3
    assert b == pytest.approx(0.5, abs=2e-5)


def test_sigma_capital_domain():
    s = P("constant", c=1.0)
    T = admissible_start(s)
    # int_0^T e^{2s} ds = (e^{2T} - 1)/2 = e^e
    assert T == pytest.approx(0.5 * math.log(2 * math.exp(math.e) + 1), rel=1e-10)
    with pytest.raises(DomainError, match="T ="):
        sigma_capital_sq(s, 0.5 * T)


def test_sigma_capital_flags_l2():
    s = P("exp_decay")
    with pytest.warns(L2ScheduleWarning):
        sigma_capital_sq(s, 10.0)


def test_sigma_zero_after_support():
    s = PiecewiseLinearSchedule([[0, 1.0], [5, 0.0]])
    with pytest.warns(L2ScheduleWarning):
        v = sigma_capital_sq(s, np.array([20.0, 60.0]))
    assert v[1] < v[0] < 1e-10


@pytest.mark.parametrize("name", ["log_one", "constant", "loglog", "spiky", "power_half"])
def test_sandwich(name):
    s = bundled_schedules()[name]
    H = 2048
    stats = schedule_statistics(s, H)
    T = admissible_start(s)
    n = np.arange(int(math.floor(T)) + 1, H + 1)
    n = n[n >= 2]
    Th = stats.capital_theta_sq[n - 1]
    Sig = sigma_capital_sq(s, n.astype(float), T=T)
    ln = np.log(n)
    assert np.all(Th * ln <= Sig * (1 + 1e-9))
    assert np.all(Sig <= math.e ** 2 * Th * ln * (1 + 1e-9))


@pytest.mark.parametrize("name", ["log_one", "constant", "spiky"])
def test_inter_interval_bound(name):
    s = bundled_schedules()[name]
    T = admissible_start(s)
    rng = np.random.default_rng(0)
    for n in rng.integers(max(int(T) + 1, 2), 500, 20):
        t = n + rng.random(5)
        St = sigma_capital_sq(s, t, T=T)
        Sn, Sn1 = sigma_capital_sq(s, np.array([n, n + 1.0]), T=T)
        assert np.all(math.exp(-2) * Sn <= St) and np.all(St <= math.e ** 2 * Sn1)


# spiky builder and knots

def test_spiky_integers_equal_l():
    s = spiky()
    k = np.arange(0, 40, dtype=float)
    assert np.allclose(s.sigma_sq(k), 1.0)


def test_spiky_variants():
    s = build_spiky_schedule("k", "1/(k+1)", "1/(k+3)**2")
    assert s.sigma_sq(np.array([3.0]))[0] == pytest.approx(3.0)
    with pytest.raises(ConstructionError):
        build_spiky_schedule(1.0, "1/(k+1)", 0.6)


def test_spiky_pointwise_diagnostic_grows():
    d = pointwise_log_diagnostic(spiky(), np.arange(2, 200, dtype=float))
    assert np.all(np.diff(d) > 0)
    assert d[150 - 2] > 5


def test_piecewise_linear_exact_theta():
    s = PiecewiseLinearSchedule([[0, 0.0], [1.5, 3.0], [4, 1.0]])
    for n in range(6):
        assert theta_sq(s, n) == pytest.approx(mp_integral(s, n, n + 1), rel=1e-12)


def test_knot_validation():
    with pytest.raises(ConstructionError):
        PiecewiseLinearSchedule([[1, 1.0], [2, 1.0]])
    with pytest.raises(ConstructionError):
        PiecewiseLinearSchedule([[0, 1.0], [0, 2.0]])
    with pytest.raises(ConstructionError):
        PiecewiseLinearSchedule([[0, -1.0], [1, 2.0]])
    with pytest.raises(ConstructionError):
        PiecewiseConstantSchedule([[0, 1.0], [2, 2.0]])
    s = PiecewiseConstantSchedule([[0, 1.0], [2.5, 2.0]], allow_discontinuous=True)
    assert theta_sq(s, 2) == pytest.approx(1.5)


def test_json_round_trip(schedules):
    for name, s in schedules.items():
        d = s.to_dict()
        again = load_schedule(d)
        assert again.spec_hash == s.spec_hash, name
        t = np.linspace(0, 30, 61)
        assert np.array_equal(again.sigma_sq(t), s.sigma_sq(t))


def test_load_schedule_formats(tmp_path):
    js = '{"family": "log", "params": {"L": 2.0}}'
    p = tmp_path / "s.json"
    p.write_text(js)
    for src in (js, str(p), {"family": "log", "L": 2.0}):
        assert load_schedule(src).params["L"] == 2.0


def test_unknown_family_and_params():
    with pytest.raises(ConstructionError):
        P("nope")
    with pytest.raises(ConstructionError):
        P("log", q=1.0)
    with pytest.raises(ConstructionError):
        P("log", L=1.0, c=0.5)


def test_c_offset_is_regime_invariant():
    from fadingsde import classify
    for c in (1.5, math.e, 20.0):
        assert classify(P("log", L=1.0, c=c)).regime.value == "BoundedNonConvergent"


# properties

@given(L=st.floats(0.01, 10), c=st.floats(1.1, 50))
def test_property_log_family_statistics(L, c):
    s = P("log", L=L, c=c)
    stats = schedule_statistics(s, 64)
    assert np.all(stats.theta_sq > 0)
    # sigma^2 decreasing, so theta^2(n) lies between sigma^2(n+1) and sigma^2(n)
    n = np.arange(64, dtype=float)
    assert np.all(stats.theta_sq <= s.sigma_sq(n) * (1 + 1e-9))
    assert np.all(stats.theta_sq >= s.sigma_sq(n + 1) * (1 - 1e-9))


@given(a=st.floats(0.01, 5), rate=st.floats(0.05, 3), t=st.floats(0, 40))
def test_property_exp_ou_variance(a, rate, t):
    s = P("exp_decay", a=a, rate=rate)
    # closed form of int_0^t e^{-2(t-s)} a e^{-r s} ds, in 50-digit arithmetic
    with mpmath.workdps(50):
        a_, r_, t_ = mpmath.mpf(a), mpmath.mpf(rate), mpmath.mpf(t)
        if r_ == 2:
            ref = a_ * mpmath.exp(-2 * t_) * t_
        else:
            ref = a_ * (mpmath.exp(-r_ * t_) - mpmath.exp(-2 * t_)) / (2 - r_)
    assert ou_variance(s, t) == pytest.approx(float(ref), rel=1e-9)


@given(vals=st.lists(st.floats(0, 5), min_size=2, max_size=8))
def test_property_piecewise_nonnegative(vals):
    knots = [[float(i), v] for i, v in enumerate(vals)]
    s = PiecewiseLinearSchedule(knots)
    stats = schedule_statistics(s, 16)
    assert np.all(stats.theta_sq >= 0) and np.all(stats.capital_theta_sq >= 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert np.all(ou_variance(s, np.linspace(0, 12, 25)) >= 0)
