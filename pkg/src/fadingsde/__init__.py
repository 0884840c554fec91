"""Regime classification, fluctuation bounds and simulation for dX = -f(X) dt + sigma(t) dB."""
from .classifier import (
    Confidence, Regime, RegimeClassification, Thresholds, classify, critical_epsilon, estimate_L,
    normal_cdf, normal_ppf, normal_sf, s_partial, s_prime_partial,
)
from .drift import (
    DriftFunction, EnvelopeConstants, FluctuationBounds, f_minus, f_plus, h_f, load_drift, overline_x,
    underline_x, x_bounds, x_minus, x_plus, y_envelope,
)
from .errors import ConstructionError, DomainError, UnsupportedOperation
from .harness import TailStatistics, VerificationReport, tail_stats, verify
from .schedule import (
    Asymptotics, CompositeSchedule, NoiseSchedule, ParametricSchedule, PiecewiseConstantSchedule,
    PiecewiseLinearSchedule, ScheduleStatistics, SpikySchedule, admissible_start, build_spiky_schedule,
    capital_theta_sq, load_schedule, ou_variance, schedule_statistics, sigma_capital_sq, theta_sq,
)
from .simulator import (
    PathEnsemble, SimulationGrid, simulate, simulate_coupled, simulate_X_em, simulate_Y_exact,
)

__version__ = "0.1.0"
