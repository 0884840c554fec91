"""Finite-horizon tail statistics and regime verification reports."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .classifier import Regime
from .drift import x_bounds
from .errors import DomainError, UnsupportedOperation
from .schedule import theta_sq
from .simulator import PROCESSES

__all__ = [
    "TailStatistics", "Check", "VerificationReport", "tail_stats", "doubling_profile",
    "convergence_threshold", "verify", "running_sup_rows", "HEURISTIC_NOTE",
]

QUANTILES = (0.05, 0.5, 0.95)
HEURISTIC_NOTE = ("tolerance bands are engineering choices; finite horizons only sample "
                  "pre-asymptotic behaviour")
SHARP_BAND = (0.6, 1.4)
BOUND_BAND = 3.0
CONVERGED_MIN = 0.95
CONVERGED_MAX_BOUNDED = 0.05
LIMINF_RATIO = 0.1


@dataclass(frozen=True)
class TailStatistics:
    process: str
    window: tuple
    tail_sup: np.ndarray
    tail_inf: np.ndarray
    threshold: float | None = None

    @property
    def quantiles(self):
        return dict(zip(QUANTILES, np.quantile(self.tail_sup, QUANTILES)))

    @property
    def inf_quantiles(self):
        return dict(zip(QUANTILES, np.quantile(self.tail_inf, QUANTILES)))

    @property
    def median(self):
        return float(np.median(self.tail_sup))

    @property
    def converged_fraction(self):
        if self.threshold is None:
            return None
        return float(np.mean(self.tail_sup < self.threshold))

    def to_dict(self):
        return {
            "process": self.process, "window": list(self.window),
            "tail_sup_quantiles": {str(k): float(v) for k, v in self.quantiles.items()},
            "tail_inf_quantiles": {str(k): float(v) for k, v in self.inf_quantiles.items()},
            "threshold": self.threshold, "converged_fraction": self.converged_fraction,
        }


def tail_stats(ensemble, window_start=0.5, horizon=None, process="X", threshold=None):
    """Per-path sup and inf of |process| over [window_start * H, H].

    ``H`` defaults to the simulated horizon. Only whole blocks of the ensemble
    are used, so the window is rounded to block edges (within one step).
    """
    if ensemble.n_paths < 1:
        raise DomainError("empty ensemble")
    if not 0 < window_start < 1:
        raise DomainError("window_start must lie in (0, 1)")
    q = PROCESSES.index(process)
    H = ensemble.grid.t_final if horizon is None else float(horizon)
    lo, hi = ensemble.block_edges()
    slack = 1.0001 * ensemble.grid.dt
    sel = (lo >= window_start * H - slack) & (hi <= H + slack)
    if not sel.any():
        raise DomainError(f"no ensemble block lies inside [{window_start * H:g}, {H:g}]; use more blocks")
    sup = ensemble.block_max[q][:, sel].max(axis=1)
    inf = ensemble.block_min[q][:, sel].min(axis=1)
    return TailStatistics(process, (float(lo[sel][0]), float(hi[sel][-1])), sup, inf, threshold)


def doubling_profile(ensemble, process="X", levels=4, window_start=0.5):
    """Tail statistics at horizons t_end / 2^j, j = levels-1 .. 0."""
    H = ensemble.grid.t_final
    return [tail_stats(ensemble, window_start, H / 2 ** j, process) for j in range(levels - 1, -1, -1)]


def convergence_threshold(schedule, t_end):
    """10 sqrt(theta^2(N_last)) + 1e-3 with N_last the last full unit interval."""
    n_last = max(int(math.floor(t_end)) - 1, 0)
    return 10.0 * math.sqrt(max(theta_sq(schedule, n_last), 0.0)) + 1e-3


@dataclass
class Check:
    name: str
    predicted: object
    observed: object
    tolerance: object
    passed: bool
    mandatory: bool = True

    def to_dict(self):
        return {"name": self.name, "predicted": self.predicted, "observed": self.observed,
                "tolerance": self.tolerance, "pass": bool(self.passed), "mandatory": self.mandatory}


@dataclass
class VerificationReport:
    regime: str
    horizon: float
    n_paths: int
    checks: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks if c.mandatory)

    def to_dict(self):
        return {"regime": self.regime, "horizon": self.horizon, "n_paths": self.n_paths,
                "checks": [c.to_dict() for c in self.checks], "pass": self.passed, "notes": list(self.notes)}

    def to_json(self):
        return json.dumps(_clean(self.to_dict()), sort_keys=True, indent=1)

    def table(self):
        rows = [("check", "predicted", "observed", "tolerance", "result")]
        for c in self.checks:
            res = ("pass" if c.passed else "FAIL") + ("" if c.mandatory else " (advisory)")
            rows.append((c.name, _fmt(c.predicted), _fmt(c.observed), _fmt(c.tolerance), res))
        w = [max(len(r[i]) for r in rows) for i in range(5)]
        lines = ["  ".join(v.ljust(w[i]) for i, v in enumerate(r)) for r in rows]
        lines.insert(1, "  ".join("-" * x for x in w))
        head = f"regime {self.regime}, horizon {self.horizon:g}, {self.n_paths} paths"
        tail = f"overall: {'PASS' if self.passed else 'FAIL'}"
        return "\n".join([head, *lines, tail, *("note: " + n for n in self.notes)])


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def _check_provenance(drift, schedule, ensemble):
    if ensemble.schedule_hash != schedule.spec_hash:
        raise DomainError(f"ensemble was simulated from schedule {ensemble.schedule_hash}, "
                          f"not {schedule.spec_hash}")
    if drift is not None and ensemble.drift_hash is not None:
        try:
            h = drift.spec_hash
        except UnsupportedOperation:
            return
        if h != ensemble.drift_hash:
            raise DomainError(f"ensemble was simulated with drift {ensemble.drift_hash}, not {h}")


def verify(drift, schedule, ensemble, classification, bounds=None, regime=None, threshold=None,
           window_start=0.5):
    """Cross-check an ensemble against a regime claim.

    ``regime`` overrides the classification's regime (a claim to test).
    ``bounds`` defaults to ``x_bounds(drift, classification)`` in the bounded regime.
    """
    _check_provenance(drift, schedule, ensemble)
    regime = Regime(regime if regime is not None else classification.regime)
    proc = "Y" if ensemble.mode == "Y" else "X"
    H = ensemble.grid.t_final
    thr = convergence_threshold(schedule, H) if threshold is None else float(threshold)
    ts = tail_stats(ensemble, window_start, process=proc, threshold=thr)
    rep = VerificationReport(regime.value, H, ensemble.n_paths, notes=[HEURISTIC_NOTE])
    if ensemble.exploded.any():
        rep.notes.append(f"{int(ensemble.exploded.sum())} exploded path(s) count as non-converged")

    if regime is Regime.CONVERGENT:
        rep.checks.append(Check("converged_fraction", f">= {CONVERGED_MIN}", ts.converged_fraction,
                                {"threshold": thr}, ts.converged_fraction >= CONVERGED_MIN))
        # the threshold follows the noise level, so a non-decaying schedule needs this second check
        prev, last = doubling_profile(ensemble, proc, levels=2, window_start=window_start)
        rep.checks.append(Check("tail_sup_not_growing", "median over [H/2, H] <= median over [H/4, H/2]",
                                [prev.median, last.median], None, last.median <= prev.median))
    elif regime is Regime.BOUNDED:
        if bounds is None and Regime(classification.regime) is Regime.BOUNDED:
            bounds = x_bounds(drift, classification)
        if bounds is not None:
            lo = bounds.x_lower / BOUND_BAND
            hi = math.inf if bounds.x_upper is None else BOUND_BAND * bounds.x_upper
            if bounds.x_upper is None:
                rep.notes.append(bounds.marker or "no upper bound")
            rep.checks.append(Check("median_tail_sup_in_band", [bounds.x_lower, bounds.x_upper], ts.median,
                                    [lo, hi], lo <= ts.median <= hi))
        else:
            rep.notes.append("no fluctuation bounds available; band check skipped")
        # a path counts as converged when it stays below the lower edge of the band
        cthr = thr if bounds is None else min(thr, bounds.x_lower / BOUND_BAND)
        frac = float(np.mean(ts.tail_sup < cthr))
        rep.checks.append(Check("converged_fraction", f"< {CONVERGED_MAX_BOUNDED}", frac,
                                {"threshold": cthr}, frac < CONVERGED_MAX_BOUNDED))
        rep.checks.append(_liminf_check(ts))
        level = getattr(classification, "sharp_level", None)
        if level is not None and proc != "Y" and ensemble.mode == "coupled":
            ty = tail_stats(ensemble, window_start, process="Y")
            band = [SHARP_BAND[0] * level, SHARP_BAND[1] * level]
            rep.checks.append(Check("sharp_Y_level", level, ty.median, band,
                                    band[0] <= ty.median <= band[1], mandatory=False))
    elif regime is Regime.RECURRENT:
        prof = doubling_profile(ensemble, proc, window_start=window_start)
        med = [p.median for p in prof]
        mx = [float(np.max(p.tail_sup)) for p in prof]
        rep.checks.append(Check("median_tail_sup_increasing", "strictly increasing over doublings", med,
                                None, bool(np.all(np.diff(med) > 0))))
        rep.checks.append(Check("max_tail_sup_increasing", "increasing over doublings", mx, None,
                                bool(np.all(np.diff(mx) > 0)), mandatory=False))
        rep.checks.append(_liminf_check(ts))
    else:
        rep.notes.append("regime is inconclusive; no regime checks apply")
    return rep


def _liminf_check(ts):
    q95 = float(np.quantile(ts.tail_inf, 0.95))
    lim = LIMINF_RATIO * ts.median
    return Check("tail_inf_near_zero", 0.0, q95, {"max": lim}, q95 <= lim)


def running_sup_rows(ensemble, process="X"):
    """Rows (t, q05, q50, q95) of the running sup of |process| at block ends."""
    q = PROCESSES.index(process)
    run = np.maximum.accumulate(ensemble.block_max[q], axis=1)
    _, hi = ensemble.block_edges()
    qs = np.quantile(run, QUANTILES, axis=0)
    return [(float(hi[b]), *(float(v) for v in qs[:, b])) for b in range(ensemble.n_blocks)]
