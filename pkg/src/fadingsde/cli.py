"""Command-line front end.

Exit codes: 0 definite regime / check passed, 1 usage or provenance error,
2 inconclusive, 3 verification failed.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import shlex
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from .classifier import Confidence, Regime, RegimeClassification, Thresholds, classify
from .drift import load_drift, x_bounds
from .errors import ConstructionError, DomainError, UnsupportedOperation
from .harness import running_sup_rows, verify
from .schedule import pointwise_log_diagnostic, schedule_from_dict, theta_sq_array
from .simulator import PathEnsemble, SimulationGrid, simulate

EXIT_OK, EXIT_USAGE, EXIT_INCONCLUSIVE, EXIT_FAIL = 0, 1, 2, 3

DEFAULTS = {
    "horizon": 2048, "t_end": 100.0, "dt": 1e-2, "paths": 200, "xi": 0.0,
    "workers": 1, "out": "out", "blocks": 128, "record_every": 0,
}
_THRESHOLD_KEYS = ("delta_zero", "delta_inf", "elasticity", "spread", "l2_tail")


class UsageError(Exception):
    pass


# --- spec parsing ---------------------------------------------------------

def _value(text):
    try:
        v = float(text)
    except ValueError:
        return text
    return int(v) if v.is_integer() and "." not in text and "e" not in text.lower() else v


def parse_shorthand(text):
    """``"log_family L=1"`` -> ``{"family": "log_family", "L": 1}``."""
    tokens = shlex.split(text)
    if not tokens or "=" in tokens[0]:
        raise UsageError(f"cannot parse {text!r}; expected 'family key=value ...'")
    out = {"family": tokens[0]}
    for tok in tokens[1:]:
        if "=" not in tok:
            raise UsageError(f"expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        out[k] = _value(v)
    return out


def _spec_dict(value):
    """A dict from an inline JSON object, a JSON file, a shorthand string or a dict."""
    if isinstance(value, dict):
        return value
    text = str(value).strip()
    if text.startswith("{"):
        return json.loads(text)
    p = Path(text)
    if p.suffix == ".json" or p.is_file():
        if not p.is_file():
            raise UsageError(f"file not found: {text}")
        return json.loads(p.read_text())
    return parse_shorthand(text)


def _schedule(value):
    return schedule_from_dict(_spec_dict(value))


def _drift(value):
    return load_drift(_spec_dict(value))


# --- run configuration ----------------------------------------------------

def resolve_config(args):
    """Merge --config file, defaults and explicit flags into one dict."""
    cfg = dict(DEFAULTS)
    cfg["thresholds"] = {}
    if args.config:
        p = Path(args.config)
        if not p.is_file():
            raise UsageError(f"config file not found: {args.config}")
        cfg.update(json.loads(p.read_text()))
    for key in ("schedule", "drift", "horizon", "t_end", "dt", "paths", "seed", "xi", "workers", "out",
                "blocks", "record_every"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    th = dict(cfg.get("thresholds") or {})
    for key in _THRESHOLD_KEYS + ("converge",):
        v = getattr(args, "threshold_" + key, None)
        if v is not None:
            th[key] = v
    cfg["thresholds"] = th
    return cfg


def config_hash(cfg, keys):
    """Hash of the parts of the config that determine a command's output."""
    sub = {}
    for k in keys:
        v = cfg.get(k)
        if k == "schedule" and v is not None:
            v = _schedule(v).to_dict()
        elif k == "drift" and v is not None:
            v = _drift(v).to_dict()
        elif k in ("t_end", "dt", "xi") and v is not None:
            v = float(v)
        sub[k] = v
    blob = json.dumps(sub, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


CLASSIFY_KEYS = ("schedule", "horizon", "thresholds")
SIM_KEYS = ("schedule", "drift", "t_end", "dt", "paths", "seed", "xi", "blocks", "record_every")


def _thresholds(cfg):
    th = {k: float(v) for k, v in cfg["thresholds"].items() if k in _THRESHOLD_KEYS}
    return replace(Thresholds(), **th)


def _require(cfg, *keys):
    for k in keys:
        if cfg.get(k) is None:
            raise UsageError(f"--{k.replace('_', '-')} is required (or set it in --config)")


# --- output helpers -------------------------------------------------------

def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(obj), sort_keys=True, indent=1) + "\n")
    return path


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return path


# --- commands ---------------------------------------------------------------

def _classification(cfg, args):
    eps = getattr(args, "epsilon_prime", None)
    if eps is not None:
        # a generic bounded classification with a given epsilon'
        return RegimeClassification(Regime.BOUNDED, eps ** 2 / 2.0, float(eps), Confidence.LOW,
                                    {"source": "--epsilon-prime"})
    _require(cfg, "schedule")
    return classify(_schedule(cfg["schedule"]), int(cfg["horizon"]), _thresholds(cfg))


def cmd_classify(cfg, args):
    _require(cfg, "schedule")
    c = _classification(cfg, args)
    report = c.to_dict()
    report["schedule"] = _schedule(cfg["schedule"]).to_dict()
    report["config_hash"] = config_hash(cfg, CLASSIFY_KEYS)
    path = write_json(Path(cfg["out"]) / "classification.json", report)
    eps = "-" if c.epsilon_prime is None else f"{c.epsilon_prime:.6g}"
    print(f"regime {c.regime.value} (confidence {c.confidence.value}, epsilon' {eps}) -> {path}")
    return EXIT_INCONCLUSIVE if c.regime is Regime.INCONCLUSIVE else EXIT_OK


def cmd_bounds(cfg, args):
    _require(cfg, "drift")
    drift = _drift(cfg["drift"])
    c = _classification(cfg, args)
    if c.regime is not Regime.BOUNDED:
        print(f"bounds are defined only for BoundedNonConvergent; the schedule is {c.regime.value}",
              file=sys.stderr)
        return EXIT_INCONCLUSIVE if c.regime is Regime.INCONCLUSIVE else EXIT_USAGE
    b = x_bounds(drift, c)
    report = b.to_dict()
    report["drift"] = drift.to_dict()
    report["config_hash"] = config_hash({**cfg, "epsilon_prime": args.epsilon_prime},
                                        CLASSIFY_KEYS + ("drift", "epsilon_prime"))
    if b.x_upper is None:
        print(f"warning: drift is not coercive; {b.marker}", file=sys.stderr)
    path = write_json(Path(cfg["out"]) / "bounds.json", report)
    up = "absent" if b.x_upper is None else f"{b.x_upper:.6g}"
    print(f"x_lower {b.x_lower:.6g}, x_upper {up}, sharp {b.sharp} -> {path}")
    return EXIT_OK


def _simulate_from(cfg):
    _require(cfg, "schedule", "drift", "seed")
    sched, drift = _schedule(cfg["schedule"]), _drift(cfg["drift"])
    grid = SimulationGrid(float(cfg["t_end"]), float(cfg["dt"]))
    ens = simulate(drift, sched, grid, int(cfg["paths"]), int(cfg["seed"]), xi=float(cfg["xi"]),
                   mode="coupled", n_blocks=int(cfg["blocks"]), workers=int(cfg["workers"]),
                   record_every=int(cfg["record_every"]))
    ens.meta["config_hash"] = config_hash(cfg, SIM_KEYS)
    return sched, drift, ens


def cmd_simulate(cfg, args):
    _, _, ens = _simulate_from(cfg)
    out = Path(cfg["out"])
    path = out / "ensemble.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(ens.to_json() + "\n")
    write_csv(out / "running_sup.csv", ["time", "q05", "q50", "q95"], running_sup_rows(ens))
    if ens.trajectories is not None:
        tr = ens.trajectories
        rows = []
        for i in range(ens.n_paths):
            for j, t in enumerate(tr["time"]):
                x, y = tr["X"][i, j], tr["Y"][i, j]
                rows.append((float(t), i, float(x), float(y), float(x - y)))
        write_csv(out / "trajectories.csv", ["time", "path_id", "X", "Y", "Z"], rows)
    print(f"{ens.n_paths} paths to t={ens.grid.t_final:g} (config {ens.meta['config_hash']}) -> {path}")
    return EXIT_OK


def cmd_verify(cfg, args):
    _require(cfg, "schedule", "drift", "seed")
    sched, drift = _schedule(cfg["schedule"]), _drift(cfg["drift"])
    src = Path(args.ensemble) if args.ensemble else Path(cfg["out"]) / "ensemble.json"
    if not src.is_file():
        raise UsageError(f"ensemble file not found: {src} (run 'simulate' first)")
    try:
        ens = PathEnsemble.from_json(src.read_text())
    except DomainError as exc:
        print(f"provenance error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    want = config_hash(cfg, SIM_KEYS)
    if ens.meta.get("config_hash") != want:
        print(f"provenance error: ensemble config {ens.meta.get('config_hash')} != current config {want}",
              file=sys.stderr)
        return EXIT_USAGE
    c = _classification(cfg, args)
    th = cfg["thresholds"].get("converge")
    rep = verify(drift, sched, ens, c, regime=args.claim, threshold=th)
    out = rep.to_dict()
    out["config_hash"] = want
    out["classification"] = c.to_dict()
    path = write_json(Path(cfg["out"]) / "verification.json", out)
    print(rep.table())
    print(f"-> {path}")
    if rep.regime == Regime.INCONCLUSIVE.value:
        return EXIT_INCONCLUSIVE
    return EXIT_OK if rep.passed else EXIT_FAIL


SPIKY_DEFAULT = {"family": "spiky", "l": 1.0, "q": "1/(k+1)", "eps": "1/(k+3)"}


def cmd_spiky_demo(cfg, args):
    spec = _spec_dict(cfg["schedule"]) if cfg.get("schedule") else SPIKY_DEFAULT
    sched = schedule_from_dict(spec)
    c = classify(sched, int(cfg["horizon"]), _thresholds(cfg))
    k = np.arange(2, int(cfg["horizon"]) + 1)
    diag = pointwise_log_diagnostic(sched, k.astype(float))
    th = theta_sq_array(sched, int(cfg["horizon"]) + 1)[k]
    rows = [(int(a), float(b), float(t * math.log(a))) for a, b, t in zip(k, diag, th)]
    out = Path(cfg["out"])
    write_csv(out / "spiky_demo.csv", ["k", "sigma_sq_log_k", "theta_sq_log_k"], rows)
    first = next((int(a) for a, b, _ in rows if b > 5), None)
    report = {
        "schedule": sched.to_dict(), "classification": c.to_dict(),
        "pointwise_exceeds_5_at": first, "pointwise_at_horizon": rows[-1][1],
        "theta_log_at_horizon": rows[-1][2], "config_hash": config_hash(cfg, CLASSIFY_KEYS),
    }
    path = write_json(out / "spiky_demo.json", report)
    print(f"regime {c.regime.value}; sigma^2(k) log k passes 5 at k={first}, "
          f"theta^2(k) log k = {rows[-1][2]:.3g} at k={rows[-1][0]} -> {path}")
    return EXIT_INCONCLUSIVE if c.regime is Regime.INCONCLUSIVE else EXIT_OK


COMMANDS = {
    "classify": cmd_classify, "bounds": cmd_bounds, "simulate": cmd_simulate,
    "verify": cmd_verify, "spiky-demo": cmd_spiky_demo,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration; flags override it")
    common.add_argument("--schedule", help="file, inline JSON or shorthand such as 'log_family L=1'")
    common.add_argument("--drift", help="file, inline JSON or shorthand such as 'odd_power n=3'")
    common.add_argument("--horizon", type=int, help="unit intervals used by the classifier")
    common.add_argument("--t-end", dest="t_end", type=float)
    common.add_argument("--dt", type=float)
    common.add_argument("--paths", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--xi", type=float, help="initial value X(0)")
    common.add_argument("--workers", type=int)
    common.add_argument("--blocks", type=int, help="time blocks for the stored extrema")
    common.add_argument("--record-every", dest="record_every", type=int,
                        help="keep every k-th state for trajectories.csv")
    common.add_argument("--out", help="output directory")
    common.add_argument("--epsilon-prime", dest="epsilon_prime", type=float,
                        help="skip classification and use a generic bounded regime with this epsilon'")
    for key in _THRESHOLD_KEYS + ("converge",):
        common.add_argument("--threshold-" + key.replace("_", "-"), dest="threshold_" + key, type=float)

    p = argparse.ArgumentParser(prog="fadingsde", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("classify", parents=[common], help="place a schedule in the trichotomy")
    sub.add_parser("bounds", parents=[common], help="fluctuation bounds for limsup |X|")
    sub.add_parser("simulate", parents=[common], help="simulate a coupled ensemble")
    v = sub.add_parser("verify", parents=[common], help="check an ensemble against the regime")
    v.add_argument("--ensemble", help="ensemble JSON (default <out>/ensemble.json)")
    v.add_argument("--claim", choices=[r.value for r in Regime], help="regime to test instead of the classifier's")
    sub.add_parser("spiky-demo", parents=[common], help="the spiky schedule counterexample")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    for name in ("claim", "ensemble", "epsilon_prime"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        cfg = resolve_config(args)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](cfg, args)
    except (UsageError, ConstructionError, DomainError, UnsupportedOperation, ValueError, KeyError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
