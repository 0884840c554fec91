"""Sample paths of Y (exact OU recursion), X (Euler-Maruyama) and Z = X - Y.

Randomness: path ``i`` of a run with seed ``s`` draws its standard normals
from ``numpy.random.Philox`` keyed by ``(s << 64) | i``. The stream of a path
therefore depends only on (seed, path index), never on thread scheduling or
on how paths are grouped into batches.
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DomainError, UnsupportedOperation
from .schedule import ou_step_variances

__all__ = [
    "SimulationGrid", "PathEnsemble", "StiffnessWarning", "path_generator",
    "simulate_Y_exact", "simulate_X_em", "simulate_coupled", "simulate",
    "PROCESSES", "DEFAULT_BLOCKS",
]

PROCESSES = ("X", "Y", "Z")
DEFAULT_BLOCKS = 128
CHUNK = 1 << 16
MAX_DT = 0.1


class StiffnessWarning(UserWarning):
    """|f'| exceeded the explicit Euler stability limit 2/dt on the visited range."""


@dataclass(frozen=True)
class SimulationGrid:
    t_end: float
    dt: float = 1e-2

    def __post_init__(self):
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise DomainError("t_end must be a positive finite time")
        if not (0 < self.dt <= MAX_DT):
            raise DomainError(f"dt must lie in (0, {MAX_DT}]")

    @property
    def n_steps(self):
        n = math.ceil(self.t_end / self.dt - 1e-9)
        return max(n, 1)

    @property
    def t_final(self):
        return self.n_steps * self.dt

    def to_dict(self):
        return {"t_end": self.t_end, "dt": self.dt, "n_steps": self.n_steps}


def path_generator(seed, path_index):
    """Counter-based stream for one path."""
    key = ((int(seed) & (2 ** 64 - 1)) << 64) | int(path_index)
    return np.random.Generator(np.random.Philox(key=key))


def _enc(a):
    out = []
    for v in np.asarray(a, dtype=float).ravel().tolist():
        if math.isnan(v):
            out.append(None)
        elif math.isinf(v):
            out.append("inf" if v > 0 else "-inf")
        else:
            out.append(v)
    return out


def _dec(lst, shape):
    vals = [math.nan if v is None else float(v) for v in lst]
    return np.asarray(vals, dtype=float).reshape(shape)


@dataclass
class PathEnsemble:
    """Per-path block extrema of |X|, |Y|, |Z| plus provenance.

    ``block_max``/``block_min`` have shape (3, n_paths, n_blocks) in the order
    X, Y, Z. Block ``b`` holds the states at steps k (1-based) with
    ``(k - 1) * n_blocks // n_steps == b``, plus the initial state in block 0.
    """

    n_paths: int
    seed: int
    grid: SimulationGrid
    mode: str
    xi: float
    schedule_hash: str
    drift_hash: str | None
    block_max: np.ndarray
    block_min: np.ndarray
    final: np.ndarray
    exploded: np.ndarray
    explode_time: np.ndarray
    residual_mean: np.ndarray
    trajectories: dict | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_blocks(self):
        return self.block_max.shape[2]

    def block_edges(self):
        """Time covered by each block as (start, end) arrays."""
        n = self.grid.n_steps
        b = np.arange(self.n_blocks + 1)
        first_step = -(-b * n // self.n_blocks)  # smallest k-1 with (k-1)*B//n >= b
        t = first_step * self.grid.dt
        return t[:-1], t[1:]

    def _payload(self):
        d = {
            "n_paths": self.n_paths, "seed": self.seed, "grid": self.grid.to_dict(),
            "mode": self.mode, "xi": self.xi, "schedule_hash": self.schedule_hash,
            "drift_hash": self.drift_hash, "n_blocks": self.n_blocks,
            "block_max": _enc(self.block_max), "block_min": _enc(self.block_min),
            "final": _enc(self.final), "exploded": [bool(v) for v in self.exploded],
            "explode_time": _enc(self.explode_time), "residual_mean": _enc(self.residual_mean),
            "meta": self.meta,
        }
        if self.trajectories is not None:
            d["trajectories"] = {
                "every": self.trajectories["every"],
                "time": _enc(self.trajectories["time"]),
                "X": _enc(self.trajectories["X"]), "Y": _enc(self.trajectories["Y"]),
            }
        return d

    def content_hash(self):
        blob = json.dumps(self._payload(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_dict(self):
        d = self._payload()
        d["content_hash"] = self.content_hash()
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d, check_hash=True):
        P, B = int(d["n_paths"]), int(d["n_blocks"])
        g = d["grid"]
        traj = None
        if d.get("trajectories") is not None:
            t = d["trajectories"]
            n_rec = len(t["time"])
            traj = {"every": int(t["every"]), "time": _dec(t["time"], (n_rec,)),
                    "X": _dec(t["X"], (P, n_rec)), "Y": _dec(t["Y"], (P, n_rec))}
        ens = cls(
            n_paths=P, seed=int(d["seed"]), grid=SimulationGrid(float(g["t_end"]), float(g["dt"])),
            mode=d["mode"], xi=float(d["xi"]), schedule_hash=d["schedule_hash"],
            drift_hash=d.get("drift_hash"),
            block_max=_dec(d["block_max"], (3, P, B)), block_min=_dec(d["block_min"], (3, P, B)),
            final=_dec(d["final"], (3, P)), exploded=np.asarray(d["exploded"], dtype=bool),
            explode_time=_dec(d["explode_time"], (P,)), residual_mean=_dec(d["residual_mean"], (P,)),
            trajectories=traj, meta=dict(d.get("meta", {})),
        )
        if check_hash and "content_hash" in d and d["content_hash"] != ens.content_hash():
            raise DomainError("ensemble content hash does not match its data (file modified?)")
        return ens

    @classmethod
    def from_json(cls, text, check_hash=True):
        return cls.from_dict(json.loads(text), check_hash=check_hash)

    @classmethod
    def from_paths(cls, times, paths, n_blocks=8, process="X", schedule_hash="", drift_hash=None):
        """Wrap given trajectories (shape (P, len(times)), times uniform from 0) as an ensemble.

        Used to feed hand-made paths to the tail statistics. The chosen process
        slot gets the data; the other two slots are zero.
        """
        times = np.asarray(times, dtype=float)
        paths = np.atleast_2d(np.asarray(paths, dtype=float))
        P, n1 = paths.shape
        n = n1 - 1
        dt = float(times[1] - times[0])
        grid = SimulationGrid.__new__(SimulationGrid)
        object.__setattr__(grid, "t_end", float(times[-1]))
        object.__setattr__(grid, "dt", dt)
        bmax = np.zeros((3, P, n_blocks))
        bmin = np.zeros((3, P, n_blocks))
        q = PROCESSES.index(process)
        a = np.abs(paths)
        blocks = (np.arange(n) * n_blocks) // n
        starts = np.concatenate([[0], np.nonzero(np.diff(blocks))[0] + 1])
        bmax[q] = np.maximum.reduceat(a[:, 1:], starts, axis=1)
        bmin[q] = np.minimum.reduceat(a[:, 1:], starts, axis=1)
        bmax[q, :, 0] = np.maximum(bmax[q, :, 0], a[:, 0])
        bmin[q, :, 0] = np.minimum(bmin[q, :, 0], a[:, 0])
        final = np.zeros((3, P))
        final[q] = paths[:, -1]
        return cls(P, 0, grid, "given", float(paths[0, 0]), schedule_hash, drift_hash, bmax, bmin, final,
                   np.zeros(P, dtype=bool), np.full(P, np.nan), np.full(P, np.nan))


def _noise_scales(schedule, grid, mode):
    n, dt = grid.n_steps, grid.dt
    var = np.empty(n)
    for k0 in range(0, n, CHUNK):
        m = min(CHUNK, n - k0)
        var[k0:k0 + m] = ou_step_variances(schedule, k0 * dt, dt, m)
    gy = np.sqrt(var)
    if mode == "X":
        t = dt * np.arange(n)
        gx = np.sqrt(schedule.sigma_sq(t) * dt)
    else:
        # coupled runs drive X with the same increment as Y so that Z is noise-free
        gx = gy
    return gx, gy


def simulate(drift, schedule, grid, n_paths, seed, xi=0.0, mode="coupled", n_blocks=DEFAULT_BLOCKS,
             workers=1, record_every=0, backend=None):
    """Run ``n_paths`` paths; ``mode`` is "Y", "X" (plain EM) or "coupled".

    ``record_every`` > 0 keeps every k-th state of X and Y.
    """
    if mode not in ("Y", "X", "coupled"):
        raise DomainError(f"unknown mode {mode!r}")
    if n_paths < 1:
        raise DomainError("n_paths must be >= 1")
    if not math.isfinite(xi):
        raise DomainError("xi must be finite")
    if mode != "Y" and drift is None:
        raise DomainError("a drift is needed to simulate X")
    has_x = mode != "Y"
    xi0 = float(xi) if has_x else 0.0
    n, dt = grid.n_steps, grid.dt
    n_blocks = int(min(n_blocks, n))
    gx, gy = _noise_scales(schedule, grid, mode)
    decay = math.exp(-dt)
    backend = kernels.backend_name(backend)
    spec = drift.kernel_spec() if has_x else (0, np.zeros(1))
    if spec is None:
        backend = "numpy"

    bmax = np.full((n_paths, 3, n_blocks), -np.inf)
    bmin = np.full((n_paths, 3, n_blocks), np.inf)
    bmax[:, :, 0] = [abs(xi0), 0.0, abs(xi0)]
    bmin[:, :, 0] = [abs(xi0), 0.0, abs(xi0)]
    states = np.zeros((n_paths, 4))
    states[:, 0] = xi0
    acc = np.zeros((n_paths, 2))
    rec = None
    if record_every:
        n_rec = n // record_every + 1
        rec = np.full((n_paths, 2, n_rec), np.nan)
        rec[:, 0, 0] = xi0
        rec[:, 1, 0] = 0.0

    if backend == "numba":
        code, params = spec

        def run(i):
            gen = path_generator(seed, i)
            st = states[i]
            r = rec[i] if rec is not None else np.zeros((2, 1))
            for k0 in range(0, n, CHUNK):
                m = min(CHUNK, n - k0)
                z = gen.standard_normal(m)
                kernels.advance_path_numba(code, params, has_x, st, dt, decay, gx[k0:k0 + m], gy[k0:k0 + m],
                                           z, k0, n, n_blocks, bmax[i], bmin[i], acc[i], r, int(record_every))

        if workers > 1:
            with ThreadPoolExecutor(max_workers=int(workers)) as ex:
                list(ex.map(run, range(n_paths)))
        else:
            for i in range(n_paths):
                run(i)
    else:
        gens = [path_generator(seed, i) for i in range(n_paths)]
        f = drift if has_x else None
        step = CHUNK // 4
        for k0 in range(0, n, step):
            m = min(step, n - k0)
            z = np.stack([g.standard_normal(m) for g in gens])
            kernels.advance_batch_numpy(f, has_x, states, dt, decay, gx[k0:k0 + m], gy[k0:k0 + m], z, k0, n,
                                        n_blocks, bmax, bmin, acc, rec, int(record_every))

    exploded = states[:, 2] != 0.0
    explode_time = np.where(exploded, states[:, 3], np.nan)
    with np.errstate(invalid="ignore"):
        residual = np.where(acc[:, 1] > 0, acc[:, 0] / np.maximum(acc[:, 1], 1.0), np.nan)
    final = np.stack([states[:, 0], states[:, 1], states[:, 0] - states[:, 1]])
    final[:, exploded] = np.nan
    if not has_x:
        final[0] = 0.0
        final[2] = -states[:, 1]
    traj = None
    if rec is not None:
        traj = {"every": int(record_every), "time": dt * record_every * np.arange(rec.shape[2]),
                "X": rec[:, 0].copy(), "Y": rec[:, 1].copy()}

    if has_x:
        _stiffness_check(drift, bmax, dt, xi0)
        if exploded.any():
            warnings.warn(f"{int(exploded.sum())} path(s) exploded; reduce dt", StiffnessWarning, stacklevel=2)

    return PathEnsemble(
        n_paths=int(n_paths), seed=int(seed), grid=grid, mode=mode, xi=xi0,
        schedule_hash=schedule.spec_hash, drift_hash=_drift_hash(drift) if has_x else None,
        block_max=np.ascontiguousarray(bmax.transpose(1, 0, 2)),
        block_min=np.ascontiguousarray(bmin.transpose(1, 0, 2)),
        final=final, exploded=exploded, explode_time=explode_time, residual_mean=residual,
        trajectories=traj, meta={"backend": backend},
    )


def _drift_hash(drift):
    try:
        return drift.spec_hash
    except UnsupportedOperation:
        return None


def _stiffness_check(drift, bmax, dt, xi0):
    finite = bmax[:, 0][np.isfinite(bmax[:, 0])]
    reach = max(float(finite.max()) if finite.size else 0.0, abs(xi0), 1e-3)
    slope = drift.derivative_bound(-reach, reach)
    if slope > 2.0 / dt:
        warnings.warn(f"|f'| reaches {slope:.3g} > 2/dt = {2.0 / dt:.3g} on the visited range; "
                      "Euler-Maruyama may be unstable, use a smaller dt", StiffnessWarning, stacklevel=3)


def simulate_Y_exact(schedule, grid, seed, n_paths=1, **kw):
    """Y(t_{k+1}) = exp(-dt) Y(t_k) + N(0, int exp(-2(t_{k+1}-s)) sigma^2(s) ds)."""
    return simulate(None, schedule, grid, n_paths, seed, mode="Y", **kw)


def simulate_X_em(drift, schedule, xi, grid, seed, n_paths=1, **kw):
    """X_{k+1} = X_k - f(X_k) dt + sigma(t_k) sqrt(dt) z_k."""
    return simulate(drift, schedule, grid, n_paths, seed, xi=xi, mode="X", **kw)


def simulate_coupled(drift, schedule, xi, grid, seed, n_paths=1, **kw):
    """X, Y on a shared noise stream, Z = X - Y and the ODE residual of Z."""
    return simulate(drift, schedule, grid, n_paths, seed, xi=xi, mode="coupled", **kw)
