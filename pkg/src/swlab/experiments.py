"""Seeded experiment sweeps producing self-describing CSV records.

Each command expands a parameter grid into (grid point, trial) tasks, runs
them in a process pool (size capped by ``SWLAB_THREADS``) and writes rows in
deterministic (grid, trial) order. Three row types are emitted:

``trial``      one per (grid point, trial), or per finer unit for some kinds;
``aggregate``  median / q30 / q70 / mean of a metric over the trial rows of a grid point;
``summary``    derived statistics of the whole sweep (fits, ratios, test statistics).

Aggregates are always recomputed from trial rows, see :func:`audit_aggregates`.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .cells import configuration_of, is_stable_cell, psi_estimate_with_error, required_p
from .energy import SYM2D_TARGET, closed_form_E_sym2d, slice_losses, sym2d_support
from .exact_ot import w2_over_d
from .exceptions import DivergenceError, SWLabError
from .geometry import sample_sphere
from .solvers import BCDConfig, SGDConfig, bcd_run, sgd_run

KINDS = (
    "trajectory",
    "bcd-phase",
    "cv-proba",
    "sgd-error",
    "uniform-convergence",
    "clt",
    "fixed-point",
    "scaling",
)

# default grids and settings per kind, desk scale
DEFAULT_GRIDS = {
    "trajectory": {"n": [10], "d": [2], "p": [0], "alpha": [0.3], "noise": [0.0], "batch": [1]},
    "bcd-phase": {"n": [10], "d": [10], "p": [30, 100, 400, 2000]},
    "cv-proba": {"n": [10], "d": [10], "p": [30, 100, 400, 2000]},
    "sgd-error": {"n": [10], "d": [5], "p": [0], "alpha": [5.0], "noise": [0.0], "batch": [1]},
    "uniform-convergence": {"n": [2], "d": [2], "p": [2**k for k in range(8, 17)]},
    "clt": {"n": [2], "d": [2], "p": [512]},
    "fixed-point": {"n": [5], "d": [3], "p": [64, 256, 1024, 4096]},
    "scaling": {"n": [10], "d": [4, 8, 16], "alpha": [2.5], "batch": [1]},
}

DEFAULT_SETTINGS = {
    "trials": 10,
    "base_seed": 0,
    "max_iters": 1000,
    "tol": 1e-5,
    "threshold": 1e-5,
    "record_every": 1,
    "method": "bcd",
    "dataset": "gaussian",
    "p_psi": 100_000,
    "resamples": 2000,
    "oracle_samples": 1_000_000,
    "point": [1.0, 1.0],
    "grid_size": 5,
    "grid_radius": 2.0,
    "epsilon": None,
    "eta": 0.1,
    "schedule": "constant",
}

# SGD runs to a 1e-5 threshold need far more than the BCD iteration budget
KIND_SETTINGS = {
    "sgd-error": {"max_iters": 20_000, "record_every": 10},
    "scaling": {"max_iters": 200_000},
}


class SpecError(SWLabError, ValueError):
    """An experiment specification is malformed."""


@dataclass
class ExperimentSpec:
    kind: str
    grid: dict = field(default_factory=dict)
    trials: int = 10
    base_seed: int = 0
    settings: dict = field(default_factory=dict)
    out: str | None = None
    format: str = "csv"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        grid = {k: list(v) for k, v in DEFAULT_GRIDS[self.kind].items()}
        for k, v in (self.grid or {}).items():
            vals = list(v) if isinstance(v, (list, tuple)) else [v]
            if not vals:
                raise SpecError(f"grid axis {k!r} is empty")
            grid[k] = vals
        self.grid = grid
        merged = dict(DEFAULT_SETTINGS)
        merged.update(KIND_SETTINGS.get(self.kind, {}))
        merged.update(self.settings or {})
        self.settings = merged
        if int(self.trials) < 1:
            raise SpecError("trials must be >= 1")
        self.trials = int(self.trials)
        self.base_seed = int(self.base_seed)
        if self.format not in ("csv", "json"):
            raise SpecError(f"format must be csv or json, got {self.format!r}")

    def grid_points(self) -> list[dict]:
        keys = list(self.grid)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.grid[k] for k in keys))]

    @classmethod
    def from_mapping(cls, obj: dict) -> "ExperimentSpec":
        obj = dict(obj)
        known = {"kind", "grid", "trials", "base_seed", "settings", "out", "format"}
        extra = {k: obj.pop(k) for k in list(obj) if k not in known}
        settings = dict(obj.pop("settings", {}) or {})
        settings.update(extra)
        if "kind" not in obj:
            raise SpecError("spec needs a 'kind'")
        return cls(settings=settings, **obj)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        path = Path(path)
        text = path.read_text()
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            obj = tomllib.loads(text)
        else:
            obj = json.loads(text)
        return cls.from_mapping(obj)

    def to_dict(self) -> dict:
        return asdict(self)


# -- seeding and data -------------------------------------------------------


def derive_seed(seed: int, *stream: int) -> int:
    """Deterministic 64-bit child seed for an independent random stream."""
    ss = np.random.SeedSequence([int(seed), *map(int, stream)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def spiral_dataset(n: int = 10) -> np.ndarray:
    k = np.arange(1, n + 1)
    r = 2 * k / n
    ang = 2 * k * np.pi / n
    return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)


def make_data(dataset: str, n: int, d: int, seed: int):
    """Target Z and initial Y0 for one trial.

    ``gaussian``: Z with standard Gaussian entries, Y0 uniform on [0, 1].
    ``spiral``: fixed planar spiral Z, Y0 uniform on [0, 1].
    ``sym2d``: the symmetric two-point target, Y0 a random symmetric pair.
    """
    rng = np.random.default_rng(derive_seed(seed, 0))
    if dataset == "gaussian":
        return rng.standard_normal((n, d)), rng.random((n, d))
    if dataset == "spiral":
        if d != 2:
            raise SpecError("the spiral dataset lives in d = 2")
        return spiral_dataset(n), rng.random((n, d))
    if dataset == "sym2d":
        if n != 2 or d != 2:
            raise SpecError("the sym2d dataset needs n = 2, d = 2")
        u, v = rng.uniform(-1.5, 1.5, size=2)
        return SYM2D_TARGET.copy(), sym2d_support(u, v)
    raise SpecError(f"unknown dataset {dataset!r}")


# -- trial runners (top level so they can be pickled) -----------------------


def _directions_for(params, seed):
    p = int(params.get("p", 0) or 0)
    if p <= 0:
        return None
    return sample_sphere(int(params["d"]), p, derive_seed(seed, 1))


def _trial_bcd(params, trial, seed, st):
    n, d = int(params["n"]), int(params["d"])
    Z, Y0 = make_data(st["dataset"], n, d, seed)
    dirs = _directions_for(params, seed)
    row = {}
    try:
        traj = bcd_run(Z, dirs, Y0, BCDConfig(max_iters=int(st["max_iters"]), tol=float(st["tol"]),
                                              record_every=int(st["max_iters"])))
        err = w2_over_d(traj.terminal, Z)
        row.update(final_w2_over_d=err, converged=int(err < st["threshold"]), solver_converged=int(traj.converged),
                   iters=traj.iters, boundary=int(traj.boundary), status="ok")
    except SWLabError as exc:
        row.update(status="error", error=type(exc).__name__)
    return [row]


def _sgd_config(params, seed, st, **overrides):
    kw = dict(
        alpha=float(params.get("alpha", 1.0)),
        schedule=st["schedule"],
        noise=float(params.get("noise", 0.0)),
        batch=int(params.get("batch", 1)),
        directions=_directions_for(params, seed),
        conv_threshold=-1.0,
        max_iters=int(st["max_iters"]),
        seed=derive_seed(seed, 2),
        record_every=int(st["record_every"]),
        keep_iterates=False,
    )
    kw.update(overrides)
    return SGDConfig(**kw)


def _trial_sgd_error(params, trial, seed, st):
    n, d = int(params["n"]), int(params["d"])
    Z, Y0 = make_data(st["dataset"], n, d, seed)
    cfg = _sgd_config(params, seed, st)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            traj = sgd_run(Z, cfg, Y0)
            diverged = 0
        except DivergenceError as exc:
            traj = exc.trajectory
            diverged = 1
    w2 = np.asarray(traj.w2_series)
    tail = w2[-max(1, len(w2) // 10):]
    rows = [{
        "unit": "final",
        "t": traj.iters,
        "final_w2_over_d": float(w2[-1]) if w2.size else float("nan"),
        "plateau_w2_over_d": float(np.mean(tail)) if not diverged else float("nan"),
        "diverged": diverged,
        "status": "diverged" if diverged else "ok",
    }]
    if not diverged:
        for t, e in zip(traj.t, traj.w2_series):
            rows.append({"unit": "curve", "t": t, "w2_over_d": e})
    return rows


def _trial_scaling(params, trial, seed, st):
    n, d = int(params["n"]), int(params["d"])
    Z, Y0 = make_data(st["dataset"], n, d, seed)
    cfg = _sgd_config(params, seed, st, record_every=1, target_w2=float(st["threshold"]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            traj = sgd_run(Z, cfg, Y0)
        except DivergenceError:
            return [{"iters_to_cv": float("nan"), "converged": 0, "status": "diverged"}]
    its = traj.iters if traj.converged else float("nan")
    return [{"iters_to_cv": its, "converged": int(traj.converged), "status": "ok"}]


def _trial_fixed_point(params, trial, seed, st):
    n, d = int(params["n"]), int(params["d"])
    Z, Y0 = make_data(st["dataset"], n, d, seed)
    dirs = _directions_for(params, seed)
    try:
        traj = bcd_run(Z, dirs, Y0, BCDConfig(max_iters=int(st["max_iters"]), tol=float(st["tol"]),
                                              record_every=int(st["max_iters"])))
        Yp = traj.terminal
        m = configuration_of(Yp, Z, dirs)
        stable = is_stable_cell(m, Z, dirs).stable if not m.boundary else False
        psi, mc_err = psi_estimate_with_error(Yp, Z, int(st["p_psi"]), derive_seed(seed, 3))
        resid = float(np.max(np.linalg.norm(Yp - psi, axis=1)))
        row = {
            "residual": resid,
            "mc_error": mc_err,
            "global_opt": int(w2_over_d(Yp, Z) < 1e-10),
            "stable": int(stable),
            "boundary": int(m.boundary),
            "cz_bar": float(np.max(np.linalg.norm(Z, axis=1))),
            "status": "ok" if (stable and not m.boundary) else "excluded",
        }
    except SWLabError as exc:
        row = {"status": "error", "error": type(exc).__name__}
    return [row]


def _trial_uniform(params, trial, seed, st):
    grid = _sym2d_grid(st)
    oracle = np.array([closed_form_E_sym2d(u, v) for u, v in grid])
    rows = []
    for p in params["p_ladder"]:
        dirs = sample_sphere(2, int(p), derive_seed(seed, 4, int(p)))
        vals = np.array([np.mean(slice_losses(sym2d_support(u, v), SYM2D_TARGET, dirs)) for u, v in grid])
        sup = float(np.max(np.abs(vals - oracle)))
        rows.append({"p": int(p), "sup_error": sup, "sqrt_p_sup_error": math.sqrt(p) * sup})
    return rows


def _sym2d_grid(st):
    k = int(st["grid_size"])
    r = float(st["grid_radius"])
    axis = np.linspace(-r, r, k)
    return [(float(u), float(v)) for u in axis for v in axis]


def _trial_clt(params, trial, seed, st):
    # one trial = one E_p resample at the fixed point
    u, v = (float(x) for x in st["point"])
    p = int(params["p"])
    Y = sym2d_support(u, v)
    dirs = sample_sphere(2, p, derive_seed(seed, 5))
    ep = float(np.mean(slice_losses(Y, SYM2D_TARGET, dirs)))
    e = closed_form_E_sym2d(u, v)
    return [{"energy_p": ep, "scaled_dev": math.sqrt(p) * (ep - e)}]


def _trial_trajectory(params, trial, seed, st):
    n, d = int(params["n"]), int(params["d"])
    Z, Y0 = make_data(st["dataset"], n, d, seed)
    if st.get("start") == "target":
        Y0 = Z.copy()
    if st["method"] == "bcd":
        dirs = _directions_for(params, seed) or sample_sphere(d, max(3, d + 1), derive_seed(seed, 1))
        traj = bcd_run(Z, dirs, Y0, BCDConfig(max_iters=int(st["max_iters"]), tol=float(st["tol"])))
        iterates = traj.iterates
        ts = traj.t
    else:
        cfg = _sgd_config(params, seed, st, keep_iterates=True)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                traj = sgd_run(Z, cfg, Y0)
            except DivergenceError as exc:
                traj = exc.trajectory
        iterates = traj.iterates
        ts = traj.t
    rows = []
    for t, Y in zip(ts, iterates):
        for k in range(n):
            row = {"t": t, "point": k}
            row.update({f"x{j}": float(Y[k, j]) for j in range(d)})
            rows.append(row)
    # path length of the whole cloud, summed over points
    if len(iterates) > 1:
        arr = np.stack(iterates)
        length = float(np.sum(np.linalg.norm(np.diff(arr, axis=0), axis=2)))
    else:
        length = 0.0
    rows.append({"t": traj.iters, "point": -1, "path_length": length,
                 "final_w2_over_d": w2_over_d(traj.terminal, Z)})
    return rows


RUNNERS = {
    "bcd-phase": _trial_bcd,
    "cv-proba": _trial_bcd,
    "sgd-error": _trial_sgd_error,
    "scaling": _trial_scaling,
    "fixed-point": _trial_fixed_point,
    "uniform-convergence": _trial_uniform,
    "clt": _trial_clt,
    "trajectory": _trial_trajectory,
}


def _run_task(task):
    kind, params, trial, seed, st = task
    return RUNNERS[kind](params, trial, seed, st)


def pool_size() -> int:
    env = os.environ.get("SWLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise SpecError(f"SWLAB_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _map(tasks):
    workers = min(pool_size(), len(tasks))
    if workers <= 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


# -- aggregation ------------------------------------------------------------


def quantile_stats(values) -> dict:
    vals = np.asarray([v for v in values if v == v and v is not None], dtype=np.float64)
    if vals.size == 0:
        return {"count": 0, "median": float("nan"), "q30": float("nan"), "q70": float("nan"), "mean": float("nan")}
    return {
        "count": int(vals.size),
        "median": float(np.median(vals)),
        "q30": float(np.quantile(vals, 0.3)),
        "q70": float(np.quantile(vals, 0.7)),
        "mean": float(np.mean(vals)),
    }


def _aggregate(kind, params, metric, trial_rows, **extra):
    row = {"row_type": "aggregate", "kind": kind, **params, "metric": metric}
    row.update(quantile_stats(r.get(metric, float("nan")) for r in trial_rows))
    row.update(extra)
    return row


def _group_key(row, keys):
    return tuple(row.get(k) for k in keys)


def audit_aggregates(rows) -> bool:
    """Recompute every aggregate row from its trial rows and compare exactly."""
    trials = [r for r in rows if r.get("row_type") == "trial"]
    for agg in rows:
        if agg.get("row_type") != "aggregate":
            continue
        keys = list(agg.get("_group", ()))
        if "unit" in agg:
            keys.append("unit")
        members = [r for r in trials if all(r.get(k) == agg.get(k) for k in keys)]
        if agg.get("t_filter") is not None:
            members = [r for r in members if r.get("t") == agg["t_filter"]]
        recomputed = quantile_stats(r.get(agg["metric"], float("nan")) for r in members)
        for k, v in recomputed.items():
            a = agg.get(k)
            if not (a == v or (isinstance(v, float) and math.isnan(v) and isinstance(a, float) and math.isnan(a))):
                return False
    return True


# -- sweep driver -----------------------------------------------------------


def run_experiment(spec: ExperimentSpec) -> list[dict]:
    """Run a sweep and return its rows (trial, aggregate, summary) in deterministic order."""
    st = dict(spec.settings)
    kind = spec.kind
    if kind == "uniform-convergence":
        return _run_uniform(spec, st)
    if kind == "clt":
        return _run_clt(spec, st)

    points = spec.grid_points()
    tasks = []
    for params in points:
        for trial in range(spec.trials):
            seed = spec.base_seed + trial
            tasks.append((kind, params, trial, seed, st))
    results = _map(tasks)

    rows = []
    idx = 0
    per_point = []
    for params in points:
        group = []
        for trial in range(spec.trials):
            seed = spec.base_seed + trial
            for r in results[idx]:
                row = {"row_type": "trial", "kind": kind, **params, "trial": trial, "seed": seed, **r}
                group.append(row)
            idx += 1
        rows.extend(group)
        per_point.append((params, group))

    gkeys = list(spec.grid)
    for params, group in per_point:
        rows.extend(_aggregates_for(kind, params, group, gkeys, st))
    rows.extend(_summaries_for(kind, spec, per_point, st))
    return rows


def _aggregates_for(kind, params, group, gkeys, st):
    out = []
    if kind in ("bcd-phase", "cv-proba"):
        ok = [r for r in group if r.get("status") == "ok"]
        out.append(_aggregate(kind, params, "final_w2_over_d", ok, _group=gkeys))
        out.append(_aggregate(kind, params, "converged", ok, _group=gkeys))
    elif kind == "sgd-error":
        finals = [r for r in group if r.get("unit") == "final"]
        out.append(_aggregate(kind, params, "plateau_w2_over_d", finals, _group=gkeys, unit="final",
                              diverged_count=sum(r["diverged"] for r in finals)))
        out.append(_aggregate(kind, params, "final_w2_over_d", finals, _group=gkeys, unit="final"))
        curve = [r for r in group if r.get("unit") == "curve"]
        for t in sorted({r["t"] for r in curve}):
            members = [r for r in curve if r["t"] == t]
            out.append(_aggregate(kind, params, "w2_over_d", members, _group=gkeys, unit="curve", t=t, t_filter=t))
    elif kind == "scaling":
        out.append(_aggregate(kind, params, "iters_to_cv", group, _group=gkeys,
                              excluded=sum(1 for r in group if not r.get("converged"))))
    elif kind == "fixed-point":
        ok = [r for r in group if r.get("status") == "ok"]
        out.append(_aggregate(kind, params, "residual", ok, _group=gkeys + ["status"], status="ok",
                              excluded=len(group) - len(ok)))
        out.append(_aggregate(kind, params, "mc_error", ok, _group=gkeys + ["status"], status="ok"))
    elif kind == "trajectory":
        ends = [r for r in group if r.get("point") == -1]
        out.append(_aggregate(kind, params, "path_length", ends, _group=gkeys + ["point"], point=-1))
    return out


def _summaries_for(kind, spec, per_point, st):
    out = []
    if kind == "scaling":
        # one fit of log(median iterations) against log d per (n, alpha, batch)
        others = [k for k in spec.grid if k != "d"]
        buckets = {}
        for params, group in per_point:
            key = tuple(params.get(k) for k in others)
            med = quantile_stats(r.get("iters_to_cv") for r in group)["median"]
            buckets.setdefault(key, []).append((params["d"], med, sum(1 for r in group if not r.get("converged"))))
        for key, entries in buckets.items():
            ds = np.array([e[0] for e in entries], dtype=float)
            meds = np.array([e[1] for e in entries], dtype=float)
            good = np.isfinite(meds)
            slope = intercept = float("nan")
            if good.sum() >= 2:
                slope, intercept = (float(x) for x in np.polyfit(np.log(ds[good]), np.log(meds[good]), 1))
            out.append({"row_type": "summary", "kind": kind, **dict(zip(others, key)), "metric": "loglog_slope",
                        "value": slope, "intercept": intercept, "excluded": sum(e[2] for e in entries)})
    elif kind == "fixed-point":
        others = [k for k in spec.grid if k != "p"]
        buckets = {}
        for params, group in per_point:
            key = tuple(params.get(k) for k in others)
            ok = [r for r in group if r.get("status") == "ok"]
            buckets.setdefault(key, []).append((params["p"], quantile_stats(r.get("residual") for r in ok)["median"],
                                                [r.get("cz_bar") for r in group if r.get("cz_bar") is not None]))
        for key, entries in buckets.items():
            entries.sort(key=lambda e: e[0])
            ratio = entries[-1][1] / entries[0][1] if entries[0][1] else float("nan")
            params = dict(zip(others, key))
            n, d = int(params["n"]), int(params["d"])
            cz = [c for e in entries for c in e[2]]
            cz_bar = float(np.median(cz)) if cz else 1.0
            eps = st.get("epsilon") or (4.0 / 3.0) * n * cz_bar / 10
            bound = required_p(float(eps), float(st["eta"]), n, d, cz_bar)
            out.append({"row_type": "summary", "kind": kind, **params, "metric": "residual_ratio_max_over_min_p",
                        "value": ratio, "p_min": entries[0][0], "p_max": entries[-1][0],
                        "required_p": bound, "epsilon": eps, "eta": st["eta"], "cz_bar": cz_bar})
    elif kind in ("bcd-phase", "cv-proba"):
        for params, group in per_point:
            ok = [r for r in group if r.get("status") == "ok"]
            frac = float(np.mean([r["converged"] for r in ok])) if ok else float("nan")
            out.append({"row_type": "summary", "kind": kind, **params, "metric": "convergence_fraction",
                        "value": frac, "errors": len(group) - len(ok)})
    elif kind == "sgd-error":
        for params, group in per_point:
            finals = [r for r in group if r.get("unit") == "final"]
            out.append({"row_type": "summary", "kind": kind, **params, "metric": "all_diverged",
                        "value": int(all(r["diverged"] for r in finals))})
    return out


def _run_uniform(spec, st):
    kind = spec.kind
    params = {"n": 2, "d": 2, "p_ladder": sorted(int(p) for p in spec.grid["p"])}
    tasks = [(kind, params, trial, spec.base_seed + trial, st) for trial in range(spec.trials)]
    results = _map(tasks)
    rows = []
    for trial, res in enumerate(results):
        for r in res:
            rows.append({"row_type": "trial", "kind": kind, "n": 2, "d": 2, "trial": trial,
                         "seed": spec.base_seed + trial, **r})
    ladder = params["p_ladder"]
    for p in ladder:
        members = [r for r in rows if r["row_type"] == "trial" and r["p"] == p]
        rows.append(_aggregate(kind, {"n": 2, "d": 2, "p": p}, "sup_error", members, _group=["p"]))
        rows.append(_aggregate(kind, {"n": 2, "d": 2, "p": p}, "sqrt_p_sup_error", members, _group=["p"]))
    by_trial = {}
    for r in rows:
        if r["row_type"] == "trial":
            by_trial.setdefault(r["trial"], {})[r["p"]] = r["sup_error"]
    lo, hi = ladder[0], ladder[-1]
    frac = float(np.mean([t[hi] < t[lo] for t in by_trial.values()]))
    rows.append({"row_type": "summary", "kind": kind, "n": 2, "d": 2, "metric": "fraction_decreasing",
                 "value": frac, "p_min": lo, "p_max": hi})
    if len(ladder) >= 3:
        a, b = ladder[-3], ladder[-1]
        med = {p: quantile_stats(math.sqrt(p) * t[p] for t in by_trial.values())["median"] for p in (a, b)}
        rows.append({"row_type": "summary", "kind": kind, "n": 2, "d": 2, "metric": "sqrt_p_level_ratio",
                     "value": med[a] / med[b], "p_min": a, "p_max": b})
    return rows


def clt_variance_oracle(point, samples: int, seed: int) -> float:
    """Var_theta w_theta(Y) from ``samples`` fresh slice values (independent of the resamples)."""
    u, v = (float(x) for x in point)
    dirs = sample_sphere(2, int(samples), derive_seed(seed, 6))
    vals = slice_losses(sym2d_support(u, v), SYM2D_TARGET, dirs)
    return float(np.var(vals, ddof=1))


def _run_clt(spec, st):
    kind = spec.kind
    rows = []
    R = int(st["resamples"])
    for p in spec.grid["p"]:
        params = {"n": 2, "d": 2, "p": int(p)}
        tasks = [(kind, params, r, spec.base_seed + r, st) for r in range(R)]
        results = _map(tasks)
        group = []
        for r, res in enumerate(results):
            for x in res:
                group.append({"row_type": "trial", "kind": kind, **params, "trial": r,
                              "seed": spec.base_seed + r, "u": st["point"][0], "v": st["point"][1], **x})
        rows.extend(group)
        rows.append(_aggregate(kind, params, "scaled_dev", group, _group=["p"]))
        dev = np.array([g["scaled_dev"] for g in group])
        sample_var = float(np.var(dev, ddof=1))
        oracle_var = clt_variance_oracle(st["point"], int(st["oracle_samples"]), spec.base_seed)
        rel = abs(sample_var - oracle_var) / oracle_var if oracle_var > 0 else float(sample_var != 0)
        if np.std(dev) > 0:
            ks = stats.kstest(dev, "norm", args=(float(np.mean(dev)), float(np.std(dev, ddof=1))))
            ks_stat, ks_p = float(ks.statistic), float(ks.pvalue)
        else:
            ks_stat, ks_p = 0.0, 1.0
        rows.append({"row_type": "summary", "kind": kind, **params, "metric": "variance",
                     "value": sample_var, "oracle_variance": oracle_var, "relative_error": rel,
                     "ks_statistic": ks_stat, "ks_pvalue": ks_p})
    return rows


# -- output -----------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return ";".join(_fmt(x) for x in v)
    return str(v)


def columns_for(rows) -> list[str]:
    cols = []
    seen = set()
    for r in rows:
        for k in r:
            if k.startswith("_") or k == "t_filter" or k in seen:
                continue
            seen.add(k)
            cols.append(k)
    return cols


def rows_to_csv(rows) -> str:
    cols = columns_for(rows)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for r in rows:
        writer.writerow([_fmt(r.get(c)) for c in cols])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return None if math.isnan(v) else v
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def rows_to_json(rows) -> str:
    clean = [{k: _jsonable(v) for k, v in r.items() if not k.startswith("_") and k != "t_filter"} for r in rows]
    return json.dumps(clean, indent=1, sort_keys=False)


def metadata(spec: ExperimentSpec) -> dict:
    st = spec.settings
    meta = {"spec": spec.to_dict(), "audit": None}
    if float(st.get("threshold", 1e-5)) != 1e-5:
        meta["note"] = f"scaled-down convergence threshold {st['threshold']} (reference value 1e-5)"
    return meta


def write_outputs(spec: ExperimentSpec, rows, out) -> None:
    out = Path(out)
    body = rows_to_csv(rows) if spec.format == "csv" else rows_to_json(rows)
    out.write_text(body)
    meta = metadata(spec)
    meta["audit"] = audit_aggregates(rows)
    out.with_name(out.name + ".meta.json").write_text(json.dumps(_jsonable_tree(meta), indent=1, sort_keys=True))


def _jsonable_tree(obj):
    if isinstance(obj, dict):
        return {k: _jsonable_tree(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable_tree(x) for x in obj]
    return _jsonable(obj)
