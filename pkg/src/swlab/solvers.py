"""Block-coordinate descent on E_p and stochastic gradient descent on E or E_p.

Both solvers return a :class:`Trajectory`. The SGD family (plain, noised,
batched, decreasing step, barycentric) shares one loop so that a barycenter
with a single target reproduces ``sgd_run`` bit for bit.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .cells import TAU_A
from .exact_ot import assignment_w2
from .exceptions import DivergenceError, ShapeError, SingularDirectionsError
from .geometry import DirectionSet, _normalized_gaussians, as_directions, as_points, check_pair, norm_inf2, slice_matching

DIVERGENCE_RADIUS = 1e6


class StepSizeWarning(UserWarning):
    """Constant step outside the range where SGD is expected to behave well."""


@dataclass
class BCDConfig:
    max_iters: int = 1000
    tol: float = 1e-5
    record_every: int = 1

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")


@dataclass
class SGDConfig:
    """Settings for :func:`sgd_run`.

    Parameters
    ----------
    alpha : float
        Constant step, or alpha_0 of the decreasing schedule.
    schedule : {"constant", "decreasing"}
        ``"decreasing"`` uses alpha_0 / (1 + t)**power.
    power : float
        Exponent of the decreasing schedule; must lie in (1/2, 1] so that the
        steps sum to infinity while their squares do not.
    noise : float
        Noise level a >= 0; the perturbation is alpha_t * a * N(0, I).
    batch : int
        Directions per step.
    directions : DirectionSet or None
        ``None`` draws fresh directions on the sphere (objective E); a fixed set
        draws uniformly from its axes with replacement (objective E_p).
    conv_threshold : float
        Stop once ||Y_{t+1} - Y_t||_{inf,2} < conv_threshold. Negative disables it.
    target_w2 : float or None
        Optional early stop once (1/d) W_2^2 to the target drops below it,
        checked on recorded steps.
    """

    alpha: float = 1.0
    schedule: str = "constant"
    power: float = 0.75
    noise: float = 0.0
    batch: int = 1
    directions: DirectionSet | None = None
    conv_threshold: float = -1.0
    max_iters: int = 1000
    seed: int = 0
    record_every: int = 1
    target_w2: float | None = None
    keep_iterates: bool = True

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.schedule not in ("constant", "decreasing"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.schedule == "decreasing" and not (0.5 < self.power <= 1.0):
            raise ValueError("decreasing schedule needs power in (1/2, 1] for sum a_t = inf, sum a_t^2 < inf")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if self.batch < 1 or self.max_iters < 1 or self.record_every < 1:
            raise ValueError("batch, max_iters and record_every must be >= 1")

    def step(self, t: int) -> float:
        if self.schedule == "constant":
            return self.alpha
        return self.alpha / (1.0 + t) ** self.power

    def describe(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "directions"}
        if self.directions is None:
            out["direction_source"] = "sphere"
        else:
            out["direction_source"] = "fixed"
            out["p"] = self.directions.p
            out["directions_seed"] = self.directions.seed
        return out


@dataclass
class Trajectory:
    """Recorded optimization run.

    ``t``, ``energy_series``, ``w2_series`` and ``step_series`` are aligned:
    entry j describes the iterate after ``t[j]`` steps.
    """

    t: list = field(default_factory=list)
    energy_series: list = field(default_factory=list)
    w2_series: list = field(default_factory=list)
    step_series: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    noise_level: float = 0.0
    terminal: np.ndarray | None = None
    terminal_assignment: np.ndarray | None = None
    converged: bool = False
    diverged: bool = False
    boundary: bool = False
    iters: int = 0
    meta: dict = field(default_factory=dict)

    def record(self, t, Y, energy, w2, step, keep):
        self.t.append(int(t))
        self.energy_series.append(float(energy))
        self.w2_series.append(float(w2))
        self.step_series.append(float(step))
        if keep:
            self.iterates.append(np.array(Y, copy=True))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "energy", "w2_over_d", "step", "noise_level"])
        for row in zip(self.t, self.energy_series, self.w2_series, self.step_series):
            writer.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3]), repr(float(self.noise_level))])
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {
            "meta": self.meta,
            "converged": self.converged,
            "diverged": self.diverged,
            "boundary": self.boundary,
            "iters": self.iters,
            "terminal": None if self.terminal is None else self.terminal.tolist(),
            "terminal_assignment": None if self.terminal_assignment is None else self.terminal_assignment.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.sidecar(), sort_keys=True)


@dataclass
class BarycenterProblem:
    targets: list
    lambdas: np.ndarray

    def __post_init__(self):
        targets = [np.array(as_points(Z), copy=True) for Z in self.targets]
        if not targets:
            raise ValueError("at least one target is required")
        shape = targets[0].shape
        if any(Z.shape != shape for Z in targets):
            raise ShapeError("all targets must share (n, d)")
        lam = np.asarray(self.lambdas, dtype=np.float64).ravel()
        if lam.size != len(targets):
            raise ShapeError(f"{lam.size} weights for {len(targets)} targets")
        if np.any(lam < 0) or abs(lam.sum() - 1.0) > 1e-12:
            raise ValueError("lambdas must lie in the probability simplex")
        self.targets = targets
        self.lambdas = lam


def _error_to(Y, targets, lambdas) -> float:
    d = Y.shape[1]
    return float(sum(lam * assignment_w2(Y, Z)[0] for Z, lam in zip(targets, lambdas)) / d)


# -- block-coordinate descent -----------------------------------------------


def bcd_run(Z, dirs, Y0, cfg: BCDConfig | None = None) -> Trajectory:
    """Alternate slice matchings and the closed-form position update.

    Each iteration fixes the configuration of the current iterate and jumps to
    the minimizer of its cell quadratic, so E_p never increases. Stops when the
    move is below ``cfg.tol`` in the (inf, 2) norm or after ``cfg.max_iters``.
    """
    cfg = cfg or BCDConfig()
    Z = as_points(Z)
    Y, Z = check_pair(np.array(as_points(Y0), copy=True), Z)
    thetas = as_directions(dirs)
    p = thetas.shape[0]
    A = thetas.T @ thetas / p
    lam_min = float(np.linalg.eigvalsh(A)[0])
    if lam_min <= TAU_A:
        raise SingularDirectionsError(f"smallest eigenvalue of A is {lam_min:.3e}; need p > d generic axes")
    traj = Trajectory(meta={"solver": "bcd", "p": p, **asdict(cfg)})

    def energy_and_matching(Y):
        sm = slice_matching(Y, Z, thetas)
        return float(np.mean((sm["proj_y"] - sm["matched"]) ** 2)), sm

    energy, sm = energy_and_matching(Y)
    traj.record(0, Y, energy, assignment_w2(Y, Z)[0] / Y.shape[1], 0.0, True)
    t = 0
    for t in range(1, cfg.max_iters + 1):
        Ynew = np.linalg.solve(A, (sm["matched"] @ thetas / p).T).T
        if not np.all(np.isfinite(Ynew)):
            traj.diverged = True
            raise DivergenceError(f"non-finite BCD iterate at step {t}", traj)
        move = norm_inf2(Ynew - Y)
        Y = Ynew
        energy, sm = energy_and_matching(Y)
        done = move < cfg.tol
        if done or t % cfg.record_every == 0 or t == cfg.max_iters:
            traj.record(t, Y, energy, assignment_w2(Y, Z)[0] / Y.shape[1], move, True)
        if done:
            traj.converged = True
            break
    traj.iters = t
    traj.terminal = Y
    traj.terminal_assignment = sm["perms"][-1].copy()
    traj.boundary = bool(np.any(sm["min_gap"] < 1e-9))
    return traj


# -- stochastic gradient descent --------------------------------------------


def _check_step(cfg: SGDConfig, n: int) -> None:
    if cfg.schedule != "constant":
        return
    if cfg.alpha >= 1.5 * n:
        warnings.warn(f"alpha={cfg.alpha} >= 1.5 n; SGD is likely divergent", StepSizeWarning, stacklevel=3)
    elif cfg.alpha >= n / 2:
        warnings.warn(f"alpha={cfg.alpha} >= n/2", StepSizeWarning, stacklevel=3)


def _rng_streams(seed):
    dir_ss, noise_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(dir_ss), np.random.default_rng(noise_ss)


def _draw_batch(rng, cfg: SGDConfig, d: int) -> np.ndarray:
    if cfg.directions is None:
        return _normalized_gaussians(rng, cfg.batch, d)
    idx = rng.integers(0, cfg.directions.p, size=cfg.batch)
    return cfg.directions.axes[idx]


def noised_step(Y, grad, alpha: float, noise: float, rng: np.random.Generator) -> np.ndarray:
    """One update Y - alpha * grad + alpha * noise * N(0, I)."""
    Y = np.asarray(Y, dtype=np.float64)
    out = Y - alpha * grad
    if noise > 0:
        out = out + alpha * noise * rng.standard_normal(Y.shape)
    return out


def _sgd_loop(targets, lambdas, cfg: SGDConfig, Y0, solver: str) -> Trajectory:
    Y = np.array(as_points(Y0), dtype=np.float64, copy=True)
    for Zj in targets:
        check_pair(Y, Zj)
    n, d = Y.shape
    if cfg.directions is not None and cfg.directions.d != d:
        raise ShapeError(f"fixed directions live in R^{cfg.directions.d}, supports in R^{d}")
    _check_step(cfg, n)
    dir_rng, noise_rng = _rng_streams(cfg.seed)
    traj = Trajectory(noise_level=cfg.noise, meta={"solver": solver, **cfg.describe(), "n": n, "d": d})
    traj.record(0, Y, np.nan, _error_to(Y, targets, lambdas), 0.0, cfg.keep_iterates)
    last_perm = None
    t = 0
    for t in range(1, cfg.max_iters + 1):
        thetas = _draw_batch(dir_rng, cfg, d)
        grad = np.zeros_like(Y)
        loss = 0.0
        for Zj, lam in zip(targets, lambdas):
            sm = slice_matching(Y, Zj, thetas)
            diff = sm["proj_y"] - sm["matched"]
            grad += lam * (2.0 / (n * cfg.batch)) * diff @ thetas
            loss += lam * float(np.mean(diff**2))
            last_perm = sm["perms"][-1]
        step = cfg.step(t - 1)
        Ynew = noised_step(Y, grad, step, cfg.noise, noise_rng)
        move = norm_inf2(Ynew - Y)
        Y = Ynew
        size = norm_inf2(Y)
        if not np.isfinite(size) or size > DIVERGENCE_RADIUS:
            traj.diverged = True
            traj.iters = t
            traj.terminal = Y
            raise DivergenceError(
                f"iterate left the ball of radius {DIVERGENCE_RADIUS:g} at step {t} (step size {step:g})", traj
            )
        converged = cfg.conv_threshold >= 0 and move < cfg.conv_threshold
        if converged or t % cfg.record_every == 0 or t == cfg.max_iters:
            err = _error_to(Y, targets, lambdas)
            # the recorded energy is the loss of the batch that produced this step
            traj.record(t, Y, loss, err, step, cfg.keep_iterates)
            if cfg.target_w2 is not None and err < cfg.target_w2:
                traj.converged = True
                break
        if converged:
            traj.converged = True
            break
    traj.iters = t
    traj.terminal = Y
    traj.terminal_assignment = None if last_perm is None else last_perm.copy()
    return traj


def sgd_run(Z, cfg: SGDConfig, Y0) -> Trajectory:
    """Stochastic gradient descent on E (fresh directions) or E_p (fixed set).

    Raises :class:`DivergenceError` with the partial trajectory attached when the
    iterate leaves the ball of radius 1e6.
    """
    Z = np.array(as_points(Z), copy=True)
    return _sgd_loop([Z], np.array([1.0]), cfg, Y0, "sgd")


def barycenter_run(prob: BarycenterProblem, cfg: SGDConfig, Y0) -> Trajectory:
    """SGD on sum_j lambda_j SW_2^2(gamma_Y, gamma_{Z_j}), one direction batch shared by all targets."""
    return _sgd_loop(prob.targets, prob.lambdas, cfg, Y0, "barycenter")
