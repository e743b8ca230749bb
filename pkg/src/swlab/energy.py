"""Sliced-Wasserstein energies E_p and E, their a.e. gradients and closed-form references."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geometry import (
    as_directions,
    as_points,
    check_pair,
    norm_inf2,
    sample_sphere,
    slice_matching,
)


@dataclass(frozen=True)
class EnergyEstimate:
    """Monte-Carlo estimate of E with its standard error."""

    value: float
    std_error: float
    p_used: int
    seed: int | None

    def to_json(self) -> str:
        return json.dumps(
            {"value": self.value, "std_error": self.std_error, "p": self.p_used, "seed": self.seed}
        )

    @classmethod
    def from_json(cls, text: str) -> "EnergyEstimate":
        obj = json.loads(text)
        return cls(float(obj["value"]), float(obj["std_error"]), int(obj["p"]), obj["seed"])


def slice_losses(Y, Z, dirs) -> np.ndarray:
    """Vector of w_theta(Y, Z, theta_i) for every axis in ``dirs``."""
    sm = slice_matching(Y, Z, dirs)
    diff = sm["proj_y"] - sm["matched"]
    return np.mean(diff**2, axis=0)


def energy_p(Y, Z, dirs) -> float:
    """E_p(Y) = (1/p) sum_i w_{theta_i}(Y)."""
    return float(np.mean(slice_losses(Y, Z, dirs)))


def energy_mc(Y, Z, p: int, seed) -> EnergyEstimate:
    """Monte-Carlo estimate of E(Y) over ``p`` fresh directions.

    The standard error is the sample standard deviation of the slice values
    divided by sqrt(p); it is 0 when p == 1.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    Y, Z = check_pair(Y, Z)
    dirs = sample_sphere(Y.shape[1], p, seed)
    vals = slice_losses(Y, Z, dirs)
    se = float(np.std(vals, ddof=1) / np.sqrt(p)) if p > 1 else 0.0
    return EnergyEstimate(float(np.mean(vals)), se, int(p), seed)


def grad_w_theta(Y, Z, theta) -> np.ndarray:
    """A.e. gradient of w_theta: row k is (2/n) theta theta^T (y_k - z_{m(k)})."""
    theta = np.asarray(theta, dtype=np.float64)
    sm = slice_matching(Y, Z, theta[None, :])
    n = sm["proj_y"].shape[0]
    diff = sm["proj_y"][:, 0] - sm["matched"][:, 0]
    return (2.0 / n) * diff[:, None] * theta[None, :]


def _batch_gradient(Y, Z, thetas: np.ndarray) -> np.ndarray:
    # mean over the rows of thetas of grad_w_theta, computed in one pass
    sm = slice_matching(Y, Z, thetas)
    n, p = sm["proj_y"].shape
    return (2.0 / (n * p)) * (sm["proj_y"] - sm["matched"]) @ thetas


def grad_energy_p(Y, Z, dirs) -> np.ndarray:
    """Average of grad_w_theta over the fixed axes ``dirs``."""
    return _batch_gradient(Y, Z, as_directions(dirs))


def grad_energy_mc(Y, Z, p: int, seed) -> np.ndarray:
    """Average of grad_w_theta over ``p`` fresh directions drawn with ``seed``."""
    Y, Z = check_pair(Y, Z)
    return _batch_gradient(Y, Z, sample_sphere(Y.shape[1], p, seed).axes)


def grad_energy_mc_with_error(Y, Z, p: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Monte-Carlo gradient together with its entrywise standard error."""
    Y, Z = check_pair(Y, Z)
    thetas = sample_sphere(Y.shape[1], p, seed).axes
    sm = slice_matching(Y, Z, thetas)
    n = Y.shape[0]
    diff = sm["proj_y"] - sm["matched"]
    # per-direction gradient entries g_i[k, j] = (2/n) diff[k, i] theta_i[j]
    mean = (2.0 / (n * p)) * diff @ thetas
    second = (4.0 / (n * n * p)) * (diff**2) @ (thetas**2)
    var = np.maximum(second - mean**2, 0.0) * p / max(p - 1, 1)
    return mean, np.sqrt(var / p)


# -- symmetric two-point case in the plane ---------------------------------
# Y = ((u, v), (-u, -v)) against Z = ((0, -1), (0, 1)).

SYM2D_TARGET = np.array([[0.0, -1.0], [0.0, 1.0]])


def sym2d_support(u: float, v: float) -> np.ndarray:
    return np.array([[u, v], [-u, -v]], dtype=np.float64)


def closed_form_E_sym2d(u: float, v: float) -> float:
    """E for the symmetric two-point configuration, continuously extended at u = 0."""
    u = abs(float(u))
    v = abs(float(v))
    if u == 0.0:
        angle = np.pi / 2 if v > 0.0 else 0.0
    else:
        angle = np.arctan(v / u)
    val = 0.5 * (u * u + v * v) + 0.5 - (2.0 / np.pi) * (u + v * angle)
    return float(max(val, 0.0))


def closed_form_W2_sym2d(u: float, v: float) -> float:
    """Exact W_2^2 for the symmetric two-point configuration: u^2 + (|v| - 1)^2."""
    return float(u * u + (abs(v) - 1.0) ** 2)


def lipschitz_bound(X, Z, r: float) -> float:
    """kappa_r(X) = 2n (r + ||X||_{inf,2} + ||Z||_{inf,2})."""
    if r < 0:
        raise ValueError(f"r must be non-negative, got {r}")
    X = as_points(X)
    Z = as_points(Z)
    n = X.shape[0]
    return float(2 * n * (r + norm_inf2(X) + norm_inf2(Z)))
