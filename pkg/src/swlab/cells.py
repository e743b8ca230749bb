"""Cell structure of E_p.

On the region where the slice-wise matchings are fixed, E_p coincides with a
quadratic ``q_m``. This module builds those quadratics, minimizes them in
closed form, tests whether a cell is stable (contains the minimizer of its
own quadratic) and estimates the fixed-point map of critical points.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import InstanceTooLargeError, NotInUError, ShapeError, SingularDirectionsError
from .geometry import (
    as_directions,
    as_points,
    check_pair,
    is_in_U,
    norm_inf2,
    sample_sphere,
    slice_matching,
)

#: projected gap below which a slice is considered tied (Y on a cell boundary)
BOUNDARY_GAP = 1e-9
#: eigenvalue floor for inverting A
TAU_A = 1e-10
#: largest enumeration n!^p accepted by the brute-force oracle
ENUM_LIMIT = 10**6


@dataclass(frozen=True, eq=False)
class Configuration:
    """``p`` slice matchings stored as a (p, n) array; row i is m_i (0-based)."""

    perms: np.ndarray
    boundary: bool = False

    def __post_init__(self):
        perms = np.array(self.perms, dtype=np.intp, copy=True)
        if perms.ndim != 2:
            raise ShapeError(f"perms must be (p, n), got {perms.shape}")
        n = perms.shape[1]
        if not np.all(np.sort(perms, axis=1) == np.arange(n)[None, :]):
            raise ValueError("every row of perms must be a permutation of 0..n-1")
        perms.setflags(write=False)
        object.__setattr__(self, "perms", perms)

    @property
    def p(self) -> int:
        return self.perms.shape[0]

    @property
    def n(self) -> int:
        return self.perms.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.perms.shape == other.perms.shape and bool(np.array_equal(self.perms, other.perms))

    def __hash__(self):
        return hash((self.perms.shape, self.perms.tobytes()))

    def to_json(self) -> str:
        return json.dumps(self.perms.tolist())

    @classmethod
    def from_json(cls, text: str) -> "Configuration":
        return cls(np.asarray(json.loads(text), dtype=np.intp))


@dataclass(frozen=True)
class CellQuadratic:
    """q_m(Y) = (1/n) sum_k y_k^T A y_k - sum_k a_k^T y_k + b."""

    A: np.ndarray
    a: np.ndarray
    b: float
    m: Configuration

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def gradient(self, Y) -> np.ndarray:
        Y = as_points(Y)
        return (2.0 / self.n) * Y @ self.A - self.a


@dataclass(frozen=True)
class CellReport:
    """Outcome of :func:`is_stable_cell`.

    ``stable`` is False whenever ``boundary`` is set: a minimizer lying on a
    cell boundary is reported as indeterminate rather than guessed.
    """

    stable: bool
    minimizer: np.ndarray
    energy: float
    boundary: bool
    config_id: int = 0


def configuration_of(Y, Z, dirs) -> Configuration:
    """Slice-wise sorting matchings of Y onto Z, with a boundary flag on projected ties."""
    sm = slice_matching(Y, Z, dirs)
    boundary = bool(np.any(sm["min_gap"] < BOUNDARY_GAP))
    return Configuration(sm["perms"], boundary=boundary)


def _matched_projections(m: Configuration, Z: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    # M[k, i] = theta_i . z_{m_i(k)}
    if m.p != thetas.shape[0] or m.n != Z.shape[0]:
        raise ShapeError(f"configuration is ({m.p}, {m.n}), expected ({thetas.shape[0]}, {Z.shape[0]})")
    pz = Z @ thetas.T
    return pz[m.perms.T, np.arange(m.p)[None, :]]


def quadratic_coeffs(m: Configuration, Z, dirs) -> CellQuadratic:
    Z = as_points(Z)
    thetas = as_directions(dirs)
    if thetas.shape[1] != Z.shape[1]:
        raise ShapeError("directions and support dimensions differ")
    n = Z.shape[0]
    p = thetas.shape[0]
    A = thetas.T @ thetas / p
    A = 0.5 * (A + A.T)
    M = _matched_projections(m, Z, thetas)
    a = (2.0 / (p * n)) * M @ thetas
    b = float(np.einsum("kj,jl,kl->", Z, A, Z) / n)
    return CellQuadratic(A, a, b, m)


def eval_quadratic(q: CellQuadratic, Y) -> float:
    Y = as_points(Y)
    if Y.shape != q.a.shape:
        raise ShapeError(f"Y has shape {Y.shape}, quadratic expects {q.a.shape}")
    val = np.einsum("kj,jl,kl->", Y, q.A, Y) / q.n - np.sum(q.a * Y) + q.b
    return float(val)


def eval_quadratic_direct(m: Configuration, Y, Z, dirs) -> float:
    """(1/(np)) sum_i sum_k (theta_i . (y_k - z_{m_i(k)}))^2, the defining sum."""
    Y, Z = check_pair(Y, Z)
    thetas = as_directions(dirs)
    M = _matched_projections(m, Z, thetas)
    return float(np.mean((Y @ thetas.T - M) ** 2))


def minimize_quadratic(q: CellQuadratic, tau: float = TAU_A) -> np.ndarray:
    """Unique global minimizer y_k* = A^{-1} (n/2) a_k."""
    lam_min = float(np.linalg.eigvalsh(q.A)[0])
    if lam_min <= tau:
        raise SingularDirectionsError(
            f"smallest eigenvalue of A is {lam_min:.3e} <= {tau:.1e}; use more directions than d"
        )
    rhs = 0.5 * q.n * q.a
    return np.linalg.solve(q.A, rhs.T).T


def is_stable_cell(m: Configuration, Z, dirs, config_id: int = 0) -> CellReport:
    """Minimize q_m and check whether the minimizer lies inside the cell of m."""
    Z = as_points(Z)
    q = quadratic_coeffs(m, Z, dirs)
    Ystar = minimize_quadratic(q)
    m_star = configuration_of(Ystar, Z, dirs)
    stable = (not m_star.boundary) and m_star == m
    return CellReport(bool(stable), Ystar, eval_quadratic(q, Ystar), m_star.boundary, config_id)


def cell_reports_to_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["config_id", "stable", "energy_at_min", "boundary_flag"])
    for r in reports:
        writer.writerow([r.config_id, int(r.stable), repr(float(r.energy)), int(r.boundary)])
    return buf.getvalue()


def enumerate_configurations(n: int, p: int):
    """Yield every element of (S_n)^p as a :class:`Configuration` (guarded)."""
    _check_enum(n, p)
    perms = list(itertools.permutations(range(n)))
    for combo in itertools.product(perms, repeat=p):
        yield Configuration(np.asarray(combo, dtype=np.intp))


def _check_enum(n: int, p: int) -> None:
    if math.factorial(n) ** p > ENUM_LIMIT:
        raise InstanceTooLargeError(f"n!^p = {n}!^{p} exceeds the enumeration limit {ENUM_LIMIT}")


def _enumeration_table(Y, Z, dirs):
    # q_m(Y) = const - sum_i L_i[m_i], so the full table over (S_n)^p is an outer sum
    Y, Z = check_pair(Y, Z)
    thetas = as_directions(dirs)
    n = Y.shape[0]
    p = thetas.shape[0]
    _check_enum(n, p)
    perms = np.asarray(list(itertools.permutations(range(n))), dtype=np.intp)
    q0 = quadratic_coeffs(Configuration(np.tile(np.arange(n), (p, 1))), Z, thetas)
    const = float(np.einsum("kj,jl,kl->", Y, q0.A, Y) / n + q0.b)
    py = Y @ thetas.T
    pz = Z @ thetas.T
    # L[i, s] = (2/(pn)) sum_k py[k, i] pz[perm_s(k), i]
    L = (2.0 / (p * n)) * np.einsum("ki,ski->is", py, pz[perms, :])
    total = np.zeros((len(perms),) * p)
    for i in range(p):
        shape = [1] * p
        shape[i] = len(perms)
        total = total + L[i].reshape(shape)
    return const - total, perms


def brute_force_energy(Y, Z, dirs) -> float:
    """min over all configurations m of q_m(Y), by exhaustive enumeration."""
    table, _ = _enumeration_table(Y, Z, dirs)
    return float(np.min(table))


def brute_force_configuration(Y, Z, dirs) -> Configuration:
    """The configuration attaining :func:`brute_force_energy` (first in lexicographic order)."""
    table, perms = _enumeration_table(Y, Z, dirs)
    idx = np.unravel_index(int(np.argmin(table)), table.shape)
    return Configuration(perms[list(idx)])


# -- fixed-point map --------------------------------------------------------


def _psi_parts(Y, Z, p_psi: int, seed):
    Y, Z = check_pair(Y, Z)
    if not is_in_U(Y):
        raise NotInUError("the fixed-point map is only defined for supports with distinct rows")
    if p_psi < 1:
        raise ValueError(f"p_psi must be >= 1, got {p_psi}")
    thetas = sample_sphere(Y.shape[1], p_psi, seed).axes
    sm = slice_matching(Y, Z, thetas)
    return Y, Z, thetas, sm


def psi_estimate(Y, Z, p_psi: int, seed) -> np.ndarray:
    """Monte-Carlo estimate of Psi(Y): row k is (d/p) sum_i theta_i (theta_i . z_{m_i(k)})."""
    Y, _, thetas, sm = _psi_parts(Y, Z, p_psi, seed)
    d = Y.shape[1]
    return (d / p_psi) * sm["matched"] @ thetas


def psi_estimate_with_error(Y, Z, p_psi: int, seed) -> tuple[np.ndarray, float]:
    """Psi estimate plus a Monte-Carlo error scale for ||Y - Psi||_{inf,2}.

    The error is ``max_k sqrt(sum_j Var_j) / sqrt(p_psi)`` computed from the
    per-direction summands.
    """
    Y, _, thetas, sm = _psi_parts(Y, Z, p_psi, seed)
    d = Y.shape[1]
    M = sm["matched"]
    mean = (d / p_psi) * M @ thetas
    second = (d * d / p_psi) * (M**2) @ (thetas**2)
    var = np.maximum(second - mean**2, 0.0)
    err = float(np.max(np.sqrt(var.sum(axis=1))) / np.sqrt(p_psi))
    return mean, err


def psi_s_matrices(Y, Z, p_psi: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Return (S_hat, A_hat) with S_hat[k, l] = (d/p) sum_{i: m_i(k)=l} theta_i theta_i^T."""
    Y, _, thetas, sm = _psi_parts(Y, Z, p_psi, seed)
    n, d = Y.shape
    perms = sm["perms"]  # (p, n)
    onehot = np.zeros((p_psi, n, n))
    onehot[np.arange(p_psi)[:, None], np.arange(n)[None, :], perms] = 1.0
    S = (d / p_psi) * np.einsum("ikl,ia,ib->klab", onehot, thetas, thetas)
    A_hat = thetas.T @ thetas / p_psi
    return S, A_hat


def fixed_point_residual(Y, Z, p_psi: int, seed) -> float:
    """||Y - Psi_hat(Y)||_{inf,2}."""
    return norm_inf2(as_points(Y) - psi_estimate(Y, Z, p_psi, seed))


def required_p_terms(epsilon: float, eta: float, n: int, d: int, cz_bar: float) -> tuple[float, float, float]:
    if not (0.0 < eta < 1.0):
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    if cz_bar <= 0:
        raise ValueError(f"cz_bar must be positive, got {cz_bar}")
    upper = (4.0 / 3.0) * n * cz_bar
    if not (0.0 < epsilon <= upper * (1 + 1e-12)):
        raise ValueError(f"epsilon must lie in (0, {upper}], got {epsilon}")
    t1 = 4096 * d**3 * n * cz_bar**3 * math.log(3 * d * n**2 / eta) / epsilon**3
    t2 = 697 * d**2 * n**2 * cz_bar**2 * math.log(3 * d / eta) / epsilon**2
    t3 = 8 * d**2 * n**2 * cz_bar**2 * math.log(6 * n**2 / eta) / epsilon**2
    return t1, t2, t3


def required_p(epsilon: float, eta: float, n: int, d: int, cz_bar: float) -> int:
    """Number of directions sufficient for the fixed-point approximation guarantee."""
    return int(math.ceil(max(required_p_terms(epsilon, eta, n, d, cz_bar))))


def match_counts(m: Configuration) -> np.ndarray:
    """R[k, l] = #{i : m_i(k) = l} / p; bistochastic."""
    p, n = m.perms.shape
    R = np.zeros((n, n))
    rows = np.broadcast_to(np.arange(n), (p, n))
    np.add.at(R, (rows.ravel(), m.perms.ravel()), 1.0)
    return R / p
