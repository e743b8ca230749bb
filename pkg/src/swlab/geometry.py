"""Point clouds, sphere sampling, projections and the 1D sorted Wasserstein cost.

Conventions used throughout the package:

* a support is an ``(n, d)`` float64 array whose rows are points;
* a direction set is a ``(p, d)`` array of unit rows;
* permutations are 0-based integer arrays.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ShapeError

#: row-distinctness tolerance for membership in the open set of distinct-row supports
TAU_U = 1e-9
#: tolerance on R^T R = I accepted by :func:`rotate`
ORTHO_TOL = 1e-10


def as_points(Y) -> np.ndarray:
    """Return ``Y`` as a 2D float64 array (accepts :class:`Support` or array-like)."""
    if isinstance(Y, Support):
        return Y.points
    arr = np.asarray(Y, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ShapeError(f"a support must be an (n, d) matrix, got shape {arr.shape}")
    return arr


def as_directions(dirs) -> np.ndarray:
    """Return the ``(p, d)`` axes of a :class:`DirectionSet` or array-like."""
    if isinstance(dirs, DirectionSet):
        return dirs.axes
    arr = np.asarray(dirs, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ShapeError(f"directions must be a (p, d) matrix, got shape {arr.shape}")
    return arr


def check_pair(Y, Z) -> tuple[np.ndarray, np.ndarray]:
    Y = as_points(Y)
    Z = as_points(Z)
    if Y.shape != Z.shape:
        raise ShapeError(f"supports must share (n, d): {Y.shape} vs {Z.shape}")
    return Y, Z


def norm_inf2(Y) -> float:
    """max_k ||y_k||_2, the support metric used for Lipschitz and convergence tests."""
    Y = as_points(Y)
    if Y.size == 0:
        return 0.0
    return float(np.max(np.linalg.norm(Y, axis=1)))


@dataclass(frozen=True, eq=False)
class Support:
    """An immutable ``n x d`` point cloud."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ShapeError(f"a support needs shape (n>=1, d>=1), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("support entries must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def is_in_U(self, tol: float = TAU_U) -> bool:
        return is_in_U(self.points, tol)

    def __eq__(self, other):
        if not isinstance(other, Support):
            return NotImplemented
        return self.points.shape == other.points.shape and bool(np.array_equal(self.points, other.points))

    def __hash__(self):
        return hash((self.points.shape, self.points.tobytes()))

    # -- serialization -------------------------------------------------
    def to_json(self) -> str:
        return json.dumps({"n": self.n, "d": self.d, "points": self.points.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "Support":
        obj = json.loads(text)
        pts = np.asarray(obj["points"], dtype=np.float64).reshape(obj["n"], obj["d"])
        return cls(pts)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x{j}" for j in range(self.d)])
        for row in self.points:
            writer.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Support":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if [h.strip() for h in header] != [f"x{j}" for j in range(len(header))]:
            raise ValueError(f"unexpected CSV header {header!r}")
        rows = [[float(v) for v in row] for row in reader if row]
        return cls(np.asarray(rows, dtype=np.float64).reshape(len(rows), len(header)))

    def save(self, path) -> None:
        path = Path(path)
        text = self.to_json() if path.suffix == ".json" else self.to_csv()
        path.write_text(text)

    @classmethod
    def load(cls, path) -> "Support":
        path = Path(path)
        text = path.read_text()
        return cls.from_json(text) if path.suffix == ".json" else cls.from_csv(text)


def is_in_U(Y, tol: float = TAU_U) -> bool:
    """True when all rows of ``Y`` are pairwise distinct (Euclidean distance > tol)."""
    Y = as_points(Y)
    n = Y.shape[0]
    if n < 2:
        return True
    diff = Y[:, None, :] - Y[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    iu = np.triu_indices(n, k=1)
    return bool(np.min(dist[iu]) > tol)


@dataclass(frozen=True, eq=False)
class DirectionSet:
    """``p`` unit axes of R^d, reproducible from ``(seed, p, d)``."""

    axes: np.ndarray
    seed: int | None = None
    _frozen: bool = field(default=True, repr=False)

    def __post_init__(self):
        axes = np.array(self.axes, dtype=np.float64, copy=True)
        if axes.ndim != 2:
            raise ShapeError(f"axes must be (p, d), got {axes.shape}")
        axes.setflags(write=False)
        object.__setattr__(self, "axes", axes)

    @property
    def p(self) -> int:
        return self.axes.shape[0]

    @property
    def d(self) -> int:
        return self.axes.shape[1]

    def second_moment(self) -> np.ndarray:
        """A = (1/p) sum_i theta_i theta_i^T."""
        return self.axes.T @ self.axes / self.p


def sample_sphere(d: int, p: int, seed) -> DirectionSet:
    """Draw ``p`` i.i.d. uniform directions on S^{d-1} by normalizing Gaussians."""
    if d < 1 or p < 1:
        raise ValueError(f"need d >= 1 and p >= 1, got d={d}, p={p}")
    rng = np.random.default_rng(seed)
    return DirectionSet(_normalized_gaussians(rng, p, d), seed=seed)


def _normalized_gaussians(rng: np.random.Generator, p: int, d: int) -> np.ndarray:
    G = rng.standard_normal((p, d))
    norms = np.linalg.norm(G, axis=1)
    bad = norms == 0.0
    while np.any(bad):  # probability ~0, but keep the draw well defined
        G[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(G, axis=1)
        bad = norms == 0.0
    return G / norms[:, None]


def project(Y, theta) -> np.ndarray:
    """Inner products of the rows of ``Y`` with ``theta``."""
    Y = as_points(Y)
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1 or theta.shape[0] != Y.shape[1]:
        raise ShapeError(f"theta has shape {theta.shape}, expected ({Y.shape[1]},)")
    return Y @ theta


def sort_permutation(values) -> np.ndarray:
    """Stable ascending argsort: ``values[order]`` is non-decreasing, ties by index."""
    return np.argsort(np.asarray(values, dtype=np.float64), kind="stable")


def w2_1d_uniform(a, b) -> float:
    """Squared 2-Wasserstein distance between two uniform n-point measures on R."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    diff = a[sort_permutation(a)] - b[sort_permutation(b)]
    return float(np.mean(diff**2))


def w_theta(Y, Z, theta) -> float:
    """Slice loss: W_2^2 between the theta-projections of the uniform measures on Y and Z."""
    Y, Z = check_pair(Y, Z)
    return w2_1d_uniform(project(Y, theta), project(Z, theta))


def rotate(Y, R) -> np.ndarray:
    """Apply the orthogonal matrix ``R`` to every row of ``Y``."""
    Y = as_points(Y)
    R = np.asarray(R, dtype=np.float64)
    d = Y.shape[1]
    if R.shape != (d, d):
        raise ShapeError(f"R must be ({d}, {d}), got {R.shape}")
    if np.max(np.abs(R.T @ R - np.eye(d))) > ORTHO_TOL:
        raise ValueError("R is not orthogonal")
    return Y @ R.T


def slice_matching(Y, Z, thetas):
    """Vectorized slice-wise sorting shared by the energy, cell and solver code.

    Returns a dict with

    ``proj_y``   (n, p) projections of Y,
    ``matched``  (n, p) with ``matched[k, i] = theta_i . z_{m_i(k)}``,
    ``perms``    (p, n) matchings ``m_i = sigma_Z o sigma_Y^{-1}`` (0-based),
    ``min_gap``  (p,) smallest gap between consecutive sorted projections of Y.
    """
    Y, Z = check_pair(Y, Z)
    thetas = as_directions(thetas)
    if thetas.shape[1] != Y.shape[1]:
        raise ShapeError(f"directions live in R^{thetas.shape[1]}, supports in R^{Y.shape[1]}")
    n = Y.shape[0]
    p = thetas.shape[0]
    py = Y @ thetas.T
    pz = Z @ thetas.T
    sy = np.argsort(py, axis=0, kind="stable")
    sz = np.argsort(pz, axis=0, kind="stable")
    cols = np.arange(p)[None, :]
    matched = np.empty_like(py)
    matched[sy, cols] = pz[sz, cols]
    perms = np.empty((n, p), dtype=np.intp)
    perms[sy, cols] = sz
    if n > 1:
        sorted_y = py[sy, cols]
        min_gap = np.min(np.diff(sorted_y, axis=0), axis=0)
    else:
        min_gap = np.full(p, np.inf)
    return {"proj_y": py, "matched": matched, "perms": perms.T.copy(), "min_gap": min_gap}
