"""Exact discrete optimal transport references.

``assignment_w2`` handles uniform n-point measures through a linear
assignment solver. ``kantorovich_exact`` solves small general-weight problems
with a transportation network simplex and always returns dual potentials so
that optimality can be certified.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import InstanceTooLargeError, ShapeError
from .geometry import check_pair

#: largest n*m accepted by the general-weight solver
KANTOROVICH_LIMIT = 400
SIMPLEX_TOL = 1e-12
#: primal-dual gap and dual infeasibility accepted as a certificate of optimality
CERTIFICATE_TOL = 1e-8


def sq_distance_matrix(Y, Z) -> np.ndarray:
    """C[k, l] = ||y_k - z_l||^2."""
    diff = Y[:, None, :] - Z[None, :, :]
    return np.einsum("kld,kld->kl", diff, diff)


def assignment_w2(Y, Z) -> tuple[float, np.ndarray]:
    """W_2^2 between uniform measures on the rows of Y and Z, and the optimal matching."""
    Y, Z = check_pair(Y, Z)
    C = sq_distance_matrix(Y, Z)
    rows, cols = linear_sum_assignment(C)
    perm = np.empty(Y.shape[0], dtype=np.intp)
    perm[rows] = cols
    cost = float(np.mean(C[np.arange(Y.shape[0]), perm]))
    return cost, perm


def w2_over_d(Y, Z) -> float:
    """Normalised error (1/d) W_2^2 used as the experiment metric."""
    Y, Z = check_pair(Y, Z)
    return assignment_w2(Y, Z)[0] / Y.shape[1]


@dataclass(frozen=True)
class KantorovichResult:
    cost: float
    plan: np.ndarray
    dual_f: np.ndarray
    dual_g: np.ndarray
    gap: float
    max_dual_violation: float
    pivots: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "cost": self.cost,
                "plan": self.plan.tolist(),
                "dual_f": self.dual_f.tolist(),
                "dual_g": self.dual_g.tolist(),
            }
        )


def validate_weights(w, name: str = "weights", strict: bool = False) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64).ravel()
    if w.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError(f"{name} must be finite and non-negative")
    if strict and np.any(w <= 0):
        raise ValueError(f"{name} must be strictly positive")
    if abs(w.sum() - 1.0) > 1e-12:
        raise ValueError(f"{name} must sum to 1 (sum = {w.sum()!r})")
    return w


def _northwest_corner(alpha, beta):
    n, m = len(alpha), len(beta)
    s = alpha.copy()
    t = beta.copy()
    basis = []
    flow = np.zeros((n, m))
    i = j = 0
    while True:
        x = min(s[i], t[j])
        flow[i, j] = x
        basis.append((i, j))
        s[i] -= x
        t[j] -= x
        if i == n - 1 and j == m - 1:
            break
        if i == n - 1:
            j += 1
        elif j == m - 1:
            i += 1
        elif s[i] <= t[j]:
            i += 1
        else:
            j += 1
    return basis, np.maximum(flow, 0.0)


def _potentials(basis, C, n, m):
    # u_i + v_j = C_ij on the basis tree; nodes 0..n-1 are rows, n..n+m-1 columns
    adj = [[] for _ in range(n + m)]
    for i, j in basis:
        adj[i].append(n + j)
        adj[n + j].append(i)
    u = np.zeros(n)
    v = np.zeros(m)
    seen = np.zeros(n + m, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        a = queue.popleft()
        for b in adj[a]:
            if seen[b]:
                continue
            seen[b] = True
            if a < n:
                v[b - n] = C[a, b - n] - u[a]
            else:
                u[b] = C[b, a - n] - v[a - n]
            queue.append(b)
    return u, v, adj


def _tree_path(adj, src, dst):
    parent = {src: None}
    queue = deque([src])
    while queue:
        a = queue.popleft()
        if a == dst:
            break
        for b in adj[a]:
            if b not in parent:
                parent[b] = a
                queue.append(b)
    path = [dst]
    while path[-1] != src:
        path.append(parent[path[-1]])
    return path[::-1]


def kantorovich_exact(alpha, beta, C, max_pivots: int = 100_000) -> KantorovichResult:
    """Exact discrete Kantorovich problem min <C, pi> over plans with marginals alpha, beta.

    Transportation simplex on the bipartite basis tree. The entering cell is
    the most negative reduced cost; after a run of degenerate pivots the rule
    switches to the first negative reduced cost in index order to rule out
    cycling.
    """
    alpha = validate_weights(alpha, "alpha")
    beta = validate_weights(beta, "beta")
    C = np.asarray(C, dtype=np.float64)
    n, m = alpha.size, beta.size
    if C.shape != (n, m):
        raise ShapeError(f"C has shape {C.shape}, expected ({n}, {m})")
    if n * m > KANTOROVICH_LIMIT:
        raise InstanceTooLargeError(f"n*m = {n * m} exceeds {KANTOROVICH_LIMIT}")
    if not np.all(np.isfinite(C)) or np.any(C < 0):
        raise ValueError("C must be finite and non-negative")

    basis, flow = _northwest_corner(alpha, beta)
    in_basis = np.zeros((n, m), dtype=bool)
    for cell in basis:
        in_basis[cell] = True
    scale = max(1.0, float(np.max(C)))
    degenerate_run = 0
    pivots = 0
    while True:
        u, v, adj = _potentials(basis, C, n, m)
        red = C - u[:, None] - v[None, :]
        red[in_basis] = 0.0
        if red.min() >= -SIMPLEX_TOL * scale:
            break
        if pivots >= max_pivots:
            raise RuntimeError("network simplex did not terminate within the pivot budget")
        if degenerate_run > n + m:
            neg = np.argwhere(red < -SIMPLEX_TOL * scale)
            ei, ej = (int(x) for x in neg[0])
        else:
            ei, ej = (int(x) for x in np.unravel_index(int(np.argmin(red)), red.shape))
        # cycle: entering cell (+), then tree path row ei -> ... -> column ej alternating (-, +, ...)
        path = _tree_path(adj, ei, n + ej)
        cells = []
        for a, b in zip(path[:-1], path[1:]):
            cells.append((a, b - n) if a < n else (b, a - n))
        minus = cells[0::2]
        plus = cells[1::2]
        theta = min(flow[c] for c in minus)
        leaving = min((c for c in minus if flow[c] <= theta), key=lambda c: (flow[c], c))
        for c in minus:
            flow[c] -= theta
        for c in plus:
            flow[c] += theta
        flow[ei, ej] += theta
        flow[leaving] = 0.0
        in_basis[leaving] = False
        in_basis[ei, ej] = True
        basis.remove(leaving)
        basis.append((ei, ej))
        degenerate_run = degenerate_run + 1 if theta <= 0.0 else 0
        pivots += 1

    flow = np.maximum(flow, 0.0)
    cost = float(np.sum(C * flow))
    dual = float(u @ alpha + v @ beta)
    violation = float(max(0.0, np.max(u[:, None] + v[None, :] - C)))
    return KantorovichResult(cost, flow, u, v, abs(cost - dual), violation, pivots)


def stability_gap(alpha, beta, C, alpha2, beta2, C2) -> tuple[float, float, float]:
    """Both sides of the perturbation bound for the Kantorovich cost.

    Returns ``(lhs, rhs_inf, rhs_fro)`` with lhs = |W(alpha, beta; C) - W(alpha2, beta2; C2)|.
    """
    alpha = validate_weights(alpha, "alpha", strict=True)
    beta = validate_weights(beta, "beta", strict=True)
    alpha2 = validate_weights(alpha2, "alpha2", strict=True)
    beta2 = validate_weights(beta2, "beta2", strict=True)
    C = np.asarray(C, dtype=np.float64)
    C2 = np.asarray(C2, dtype=np.float64)
    if C.shape != C2.shape:
        raise ShapeError(f"cost shapes differ: {C.shape} vs {C2.shape}")
    r1 = kantorovich_exact(alpha, beta, C)
    r2 = kantorovich_exact(alpha2, beta2, C2)
    for r in (r1, r2):
        if r.gap > CERTIFICATE_TOL or r.max_dual_violation > CERTIFICATE_TOL:
            raise RuntimeError(f"optimality certificate failed (gap {r.gap:.2e}, violation {r.max_dual_violation:.2e})")
    lhs = abs(r1.cost - r2.cost)
    rhs_inf = float(
        np.max(np.abs(C - C2)) + np.max(np.abs(C)) * (np.sum(np.abs(alpha - alpha2)) + np.sum(np.abs(beta - beta2)))
    )
    rhs_fro = float(
        np.linalg.norm(C - C2) + np.linalg.norm(C) * (np.linalg.norm(alpha - alpha2) + np.linalg.norm(beta - beta2))
    )
    return float(lhs), rhs_inf, rhs_fro
