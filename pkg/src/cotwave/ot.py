"""Exact optimal transport between equal-size point clouds, and the Gaussian oracle.

Equal-weight clouds of the same size have an optimal plan that is a
permutation, so the transport value is a linear assignment problem.  The
solver is a shortest-augmenting-path method with row/column potentials
(Jonker-Volgenant style), O(N^3); the potentials double as an optimality
certificate.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numba import njit

from .errors import ArgumentError

CERTIFICATE_TOL = 1e-9
PSD_TOL = 1e-10
# clouds above this size use the sparse solver for quadratic cost
DENSE_LIMIT = 500


@dataclass(frozen=True)
class CostSpec:
    """Ground cost between outcome points.

    ``kind="squared_euclidean"`` is ``||y0 - y1||^2``.  ``kind="custom"``
    calls ``custom_fn(a, b)`` which must return the ``(len(a), len(b))``
    cost matrix.
    """

    kind: str = "squared_euclidean"
    custom_fn: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.kind not in ("squared_euclidean", "custom"):
            raise ArgumentError(f"unknown cost kind {self.kind!r}")
        if self.kind == "custom" and self.custom_fn is None:
            raise ArgumentError("custom cost needs custom_fn")

    @property
    def is_quadratic(self) -> bool:
        return self.kind == "squared_euclidean"

    def matrix(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.kind == "squared_euclidean":
            diff = a[:, None, :] - b[None, :, :]
            return np.einsum("ijk,ijk->ij", diff, diff)
        return np.asarray(self.custom_fn(a, b), dtype=float)

    def describe(self) -> str:
        return self.kind if self.kind != "custom" else f"custom:{getattr(self.custom_fn, '__name__', 'fn')}"


@dataclass(frozen=True, eq=False)
class TransportResult:
    """Optimal matching of rows to columns with its dual certificate."""

    value: float
    assignment: np.ndarray
    row_potentials: np.ndarray
    col_potentials: np.ndarray
    total_cost: float
    min_reduced_cost: float

    @property
    def certified(self) -> bool:
        return self.min_reduced_cost >= -CERTIFICATE_TOL


@njit(cache=True, nogil=True)
def _shortest_augmenting_path(cost):
    n = cost.shape[0]
    u = np.zeros(n)
    v = np.zeros(n)
    col4row = np.full(n, -1, dtype=np.int64)
    row4col = np.full(n, -1, dtype=np.int64)
    path = np.full(n, -1, dtype=np.int64)
    dist = np.empty(n)
    remaining = np.empty(n, dtype=np.int64)
    scanned_rows = np.zeros(n, dtype=np.bool_)
    scanned_cols = np.zeros(n, dtype=np.bool_)
    # column reduction: v_j = min_i c_ij is dual feasible with u = 0, and every
    # column's argmin row can take it greedily if that row is still free
    for j in range(n):
        best = 0
        for r in range(1, n):
            if cost[r, j] < cost[best, j]:
                best = r
        v[j] = cost[best, j]
        if col4row[best] == -1:
            col4row[best] = j
            row4col[j] = best
    for cur in range(n):
        if col4row[cur] != -1:
            continue
        # Dijkstra on reduced costs from row `cur` until a free column is reached
        for j in range(n):
            remaining[j] = n - 1 - j
            dist[j] = np.inf
            scanned_rows[j] = False
            scanned_cols[j] = False
        n_remaining = n
        min_val = 0.0
        i = cur
        sink = -1
        while sink == -1:
            scanned_rows[i] = True
            best = -1
            lowest = np.inf
            ui = u[i]
            for it in range(n_remaining):
                j = remaining[it]
                r = min_val + cost[i, j] - ui - v[j]
                if r < dist[j]:
                    path[j] = i
                    dist[j] = r
                # prefer free columns on ties so paths end early
                if dist[j] < lowest or (dist[j] == lowest and row4col[j] == -1):
                    lowest = dist[j]
                    best = it
            min_val = lowest
            if min_val == np.inf:
                return col4row, u, v
            j = remaining[best]
            if row4col[j] == -1:
                sink = j
            else:
                i = row4col[j]
            scanned_cols[j] = True
            n_remaining -= 1
            remaining[best] = remaining[n_remaining]
        # dual update keeps reduced costs nonnegative and tight on the matching
        u[cur] += min_val
        for r in range(n):
            if scanned_rows[r] and r != cur:
                u[r] += min_val - dist[col4row[r]]
        for j in range(n):
            if scanned_cols[j]:
                v[j] -= min_val - dist[j]
        j = sink
        while True:
            r = path[j]
            row4col[j] = r
            prev = col4row[r]
            col4row[r] = j
            j = prev
            if r == cur:
                break
    return col4row, u, v


def solve_assignment(cost_matrix, certify: bool = True) -> TransportResult:
    """Minimum-cost perfect matching of an ``N x N`` cost matrix.

    ``value`` is the average matched cost (total / N).  With ``certify`` the
    smallest reduced cost ``c_ij - u_i - v_j`` is computed from the returned
    potentials; it is ``>= -1e-9`` for an optimal solution.
    """
    C = np.ascontiguousarray(cost_matrix, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape[0] == 0:
        raise ArgumentError(f"cost matrix must be square and nonempty, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise ArgumentError("cost matrix has non-finite entries")
    n = C.shape[0]
    assignment, u, v = _shortest_augmenting_path(C)
    total = float(C[np.arange(n), assignment].sum())
    min_reduced = float(np.min(C - u[:, None] - v[None, :])) if certify else float("nan")
    return TransportResult(total / n, assignment, u, v, total, min_reduced)


# -- large clouds: sparse candidate graph plus an all-pairs dual check ------------

@njit(cache=True, nogil=True)
def _sq_dist(a, b, i, j):
    acc = 0.0
    for k in range(a.shape[1]):
        d = a[i, k] - b[j, k]
        acc += d * d
    return acc


@njit(cache=True, nogil=True)
def _heap_push(keys, vals, size, key, val):
    pos = size
    while pos > 0:
        parent = (pos - 1) >> 1
        if keys[parent] <= key:
            break
        keys[pos] = keys[parent]
        vals[pos] = vals[parent]
        pos = parent
    keys[pos] = key
    vals[pos] = val
    return size + 1


@njit(cache=True, nogil=True)
def _heap_pop(keys, vals, size):
    top_key = keys[0]
    top_val = vals[0]
    size -= 1
    key = keys[size]
    val = vals[size]
    pos = 0
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        if child + 1 < size and keys[child + 1] < keys[child]:
            child += 1
        if keys[child] >= key:
            break
        keys[pos] = keys[child]
        vals[pos] = vals[child]
        pos = child
    if size > 0:
        keys[pos] = key
        vals[pos] = val
    return top_key, top_val, size


@njit(cache=True, nogil=True)
def _sparse_augment(indptr, indices, cost, u, v, col4row, row4col):
    """Shortest augmenting paths (Dijkstra with a heap) for every free row.

    Requires ``cost[e] - u[i] - v[j] >= 0`` on every edge and zero on matched
    edges; both are preserved.  Returns False when some row cannot be matched
    within the edge set.
    """
    n = u.size
    dist = np.full(n, np.inf)
    pred = np.full(n, -1, dtype=np.int64)
    final = np.zeros(n, dtype=np.bool_)
    touched = np.empty(n, dtype=np.int64)
    rows = np.empty(n, dtype=np.int64)
    cap = indices.size + 1
    keys = np.empty(cap)
    vals = np.empty(cap, dtype=np.int64)
    for cur in range(n):
        if col4row[cur] != -1:
            continue
        n_touched = 0
        n_rows = 0
        size = 0
        i = cur
        base = 0.0
        sink = -1
        min_val = 0.0
        while True:
            rows[n_rows] = i
            n_rows += 1
            ui = u[i]
            for e in range(indptr[i], indptr[i + 1]):
                j = indices[e]
                if final[j]:
                    continue
                nd = base + cost[e] - ui - v[j]
                if nd < dist[j]:
                    if dist[j] == np.inf:
                        touched[n_touched] = j
                        n_touched += 1
                    dist[j] = nd
                    pred[j] = i
                    size = _heap_push(keys, vals, size, nd, j)
            j = -1
            while size > 0:
                d, jj, size = _heap_pop(keys, vals, size)
                if not final[jj] and d <= dist[jj]:
                    j = jj
                    break
            if j == -1:
                return False
            final[j] = True
            if row4col[j] == -1:
                sink = j
                min_val = dist[j]
                break
            i = row4col[j]
            base = dist[j]
        u[cur] += min_val
        for k in range(1, n_rows):
            r = rows[k]
            u[r] += min_val - dist[col4row[r]]
        for k in range(n_touched):
            j = touched[k]
            if final[j]:
                v[j] -= min_val - dist[j]
        j = sink
        while True:
            r = pred[j]
            row4col[j] = r
            prev = col4row[r]
            col4row[r] = j
            j = prev
            if r == cur:
                break
        for k in range(n_touched):
            j = touched[k]
            dist[j] = np.inf
            final[j] = False
            pred[j] = -1
    return True


@njit(cache=True, nogil=True)
def _row_reduction(indptr, indices, cost, u, v, col4row, row4col, max_steps):
    """Auction-style pre-matching: each free row takes its cheapest column and
    lowers that column's price by the gap to its second choice.

    Duals stay feasible and matched edges tight on the edge set; rows left
    free get ``u_i = min_e (cost - v)``.
    """
    n = u.size
    queue = np.empty(n + max_steps + 1, dtype=np.int64)
    head = 0
    tail = 0
    for i in range(n):
        if col4row[i] == -1:
            queue[tail] = i
            tail += 1
    steps = 0
    while head < tail and steps < max_steps:
        i = queue[head]
        head += 1
        steps += 1
        r1 = np.inf
        r2 = np.inf
        j1 = -1
        j2 = -1
        for e in range(indptr[i], indptr[i + 1]):
            r = cost[e] - v[indices[e]]
            if r < r2:
                if r < r1:
                    r2, j2 = r1, j1
                    r1, j1 = r, indices[e]
                else:
                    r2, j2 = r, indices[e]
        if j1 == -1:
            continue
        i0 = row4col[j1]
        if r1 < r2:
            v[j1] -= r2 - r1
            u[i] = r2
        else:
            u[i] = r1
            if i0 != -1 and j2 != -1:
                j1 = j2
                i0 = row4col[j2]
        if r2 == np.inf:
            u[i] = r1
        col4row[i] = j1
        row4col[j1] = i
        if i0 != -1:
            col4row[i0] = -1
            if r1 < r2 and head > 0:
                head -= 1
                queue[head] = i0
            else:
                queue[tail] = i0
                tail += 1
    for i in range(n):
        if col4row[i] == -1:
            best = np.inf
            for e in range(indptr[i], indptr[i + 1]):
                r = cost[e] - v[indices[e]]
                if r < best:
                    best = r
            u[i] = best


@njit(cache=True)
def _build_kdtree(points, weight, leaf_size):
    """Median-split tree over ``points``; each node keeps its box and smallest ``weight``."""
    n, d = points.shape
    cap = 2 * (n // max(leaf_size, 1) + 1) * 2 + 1
    perm = np.arange(n)
    lo = np.empty((cap, d))
    hi = np.empty((cap, d))
    wmin = np.empty(cap)
    start = np.empty(cap, dtype=np.int64)
    stop = np.empty(cap, dtype=np.int64)
    child = np.full(cap, -1, dtype=np.int64)
    start[0] = 0
    stop[0] = n
    count = 1
    stack = np.empty(cap, dtype=np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        s, t = start[node], stop[node]
        idx = perm[s:t]
        wmin[node] = np.inf
        for k in range(d):
            lo[node, k] = np.inf
            hi[node, k] = -np.inf
        for q in range(t - s):
            p = idx[q]
            if weight[p] < wmin[node]:
                wmin[node] = weight[p]
            for k in range(d):
                x = points[p, k]
                if x < lo[node, k]:
                    lo[node, k] = x
                if x > hi[node, k]:
                    hi[node, k] = x
        if t - s <= leaf_size:
            continue
        axis = 0
        for k in range(1, d):
            if hi[node, k] - lo[node, k] > hi[node, axis] - lo[node, axis]:
                axis = k
        order = np.argsort(points[idx, axis])
        perm[s:t] = idx[order]
        mid = s + (t - s) // 2
        child[node] = count
        start[count], stop[count] = s, mid
        start[count + 1], stop[count + 1] = mid, t
        stack[top] = count
        stack[top + 1] = count + 1
        top += 2
        count += 2
    return perm, lo[:count], hi[:count], wmin[:count], start[:count], stop[:count], child[:count]


@njit(cache=True)
def _tree_violations(a, b, u, v, queries, offsets, tree, tol, per_row):
    """Branch and bound over the tree for pairs with reduced cost below ``-tol``.

    The reduced cost of row ``i`` at a tree point ``p`` is bounded below by
    ``|queries_i - box|^2 + min weight + offsets_i``; subtrees whose bound
    clears ``-tol / 2`` are skipped.
    """
    perm, lo, hi, wmin, start, stop, child = tree
    n, d = queries.shape
    found = np.full((n, per_row), -1, dtype=np.int64)
    worst = 0.0
    stack = np.empty(lo.shape[0], dtype=np.int64)
    for i in range(n):
        count = 0
        top = 1
        stack[0] = 0
        while top > 0 and count < per_row:
            top -= 1
            node = stack[top]
            bound = wmin[node] + offsets[i]
            for k in range(d):
                x = queries[i, k]
                if x < lo[node, k]:
                    bound += (lo[node, k] - x) ** 2
                elif x > hi[node, k]:
                    bound += (x - hi[node, k]) ** 2
            if bound >= -0.5 * tol:
                continue
            c = child[node]
            if c != -1:
                stack[top] = c
                stack[top + 1] = c + 1
                top += 2
                continue
            for q in range(start[node], stop[node]):
                j = perm[q]
                r = _sq_dist(a, b, i, j) - u[i] - v[j]
                if r < worst:
                    worst = r
                if r < -tol and count < per_row:
                    found[i, count] = j
                    count += 1
    return worst, found


def _certify(a, b, u, v, tol, per_row, affine):
    """Smallest reduced cost (capped at 0) and up to ``per_row`` violating columns per row.

    With ``(pu, pv)`` the affine potentials, the reduced cost splits exactly as
    ``|W b_j - W T(a_i)|^2 + e_j + (pu_i - u_i)`` with ``W = A^{-1/2}`` and
    ``e_j = pv_j - v_j``.  The residual ``e`` is small and smooth, which keeps
    the tree bound tight.
    """
    m0, m1, A = affine
    pu, pv = _affine_potentials(a, b, m0, m1, A)
    W = np.linalg.inv(_psd_sqrt(A, "map"))
    tree = _build_kdtree(np.ascontiguousarray(b @ W), pv - v, 16)
    queries = np.ascontiguousarray((m1 + (a - m0) @ A) @ W)
    return _tree_violations(a, b, u, v, queries, pu - u, tree, tol, per_row)


def _affine_map(a: np.ndarray, b: np.ndarray):
    """Gaussian transport map ``x -> m1 + A (x - m0)`` between the clouds' first two moments."""
    m0, m1 = a.mean(axis=0), b.mean(axis=0)
    d = a.shape[1]
    S0 = np.cov(a, rowvar=False).reshape(d, d) + 1e-12 * np.eye(d)
    S1 = np.cov(b, rowvar=False).reshape(d, d) + 1e-12 * np.eye(d)
    r0 = _psd_sqrt(S0, "S0")
    r0_inv = np.linalg.inv(r0)
    A = r0_inv @ _psd_sqrt((r0 @ S1 @ r0 + (r0 @ S1 @ r0).T) / 2, "cross term") @ r0_inv
    return m0, m1, (A + A.T) / 2


def _affine_potentials(a, b, m0, m1, A):
    """Dual potentials ``|x|^2 - 2 phi(x)`` and ``|y|^2 - 2 phi*(y)`` of the affine map.

    ``phi`` is the convex quadratic with gradient equal to the map, so the pair
    is feasible for every (x, y) and tight along the map.
    """
    da = a - m0
    db = b - m1
    phi = 0.5 * np.einsum("ij,jk,ik->i", da, A, da) + da @ m1
    phi_star = b @ m0 + 0.5 * np.einsum("ij,ij->i", db, np.linalg.solve(A, db.T).T)
    return np.einsum("ij,ij->i", a, a) - 2.0 * phi, np.einsum("ij,ij->i", b, b) - 2.0 * phi_star


def _edge_costs(a, b, indptr, indices):
    rows = np.repeat(np.arange(a.shape[0]), np.diff(indptr))
    diff = a[rows] - b[indices]
    return np.einsum("ij,ij->i", diff, diff)


def _build_csr(n: int, pairs_i: np.ndarray, pairs_j: np.ndarray):
    key = np.unique(pairs_i.astype(np.int64) * n + pairs_j.astype(np.int64))
    rows, cols = np.divmod(key, n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    return np.cumsum(indptr), cols.astype(np.int64)


class _CandidateSolve:
    """Assignment on a growing candidate edge set with feasible duals ``(u, v)``."""

    def __init__(self, a, b, pairs_i, pairs_j, v):
        n = a.shape[0]
        self.a, self.b, self.n = a, b, n
        self.v = v
        self.u = np.full(n, np.inf)
        self.col4row = np.full(n, -1, dtype=np.int64)
        self.row4col = np.full(n, -1, dtype=np.int64)
        self.pairs = (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
        self.add_edges(pairs_i, pairs_j)
        rows, cols, cost = self.pairs[0], self.pairs[1], self.cost
        tight = np.flatnonzero(cost - self.u[rows] - v[cols] == 0.0)
        for e in tight:
            i, j = rows[e], cols[e]
            if self.col4row[i] == -1 and self.row4col[j] == -1:
                self.col4row[i] = j
                self.row4col[j] = i
        _row_reduction(self.indptr, cols, cost, self.u, v, self.col4row, self.row4col, 4 * n)

    def add_edges(self, extra_i, extra_j):
        """Join new edges; ``u`` drops on touched rows to stay feasible and a
        matched edge that stops being tight is released."""
        a, b, n, u, v = self.a, self.b, self.n, self.u, self.v
        self.indptr, cols = _build_csr(
            n, np.concatenate([self.pairs[0], extra_i]), np.concatenate([self.pairs[1], extra_j])
        )
        rows = np.repeat(np.arange(n), np.diff(self.indptr))
        self.pairs = (rows, cols)
        self.cost = _edge_costs(a, b, self.indptr, cols)
        reduced_min = np.full(n, np.inf)
        np.minimum.at(reduced_min, rows, self.cost - v[cols])
        touched = np.unique(extra_i)
        u[touched] = np.minimum(u[touched], reduced_min[touched])
        for i in touched:
            j = self.col4row[i]
            if j != -1 and _sq_dist(a, b, i, j) - u[i] - v[j] > 0.0:
                self.col4row[i] = -1
                self.row4col[j] = -1

    def augment(self):
        args = (self.indptr, self.pairs[1], self.cost, self.u, self.v, self.col4row, self.row4col)
        if not _sparse_augment(*args):
            raise RuntimeError("candidate graph lost its perfect matching")


def _rank_pairing(x, y):
    """Pairing by rank along the principal axis of both clouds: a perfect matching."""
    d = x.shape[1]
    axis = np.linalg.eigh(np.cov(np.vstack([x, y]), rowvar=False).reshape(d, d))[1][:, -1]
    ranked = np.empty(x.shape[0], dtype=np.int64)
    ranked[np.argsort(x @ axis, kind="stable")] = np.argsort(y @ axis, kind="stable")
    return ranked


def sparse_w2sq(a, b, k: int = 32, max_rounds: int = 50) -> TransportResult:
    """Exact quadratic transport between two large equal-size clouds.

    The assignment is solved by shortest augmenting paths on a candidate
    graph of ``k`` nearest neighbours around a moment-matched affine map,
    warm-started from that map's dual potentials; a rank pairing in the
    graph guarantees a perfect matching.  A branch-and-bound pass over all
    pairs then checks every reduced cost; violating pairs join the graph and
    the solve is repaired until the check passes, so the result is optimal
    up to ``CERTIFICATE_TOL`` per pair.  Memory is O(n k).
    """
    from scipy.spatial import cKDTree

    a = np.ascontiguousarray(_as_cloud(a))
    b = np.ascontiguousarray(_as_cloud(b))
    if a.shape != b.shape:
        raise ArgumentError(f"clouds must have equal size and dimension, got {a.shape} and {b.shape}")
    n, d = a.shape
    k = int(min(max(k, 1), n))
    m0, m1, A = _affine_map(a, b)
    if np.linalg.cond(A) > 1e8:
        # near-degenerate moments: fall back to the identity map
        m0, m1, A = np.zeros(d), np.zeros(d), np.eye(d)
    affine = (m0, m1, A)
    guess = m1 + (a - m0) @ A.T
    rows = np.arange(n)
    # k columns per row and k rows per column, so no column lacks edges
    _, fwd = cKDTree(b).query(guess, k=k)
    _, bwd = cKDTree(guess).query(b, k=k)
    solve = _CandidateSolve(
        a, b,
        np.concatenate([rows, np.repeat(rows, k), np.asarray(bwd).ravel()]),
        np.concatenate([_rank_pairing(guess, b), np.asarray(fwd).ravel(), np.repeat(rows, k)]),
        _affine_potentials(a, b, m0, m1, A)[1],
    )
    for _ in range(max_rounds):
        solve.augment()
        worst, found = _certify(a, b, solve.u, solve.v, CERTIFICATE_TOL, 32, affine)
        if worst >= -CERTIFICATE_TOL:
            match = solve.col4row
            total = float(np.sum(np.einsum("ij,ij->i", a - b[match], a - b[match])))
            return TransportResult(total / n, match.copy(), solve.u, solve.v, total, float(worst))
        extra_i, slot = np.nonzero(found >= 0)
        solve.add_edges(extra_i, found[extra_i, slot])
    raise ArgumentError(f"sparse transport did not certify within {max_rounds} rounds")


def _as_cloud(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a



def empirical_w2sq(a, b, cost: CostSpec = CostSpec(), method: str = "auto") -> float:
    """Optimal average cost between two equal-size, equal-weight clouds.

    ``method="dense"`` builds the full cost matrix; ``"sparse"`` uses
    :func:`sparse_w2sq` (quadratic cost only).  ``"auto"`` switches to the
    sparse path above ``DENSE_LIMIT`` points.
    """
    a = _as_cloud(a)
    b = _as_cloud(b)
    if a.shape != b.shape:
        raise ArgumentError(f"clouds must have equal size and dimension, got {a.shape} and {b.shape}")
    if method not in ("auto", "dense", "sparse"):
        raise ArgumentError(f"unknown method {method!r}")
    if method == "auto":
        method = "sparse" if cost.is_quadratic and a.shape[0] > DENSE_LIMIT else "dense"
    if method == "sparse":
        if not cost.is_quadratic:
            raise ArgumentError("the sparse solver supports the squared Euclidean cost only")
        return sparse_w2sq(a, b).value
    return solve_assignment(cost.matrix(a, b), certify=False).value


def sorted_w2sq_1d(a, b) -> float:
    """Quadratic transport value of two equal-size 1D clouds by monotone matching."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.shape != b.shape:
        raise ArgumentError("clouds must have equal size")
    return float(np.mean((a - b) ** 2))


def _check_cov(S: np.ndarray, name: str) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.shape[-1] != S.shape[-2]:
        raise ArgumentError(f"{name} must be square")
    scale = max(1.0, float(np.max(np.abs(S))))
    if np.max(np.abs(S - np.swapaxes(S, -1, -2))) > 1e-10 * scale:
        raise ArgumentError(f"{name} is not symmetric")
    return (S + np.swapaxes(S, -1, -2)) / 2.0


def _psd_sqrt(S: np.ndarray, name: str) -> np.ndarray:
    w, V = np.linalg.eigh(S)
    if np.min(w) < -PSD_TOL:
        raise ArgumentError(f"{name} is indefinite (eigenvalue {np.min(w):.3e})")
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)[..., None, :]) @ np.swapaxes(V, -1, -2)


def gelbrich_w2sq(m0, S0, m1, S1) -> float | np.ndarray:
    """Squared 2-Wasserstein distance between two Gaussians.

    ``||m0 - m1||^2 + tr(S0 + S1 - 2 (S1^{1/2} S0 S1^{1/2})^{1/2})``.  Leading
    batch axes are broadcast, so stacks of means and covariances work.
    """
    m0 = np.atleast_1d(np.asarray(m0, dtype=float))
    m1 = np.atleast_1d(np.asarray(m1, dtype=float))
    S0 = _check_cov(np.atleast_2d(S0), "S0")
    S1 = _check_cov(np.atleast_2d(S1), "S1")
    if m0.shape[-1] != S0.shape[-1] or m1.shape[-1] != S1.shape[-1] or S0.shape[-1] != S1.shape[-1]:
        raise ArgumentError("mean and covariance dimensions disagree")
    r1 = _psd_sqrt(S1, "S1")
    _psd_sqrt(S0, "S0")
    cross = _psd_sqrt(_check_cov(r1 @ S0 @ r1, "cross term"), "cross term")
    trace = np.trace(S0 + S1 - 2.0 * cross, axis1=-2, axis2=-1)
    value = np.sum((m0 - m1) ** 2, axis=-1) + trace
    value = np.maximum(value, 0.0)
    return float(value) if np.ndim(value) == 0 else value
