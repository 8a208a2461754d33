"""Pairwise trajectory affinities from maximum velocity difference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .trajectories import TrajectorySet


class SparseAffinity:
    """Symmetric sparse affinity matrix with weights in (0, 1] and no self-loops.

    Stored as the strictly upper-triangular entry list ``(i, j, w)`` sorted
    by ``(i, j)``; the full symmetric matrix is built on demand.
    """

    def __init__(self, n: int, rows, cols, weights):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.float64)
        if not (rows.shape == cols.shape == weights.shape):
            raise ValueError("entry arrays must have equal length")
        if rows.size:
            if (rows >= cols).any():
                raise ValueError("entries must satisfy i < j")
            if rows.min() < 0 or cols.max() >= n:
                raise ValueError("entry index out of range")
            if (weights <= 0).any() or (weights > 1).any():
                raise ValueError("weights must lie in (0, 1]")
        order = np.lexsort((cols, rows))
        rows, cols, weights = rows[order], cols[order], weights[order]
        if rows.size and ((np.diff(rows) == 0) & (np.diff(cols) == 0)).any():
            raise ValueError("duplicate entries")
        self.n = int(n)
        self.rows, self.cols, self.weights = rows, cols, weights
        for a in (self.rows, self.cols, self.weights):
            a.setflags(write=False)
        self._matrix = None

    @property
    def nnz(self) -> int:
        return int(self.rows.size)

    @property
    def matrix(self) -> sparse.csr_matrix:
        if self._matrix is None:
            r = np.concatenate([self.rows, self.cols])
            c = np.concatenate([self.cols, self.rows])
            w = np.concatenate([self.weights, self.weights])
            self._matrix = sparse.csr_matrix((w, (r, c)), shape=(self.n, self.n))
        return self._matrix

    @property
    def degree(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def laplacian(self) -> sparse.csr_matrix:
        """``Diag(A 1) - A``."""
        return (sparse.diags(self.degree) - self.matrix).tocsr()

    def weight(self, i: int, j: int) -> float:
        return float(self.matrix[i, j])

    def entries(self):
        return zip(self.rows.tolist(), self.cols.tolist(), self.weights.tolist())

    @classmethod
    def from_dense(cls, A: np.ndarray, eps: float = 0.0) -> "SparseAffinity":
        A = np.asarray(A, dtype=np.float64)
        iu, ju = np.triu_indices(A.shape[0], k=1)
        w = A[iu, ju]
        keep = w > eps
        return cls(A.shape[0], iu[keep], ju[keep], w[keep])


def quadratic_form(A: SparseAffinity, x) -> float:
    """Random walker cost ``x^T L x / 2``, evaluated as the edge sum
    ``1/2 * sum_{i<j} A_ij (x_i - x_j)^2``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.n,):
        raise ValueError(f"expected {A.n} labels, got shape {x.shape}")
    diff = x[A.rows] - x[A.cols]
    return 0.5 * float(np.dot(A.weights, diff * diff))


@dataclass(frozen=True)
class AffinityParams:
    radius: float = 60.0
    lam: float = 0.1
    window: int = 3
    min_overlap: int = 3
    eps: float = 1e-3

    def __post_init__(self):
        if self.radius < 0 or self.lam <= 0 or self.eps < 0:
            raise ValueError("radius, lam and eps must be non-negative (lam positive)")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.min_overlap < 2:
            raise ValueError("min_overlap must be >= 2 so that a velocity exists")


def candidate_pairs(ts: TrajectorySet, radius: float) -> np.ndarray:
    """Pairs (i < j) that are within ``radius`` of each other in some common frame."""
    codes = []
    n = np.int64(ts.n)
    for t in range(ts.num_frames):
        ids, pos = ts.alive_at(t)
        if len(ids) < 2:
            continue
        local = cKDTree(pos).query_pairs(radius, output_type="ndarray")
        if len(local) == 0:
            continue
        a, b = ids[local[:, 0]], ids[local[:, 1]]
        codes.append(np.minimum(a, b) * n + np.maximum(a, b))
    if not codes:
        return np.zeros((0, 2), dtype=np.int64)
    codes = np.unique(np.concatenate(codes))
    return np.stack(np.divmod(codes, n), axis=1)


def max_velocity_difference(ts: TrajectorySet, pairs: np.ndarray, window: int) -> np.ndarray:
    """Squared maximum velocity difference over the common lifespan of each pair.

    Velocity at frame t is the mean displacement over ``[t, min(t + window, b)]``
    where b is the last common frame, so both trajectories of a pair are
    compared over the same frames. Pairs sharing fewer than two frames get NaN.
    """
    dense = ts.dense()
    starts, ends = ts.starts, ts.ends
    i, j = pairs[:, 0], pairs[:, 1]
    a = np.maximum(starts[i], starts[j])
    b = np.minimum(ends[i], ends[j])
    best = np.full(len(pairs), -np.inf)
    for t in range(ts.num_frames - 1):
        valid = (a <= t) & (t < b)
        if not valid.any():
            continue
        sel = np.flatnonzero(valid)
        e = np.minimum(t + window, b[sel])
        span = (e - t)[:, None]
        vi = (dense[i[sel], e] - dense[i[sel], t]) / span
        vj = (dense[j[sel], e] - dense[j[sel], t]) / span
        d2 = np.sum((vi - vj) ** 2, axis=1)
        best[sel] = np.maximum(best[sel], d2)
    best[np.isneginf(best)] = np.nan
    return best


def build_affinity(ts: TrajectorySet, params: AffinityParams = AffinityParams()) -> SparseAffinity:
    """``A_ij = exp(-lam * d2_ij)`` for trajectory pairs that overlap at least
    ``min_overlap`` frames and come within ``radius`` pixels in a common
    frame; weights below ``eps`` are dropped."""
    pairs = candidate_pairs(ts, params.radius)
    if len(pairs) == 0:
        return SparseAffinity(ts.n, [], [], [])
    starts, ends = ts.starts, ts.ends
    i, j = pairs[:, 0], pairs[:, 1]
    overlap = np.minimum(ends[i], ends[j]) - np.maximum(starts[i], starts[j]) + 1
    pairs = pairs[overlap >= params.min_overlap]
    out_r, out_c, out_w = [], [], []
    chunk = 200_000
    for k in range(0, len(pairs), chunk):
        p = pairs[k : k + chunk]
        d2 = max_velocity_difference(ts, p, params.window)
        w = np.exp(-params.lam * d2)
        keep = w >= params.eps
        out_r.append(p[keep, 0])
        out_c.append(p[keep, 1])
        out_w.append(w[keep])
    if not out_r:
        return SparseAffinity(ts.n, [], [], [])
    return SparseAffinity(ts.n, np.concatenate(out_r), np.concatenate(out_c), np.concatenate(out_w))


def save_affinity(path, A: SparseAffinity) -> None:
    """Text export: header ``n m`` then one ``i j w`` line per stored pair."""
    with open(path, "w") as fh:
        fh.write(f"{A.n} {A.nnz}\n")
        for i, j, w in A.entries():
            fh.write(f"{i} {j} {w!r}\n")


def load_affinity(path) -> SparseAffinity:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: expected header 'n m'")
        n, m = int(header[0]), int(header[1])
        rows, cols, weights = [], [], []
        for line in fh:
            if not line.strip():
                continue
            i, j, w = line.split()
            rows.append(int(i))
            cols.append(int(j))
            weights.append(float(w))
    if len(rows) != m:
        raise ValueError(f"{path}: header declares {m} entries, found {len(rows)}")
    return SparseAffinity(n, rows, cols, weights)
