"""Random walker label propagation on the trajectory affinity graph.

Given foreground trajectories F (x = 1) and background trajectories B
(x = 0), the relaxed labels of the remaining trajectories U minimize
``x^T L x / 2``. The minimizer is harmonic on U and solves
``L_UU x_U = -L_UM x_M`` with M = F | B. ``diffuse`` approximates it by
repeated neighbour averaging with the marked labels re-clamped after
every step, which has the same fixed point.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import eigsh, spsolve
from sklearn.cluster import KMeans

from .affinity import SparseAffinity
from .trajectories import TrajectorySet

log = logging.getLogger(__name__)

MAX_EIGENVECTORS = 50


@dataclass(frozen=True, eq=False)
class LabelAssignment:
    """Soft trajectory labels with the clamped foreground/background sets.

    ``unreachable`` lists unlabeled nodes whose connected component holds no
    marked node; the exact solver sets them to 0.
    """

    x: np.ndarray
    fg: np.ndarray
    bg: np.ndarray
    unreachable: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64)
        fg = np.unique(np.asarray(self.fg, dtype=np.int64))
        bg = np.unique(np.asarray(self.bg, dtype=np.int64))
        if np.intersect1d(fg, bg).size:
            raise ValueError("foreground and background sets overlap")
        for ids in (fg, bg):
            if ids.size and (ids.min() < 0 or ids.max() >= len(x)):
                raise ValueError("marked id out of range")
        x[fg] = 1.0
        x[bg] = 0.0
        for name, val in (("x", x), ("fg", fg), ("bg", bg)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "unreachable", np.asarray(self.unreachable, dtype=np.int64))

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def marked(self) -> np.ndarray:
        return np.union1d(self.fg, self.bg)

    @property
    def unlabeled(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n), self.marked)

    def with_x(self, x, unreachable=None) -> "LabelAssignment":
        if unreachable is None:
            unreachable = self.unreachable
        return LabelAssignment(x, self.fg, self.bg, unreachable)

    def swapped(self) -> "LabelAssignment":
        """Same instance with foreground and background exchanged."""
        return LabelAssignment(1.0 - self.x, self.bg, self.fg, self.unreachable)

    @classmethod
    def from_sets(cls, n: int, fg, bg) -> "LabelAssignment":
        return cls(np.full(n, 0.5), fg, bg)


@dataclass(frozen=True, eq=False)
class TrajectoryCluster:
    members: np.ndarray
    source: dict = field(default_factory=dict)
    soft_labels: np.ndarray | None = None

    def __post_init__(self):
        members = np.unique(np.asarray(self.members, dtype=np.int64))
        if members.size == 0:
            raise ValueError("trajectory cluster is empty")
        object.__setattr__(self, "members", members)

    def __len__(self):
        return len(self.members)


def mark_from_proposal(proposal, ts: TrajectorySet) -> LabelAssignment:
    """Trajectories alive at the proposal's frame become foreground if their
    rounded position falls in its mask and background otherwise."""
    mask, frame_index = proposal.mask, proposal.frame_index
    if not 0 <= frame_index < ts.num_frames:
        raise ValueError(f"frame {frame_index} outside the video (0..{ts.num_frames - 1})")
    ids, pos = ts.alive_at(frame_index)
    if ids.size == 0:
        raise ValueError(f"unmarkable proposal: no trajectory alive at frame {frame_index}")
    H, W = mask.shape
    cols = np.clip(np.rint(pos[:, 0]).astype(np.int64), 0, W - 1)
    rows = np.clip(np.rint(pos[:, 1]).astype(np.int64), 0, H - 1)
    inside = np.asarray(mask, dtype=bool)[rows, cols]
    return LabelAssignment.from_sets(ts.n, ids[inside], ids[~inside])


def _reachable_unlabeled(A: SparseAffinity, la: LabelAssignment, comp=None):
    if comp is None:
        _, comp = csgraph.connected_components(A.matrix, directed=False)
    marked_comps = np.unique(comp[la.marked])
    unl = la.unlabeled
    ok = np.isin(comp[unl], marked_comps)
    return unl[ok], unl[~ok]


def conjugate_gradient(M: sparse.spmatrix, b: np.ndarray, tol: float = 1e-10, maxiter=None):
    """Jacobi-preconditioned conjugate gradient for a symmetric positive
    definite ``M``; stops when ``|r| <= tol * |b|``."""
    n = len(b)
    maxiter = maxiter or 10 * n
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return x
    inv_diag = 1.0 / M.diagonal()
    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for _ in range(maxiter):
        Mp = M @ p
        alpha = rz / (p @ Mp)
        x += alpha * p
        r -= alpha * Mp
        if np.linalg.norm(r) <= tol * bnorm:
            break
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    else:
        warnings.warn("conjugate gradient did not reach tolerance", RuntimeWarning)
    return x


def solve_exact(A: SparseAffinity, la: LabelAssignment, method: str = "direct") -> LabelAssignment:
    """Closed-form random walker labels.

    Nodes in components without any marked node get 0 and are reported in
    ``unreachable``.
    """
    if A.n != la.n:
        raise ValueError("affinity and labels disagree on node count")
    x = np.array(la.x)
    U, lost = _reachable_unlabeled(A, la)
    x[lost] = 0.0
    if lost.size:
        log.warning("%d unlabeled trajectories have no path to a marked one; set to 0", lost.size)
    if U.size:
        M = la.marked
        L = A.laplacian()
        L_U = L[U]
        L_UU = L_U[:, U].tocsc()
        rhs = -(L_U[:, M] @ x[M])
        if method == "direct":
            xu = spsolve(L_UU, rhs)
        elif method == "cg":
            xu = conjugate_gradient(L_UU.tocsr(), rhs)
        else:
            raise ValueError(f"unknown method {method!r}")
        x[U] = np.clip(xu, 0.0, 1.0)
    return la.with_x(x, lost)


def diffuse_many(A: SparseAffinity, assignments, iters: int = 50) -> list[LabelAssignment]:
    """Run ``diffuse`` on several label assignments at once (one column each)."""
    if iters < 0:
        raise ValueError("iters must be >= 0")
    assignments = list(assignments)
    if not assignments:
        return []
    for la in assignments:
        if la.n != A.n:
            raise ValueError("affinity and labels disagree on node count")
    X = np.stack([la.x for la in assignments], axis=1)
    _, comp = csgraph.connected_components(A.matrix, directed=False)
    lost = [_reachable_unlabeled(A, la, comp)[1] for la in assignments]
    if iters == 0:
        return [la.with_x(X[:, k], lost[k]) for k, la in enumerate(assignments)]
    deg = A.degree
    active = deg > 0
    inv = np.zeros_like(deg)
    inv[active] = 1.0 / deg[active]
    P = sparse.diags(inv) @ A.matrix
    clamp = np.zeros(X.shape, dtype=bool)
    for k, la in enumerate(assignments):
        clamp[la.fg, k] = True
        clamp[la.bg, k] = True
    fixed = X[clamp]
    keep = clamp | ~active[:, None]
    for _ in range(iters):
        Y = P @ X
        Y = np.clip(Y, 0.0, 1.0)
        Y[keep] = X[keep]
        X = Y
    X[clamp] = fixed
    return [la.with_x(X[:, k], lost[k]) for k, la in enumerate(assignments)]


def diffuse(A: SparseAffinity, la: LabelAssignment, iters: int = 50) -> LabelAssignment:
    """``iters`` steps of ``x <- Diag(A 1)^-1 A x`` with marked labels
    re-clamped; zero-degree nodes keep their value.

    Nodes with no path to a marked node keep drifting around their initial
    value; they are listed in ``unreachable`` of the result.
    """
    return diffuse_many(A, [la], iters)[0]


def cluster_from_labels(la: LabelAssignment, thresh: float = 0.5, source=None):
    """Trajectories with ``x >= thresh``, or None when there are none.

    Unreachable trajectories never join a cluster."""
    keep = la.x >= thresh
    keep[la.unreachable] = False
    members = np.flatnonzero(keep)
    if members.size == 0:
        return None
    return TrajectoryCluster(members, dict(source or {}), la.x)


def spectral_embedding(A: SparseAffinity, k: int, seed: int = 0) -> np.ndarray:
    """Bottom-k eigenvectors of ``D^-1/2 L D^-1/2`` with unit-norm rows."""
    deg = A.degree
    inv_sqrt = np.zeros_like(deg)
    inv_sqrt[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    # smallest eigenvalues of I - N are the largest of N
    N = sparse.diags(inv_sqrt) @ A.matrix @ sparse.diags(inv_sqrt)
    if A.n <= 1500 or k >= A.n - 1:
        vals, vecs = np.linalg.eigh(N.toarray())
        vecs = vecs[:, np.argsort(vals)[::-1][:k]]
    else:
        v0 = np.random.default_rng(seed).standard_normal(A.n)
        vals, vecs = eigsh(N.tocsr(), k=k, which="LA", tol=1e-8, v0=v0)
        vecs = vecs[:, np.argsort(vals)[::-1]]
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    return np.divide(vecs, norms, out=np.zeros_like(vecs), where=norms > 0)


def spectral_clusters(A: SparseAffinity, k_list, seed: int = 0, n_init: int = 100, max_iter: int = 10):
    """Discretize the spectral embedding for every k in ``k_list``.

    Returns one list of clusters per k; k larger than the node count is
    skipped with a warning (an empty list in that position).
    """
    pools = []
    for k in k_list:
        if not 2 <= k <= MAX_EIGENVECTORS:
            raise ValueError(f"k must lie in [2, {MAX_EIGENVECTORS}], got {k}")
        if k > A.n:
            warnings.warn(f"k={k} exceeds the {A.n} trajectories; skipped", RuntimeWarning)
            pools.append([])
            continue
        emb = spectral_embedding(A, k, seed)
        km = KMeans(n_clusters=k, init="k-means++", n_init=n_init, max_iter=max_iter, random_state=seed)
        with warnings.catch_warnings():
            # duplicate embedding rows can leave fewer distinct points than k
            warnings.simplefilter("ignore")
            labels = km.fit_predict(emb)
        groups = []
        for c in range(k):
            members = np.flatnonzero(labels == c)
            if members.size:
                groups.append(TrajectoryCluster(members, {"kind": "spectral", "k": int(k), "group": c}))
        # order groups by their smallest member for reproducible output
        groups.sort(key=lambda g: int(g.members[0]))
        pools.append(groups)
    return pools


def save_soft_labels(path, labels: dict) -> None:
    """``labels`` maps proposal id to LabelAssignment."""
    out = [{"proposalId": pid, "x": la.x.tolist()} for pid, la in labels.items()]
    with open(path, "w") as fh:
        json.dump(out, fh)
        fh.write("\n")


def save_clusters(path, clusters) -> None:
    with open(path, "w") as fh:
        json.dump([c.members.tolist() for c in clusters], fh)
        fh.write("\n")


def load_clusters(path) -> list[TrajectoryCluster]:
    with open(path) as fh:
        return [TrajectoryCluster(m) for m in json.load(fh)]
