"""Random instance generators shared by the tests."""

import numpy as np
from scipy.sparse import csgraph

from motiontubes.affinity import SparseAffinity


def random_graph(rng, n, p=None):
    """Random sparse symmetric affinity on n nodes with weights in (0, 1]."""
    p = p if p is not None else min(1.0, 4.0 / max(n - 1, 1))
    rows, cols, weights = [], [], []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                rows.append(i)
                cols.append(j)
                weights.append(rng.uniform(0.05, 1.0))
    return SparseAffinity(n, rows, cols, weights)


def random_marking(rng, A, min_fraction=0.15):
    """Foreground/background sets with at least one marked node in every
    connected component and at least ``min_fraction`` of nodes marked."""
    n = A.n
    _, comp = csgraph.connected_components(A.matrix, directed=False)
    marked = set()
    for c in np.unique(comp):
        marked.add(int(rng.choice(np.flatnonzero(comp == c))))
    extra = rng.choice(n, size=max(1, int(min_fraction * n)), replace=False)
    marked.update(int(i) for i in extra)
    marked = sorted(marked)
    is_fg = rng.random(len(marked)) < 0.5
    if len(marked) > 1:
        is_fg[0], is_fg[1] = True, False
    fg = [m for m, f in zip(marked, is_fg) if f]
    bg = [m for m, f in zip(marked, is_fg) if not f]
    return fg, bg
