"""Figure-ground segment proposals from geodesic distances on boundary maps.

A boundary map induces a 4-connected grid graph whose edge cost between
neighbours p and q is ``eps + (b[p] + b[q]) / 2``. A pixel is foreground
when it is geodesically closer to the foreground seeds than to the
background seeds. Proposals come from one foreground seed each, placed on a
jittered grid, against background seeds sampled along the image border.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from . import videoio


@dataclass(eq=False)
class Proposal:
    """A per-frame binary segment with the frame it was detected in."""

    mask: np.ndarray
    frame_index: int
    source: str = "motion"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if not self.mask.any():
            raise ValueError("proposal mask is empty")
        if self.frame_index < 0:
            raise ValueError("frame index must be non-negative")
        if self.source not in ("motion", "static"):
            raise ValueError(f"unknown proposal source {self.source!r}")

    @property
    def box(self) -> tuple[int, int, int, int]:
        return videoio.bounding_box(self.mask)

    @property
    def area(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class SeedSet:
    """Foreground and background seeds as (x, y) pixel coordinates."""

    fg: tuple
    bg: tuple

    def __post_init__(self):
        fg = tuple((int(x), int(y)) for x, y in self.fg)
        bg = tuple((int(x), int(y)) for x, y in self.bg)
        if not fg or not bg:
            raise ValueError("both seed lists must be non-empty")
        if set(fg) & set(bg):
            raise ValueError("foreground and background seeds overlap")
        object.__setattr__(self, "fg", fg)
        object.__setattr__(self, "bg", bg)


@dataclass(frozen=True)
class ProposalParams:
    num_seeds: int = 64
    eps: float = 1e-3
    dedup_threshold: float = 0.95
    border_step: int = 8

    def __post_init__(self):
        if self.num_seeds < 1:
            raise ValueError("num_seeds must be >= 1")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.border_step < 1:
            raise ValueError("border_step must be >= 1")


def grid_graph(strength: np.ndarray, eps: float) -> sparse.csr_matrix:
    """Upper-triangular edge list of the 4-connected grid as a sparse matrix."""
    strength = np.asarray(strength, dtype=np.float64)
    H, W = strength.shape
    idx = np.arange(H * W).reshape(H, W)
    flat = strength.ravel()
    src = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    dst = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    cost = eps + (flat[src] + flat[dst]) / 2.0
    return sparse.csr_matrix((cost, (src, dst)), shape=(H * W, H * W))


def _seed_indices(seeds, shape) -> np.ndarray:
    H, W = shape
    seeds = np.asarray(seeds, dtype=np.int64).reshape(-1, 2)
    if seeds.shape[0] == 0:
        raise ValueError("seed list is empty")
    xs, ys = seeds[:, 0], seeds[:, 1]
    if (xs < 0).any() or (xs >= W).any() or (ys < 0).any() or (ys >= H).any():
        raise ValueError("seed out of bounds")
    return ys * W + xs


def geodesic_distance(strength: np.ndarray, seeds, eps: float = 1e-3, graph=None) -> np.ndarray:
    """Multi-source shortest-path distance from ``seeds`` to every pixel."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    strength = np.asarray(strength, dtype=np.float64)
    src = _seed_indices(seeds, strength.shape)
    if graph is None:
        graph = grid_graph(strength, eps)
    dist = csgraph.dijkstra(graph, directed=False, indices=src, min_only=True)
    return dist.reshape(strength.shape)


def figure_ground(strength: np.ndarray, seeds: SeedSet, eps: float = 1e-3, graph=None) -> np.ndarray:
    """Foreground iff strictly closer to a foreground seed; ties go to background."""
    if graph is None:
        graph = grid_graph(strength, eps)
    d_fg = geodesic_distance(strength, seeds.fg, eps, graph)
    d_bg = geodesic_distance(strength, seeds.bg, eps, graph)
    return d_fg < d_bg


def border_seeds(shape, step: int = 8) -> list[tuple[int, int]]:
    """Every ``step``-th pixel walking clockwise around the image border."""
    H, W = shape
    ring = [(x, 0) for x in range(W)]
    ring += [(W - 1, y) for y in range(1, H)]
    if H > 1:
        ring += [(x, H - 1) for x in range(W - 2, -1, -1)]
    if W > 1:
        ring += [(0, y) for y in range(H - 2, 0, -1)]
    return ring[::step]


def grid_seeds(shape, num_seeds: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """``num_seeds`` seeds on a jittered sqrt(K) x sqrt(K) grid, row-major."""
    H, W = shape
    g = math.ceil(math.sqrt(num_seeds))
    cw, ch = W / g, H / g
    jitter = rng.uniform(-0.5, 0.5, size=(g * g, 2))
    seeds = []
    for k in range(num_seeds):
        i, j = divmod(k, g)
        x = (j + 0.5 + jitter[k, 0]) * cw
        y = (i + 0.5 + jitter[k, 1]) * ch
        seeds.append((min(max(int(x), 0), W - 1), min(max(int(y), 0), H - 1)))
    return seeds


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def deduplicate(masks, threshold: float) -> list[int]:
    """Indices of masks kept when dropping any mask whose IoU with an
    earlier kept mask reaches ``threshold``."""
    kept = []
    if not masks:
        return kept
    flat = np.stack([np.asarray(m, dtype=bool).ravel() for m in masks]).astype(np.float64)
    areas = flat.sum(axis=1)
    for i in range(len(masks)):
        if kept:
            inter = flat[kept] @ flat[i]
            iou = inter / (areas[kept] + areas[i] - inter)
            if (iou >= threshold).any():
                continue
        kept.append(i)
    return kept


def generate_proposals(
    strength: np.ndarray,
    params: ProposalParams = ProposalParams(),
    seed: int = 0,
    frame_index: int = 0,
    source: str = "motion",
) -> list[Proposal]:
    strength = np.asarray(strength, dtype=np.float64)
    shape = strength.shape
    rng = np.random.default_rng(seed)
    graph = grid_graph(strength, params.eps)
    bg = border_seeds(shape, params.border_step)
    d_bg = geodesic_distance(strength, bg, params.eps, graph)
    fg = grid_seeds(shape, params.num_seeds, rng)
    src = _seed_indices(fg, shape)
    d_fg = csgraph.dijkstra(graph, directed=False, indices=src)
    masks, origins = [], []
    for k, (x, y) in enumerate(fg):
        mask = d_fg[k].reshape(shape) < d_bg
        if mask.any():
            masks.append(mask)
            origins.append((x, y))
    keep = deduplicate(masks, params.dedup_threshold)
    return [
        Proposal(masks[i], frame_index, source, {"seed": list(origins[i])}) for i in keep
    ]


def save_proposals(dirpath, proposals) -> Path:
    """Write each proposal as a one-frame tube container plus ``index.json``."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    index = []
    for i, p in enumerate(proposals):
        rel = f"proposal_{i:05d}"
        videoio.save_tube(dirpath / rel, videoio.Tube(p.frame_index, p.mask[None]))
        index.append(
            {"frameIndex": p.frame_index, "source": p.source, "box": list(p.box), "maskPath": rel}
        )
    path = dirpath / "index.json"
    path.write_text(json.dumps(index, indent=2) + "\n")
    return path


def load_proposals(path) -> list[Proposal]:
    path = Path(path)
    if path.is_dir():
        path = path / "index.json"
    out = []
    for entry in json.loads(path.read_text()):
        tube = videoio.load_tube(path.parent / entry["maskPath"])
        if tube.start != entry["frameIndex"]:
            raise videoio.FormatError(f"{entry['maskPath']}: frame index disagrees with index.json")
        out.append(Proposal(tube.masks[0], entry["frameIndex"], entry["source"]))
    return out
