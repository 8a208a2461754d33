"""Box scorers, tube scoring and ranking with optional soft suppression.

The default scorer is a center-surround contrast of flow magnitude: the
mean normalized magnitude inside a box minus the mean over a surrounding
ring. Magnitudes are divided by the frame's 95th percentile (the maximum
if that percentile is 0) and clipped to 1, so the score lies in [-1, 1].
The ring is the box grown by ceil(max(box width, box height) / 2) pixels
on every side, clipped to the frame, minus the box; an empty ring counts
as mean 0.

Any callable ``scorer(frame_index, box) -> float`` can replace it, e.g.
``ExternalScorer`` reading precomputed scores of a trained detector.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .videoio import FlowField, Tube


def _check_box(box, shape):
    x0, y0, x1, y1 = (int(v) for v in box)
    H, W = shape
    if x1 < x0 or y1 < y0:
        raise ValueError(f"box {box} has zero area")
    if x0 < 0 or y0 < 0 or x1 >= W or y1 >= H:
        raise ValueError(f"box {box} outside the {W}x{H} frame")
    return x0, y0, x1, y1


def normalized_magnitude(flow: FlowField) -> np.ndarray:
    """Flow magnitude divided by its 95th percentile and clipped to 1.

    When fewer than 5% of the pixels move the percentile is 0 and the
    maximum magnitude is used instead.
    """
    mag = flow.magnitude()
    norm = float(np.percentile(mag, 95))
    if norm <= 0:
        norm = float(mag.max())
    if norm <= 0:
        return np.zeros_like(mag)
    return np.minimum(mag / norm, 1.0)


def _box_mean(integral: np.ndarray, x0, y0, x1, y1) -> tuple[float, int]:
    total = integral[y1 + 1, x1 + 1] - integral[y0, x1 + 1] - integral[y1 + 1, x0] + integral[y0, x0]
    return total, (x1 - x0 + 1) * (y1 - y0 + 1)


def _integral(a: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    out[1:, 1:] = a.cumsum(0).cumsum(1)
    return out


def center_surround(flow: FlowField, box, norm_mag: np.ndarray | None = None) -> float:
    if norm_mag is None:
        norm_mag = normalized_magnitude(flow)
    x0, y0, x1, y1 = _check_box(box, flow.shape)
    return _center_surround(_integral(norm_mag), flow.shape, (x0, y0, x1, y1))


def _center_surround(integral, shape, box) -> float:
    H, W = shape
    x0, y0, x1, y1 = box
    inner_sum, inner_n = _box_mean(integral, x0, y0, x1, y1)
    grow = math.ceil(max(x1 - x0 + 1, y1 - y0 + 1) / 2)
    ox0, oy0 = max(x0 - grow, 0), max(y0 - grow, 0)
    ox1, oy1 = min(x1 + grow, W - 1), min(y1 + grow, H - 1)
    outer_sum, outer_n = _box_mean(integral, ox0, oy0, ox1, oy1)
    ring_n = outer_n - inner_n
    surround = (outer_sum - inner_sum) / ring_n if ring_n > 0 else 0.0
    return float(inner_sum / inner_n - surround)


class CenterSurroundScorer:
    """Center-surround scorer over a sequence of per-frame motion fields."""

    def __init__(self, flows):
        self.flows = list(flows)
        self._cache = {}

    def _integral(self, t):
        if t not in self._cache:
            self._cache[t] = _integral(normalized_magnitude(self.flows[t]))
        return self._cache[t]

    def __call__(self, frame: int, box) -> float:
        if not 0 <= frame < len(self.flows):
            raise ValueError(f"no flow for frame {frame}")
        shape = self.flows[frame].shape
        return _center_surround(self._integral(frame), shape, _check_box(box, shape))


class ExternalScorer:
    """Looks up precomputed box scores from a JSON list of
    ``{"frame": t, "box": [x0, y0, x1, y1], "score": s}``."""

    def __init__(self, entries):
        self.table = {}
        for e in entries:
            self.table[(int(e["frame"]), tuple(int(v) for v in e["box"]))] = float(e["score"])

    @classmethod
    def load(cls, path) -> "ExternalScorer":
        with open(path) as fh:
            return cls(json.load(fh))

    def __call__(self, frame: int, box) -> float:
        key = (int(frame), tuple(int(v) for v in box))
        try:
            return self.table[key]
        except KeyError:
            raise KeyError(f"external score file has no entry for frame {frame} box {list(key[1])}") from None


def score_tube(tube: Tube, scorer, aggregate: str = "sum") -> float:
    """Sum (or mean) of box scores over the tube's non-empty frames; the
    result is also stored in ``tube.score``."""
    scores = [scorer(t, box) for t, box in sorted(tube.boxes.items())]
    if aggregate == "sum":
        total = float(sum(scores))
    elif aggregate == "mean":
        total = float(sum(scores) / len(scores)) if scores else 0.0
    else:
        raise ValueError(f"unknown aggregate {aggregate!r}")
    tube.score = total
    return total


def tube_iou_matrix(tubes) -> np.ndarray:
    """Pairwise voxel IoU of tubes sharing the same frame size.

    Overlap counts come from a float32 product, exact for volumes below
    2**24 voxels; the ratios are taken in float64.
    """
    n = len(tubes)
    if n == 0:
        return np.zeros((0, 0))
    T = max(t.end for t in tubes) + 1
    shape = tubes[0].frame_shape
    vols = np.zeros((n, T) + tuple(shape), dtype=bool)
    for k, tube in enumerate(tubes):
        if tube.frame_shape != shape:
            raise ValueError("tubes have different frame sizes")
        vols[k, tube.start : tube.end + 1] = tube.masks
    flat = vols.reshape(n, -1).astype(np.float32)
    inter = (flat @ flat.T).astype(np.float64)
    sizes = np.diag(inter)
    union = sizes[:, None] + sizes[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def diversify_order(scores, iou: np.ndarray, gamma: float, base_order=None) -> list[int]:
    """Greedy re-ranking: repeatedly take the item maximizing
    ``score - gamma * max IoU with the items already taken``.

    Ties follow ``base_order`` (default: index order).
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = len(scores)
    if base_order is None:
        base_order = list(range(n))
    priority = np.empty(n, dtype=np.int64)
    priority[list(base_order)] = np.arange(n)
    remaining = list(base_order)
    chosen = []
    penalty = np.zeros(n)
    while remaining:
        rem = np.array(remaining)
        adjusted = scores[rem] - gamma * penalty[rem]
        best = adjusted.max()
        pick = int(rem[adjusted == best][np.argmin(priority[rem[adjusted == best]])])
        chosen.append(pick)
        remaining.remove(pick)
        penalty = np.maximum(penalty, iou[pick])
    return chosen


@dataclass
class RankedList:
    items: list
    scores: list
    diversified: bool = False
    ids: list = field(default_factory=list)

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, k):
        return self.items[k]


def rank(pool, scorer, diversify: bool = False, gamma: float = 1.0, aggregate: str = "sum") -> RankedList:
    """Score and sort tubes.

    Descending score, then earlier span start, larger volume and lower pool
    index. With ``diversify`` the sorted list is re-ranked greedily with a
    penalty of ``gamma`` times the maximum IoU to tubes already ranked.
    """
    pool = list(pool)
    if not pool:
        raise ValueError("cannot rank an empty pool")
    scores = [score_tube(t, scorer, aggregate) for t in pool]
    order = sorted(range(len(pool)), key=lambda i: (-scores[i], pool[i].start, -pool[i].volume, i))
    if diversify and gamma != 0:
        order = diversify_order(scores, tube_iou_matrix(pool), gamma, order)
    return RankedList([pool[i] for i in order], [scores[i] for i in order], diversify, order)


def filter_proposals(proposals, scorer, keep_top: int) -> list:
    """Keep the ``keep_top`` best-scoring proposals of every frame, scored
    by their bounding box at their own frame. Order within a frame follows
    the score (ties: original order)."""
    if keep_top < 1:
        raise ValueError("keep_top must be >= 1")
    by_frame = {}
    for i, p in enumerate(proposals):
        by_frame.setdefault(p.frame_index, []).append((i, p))
    kept = []
    for t in sorted(by_frame):
        scored = [(-scorer(t, p.box), i, p) for i, p in by_frame[t]]
        scored.sort(key=lambda s: (s[0], s[1]))
        for neg, _, p in scored[:keep_top]:
            p.meta["score"] = -neg
            kept.append(p)
    return kept
