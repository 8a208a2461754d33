"""Overlap metrics for tube and per-frame segment pools.

* average best overlap (abo): mean over ground-truth items of the best IoU
  achieved by any item of the pool;
* coverage: the same, weighted by ground-truth area (voxels for tubes,
  pixels for frame segments);
* det50 / det70: fraction of ground-truth items whose best IoU is at least
  0.5 / 0.7.

Anytime-best variants score each ground-truth tube by its best single-frame
overlap with any per-frame proposal over the tube's lifespan.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .videoio import Tube

DEFAULT_SIZES = tuple(2**k for k in range(11))


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    return np.count_nonzero(a & b) / union if union else 0.0


def _overlap(a: Tube, b: Tube) -> int:
    lo, hi = max(a.start, b.start), min(a.end, b.end)
    if lo > hi:
        return 0
    return int(np.count_nonzero(a.masks[lo - a.start : hi - a.start + 1] & b.masks[lo - b.start : hi - b.start + 1]))


def tube_iou(a: Tube, b: Tube) -> float:
    """Voxel IoU over the union of both spans (absent frames are empty)."""
    if a.frame_shape != b.frame_shape:
        raise ValueError(f"tube frame sizes differ: {a.frame_shape} vs {b.frame_shape}")
    inter = _overlap(a, b)
    union = a.volume + b.volume - inter
    return inter / union if union else 0.0


def iou_table(pool, gt) -> np.ndarray:
    """(len(pool), len(gt)) matrix of tube IoUs."""
    out = np.zeros((len(pool), len(gt)))
    gt_vol = [g.volume for g in gt]
    for i, p in enumerate(pool):
        pv = p.volume
        for j, g in enumerate(gt):
            if p.frame_shape != g.frame_shape:
                raise ValueError("pool and ground truth have different frame sizes")
            inter = _overlap(p, g)
            union = pv + gt_vol[j] - inter
            out[i, j] = inter / union if union else 0.0
    return out


def summarize(best, areas) -> dict:
    best = np.asarray(best, dtype=np.float64)
    areas = np.asarray(areas, dtype=np.float64)
    if best.size == 0:
        return {"abo": 0.0, "coverage": 0.0, "det50": 0.0, "det70": 0.0}
    # fsum makes the aggregates independent of summation order
    total = math.fsum(areas)
    return {
        "abo": math.fsum(best) / best.size,
        "coverage": math.fsum(areas * best) / total if total > 0 else 0.0,
        "det50": float(np.mean(best >= 0.5)),
        "det70": float(np.mean(best >= 0.7)),
    }


@dataclass
class EvalReport:
    per_gt: list
    aggregates: dict
    curve: list = field(default_factory=list)
    by_size: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["by_size"] = {str(k): v for k, v in self.by_size.items()}
        d["curve"] = [list(c) for c in self.curve]
        return d

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def save_curve_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["pool_size", "abo", "coverage", "det50", "det70"])
            for size, _ in self.curve:
                agg = self.by_size[size]
                writer.writerow([size, agg["abo"], agg["coverage"], agg["det50"], agg["det70"]])


def evaluate(pool, gt, at_sizes=DEFAULT_SIZES) -> EvalReport:
    """Metrics of every ranked-pool prefix in ``at_sizes``.

    Sizes beyond the pool length evaluate the whole pool. ``aggregates``
    holds the whole-pool values.
    """
    pool = list(pool)
    gt = list(gt)
    if not gt:
        raise ValueError("ground truth is empty")
    areas = [g.volume for g in gt]
    table = iou_table(pool, gt)
    if len(pool):
        running = np.maximum.accumulate(table, axis=0)
    else:
        running = np.zeros((1, len(gt)))

    def best_at(size):
        if not len(pool) or size <= 0:
            return np.zeros(len(gt))
        return running[min(size, len(pool)) - 1]

    by_size, curve = {}, []
    for size in sorted(set(int(s) for s in at_sizes)):
        agg = summarize(best_at(size), areas)
        by_size[size] = agg
        curve.append((size, agg["abo"]))
    final = best_at(len(pool))
    per_gt = []
    for j in range(len(gt)):
        item = int(np.argmax(table[:, j])) if len(pool) and final[j] > 0 else None
        per_gt.append({"gt": j, "best_iou": float(final[j]), "best_item": item, "area": int(areas[j])})
    return EvalReport(per_gt, summarize(final, areas), curve, by_size)


def evaluate_per_frame(proposals, gt_tubes) -> EvalReport:
    """Per-frame segment metrics plus anytime-best tube metrics.

    Per-frame metrics treat every non-empty ground-truth slice as a 2-D
    segment matched against proposals of the same frame. The anytime
    metrics (suffix ``_ab``) take, per ground-truth tube, the best slice IoU
    over its lifespan.
    """
    gt_tubes = list(gt_tubes)
    if not gt_tubes:
        raise ValueError("ground truth is empty")
    by_frame = {}
    for p in proposals:
        by_frame.setdefault(p.frame_index, []).append(p.mask)
    seg_best, seg_area, per_gt = [], [], []
    tube_best, tube_area = [], []
    for j, g in enumerate(gt_tubes):
        frames = []
        for k, gmask in enumerate(g.masks):
            area = int(gmask.sum())
            if area == 0:
                continue
            t = g.start + k
            best = max((mask_iou(m, gmask) for m in by_frame.get(t, ())), default=0.0)
            seg_best.append(best)
            seg_area.append(area)
            frames.append((t, best))
        ab = max((b for _, b in frames), default=0.0)
        tube_best.append(ab)
        tube_area.append(g.volume)
        per_gt.append({"gt": j, "best_iou_ab": ab, "per_frame": [[t, b] for t, b in frames], "area": g.volume})
    agg = summarize(seg_best, seg_area)
    ab = summarize(tube_best, tube_area)
    agg.update({"abo_ab": ab["abo"], "det50_ab": ab["det50"], "det70_ab": ab["det70"]})
    return EvalReport(per_gt, agg)
