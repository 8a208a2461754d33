"""Superpixels, temporally linked supervoxels, and projection of trajectory
clusters onto them to obtain pixel tubes."""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import videoio
from .trajectories import TrajectorySet
from .videoio import FlowField, Tube


class EmptyProjection(ValueError):
    pass


@dataclass(frozen=True)
class SuperpixelParams:
    theta: float = 0.3
    min_area: int = 16


def _flood(strength: np.ndarray, theta: float) -> np.ndarray:
    """Priority flood over ascending strength.

    The lowest unlabeled pixel joins the neighbouring region reached through
    its weakest labeled neighbour. A pixel without labeled neighbours starts
    a new region if its strength is at most ``theta``; otherwise it waits
    until a neighbour gets labeled. Pixels next to a growing region are
    served before unrelated pixels of equal strength, so every flat basin
    becomes a single region.
    """
    H, W = strength.shape
    flat = strength.ravel().tolist()
    labels = [-1] * (H * W)
    heap = [(s, 1, i) for i, s in enumerate(flat)]
    heapq.heapify(heap)
    seq = 0
    n_regions = 0

    def neighbours(i):
        y, x = divmod(i, W)
        if x > 0:
            yield i - 1
        if x < W - 1:
            yield i + 1
        if y > 0:
            yield i - W
        if y < H - 1:
            yield i + W

    def label(i, r):
        nonlocal seq
        labels[i] = r
        for j in neighbours(i):
            if labels[j] < 0:
                seq += 1
                heapq.heappush(heap, (flat[j], 0, seq, j))

    while heap:
        item = heapq.heappop(heap)
        i = item[-1]
        if labels[i] >= 0:
            continue
        best, best_key = -1, None
        for j in neighbours(i):
            r = labels[j]
            if r >= 0 and (best_key is None or (flat[j], r) < best_key):
                best, best_key = r, (flat[j], r)
        if best >= 0:
            label(i, best)
        elif flat[i] <= theta or not heap:
            label(i, n_regions)
            n_regions += 1
        if not heap and -1 in labels:
            # only high-strength pixels remain and none touches a region
            first = labels.index(-1)
            label(first, n_regions)
            n_regions += 1
    return np.array(labels, dtype=np.int64).reshape(H, W)


def _adjacent_pairs(labels: np.ndarray) -> np.ndarray:
    pairs = [
        np.stack([labels[:, :-1].ravel(), labels[:, 1:].ravel()], axis=1),
        np.stack([labels[:-1, :].ravel(), labels[1:, :].ravel()], axis=1),
    ]
    pairs = np.concatenate(pairs)
    return pairs[pairs[:, 0] != pairs[:, 1]]


def _merge_small(labels: np.ndarray, min_area: int) -> np.ndarray:
    labels = labels.copy()
    while True:
        sizes = np.bincount(labels.ravel())
        present = np.flatnonzero(sizes)
        if len(present) <= 1:
            return labels
        small = present[sizes[present] < min_area]
        if small.size == 0:
            return labels
        # merge the smallest region first (lowest label breaks ties)
        r = small[np.argmin(sizes[small])]
        pairs = _adjacent_pairs(labels)
        touching = np.concatenate([pairs[pairs[:, 0] == r, 1], pairs[pairs[:, 1] == r, 0]])
        counts = np.bincount(touching, minlength=len(sizes))
        target = int(np.argmax(counts))
        labels[labels == r] = target


def _relabel(labels: np.ndarray) -> np.ndarray:
    _, first = np.unique(labels.ravel(), return_index=True)
    order = np.argsort(first)
    mapping = np.empty(labels.max() + 1, dtype=np.int64)
    mapping[np.unique(labels.ravel())[order]] = np.arange(len(order))
    return mapping[labels]


def superpixels(strength: np.ndarray, params: SuperpixelParams = SuperpixelParams()) -> np.ndarray:
    """Partition a boundary map into 4-connected regions labeled 0..R-1
    in row-major order of first appearance."""
    strength = np.asarray(strength, dtype=np.float64)
    labels = _flood(strength, params.theta)
    labels = _merge_small(labels, params.min_area)
    return _relabel(labels)


# ---------------------------------------------------------------------------
# Supervoxels


@dataclass(frozen=True, eq=False)
class Supervoxel:
    id: int
    first: int
    regions: tuple  # boolean masks for frames first..last

    @property
    def last(self) -> int:
        return self.first + len(self.regions) - 1

    @property
    def span(self) -> tuple[int, int]:
        return (self.first, self.last)


class SupervoxelSet:
    """Supervoxel id of every pixel of every frame, as a (T, H, W) volume."""

    def __init__(self, labels: np.ndarray):
        self.labels = np.asarray(labels, dtype=np.int64)
        self.labels.setflags(write=False)
        self.count = int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def num_frames(self) -> int:
        return self.labels.shape[0]

    def spans(self) -> np.ndarray:
        """(count, 2) first and last frame of each supervoxel."""
        T = self.num_frames
        first = np.full(self.count, T)
        last = np.full(self.count, -1)
        for t in range(T):
            ids = np.unique(self.labels[t])
            first[ids] = np.minimum(first[ids], t)
            last[ids] = np.maximum(last[ids], t)
        return np.stack([first, last], axis=1)

    def __len__(self):
        return self.count

    def __getitem__(self, i: int) -> Supervoxel:
        first, last = self.spans()[i]
        return Supervoxel(i, int(first), tuple(self.labels[t] == i for t in range(first, last + 1)))

    def __iter__(self):
        spans = self.spans()
        for i, (first, last) in enumerate(spans):
            yield Supervoxel(i, int(first), tuple(self.labels[t] == i for t in range(first, last + 1)))


def _warp_targets(flow: FlowField) -> tuple[np.ndarray, np.ndarray]:
    """Flat index each pixel lands on under nearest-pixel rounding, and a
    mask of pixels that stay in the frame."""
    H, W = flow.shape
    ys, xs = np.mgrid[0:H, 0:W]
    tx = xs + np.rint(flow.u).astype(np.int64)
    ty = ys + np.rint(flow.v).astype(np.int64)
    inside = (tx >= 0) & (tx < W) & (ty >= 0) & (ty < H)
    return (ty * W + tx).ravel(), inside.ravel()


def link_regions(prev: np.ndarray, nxt: np.ndarray, flow: FlowField, theta: float = 0.5) -> dict:
    """Mutual-best links from regions of ``prev`` to regions of ``nxt``.

    Region r links to r' maximizing ``|warp(r) & r'| / |warp(r)|`` when the
    ratio is at least ``theta`` and r is also the predecessor with the
    largest overlap with r'.
    """
    target, inside = _warp_targets(flow)
    src = prev.ravel()[inside]
    dst = nxt.ravel()[target[inside]]
    R0, R1 = int(prev.max()) + 1, int(nxt.max()) + 1
    overlap = np.bincount(src * R1 + dst, minlength=R0 * R1).reshape(R0, R1)
    warped = overlap.sum(axis=1)
    links = {}
    if overlap.size == 0:
        return links
    best_next = np.argmax(overlap, axis=1)
    best_prev = np.argmax(overlap, axis=0)
    for r in range(R0):
        if warped[r] == 0:
            continue
        r2 = int(best_next[r])
        ratio = overlap[r, r2] / warped[r]
        if ratio >= theta and best_prev[r2] == r:
            links[r] = r2
    return links


def build_supervoxels(partitions, flows, theta_link: float = 0.5) -> SupervoxelSet:
    """Chain per-frame superpixels through time by greedy mutual-best linking."""
    partitions = [np.asarray(p, dtype=np.int64) for p in partitions]
    flows = list(flows)
    if len(flows) < len(partitions) - 1:
        raise ValueError("need one flow per consecutive frame pair")
    T = len(partitions)
    out = np.empty((T,) + partitions[0].shape, dtype=np.int64)
    ids = np.arange(partitions[0].max() + 1)
    out[0] = ids[partitions[0]]
    next_id = len(ids)
    for t in range(T - 1):
        links = link_regions(partitions[t], partitions[t + 1], flows[t], theta_link)
        R1 = int(partitions[t + 1].max()) + 1
        new_ids = np.full(R1, -1, dtype=np.int64)
        for r, r2 in links.items():
            new_ids[r2] = ids[r]
        for r2 in range(R1):
            if new_ids[r2] < 0:
                new_ids[r2] = next_id
                next_id += 1
        out[t + 1] = new_ids[partitions[t + 1]]
        ids = new_ids
    return SupervoxelSet(out)


def save_supervoxels(dirpath, svs: SupervoxelSet) -> Path:
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    frames = []
    for t in range(svs.num_frames):
        rel = f"labels_{t:05d}.pgm"
        videoio.save_labels(dirpath / rel, svs.labels[t])
        frames.append(rel)
    chains = [
        {"id": i, "firstFrame": int(a), "lastFrame": int(b)} for i, (a, b) in enumerate(svs.spans())
    ]
    path = dirpath / "supervoxels.json"
    path.write_text(json.dumps({"frames": frames, "supervoxels": chains}, indent=1) + "\n")
    return path


def load_supervoxels(path) -> SupervoxelSet:
    path = Path(path)
    if path.is_dir():
        path = path / "supervoxels.json"
    index = json.loads(path.read_text())
    return SupervoxelSet(np.stack([videoio.load_labels(path.parent / f) for f in index["frames"]]))


# ---------------------------------------------------------------------------
# Projection


class Projector:
    """Maps trajectory clusters to pixel tubes through supervoxels.

    The weight of a supervoxel is the fraction of the trajectory points it
    contains that belong to the cluster (0 for supervoxels without points).
    """

    def __init__(self, ts: TrajectorySet, svs: SupervoxelSet):
        if ts.num_frames != svs.num_frames:
            raise ValueError("trajectories and supervoxels cover different frame counts")
        self.svs = svs
        ids, frames, rows, cols = ts.rounded_points()
        self.point_traj = ids
        self.point_sv = svs.labels[frames, rows, cols]
        self.totals = np.bincount(self.point_sv, minlength=svs.count).astype(np.float64)

    def weights(self, members) -> np.ndarray:
        in_cluster = np.isin(self.point_traj, members)
        counts = np.bincount(self.point_sv[in_cluster], minlength=self.svs.count)
        return np.divide(counts, self.totals, out=np.zeros(self.svs.count), where=self.totals > 0)

    def project(self, members, thresh: float = 0.5) -> Tube:
        w = self.weights(members)
        volume = (w >= thresh)[self.svs.labels]
        if not volume.any():
            raise EmptyProjection("empty projection: no supervoxel reaches the threshold")
        return Tube(0, volume).trimmed()


def project_cluster(cluster, ts: TrajectorySet, svs: SupervoxelSet, thresh: float = 0.5) -> Tube:
    members = getattr(cluster, "members", cluster)
    return Projector(ts, svs).project(members, thresh)
