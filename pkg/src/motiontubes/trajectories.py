"""Dense point trajectories obtained by chaining optical flow fields."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .videoio import FlowField


@dataclass(frozen=True, eq=False)
class Trajectory:
    id: int
    start: int
    points: np.ndarray  # (L, 2) subpixel (x, y), one row per frame of life

    @property
    def end(self) -> int:
        return self.start + len(self.points) - 1

    def __len__(self):
        return len(self.points)

    def alive_at(self, t: int) -> bool:
        return self.start <= t <= self.end

    def position(self, t: int) -> np.ndarray:
        return self.points[t - self.start]


class TrajectorySet:
    """Immutable collection of trajectories with ids 0..n-1."""

    def __init__(self, trajectories, num_frames: int, shape):
        self.trajectories = tuple(trajectories)
        for i, tr in enumerate(self.trajectories):
            if tr.id != i:
                raise ValueError("trajectory ids must be dense and ordered")
        self.num_frames = int(num_frames)
        self.shape = tuple(shape)
        self._dense = None

    @property
    def n(self) -> int:
        return len(self.trajectories)

    def __len__(self):
        return self.n

    def __iter__(self):
        return iter(self.trajectories)

    def __getitem__(self, i):
        return self.trajectories[i]

    @property
    def starts(self) -> np.ndarray:
        return np.array([tr.start for tr in self.trajectories], dtype=np.int64)

    @property
    def ends(self) -> np.ndarray:
        return np.array([tr.end for tr in self.trajectories], dtype=np.int64)

    def dense(self) -> np.ndarray:
        """Positions as an (n, T, 2) array, NaN outside each lifespan."""
        if self._dense is None:
            out = np.full((self.n, self.num_frames, 2), np.nan)
            for tr in self.trajectories:
                out[tr.id, tr.start : tr.end + 1] = tr.points
            out.setflags(write=False)
            self._dense = out
        return self._dense

    def alive_at(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Ids alive at frame t and their positions."""
        pos = self.dense()[:, t]
        ids = np.flatnonzero(~np.isnan(pos[:, 0]))
        return ids, pos[ids]

    def rounded_points(self):
        """All (trajectory id, frame, row, col) samples with positions rounded
        to the nearest pixel and clipped to the frame."""
        H, W = self.shape
        dense = self.dense()
        ids, frames = np.nonzero(~np.isnan(dense[..., 0]))
        xy = dense[ids, frames]
        cols = np.clip(np.rint(xy[:, 0]).astype(np.int64), 0, W - 1)
        rows = np.clip(np.rint(xy[:, 1]).astype(np.int64), 0, H - 1)
        return ids, frames, rows, cols


@dataclass(frozen=True)
class TrackParams:
    stride: int = 4
    theta_a: float = 0.5
    theta_r: float = 0.01

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.theta_a < 0 or self.theta_r < 0:
            raise ValueError("consistency thresholds must be non-negative")


def bilinear(flow: FlowField, points: np.ndarray) -> np.ndarray:
    """Flow vectors at subpixel (x, y) points, shape (m, 2)."""
    H, W = flow.shape
    x = np.clip(points[:, 0], 0, W - 1)
    y = np.clip(points[:, 1], 0, H - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(W - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(H - 2, 0))
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx, fy = x - x0, y - y0
    out = np.empty((len(points), 2))
    for c, comp in enumerate((flow.u, flow.v)):
        comp = comp.astype(np.float64)
        top = comp[y0, x0] * (1 - fx) + comp[y0, x1] * fx
        bottom = comp[y1, x0] * (1 - fx) + comp[y1, x1] * fx
        out[:, c] = top * (1 - fy) + bottom * fy
    return out


def _cells(points, stride, ncols, nrows):
    cx = np.clip((points[:, 0] // stride).astype(np.int64), 0, ncols - 1)
    cy = np.clip((points[:, 1] // stride).astype(np.int64), 0, nrows - 1)
    return cy * ncols + cx


def link_trajectories(forward, backward, params: TrackParams = TrackParams()) -> TrajectorySet:
    """Chain flows from frame 0 onwards.

    A point p at frame t moves to p' = p + F_t(p) if p' is inside the frame
    and ``|F_t(p) + B_t(p')|^2 <= theta_a + theta_r (|F_t(p)|^2 + |B_t(p')|^2)``;
    otherwise its trajectory ends at t. New trajectories are seeded at the
    centre of every stride cell not occupied by a live trajectory. When two
    live trajectories land in the same cell the younger one is terminated.
    Trajectories shorter than two frames are dropped.
    """
    forward, backward = list(forward), list(backward)
    if len(forward) != len(backward):
        raise ValueError(
            f"forward and backward flow counts differ ({len(forward)} vs {len(backward)})"
        )
    if not forward:
        raise ValueError("need at least one flow field")
    H, W = forward[0].shape
    for f in forward + backward:
        if f.shape != (H, W):
            raise ValueError("flow fields have inconsistent sizes")
    T = len(forward) + 1
    s = params.stride
    ncols, nrows = -(-W // s), -(-H // s)
    gy, gx = np.divmod(np.arange(nrows * ncols), ncols)
    grid = np.stack(
        [np.minimum(gx * s + s // 2, W - 1), np.minimum(gy * s + s // 2, H - 1)], axis=1
    ).astype(np.float64)

    starts: list[int] = []
    history: list[list] = []
    live_ids = np.zeros(0, dtype=np.int64)
    live_pos = np.zeros((0, 2))

    def seed(t, ids, pos):
        occupied = np.zeros(nrows * ncols, dtype=bool)
        occupied[_cells(pos, s, ncols, nrows)] = True
        free = np.flatnonzero(~occupied)
        new_ids = np.arange(len(starts), len(starts) + len(free))
        for k in free:
            starts.append(t)
            history.append([grid[k]])
        return np.concatenate([ids, new_ids]), np.concatenate([pos, grid[free]])

    live_ids, live_pos = seed(0, live_ids, live_pos)
    for t in range(T - 1):
        fwd = bilinear(forward[t], live_pos)
        nxt = live_pos + fwd
        inside = (nxt[:, 0] >= 0) & (nxt[:, 0] <= W - 1) & (nxt[:, 1] >= 0) & (nxt[:, 1] <= H - 1)
        bwd = bilinear(backward[t], nxt)
        err = np.sum((fwd + bwd) ** 2, axis=1)
        budget = params.theta_a + params.theta_r * (np.sum(fwd**2, axis=1) + np.sum(bwd**2, axis=1))
        ok = inside & (err <= budget)
        ids, pos = live_ids[ok], nxt[ok]
        # ids grow with seeding time, so the smallest id in a cell is the oldest
        order = np.argsort(ids, kind="stable")
        ids, pos = ids[order], pos[order]
        _, first = np.unique(_cells(pos, s, ncols, nrows), return_index=True)
        first.sort()
        ids, pos = ids[first], pos[first]
        for i, p in zip(ids, pos):
            history[i].append(p)
        live_ids, live_pos = seed(t + 1, ids, pos)

    trajectories = []
    for start, pts in zip(starts, history):
        if len(pts) >= 2:
            trajectories.append(Trajectory(len(trajectories), start, np.array(pts)))
    return TrajectorySet(trajectories, T, (H, W))


def save_trajectories(path, ts: TrajectorySet) -> None:
    """JSON lines, one ``{id, startFrame, points}`` record per trajectory.

    The frame count and frame size go to a sidecar ``<stem>.json``.
    """
    path = Path(path)
    with open(path, "w") as fh:
        for tr in ts:
            rec = {"id": tr.id, "startFrame": tr.start, "points": tr.points.tolist()}
            fh.write(json.dumps(rec) + "\n")
    meta = {"frameCount": ts.num_frames, "height": ts.shape[0], "width": ts.shape[1]}
    path.with_suffix(".json").write_text(json.dumps(meta) + "\n")


def load_trajectories(path, num_frames: int | None = None, shape=None) -> TrajectorySet:
    """Read a JSON-lines trajectory file.

    Frame count and frame size come from the arguments, else from the
    sidecar written by ``save_trajectories``, else they are inferred from
    the data.
    """
    path = Path(path)
    sidecar = path.with_suffix(".json")
    if (num_frames is None or shape is None) and sidecar.exists() and sidecar != path:
        meta = json.loads(sidecar.read_text())
        num_frames = meta["frameCount"] if num_frames is None else num_frames
        shape = (meta["height"], meta["width"]) if shape is None else shape
    trajectories = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        pts = np.asarray(rec["points"], dtype=np.float64).reshape(-1, 2)
        trajectories.append(Trajectory(int(rec["id"]), int(rec["startFrame"]), pts))
    trajectories.sort(key=lambda tr: tr.id)
    if num_frames is None:
        num_frames = max((tr.end for tr in trajectories), default=0) + 1
    if shape is None:
        allpts = np.concatenate([tr.points for tr in trajectories]) if trajectories else np.zeros((1, 2))
        shape = (int(np.ceil(allpts[:, 1].max())) + 1, int(np.ceil(allpts[:, 0].max())) + 1)
    return TrajectorySet(trajectories, num_frames, shape)
