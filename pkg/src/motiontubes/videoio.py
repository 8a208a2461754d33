"""Readers and writers for frames, flow fields, masks, tubes and scenes.

Formats
-------
* Flow: Middlebury ``.flo`` (float32 magic 202021.25, int32 width and
  height, then interleaved little-endian float32 ``u, v`` in row-major order).
* Frames and masks: binary PGM (``P5``). Masks are stored as {0, 255}.
  Grayscale frames are quantized to 8 bits; RGB frames go to ``P6``.
  16-bit PGM (maxval > 255) is used for label maps.
* Tube container: a directory holding ``frame_NNNNN.pgm`` for every frame in
  the span plus ``manifest.json`` with ``firstFrame``, ``lastFrame``,
  ``width``, ``height`` and ``score``.
* Scene manifest: ``scene.json`` listing frame, forward/backward flow and
  ground-truth tube paths relative to the manifest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FLO_MAGIC = 202021.25


class FormatError(ValueError):
    """Raised when a file does not follow its declared layout."""


@dataclass(frozen=True, eq=False)
class FlowField:
    """Dense displacement field from frame t to another frame.

    ``u`` is the horizontal (column) and ``v`` the vertical (row)
    displacement in pixels. Arrays are stored as float32, the precision of
    the ``.flo`` format, so save/load round-trips bit-exactly.
    """

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.ascontiguousarray(self.u, dtype=np.float32)
        v = np.ascontiguousarray(self.v, dtype=np.float32)
        if u.ndim != 2 or u.shape != v.shape:
            raise ValueError(f"u and v must be equal 2-D arrays, got {u.shape} and {v.shape}")
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise ValueError("flow contains non-finite values")
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    def magnitude(self) -> np.ndarray:
        u = self.u.astype(np.float64)
        v = self.v.astype(np.float64)
        return np.sqrt(u * u + v * v)

    def stacked(self) -> np.ndarray:
        """Return a (H, W, 2) float64 array of ``(u, v)``."""
        return np.stack([self.u, self.v], axis=-1).astype(np.float64)

    def __eq__(self, other):
        if not isinstance(other, FlowField):
            return NotImplemented
        return np.array_equal(self.u, other.u) and np.array_equal(self.v, other.v)

    __hash__ = None


def load_flow(path) -> FlowField:
    with open(path, "rb") as fh:
        header = fh.read(12)
        if len(header) < 12:
            raise OSError(f"{path}: truncated .flo header")
        magic = np.frombuffer(header[:4], "<f4")[0]
        if magic != np.float32(FLO_MAGIC):
            raise FormatError(f"{path}: bad .flo magic {magic!r}")
        width, height = np.frombuffer(header[4:12], "<i4")
        if width <= 0 or height <= 0:
            raise FormatError(f"{path}: invalid size {width}x{height}")
        count = 2 * int(width) * int(height)
        payload = fh.read(4 * count)
    if len(payload) < 4 * count:
        raise OSError(f"{path}: truncated .flo payload ({len(payload)} of {4 * count} bytes)")
    data = np.frombuffer(payload, "<f4").reshape(int(height), int(width), 2)
    return FlowField(data[..., 0], data[..., 1])


def save_flow(path, flow: FlowField) -> None:
    data = np.empty((flow.height, flow.width, 2), dtype="<f4")
    data[..., 0] = flow.u
    data[..., 1] = flow.v
    with open(path, "wb") as fh:
        fh.write(np.array([FLO_MAGIC], dtype="<f4").tobytes())
        fh.write(np.array([flow.width, flow.height], dtype="<i4").tobytes())
        fh.write(data.tobytes())


# ---------------------------------------------------------------------------
# Netpbm


def _read_netpbm(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    magic = raw[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported netpbm magic {magic!r}")
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated netpbm header")
        try:
            tokens.append(int(raw[start:pos]))
        except ValueError as exc:
            raise FormatError(f"{path}: bad header token {raw[start:pos]!r}") from exc
    pos += 1  # single whitespace byte ends the header
    width, height, maxval = tokens
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise FormatError(f"{path}: invalid header {width}x{height} maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    nbytes = width * height * channels * dtype.itemsize
    body = raw[pos:]
    if len(body) != nbytes:
        raise FormatError(
            f"{path}: payload has {len(body)} bytes, header declares {nbytes}"
        )
    data = np.frombuffer(body, dtype).reshape(height, width, channels)
    if channels == 1:
        data = data[..., 0]
    return data, maxval


def _write_netpbm(path, data: np.ndarray, maxval: int) -> None:
    if data.ndim == 2:
        magic = b"P5"
    elif data.ndim == 3 and data.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot store array of shape {data.shape} as netpbm")
    dtype = ">u2" if maxval > 255 else "u1"
    height, width = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"%s\n%d %d\n%d\n" % (magic, width, height, maxval))
        fh.write(np.ascontiguousarray(data, dtype=dtype).tobytes())


def save_mask(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError("mask must be 2-D")
    _write_netpbm(path, np.where(mask.astype(bool), 255, 0).astype(np.uint8), 255)


def load_mask(path) -> np.ndarray:
    data, maxval = _read_netpbm(path)
    if data.ndim != 2:
        raise FormatError(f"{path}: mask must be single-channel")
    return data > 0


def save_frame(path, frame: np.ndarray) -> None:
    """Store a frame with values in [0, 1], quantized to 8 bits.

    Frames whose values are multiples of 1/255 (as produced by the
    synthesizer) round-trip exactly.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if not np.isfinite(frame).all() or frame.min(initial=0.0) < 0 or frame.max(initial=0.0) > 1:
        raise ValueError("frame values must be finite and within [0, 1]")
    if frame.ndim == 3 and frame.shape[2] == 1:
        frame = frame[..., 0]
    _write_netpbm(path, np.rint(frame * 255.0).astype(np.uint8), 255)


def load_frame(path) -> np.ndarray:
    data, maxval = _read_netpbm(path)
    return data.astype(np.float64) / maxval


def save_labels(path, labels: np.ndarray) -> None:
    """Store a non-negative integer label map as 16-bit PGM."""
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 65535:
        raise ValueError("labels must fit in 16 bits")
    _write_netpbm(path, labels.astype(np.uint16), 65535)


def load_labels(path) -> np.ndarray:
    data, _ = _read_netpbm(path)
    return data.astype(np.int64)


def save_strength(path, strength: np.ndarray) -> None:
    """Store a [0, 1] map as 8-bit PGM. Lossy: values are rounded to k/255."""
    _write_netpbm(path, np.rint(np.clip(strength, 0.0, 1.0) * 255.0).astype(np.uint8), 255)


def load_strength(path) -> np.ndarray:
    data, maxval = _read_netpbm(path)
    return data.astype(np.float64) / maxval


# ---------------------------------------------------------------------------
# Tubes


def bounding_box(mask: np.ndarray):
    """Tight inclusive box ``(x0, y0, x1, y1)`` of a mask, or None if empty."""
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    return (int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1]))


@dataclass(eq=False)
class Tube:
    """A spatio-temporal binary volume over a contiguous frame span.

    ``masks[k]`` is the mask of frame ``start + k``. The score is filled in
    by ranking.
    """

    start: int
    masks: np.ndarray
    score: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=bool)
        if self.masks.ndim != 3 or len(self.masks) == 0:
            raise ValueError("tube masks must be a non-empty (L, H, W) stack")
        if self.start < 0:
            raise ValueError("tube start must be non-negative")

    @property
    def end(self) -> int:
        """Last frame index, inclusive."""
        return self.start + len(self.masks) - 1

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.masks.shape[1:]

    @property
    def volume(self) -> int:
        return int(self.masks.sum())

    @property
    def boxes(self) -> dict:
        """Per-frame tight boxes, keyed by absolute frame index (empty frames skipped)."""
        out = {}
        for k, mask in enumerate(self.masks):
            box = bounding_box(mask)
            if box is not None:
                out[self.start + k] = box
        return out

    def mask_at(self, frame: int):
        if self.start <= frame <= self.end:
            return self.masks[frame - self.start]
        return None

    def trimmed(self) -> "Tube":
        """Drop empty frames at both ends of the span."""
        nonempty = np.flatnonzero(self.masks.reshape(len(self.masks), -1).any(axis=1))
        if nonempty.size == 0:
            raise ValueError("tube is empty in every frame")
        lo, hi = nonempty[0], nonempty[-1]
        return Tube(self.start + int(lo), self.masks[lo : hi + 1], self.score, dict(self.meta))


def save_tube(dirpath, tube: Tube) -> None:
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    for k, mask in enumerate(tube.masks):
        save_mask(dirpath / f"frame_{tube.start + k:05d}.pgm", mask)
    height, width = tube.frame_shape
    manifest = {
        "firstFrame": tube.start,
        "lastFrame": tube.end,
        "width": int(width),
        "height": int(height),
        "score": float(tube.score),
    }
    (dirpath / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_tube(dirpath) -> Tube:
    dirpath = Path(dirpath)
    try:
        manifest = json.loads((dirpath / "manifest.json").read_text())
        first, last = int(manifest["firstFrame"]), int(manifest["lastFrame"])
        width, height = int(manifest["width"]), int(manifest["height"])
        score = float(manifest.get("score", 0.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{dirpath}: bad tube manifest: {exc}") from exc
    if last < first:
        raise FormatError(f"{dirpath}: lastFrame < firstFrame")
    masks = []
    for t in range(first, last + 1):
        mask = load_mask(dirpath / f"frame_{t:05d}.pgm")
        if mask.shape != (height, width):
            raise FormatError(
                f"{dirpath}: frame {t} is {mask.shape[1]}x{mask.shape[0]}, manifest says {width}x{height}"
            )
        masks.append(mask)
    return Tube(first, np.stack(masks), score)


# ---------------------------------------------------------------------------
# Scenes


@dataclass(frozen=True, eq=False)
class Scene:
    """Frames, flows and optional ground truth of one video.

    ``flows[t]`` maps frame t to t+1 and ``backward_flows[t]`` maps frame
    t+1 back to t.
    """

    frames: tuple
    flows: tuple
    backward_flows: tuple = ()
    gt_tubes: tuple = ()
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "flows", tuple(self.flows))
        object.__setattr__(self, "backward_flows", tuple(self.backward_flows))
        object.__setattr__(self, "gt_tubes", tuple(self.gt_tubes))
        if len(self.frames) < 2:
            raise ValueError("a scene needs at least two frames")
        if len(self.flows) != len(self.frames) - 1:
            raise ValueError(
                f"expected {len(self.frames) - 1} forward flows, got {len(self.flows)}"
            )
        if self.backward_flows and len(self.backward_flows) != len(self.flows):
            raise ValueError("backward flow count must match forward flow count")
        shape = self.frame_shape
        for f in self.flows + self.backward_flows:
            if f.shape != shape:
                raise ValueError(f"flow of shape {f.shape} does not match frames {shape}")

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def frame_shape(self) -> tuple[int, int]:
        return tuple(np.shape(self.frames[0])[:2])

    def motion_field(self, t: int) -> FlowField:
        """Flow describing the motion of frame t's pixels.

        The last frame has no forward flow; its motion is the negated
        backward flow from it to the previous frame.
        """
        if t < len(self.flows):
            return self.flows[t]
        if self.backward_flows:
            back = self.backward_flows[t - 1]
            return FlowField(-back.u, -back.v)
        return self.flows[t - 1]


def save_scene(dirpath, scene: Scene) -> Path:
    """Write a scene directory and return the path of its manifest."""
    dirpath = Path(dirpath)
    for sub in ("frames", "flows", "gt"):
        (dirpath / sub).mkdir(parents=True, exist_ok=True)
    manifest = {"frames": [], "flows": [], "backwardFlows": [], "gt": [], "seed": scene.seed}
    for t, frame in enumerate(scene.frames):
        rel = f"frames/frame_{t:05d}.pgm"
        save_frame(dirpath / rel, frame)
        manifest["frames"].append(rel)
    for t, flow in enumerate(scene.flows):
        rel = f"flows/forward_{t:05d}.flo"
        save_flow(dirpath / rel, flow)
        manifest["flows"].append(rel)
    for t, flow in enumerate(scene.backward_flows):
        rel = f"flows/backward_{t:05d}.flo"
        save_flow(dirpath / rel, flow)
        manifest["backwardFlows"].append(rel)
    for i, tube in enumerate(scene.gt_tubes):
        rel = f"gt/object_{i:03d}"
        save_tube(dirpath / rel, tube)
        manifest["gt"].append(rel)
    height, width = scene.frame_shape
    manifest["width"], manifest["height"] = int(width), int(height)
    path = dirpath / "scene.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_scene(path) -> Scene:
    path = Path(path)
    if path.is_dir():
        path = path / "scene.json"
    root = path.parent
    try:
        manifest = json.loads(path.read_text())
        frames = [load_frame(root / p) for p in manifest["frames"]]
        flows = [load_flow(root / p) for p in manifest["flows"]]
    except KeyError as exc:
        raise FormatError(f"{path}: manifest misses {exc}") from exc
    backward = [load_flow(root / p) for p in manifest.get("backwardFlows", [])]
    gt = [load_tube(root / p) for p in manifest.get("gt", [])]
    try:
        return Scene(frames, flows, backward, gt, manifest.get("seed"))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc

