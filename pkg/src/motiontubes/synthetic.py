"""Synthetic moving-object scenes with exact flow and ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .videoio import FlowField, Scene, Tube


@dataclass(frozen=True)
class ObjectSpec:
    """A flat-shaded moving shape.

    ``center`` is the (x, y) position at frame 0 in pixel coordinates and
    ``velocity`` the constant (dx, dy) displacement per frame.
    """

    shape: str = "rectangle"
    size: tuple = (20, 10)
    center: tuple = (32.0, 32.0)
    velocity: tuple = (2.0, 0.0)
    intensity: float = 0.75

    def __post_init__(self):
        if self.shape not in ("rectangle", "ellipse"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if min(self.size) <= 0:
            raise ValueError("object size must be positive")

    def position(self, t: int) -> tuple[float, float]:
        return (self.center[0] + t * self.velocity[0], self.center[1] + t * self.velocity[1])

    def extent(self, t: int) -> tuple[int, int, int, int]:
        """Inclusive pixel bounds (x0, y0, x1, y1) covered at frame t."""
        cx, cy = self.position(t)
        hw, hh = self.size[0] / 2.0, self.size[1] / 2.0
        if self.shape == "rectangle":
            return (
                math.ceil(cx - hw),
                math.ceil(cy - hh),
                math.ceil(cx + hw) - 1,
                math.ceil(cy + hh) - 1,
            )
        return (math.ceil(cx - hw), math.ceil(cy - hh), math.floor(cx + hw), math.floor(cy + hh))

    def rasterize(self, t: int, height: int, width: int) -> np.ndarray:
        cx, cy = self.position(t)
        ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
        dx, dy = xs - cx, ys - cy
        hw, hh = self.size[0] / 2.0, self.size[1] / 2.0
        if self.shape == "rectangle":
            return (dx >= -hw) & (dx < hw) & (dy >= -hh) & (dy < hh)
        return (dx / hw) ** 2 + (dy / hh) ** 2 <= 1.0


@dataclass(frozen=True)
class SynthConfig:
    width: int = 128
    height: int = 128
    num_frames: int = 20
    objects: tuple = (ObjectSpec(),)
    background_velocity: tuple = (0.0, 0.0)
    background_intensity: float = 0.3
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.num_frames < 2:
            raise ValueError("num_frames must be at least 2")
        if self.width < 3 or self.height < 3:
            raise ValueError("canvas too small")
        if self.noise < 0:
            raise ValueError("noise amplitude must be non-negative")


def _texture(rng, height, width, base, amplitude):
    return base + rng.uniform(-amplitude, amplitude, size=(height, width))


def _sample_moving(texture, offset):
    """Read a periodic texture that has moved by ``offset`` pixels."""
    ox, oy = int(round(offset[0])), int(round(offset[1]))
    return np.roll(texture, shift=(oy, ox), axis=(0, 1))


def synthesize(config: SynthConfig) -> Scene:
    """Render frames, forward/backward flows and ground-truth tubes.

    Later objects occlude earlier ones, and flow at an occluded pixel is
    the occluder's velocity. Objects must stay at least one pixel inside
    the canvas for the whole clip.
    """
    H, W, T = config.height, config.width, config.num_frames
    for i, obj in enumerate(config.objects):
        for t in range(T):
            x0, y0, x1, y1 = obj.extent(t)
            if x0 < 1 or y0 < 1 or x1 > W - 2 or y1 > H - 2:
                raise ValueError(
                    f"object {i} at frame {t} spans x={x0}..{x1}, y={y0}..{y1}; "
                    f"it must stay at least 1 px inside the {W}x{H} canvas"
                )

    rng = np.random.default_rng(config.seed)
    bg_tex = _texture(rng, H, W, config.background_intensity, config.noise)
    obj_tex = [_texture(rng, H, W, obj.intensity, config.noise) for obj in config.objects]

    bvx, bvy = config.background_velocity
    frames, owners = [], []
    for t in range(T):
        img = _sample_moving(bg_tex, (t * bvx, t * bvy))
        owner = np.full((H, W), -1, dtype=np.int64)
        for i, obj in enumerate(config.objects):
            inside = obj.rasterize(t, H, W)
            tex = _sample_moving(obj_tex[i], (t * obj.velocity[0], t * obj.velocity[1]))
            img = np.where(inside, tex, img)
            owner[inside] = i
        img = np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
        frames.append(img)
        owners.append(owner)

    vel_u = np.array([o.velocity[0] for o in config.objects] + [bvx], dtype=np.float64)
    vel_v = np.array([o.velocity[1] for o in config.objects] + [bvy], dtype=np.float64)
    # owner -1 indexes the trailing background entry
    flows = [FlowField(vel_u[owners[t]], vel_v[owners[t]]) for t in range(T - 1)]
    backward = [FlowField(-vel_u[owners[t + 1]], -vel_v[owners[t + 1]]) for t in range(T - 1)]

    gt = []
    for i in range(len(config.objects)):
        masks = np.stack([owners[t] == i for t in range(T)])
        gt.append(Tube(0, masks, meta={"object": i}))
    return Scene(frames, flows, backward, gt, config.seed)


def gt_label_map(scene: Scene, t: int) -> np.ndarray:
    """Per-pixel ground-truth owner at frame t (-1 for background)."""
    H, W = scene.frame_shape
    labels = np.full((H, W), -1, dtype=np.int64)
    for i, tube in enumerate(scene.gt_tubes):
        mask = tube.mask_at(t)
        if mask is not None:
            labels[mask] = i
    return labels


def preset(name: str, seed: int = 0, num_frames: int = 20, width: int = 128, height: int = 128) -> SynthConfig:
    """Ready-made scenes: ``single`` (one rectangle moving right), ``two``
    (rectangle and ellipse moving in opposite directions) and ``static``
    (one rectangle that never moves)."""
    if name == "single":
        objects = (ObjectSpec("rectangle", (32, 24), (40.0, 50.0), (2.0, 0.0)),)
    elif name == "two":
        objects = (
            ObjectSpec("rectangle", (32, 24), (40.0, 36.0), (2.0, 0.0)),
            ObjectSpec("ellipse", (30, 24), (88.0, 92.0), (-2.0, 0.0), 0.55),
        )
    elif name == "static":
        objects = (ObjectSpec("rectangle", (32, 24), (60.0, 60.0), (0.0, 0.0)),)
    else:
        raise ValueError(f"unknown preset {name!r}")
    return SynthConfig(width, height, num_frames, objects, seed=seed)
