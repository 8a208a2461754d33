"""Motion and image boundary maps from a gradient operator.

Boundary strength is ``1 - exp(-|grad m| / scale)`` where ``m`` is the flow
magnitude (motion boundaries) or the intensity (image boundaries) and the
gradient uses the 3x3 Scharr stencil with replicated borders. Maps written
to PGM are quantized to 8 bits, which is lossy; the pipeline itself keeps
full precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from .videoio import FlowField

@dataclass(frozen=True)
class BoundaryParams:
    scale: float = 2.0
    nms: bool = False

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")


def gradient(field: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scharr derivatives (weights 3, 10, 3 over 32) with replicated borders.

    Written as central differences so that constant regions give exactly 0.
    """
    p = np.pad(np.asarray(field, dtype=np.float64), 1, mode="edge")
    dx = p[:, 2:] - p[:, :-2]
    dy = p[2:, :] - p[:-2, :]
    gx = (3.0 * dx[:-2, :] + 10.0 * dx[1:-1, :] + 3.0 * dx[2:, :]) / 32.0
    gy = (3.0 * dy[:, :-2] + 10.0 * dy[:, 1:-1] + 3.0 * dy[:, 2:]) / 32.0
    return gx, gy


def squash(g: np.ndarray, scale: float) -> np.ndarray:
    return -np.expm1(-np.asarray(g) / scale)


def non_max_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Zero every pixel that is not a local maximum along its gradient direction."""
    H, W = mag.shape
    padded = np.pad(mag, 1, mode="constant")
    angle = np.mod(np.arctan2(gy, gx), np.pi)
    # quantize to 0, 45, 90, 135 degrees
    sector = np.rint(angle / (np.pi / 4)).astype(int) % 4
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    keep = np.zeros((H, W), dtype=bool)
    ys, xs = np.mgrid[0:H, 0:W]
    for s, (dy, dx) in offsets.items():
        sel = sector == s
        if not sel.any():
            continue
        y, x = ys[sel] + 1, xs[sel] + 1
        centre = padded[y, x]
        keep[sel] = (centre >= padded[y + dy, x + dx]) & (centre >= padded[y - dy, x - dx])
    return np.where(keep, mag, 0.0)


def boundary_strength(field: np.ndarray, params: BoundaryParams = BoundaryParams()) -> np.ndarray:
    gx, gy = gradient(field)
    mag = np.hypot(gx, gy)
    if params.nms:
        mag = non_max_suppression(mag, gx, gy)
    return np.clip(squash(mag, params.scale), 0.0, 1.0)


def motion_boundaries(flow: FlowField, params: BoundaryParams = BoundaryParams()) -> np.ndarray:
    """Boundary map of the flow magnitude (direction is ignored)."""
    return boundary_strength(flow.magnitude(), params)


def image_boundaries(frame: np.ndarray, params: BoundaryParams = BoundaryParams()) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 3:
        frame = frame.mean(axis=2)
    return boundary_strength(frame, params)
