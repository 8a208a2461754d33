"""Tube overlays on video frames."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .videoio import Tube, save_frame


def blend(frame: np.ndarray, mask: np.ndarray | None, color=(1.0, 0.0, 0.0), alpha: float = 0.5) -> np.ndarray:
    """RGB frame with ``mask`` pixels set to ``(1 - alpha) * frame + alpha * color``."""
    frame = np.asarray(frame, dtype=np.float64)
    rgb = np.repeat(frame[..., None], 3, axis=2) if frame.ndim == 2 else frame.copy()
    if mask is not None:
        rgb[mask] = (1.0 - alpha) * rgb[mask] + alpha * np.asarray(color, dtype=np.float64)
    return rgb


def overlay(tube: Tube, frames, out_dir, color=(1.0, 0.0, 0.0), alpha: float = 0.5) -> list[Path]:
    """Write one ``overlay_NNNNN.ppm`` per frame; frames outside the tube's
    span are copied unchanged (as RGB)."""
    frames = list(frames)
    if tube.end >= len(frames):
        raise ValueError(f"tube span {tube.span} exceeds the {len(frames)} frames")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, frame in enumerate(frames):
        path = out_dir / f"overlay_{t:05d}.ppm"
        save_frame(path, blend(frame, tube.mask_at(t), color, alpha))
        paths.append(path)
    return paths
