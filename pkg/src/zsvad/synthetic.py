"""Synthetic test videos with a planted, moving bright rectangle.

Backgrounds are chosen so every 8x8-aligned block has the same mean
intensity (flat, 4-pixel checkerboard, 8-pixel vertical stripes). The
ground-truth mask covers exactly the rectangle's pixels, and a frame is
anomalous exactly when the rectangle is drawn.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractViolation
from .numerics import Rng

PATTERNS = ("flat", "checker", "stripes")


@dataclass(frozen=True)
class SyntheticScene:
    video_id: str
    frames: int = 16
    height: int = 64
    width: int = 64
    pattern: str = "flat"
    background_level: float = 0.3
    contrast: float = 0.1
    noise_std: float = 0.02
    # rectangle; present on frames [start_frame, end_frame)
    rect_height: int = 0
    rect_width: int = 0
    start_frame: int = 0
    end_frame: int = 0
    start_y: int = 0
    start_x: int = 0
    velocity_y: int = 0
    velocity_x: int = 0
    brightness: float = 0.5

    def has_rect(self, t: int) -> bool:
        return self.rect_height > 0 and self.rect_width > 0 and self.start_frame <= t < self.end_frame

    def rect_at(self, t: int) -> tuple[int, int]:
        dt = t - self.start_frame
        return self.start_y + self.velocity_y * dt, self.start_x + self.velocity_x * dt

    def to_dict(self) -> dict:
        return asdict(self)


def background(scene: SyntheticScene) -> np.ndarray:
    yy, xx = np.mgrid[0:scene.height, 0:scene.width]
    if scene.pattern == "flat":
        sign = np.zeros((scene.height, scene.width))
    elif scene.pattern == "checker":
        sign = np.where(((yy // 4) + (xx // 4)) % 2 == 0, 1.0, -1.0)
    elif scene.pattern == "stripes":
        sign = np.where((xx // 4) % 2 == 0, 1.0, -1.0)
    else:
        raise ContractViolation(f"unknown background pattern {scene.pattern!r}")
    return scene.background_level + scene.contrast * sign


def generate_synthetic(scene: SyntheticScene, rng: Rng):
    """Render ``scene``; returns ``(frames T x 1 x H x W, frame_labels, masks T x H x W)``."""
    if scene.frames < 1 or scene.height < 1 or scene.width < 1:
        raise ContractViolation("scene dimensions must be positive")
    for t in range(scene.frames):
        if scene.has_rect(t):
            y, x = scene.rect_at(t)
            if y < 0 or x < 0 or y + scene.rect_height > scene.height or x + scene.rect_width > scene.width:
                raise ContractViolation(f"{scene.video_id}: rectangle leaves the frame at t={t}")
    bg = background(scene)
    noise = rng.normals((scene.frames, scene.height, scene.width), std=scene.noise_std)
    frames = bg[None] + noise
    masks = np.zeros((scene.frames, scene.height, scene.width), dtype=np.uint8)
    for t in range(scene.frames):
        if scene.has_rect(t):
            y, x = scene.rect_at(t)
            masks[t, y:y + scene.rect_height, x:x + scene.rect_width] = 1
    frames = np.clip(frames + scene.brightness * masks, 0.0, 1.0)
    labels = masks.reshape(scene.frames, -1).any(axis=1).astype(np.int64)
    return frames[:, None], labels, masks


def random_scene(rng: Rng, video_id: str, frames: int = 16, height: int = 64, width: int = 64,
                 anomaly_rate: float = 0.8) -> SyntheticScene:
    """Draw a scene; the rectangle (if any) fits in the frame for its whole lifetime."""
    pattern = PATTERNS[rng.below(len(PATTERNS))]
    level = 0.2 + 0.2 * rng.random()
    if rng.random() >= anomaly_rate:
        return SyntheticScene(video_id, frames, height, width, pattern, level)
    rh = 8 + rng.below(9)
    rw = 8 + rng.below(9)
    length = max(1, frames // 4 + rng.below(max(1, frames // 2)))
    start = rng.below(frames - length + 1)
    vy = rng.below(5) - 2
    vx = rng.below(5) - 2
    span = length - 1
    y_lo, y_hi = max(0, -vy * span), min(height - rh, height - rh - vy * span)
    x_lo, x_hi = max(0, -vx * span), min(width - rw, width - rw - vx * span)
    if y_hi < y_lo:
        vy, y_lo, y_hi = 0, 0, height - rh
    if x_hi < x_lo:
        vx, x_lo, x_hi = 0, 0, width - rw
    y0 = y_lo + rng.below(y_hi - y_lo + 1)
    x0 = x_lo + rng.below(x_hi - x_lo + 1)
    return SyntheticScene(video_id, frames, height, width, pattern, level,
                          rect_height=rh, rect_width=rw, start_frame=start, end_frame=start + length,
                          start_y=y0, start_x=x0, velocity_y=vy, velocity_x=vx)


def synthetic_suite(count: int, seed: int = 0, frames: int = 16, height: int = 64,
                    width: int = 64) -> list[SyntheticScene]:
    rng = Rng(seed)
    return [random_scene(rng, f"synth_{i:03d}", frames, height, width) for i in range(count)]
