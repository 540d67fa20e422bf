"""Time-pressure progress bar rendered as discrete grayscale frames.

The bar gains one unit per second and resets every `period_s` seconds. Frames
are sampled at `frame_rate_hz`, so the fill level only changes once per
second. "No pressure" is an all-zero image of the same shape, keeping the
observation shape constant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StimulusConfig:
    frame_rate_hz: int = 5
    period_s: int = 5
    units: int = 5
    image_w: int = 64
    image_h: int = 8

    def __post_init__(self) -> None:
        if self.frame_rate_hz < 1 or self.period_s < 1:
            raise ValueError("frame_rate_hz and period_s must be >= 1")
        if self.units != self.period_s:
            raise ValueError("units must equal period_s (one unit per second)")


@dataclass(frozen=True)
class StimulusFrame:
    step_index: int
    fill_units: int
    image: np.ndarray  # (image_h, image_w) float32 in [0, 1]
    pressure_on: bool


def fill_units_at(step_index: int, cfg: StimulusConfig) -> int:
    """Lit segments at a sample step: floor(seconds) modulo the reset period."""
    return (step_index // cfg.frame_rate_hz) % cfg.period_s


def _bar_image(fill: int, cfg: StimulusConfig) -> np.ndarray:
    img = np.zeros((cfg.image_h, cfg.image_w), dtype=np.float32)
    for k in range(fill):
        lo = round(k * cfg.image_w / cfg.units)
        hi = round((k + 1) * cfg.image_w / cfg.units) - 1  # 1px gap between segments
        img[:, lo:hi] = 1.0
    return img


def render_frame(step_index: int, pressure_on: bool, cfg: StimulusConfig = StimulusConfig()) -> StimulusFrame:
    if step_index < 0:
        raise ValueError("step_index must be >= 0")
    if not pressure_on:
        image = np.zeros((cfg.image_h, cfg.image_w), dtype=np.float32)
        return StimulusFrame(step_index, 0, image, False)
    fill = fill_units_at(step_index, cfg)
    return StimulusFrame(step_index, fill, _bar_image(fill, cfg), True)


def frame_sequence(duration_steps: int, pressure_on: bool, cfg: StimulusConfig = StimulusConfig()) -> list[StimulusFrame]:
    if duration_steps < 1:
        raise ValueError("duration_steps must be >= 1")
    return [render_frame(i, pressure_on, cfg) for i in range(duration_steps)]


def export_fill_contract(path, cfg: StimulusConfig = StimulusConfig(), t_max_s: float = 20.0, dt_s: float = 0.1) -> None:
    """Dump (time, fill_units) samples so other renderers can verify bit-exact fill.

    Times are kept on a 0.1 s grid; fill is computed from whole elapsed seconds,
    matching fill_units_at for any frame rate.
    """
    samples = []
    n = int(round(t_max_s / dt_s))
    for i in range(n + 1):
        t = round(i * dt_s, 10)
        fill = int(t) % cfg.period_s
        samples.append({"t": t, "fill": fill})
    doc = {
        "period_s": cfg.period_s,
        "units": cfg.units,
        "samples": samples,
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=0, sort_keys=True)


def dump_frames_png(directory, frames: list[StimulusFrame]) -> None:
    """Optional PNG dump for documentation; requires Pillow."""
    from PIL import Image
    import os

    os.makedirs(directory, exist_ok=True)
    for fr in frames:
        arr = (fr.image * 255).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(os.path.join(directory, f"frame_{fr.step_index:04d}.png"))
