"""Gaussian heatmap encoding of trajectories and goals, and peak decoding.

Pixel points are ``(x, y)`` = ``(column, row)``; rasters are indexed ``[row, col]``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image

from . import _kernels
from .errors import ConfigError, DecodeError
from .raster import round_half_away

DEFAULT_VARIANCE = 4.0
ROLES = ("semantic-map", "past-traj", "long-goal", "short-goal")


class EmptyTrajectoryWarning(UserWarning):
    pass


@lru_cache(maxsize=16)
def _table(variance: float) -> tuple:
    return tuple(_kernels.gaussian_table(variance))


def encode_points(points, height: int, width: int, variance: float = DEFAULT_VARIANCE) -> np.ndarray:
    """Render ``exp(-d^2 / (2 variance))`` bumps at each point's nearest pixel, max-combined.

    Bumps are truncated at four standard deviations. Points off the raster
    contribute whatever part of their bump overlaps it.
    """
    if variance <= 0:
        raise ConfigError("variance must be positive")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    idx = round_half_away(pts) if len(pts) else np.zeros((0, 2), dtype=np.int64)
    # keep far-away points from overflowing the kernel's integer arithmetic
    idx = np.clip(idx, -(1 << 20), 1 << 20)
    return _kernels.render_gaussians(idx, int(height), int(width), np.array(_table(float(variance))))


def encode_past(traj_px, height: int, width: int, variance: float = DEFAULT_VARIANCE) -> np.ndarray:
    """All observed positions in a single channel."""
    traj = np.asarray(traj_px, dtype=np.float64).reshape(-1, 2)
    if len(traj) == 0:
        warnings.warn("empty past trajectory; emitting a blank channel", EmptyTrajectoryWarning, stacklevel=2)
    return encode_points(traj, height, width, variance)


def encode_goal(point_px, height: int, width: int, variance: float = DEFAULT_VARIANCE) -> np.ndarray:
    return encode_points(np.asarray(point_px, dtype=np.float64).reshape(1, 2), height, width, variance)


def decode_peak(hm) -> tuple[int, int]:
    """Arg-max pixel ``(x, y)``; ties go to the smallest row, then smallest column."""
    hm = np.asarray(hm)
    if hm.size == 0:
        raise DecodeError("empty raster")
    if not np.any(hm):
        raise DecodeError("all-zero heatmap has no peak")
    row, col = np.unravel_index(int(np.argmax(hm)), hm.shape)
    return int(col), int(row)


def decode_peaks(stack) -> np.ndarray:
    """Vectorised :func:`decode_peak` over the leading axes of ``(..., H, W)``."""
    stack = np.asarray(stack)
    flat = stack.reshape(-1, stack.shape[-2] * stack.shape[-1])
    if not np.all(np.any(flat, axis=1)):
        raise DecodeError("all-zero heatmap has no peak")
    row, col = np.divmod(np.argmax(flat, axis=1), stack.shape[-1])
    return np.stack([col, row], axis=-1).reshape(stack.shape[:-2] + (2,))


def softargmax(hm, temperature: float = 1.0) -> tuple[float, float]:
    """Expected ``(x, y)`` under ``softmax(hm / temperature)``."""
    if temperature <= 0:
        raise ConfigError("temperature must be positive")
    hm = np.asarray(hm, dtype=np.float64)
    logits = hm / temperature
    w = np.exp(logits - logits.max())
    w /= w.sum()
    rows, cols = np.indices(hm.shape)
    return float((w * cols).sum()), float((w * rows).sum())


@dataclass
class HeatmapStack:
    channels: np.ndarray
    roles: list[str]

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float32)
        if self.channels.ndim != 3 or len(self.roles) != self.channels.shape[0]:
            raise ConfigError("channels must be C x H x W with one role per channel")
        if self.channels.shape[1] != self.channels.shape[2]:
            raise ConfigError("heatmap rasters must be square")
        if self.channels.size and (self.channels.min() < 0.0 or self.channels.max() > 1.0):
            raise ConfigError("heatmap values must lie in [0, 1]")
        for role in self.roles:
            if role.split("-")[0] + "-" + role.split("-")[1] not in ROLES:
                raise ConfigError(f"unknown channel role {role!r}")
        if self.roles.count("semantic-map") > 1:
            raise ConfigError("at most one semantic-map channel")

    def dump_pgm(self, directory) -> list[Path]:
        """Write one 8-bit PGM per channel, scaled to [0, 255]."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for i, (role, ch) in enumerate(zip(self.roles, self.channels)):
            path = directory / f"{i:02d}_{role}.pgm"
            Image.fromarray(np.round(ch * 255.0).astype(np.uint8), mode="L").save(path)
            paths.append(path)
        return paths
