"""World/pixel transforms, semantic grids and local-map extraction."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DomainError, ParseError, TransformError

_W_EPS = 1e-12


def round_half_away(x):
    """Round to nearest integer, ties away from zero. Works on scalars and arrays."""
    x = np.asarray(x, dtype=np.float64)
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)


@dataclass(frozen=True)
class Homography:
    """3x3 projective map from world meters to pixel coordinates (x=column, y=row)."""

    matrix: np.ndarray
    _inverse: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise TransformError(f"homography must be 3x3, got {m.shape}")
        if abs(np.linalg.det(m)) <= 1e-12:
            raise TransformError("homography is singular")
        m.setflags(write=False)
        inv = np.linalg.inv(m)
        inv.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "_inverse", inv)

    @classmethod
    def similarity(cls, scale: float, offset=(0.0, 0.0)) -> "Homography":
        return cls(np.array([[scale, 0.0, offset[0]], [0.0, scale, offset[1]], [0.0, 0.0, 1.0]]))

    @property
    def inverse(self) -> np.ndarray:
        return self._inverse

    def to_list(self) -> list[float]:
        return [float(v) for v in self.matrix.ravel()]

    @classmethod
    def from_list(cls, values) -> "Homography":
        values = list(values)
        if len(values) != 9:
            raise ParseError(f"homography needs 9 values, got {len(values)}")
        return cls(np.array(values, dtype=np.float64).reshape(3, 3))


def _apply(m: np.ndarray, p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    x, y = p[..., 0], p[..., 1]
    u = m[0, 0] * x + m[0, 1] * y + m[0, 2]
    v = m[1, 0] * x + m[1, 1] * y + m[1, 2]
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if np.any(np.abs(w) < _W_EPS):
        raise TransformError("point maps to infinity (w ~ 0)")
    return np.stack([u / w, v / w], axis=-1)


def world_to_pixel(h: Homography, p) -> np.ndarray:
    """Map world points (..., 2) to pixel coordinates (..., 2)."""
    return _apply(h.matrix, p)


def pixel_to_world(h: Homography, p) -> np.ndarray:
    """Inverse of :func:`world_to_pixel`."""
    return _apply(h.inverse, p)


@dataclass
class SemanticGrid:
    """Class-ID raster with per-class values and navigability.

    ``cells`` is indexed ``[row, col]``; pixel point ``(x, y)`` addresses
    ``cells[round(y), round(x)]``.
    """

    cells: np.ndarray
    class_values: dict[int, float]
    navigable_classes: frozenset[int]
    pad_class: int

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.uint8)
        if self.cells.ndim != 2:
            raise DomainError("semantic grid must be 2-D")
        self.class_values = {int(k): float(v) for k, v in self.class_values.items()}
        self.navigable_classes = frozenset(int(c) for c in self.navigable_classes)
        self.pad_class = int(self.pad_class)
        vals = list(self.class_values.values())
        if len(set(vals)) != len(vals) or any(v < 0.0 or v > 1.0 for v in vals):
            raise DomainError("class_values must be distinct and within [0, 1]")
        if self.pad_class not in self.class_values:
            raise DomainError("pad_class must be a declared class")
        if self.pad_class in self.navigable_classes:
            raise DomainError("pad_class must be non-navigable")
        present = np.unique(self.cells)
        unknown = set(int(c) for c in present) - set(self.class_values)
        if unknown:
            raise DomainError(f"grid holds undeclared class ids {sorted(unknown)}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def value_lut(self) -> np.ndarray:
        lut = np.zeros(256, dtype=np.float64)
        for cid, val in self.class_values.items():
            lut[cid] = val
        return lut

    def navigable_mask(self) -> np.ndarray:
        return np.isin(self.cells, sorted(self.navigable_classes))

    def navigable_at(self, px) -> np.ndarray:
        """Boolean navigability of pixel points (..., 2); out-of-grid is False."""
        idx = round_half_away(px)
        cols, rows = idx[..., 0], idx[..., 1]
        h, w = self.cells.shape
        inside = (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)
        mask = self.navigable_mask()
        out = np.zeros(inside.shape, dtype=bool)
        out[inside] = mask[rows[inside], cols[inside]]
        return out


@dataclass(frozen=True)
class LocalMapSpec:
    center_px: tuple[int, int]
    radius_px: int
    out_size: int

    def __post_init__(self):
        if int(self.radius_px) < 1:
            raise DomainError("radius_px must be >= 1")
        if int(self.out_size) < 8:
            raise DomainError("out_size must be >= 8")
        cx, cy = (int(v) for v in self.center_px)
        object.__setattr__(self, "center_px", (cx, cy))
        object.__setattr__(self, "radius_px", int(self.radius_px))
        object.__setattr__(self, "out_size", int(self.out_size))

    @property
    def window(self) -> int:
        return 2 * self.radius_px + 1

    @property
    def scale(self) -> float:
        """Local raster pixels per global pixel."""
        return self.out_size / self.window

    def to_local(self, px) -> np.ndarray:
        """Global pixel coords -> continuous local raster coords (pixel centers aligned)."""
        px = np.asarray(px, dtype=np.float64)
        origin = np.array(self.center_px, dtype=np.float64) - self.radius_px
        return (px - origin + 0.5) * self.scale - 0.5

    def to_global(self, lp) -> np.ndarray:
        lp = np.asarray(lp, dtype=np.float64)
        origin = np.array(self.center_px, dtype=np.float64) - self.radius_px
        return (lp + 0.5) / self.scale - 0.5 + origin


def local_radius(traj_world, h: Homography, factor: float = 20.0) -> int:
    """Local-map radius: ``factor`` times the mean per-step pixel displacement.

    Static trajectories clamp to 1.
    """
    traj = np.asarray(traj_world, dtype=np.float64)
    if traj.shape[0] < 2:
        raise DomainError("need at least two points for a step length")
    px = world_to_pixel(h, traj)
    step = float(np.linalg.norm(np.diff(px, axis=0), axis=1).mean())
    # guard against 20 * 8.000000001 -> 161
    return max(1, int(math.ceil(round(factor * step, 9))))


def extract_local_map(grid: SemanticGrid, spec: LocalMapSpec) -> np.ndarray:
    """Crop, pad, map class IDs to values and nearest-resize to ``out_size``."""
    h, w = grid.shape
    cx, cy = spec.center_px
    if not (-10 * w <= cx <= 11 * w and -10 * h <= cy <= 11 * h):
        raise DomainError(f"center {spec.center_px} far outside {w}x{h} grid")
    r, n = spec.radius_px, spec.window
    window = np.full((n, n), grid.pad_class, dtype=np.uint8)
    r0, c0 = cy - r, cx - r
    sr0, sr1 = max(r0, 0), min(r0 + n, h)
    sc0, sc1 = max(c0, 0), min(c0 + n, w)
    if sr0 < sr1 and sc0 < sc1:
        window[sr0 - r0:sr1 - r0, sc0 - c0:sc1 - c0] = grid.cells[sr0:sr1, sc0:sc1]
    out = spec.out_size
    src = ((2 * np.arange(out) + 1) * n) // (2 * out)
    resized = window[np.ix_(src, src)]
    return grid.value_lut()[resized]


def save_grid(stem, grid: SemanticGrid, homography: Homography, extra: dict | None = None) -> None:
    """Write ``<stem>.pgm`` (8-bit P5) and the ``<stem>.json`` sidecar."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(grid.cells, mode="L").save(stem.with_suffix(".pgm"))
    meta = {
        "height": int(grid.shape[0]),
        "width": int(grid.shape[1]),
        "class_values": {str(k): v for k, v in sorted(grid.class_values.items())},
        "navigable_classes": sorted(grid.navigable_classes),
        "pad_class": grid.pad_class,
        "homography": homography.to_list(),
    }
    if extra:
        meta.update(extra)
    stem.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_grid(stem) -> tuple[SemanticGrid, Homography]:
    stem = Path(stem)
    pgm, side = stem.with_suffix(".pgm"), stem.with_suffix(".json")
    try:
        meta = json.loads(side.read_text())
        with Image.open(pgm) as im:
            cells = np.array(im, dtype=np.uint8)
    except FileNotFoundError:
        raise
    except (ValueError, OSError) as exc:
        raise ParseError(f"{stem}: {exc}") from exc
    if cells.shape != (meta["height"], meta["width"]):
        raise ParseError(f"{pgm}: raster {cells.shape} disagrees with sidecar")
    grid = SemanticGrid(
        cells=cells,
        class_values={int(k): v for k, v in meta["class_values"].items()},
        navigable_classes=frozenset(meta["navigable_classes"]),
        pad_class=meta["pad_class"],
    )
    return grid, Homography.from_list(meta["homography"])
