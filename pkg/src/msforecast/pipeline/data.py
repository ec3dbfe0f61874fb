"""Dataset loading, per-scene local frames, and training batch builders."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..errors import ParseError
from ..heatmap import encode_points
from ..micro_model import MicroInput, kinematic_states
from ..raster import (Homography, LocalMapSpec, SemanticGrid, extract_local_map, load_grid,
                      local_radius, round_half_away, world_to_pixel)
from .config import DatasetProfile

REQUIRED_FIELDS = ("scene_id", "env_id", "split", "points", "fps")


@dataclass(frozen=True)
class SceneRecord:
    scene_id: str
    env_id: str
    split: str
    points: np.ndarray   # (t_p + t_f, 2) world coordinates
    fps: float
    line_no: int


class Dataset:
    """Scene records plus lazily loaded, per-environment cached grids."""

    def __init__(self, root: Path, records: list[SceneRecord]):
        self.root = Path(root)
        self.records = records
        self._grids: dict[str, tuple[SemanticGrid, Homography]] = {}
        self._by_id = {r.scene_id: r for r in records}

    def grid(self, env_id: str) -> tuple[SemanticGrid, Homography]:
        if env_id not in self._grids:
            self._grids[env_id] = load_grid(self.root / "envs" / env_id)
        return self._grids[env_id]

    def record(self, scene_id: str) -> SceneRecord:
        try:
            return self._by_id[scene_id]
        except KeyError:
            raise ParseError(f"unknown scene_id {scene_id!r}") from None

    def split(self, name: str) -> list[SceneRecord]:
        return [r for r in self.records if r.split == name]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        for rec in self.records:
            grid, h = self.grid(rec.env_id)
            yield rec, grid, h


def _parse_line(text: str, line_no: int, window: int) -> SceneRecord:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {line_no}: invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise ParseError(f"line {line_no}: record is not an object")
    missing = [f for f in REQUIRED_FIELDS if f not in obj]
    sid = obj.get("scene_id", "?")
    if missing:
        raise ParseError(f"line {line_no}: scene {sid!r} lacks {missing}")
    try:
        pts = np.asarray(obj["points"], dtype=np.float64)
        fps = float(obj["fps"])
    except (TypeError, ValueError):
        raise ParseError(f"line {line_no}: scene {sid!r} has non-numeric points or fps") from None
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] != window:
        raise ParseError(f"line {line_no}: scene {sid!r} has {pts.shape[0] if pts.ndim else 0} points, "
                         f"expected {window}")
    if not np.all(np.isfinite(pts)) or not fps > 0:
        raise ParseError(f"line {line_no}: scene {sid!r} has non-finite points or bad fps")
    return SceneRecord(str(sid), str(obj["env_id"]), str(obj["split"]), pts, fps, line_no)


def load_dataset(path, t_past: int = 8, t_future: int = 12) -> Dataset:
    """Read ``scenes.jsonl`` under ``path`` and check every referenced grid exists."""
    root = Path(path)
    scenes = root / "scenes.jsonl"
    if not scenes.is_file():
        raise FileNotFoundError(f"{scenes} not found")
    records, seen = [], {}
    with scenes.open() as fh:
        for line_no, text in enumerate(fh, 1):
            if not text.strip():
                continue
            rec = _parse_line(text, line_no, t_past + t_future)
            if rec.scene_id in seen:
                raise ParseError(f"line {line_no}: duplicate scene_id {rec.scene_id!r} "
                                 f"(first on line {seen[rec.scene_id]})")
            seen[rec.scene_id] = line_no
            records.append(rec)
    for env_id in sorted({r.env_id for r in records}):
        for suffix in (".pgm", ".json"):
            f = root / "envs" / f"{env_id}{suffix}"
            if not f.is_file():
                raise FileNotFoundError(f"grid file {f} missing for environment {env_id}")
    return Dataset(root, records)


@dataclass
class SceneSamples:
    """Arrays for one split, each scene expressed in its own local raster frame."""

    scene_ids: list[str]
    env_ids: list[str]
    specs: list[LocalMapSpec]
    maps: np.ndarray         # (N, S, S) float32 class values
    past_world: np.ndarray   # (N, t_p, 2)
    future_world: np.ndarray # (N, t_f, 2)
    past_local: np.ndarray   # (N, t_p, 2) continuous local raster coords
    future_local: np.ndarray # (N, t_f, 2)
    raster_size: int
    variance: float

    def __len__(self) -> int:
        return len(self.scene_ids)

    def subset(self, idx) -> "SceneSamples":
        idx = list(idx)
        return SceneSamples([self.scene_ids[i] for i in idx], [self.env_ids[i] for i in idx],
                            [self.specs[i] for i in idx], self.maps[idx], self.past_world[idx],
                            self.future_world[idx], self.past_local[idx], self.future_local[idx],
                            self.raster_size, self.variance)

    def map_tensor(self, idx) -> torch.Tensor:
        return torch.from_numpy(self.maps[idx][:, None].astype(np.float32))

    def past_tensor(self, idx) -> torch.Tensor:
        return render_channels(self.past_local[idx][:, None], self.raster_size, self.variance)

    def goal_tensor(self, idx, steps) -> torch.Tensor:
        """One channel per 1-based future step in ``steps``."""
        pts = self.future_local[idx][:, [s - 1 for s in steps]][:, :, None]
        return render_channels(pts, self.raster_size, self.variance)


def render_channels(points: np.ndarray, size: int, variance: float) -> torch.Tensor:
    """``(B, C, n, 2)`` local points -> ``(B, C, size, size)`` heatmaps (points max-combined per channel)."""
    b, c = points.shape[:2]
    out = np.empty((b, c, size, size), dtype=np.float32)
    for i in range(b):
        for j in range(c):
            out[i, j] = encode_points(points[i, j], size, size, variance)
    return torch.from_numpy(out)


def build_samples(ds: Dataset, split: str, prof: DatasetProfile, limit: int = 0) -> SceneSamples:
    recs = ds.split(split)
    if limit:
        recs = recs[:limit]
    if not recs:
        raise ParseError(f"dataset has no {split!r} scenes")
    size, tp = prof.raster_size, prof.t_past
    ids, envs, specs, maps, pl, fl = [], [], [], [], [], []
    for rec in recs:
        grid, h = ds.grid(rec.env_id)
        past, fut = rec.points[:tp], rec.points[tp:]
        center = round_half_away(world_to_pixel(h, past[-1]))
        radius = prof.local_radius or local_radius(rec.points, h)
        spec = LocalMapSpec((int(center[0]), int(center[1])), radius, size)
        ids.append(rec.scene_id)
        envs.append(rec.env_id)
        specs.append(spec)
        maps.append(extract_local_map(grid, spec).astype(np.float32))
        pl.append(spec.to_local(world_to_pixel(h, past)))
        fl.append(spec.to_local(world_to_pixel(h, fut)))
    pts = np.stack([r.points for r in recs])
    return SceneSamples(ids, envs, specs, np.stack(maps), pts[:, :tp], pts[:, tp:],
                        np.stack(pl), np.stack(fl), size, prof.heatmap_variance)


def epoch_order(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def steps_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def lg_batches(samples: SceneSamples, batch_size: int, t_future: int):
    """Batch factory yielding ``(I_M, I_x, I_LG)``."""
    def gen(epoch, rng):
        for idx in epoch_order(len(samples), batch_size, rng):
            yield samples.map_tensor(idx), samples.past_tensor(idx), samples.goal_tensor(idx, [t_future])
    return gen


def sg_batches(samples: SceneSamples, batch_size: int, goal_steps, t_future: int, mode: str = "gt",
               lg_model=None, seed: int = 0):
    """Batch factory yielding ``(I_M, I_x, I_LG input, SG targets + LG target)``.

    ``mode`` picks the long-goal input: the ground truth, a prior draw from
    the frozen long-goal model, or a fair coin per batch between the two.
    """
    targets = list(goal_steps) + [t_future]
    gen_t = torch.Generator().manual_seed(seed)

    def gen(epoch, rng):
        for idx in epoch_order(len(samples), batch_size, rng):
            i_m, i_x = samples.map_tensor(idx), samples.past_tensor(idx)
            tgt = samples.goal_tensor(idx, targets)
            use_pred = mode == "predicted" or (mode == "mixed" and rng.random() < 0.5)
            if use_pred:
                i_lg = lg_model.sample(i_m, i_x, 1, gen_t)
            else:
                i_lg = tgt[:, -1:]
            yield i_m, i_x, i_lg, tgt
    return gen


def micro_arrays(samples: SceneSamples, goal_steps, fps: float) -> dict[str, torch.Tensor]:
    """Kinematic past states, ground-truth goals and futures relative to the last observed point."""
    last = samples.past_world[:, -1:, :]
    rel_future = samples.future_world - last
    return {
        "past_states": torch.from_numpy(kinematic_states(samples.past_world, fps).astype(np.float32)),
        "goals": torch.from_numpy(rel_future[:, [s - 1 for s in goal_steps]].astype(np.float32)),
        "future": torch.from_numpy(rel_future.astype(np.float32)),
    }


def micro_batches(arrays: dict, map_features: torch.Tensor, batch_size: int):
    n = arrays["future"].shape[0]

    def gen(epoch, rng):
        for idx in epoch_order(n, batch_size, rng):
            t = torch.from_numpy(idx)
            inp = MicroInput(arrays["past_states"][t], map_features[t], arrays["goals"][t])
            yield inp, arrays["future"][t]
    return gen
