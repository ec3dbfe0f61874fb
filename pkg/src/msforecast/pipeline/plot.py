"""PNG panels of goal heatmaps and trajectory overlays, plus raw heatmap-stack dumps."""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..heatmap import HeatmapStack  # noqa: E402
from ..raster import world_to_pixel  # noqa: E402
from .config import RunConfig  # noqa: E402
from .data import build_samples, load_dataset  # noqa: E402
from .evaluate import Forecaster, eval_generator  # noqa: E402
from .train import data_dir  # noqa: E402


def _scene_samples(cfg: RunConfig, run_dir, scene_id: str):
    d = cfg.dataset
    ds = load_dataset(data_dir(cfg, run_dir), d.t_past, d.t_future)
    rec = ds.record(scene_id)
    samples = build_samples(ds, rec.split, d)
    return ds, samples, samples.scene_ids.index(scene_id)


def heatmap_stack(cfg: RunConfig, run_dir, scene_id: str) -> HeatmapStack:
    """Ground-truth input/target channels for one scene in its local raster frame."""
    _, samples, i = _scene_samples(cfg, run_dir, scene_id)
    steps = list(cfg.dataset.sg_steps)
    channels = [samples.maps[i], samples.past_tensor([i])[0, 0].numpy(),
                samples.goal_tensor([i], [cfg.dataset.t_future])[0, 0].numpy()]
    channels += list(samples.goal_tensor([i], steps)[0].numpy())
    roles = ["semantic-map", "past-traj", "long-goal"] + [f"short-goal-{s}" for s in steps]
    return HeatmapStack(np.stack(channels), roles)


def inspect_scene(cfg: RunConfig, run_dir, scene_id: str, out_dir) -> dict:
    stack = heatmap_stack(cfg, run_dir, scene_id)
    paths = stack.dump_pgm(out_dir)
    summary = {"scene_id": scene_id, "raster": int(stack.channels.shape[-1]),
               "channels": [{"role": r, "file": p.name, "max": float(c.max()), "sum": float(c.sum())}
                            for r, c, p in zip(stack.roles, stack.channels, paths)]}
    (Path(out_dir) / "stack.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def plot_scene(cfg: RunConfig, run_dir, scene_id: str, k: int, out_png) -> Path:
    """Local-map panels with mean goal heatmaps, then a global panel with K forecasts."""
    ds, samples, i = _scene_samples(cfg, run_dir, scene_id)
    grid, h = ds.grid(samples.env_ids[i])
    pred = Forecaster(cfg, run_dir).predict(samples, [i], [h], k, eval_generator(cfg, k))
    spec = samples.specs[i]
    goal_maps = [("long-term goal", pred.lg_heatmaps[0].mean(0))]
    if pred.sg_heatmaps is not None:
        steps = list(cfg.sg_goal_steps) + [cfg.dataset.t_future]
        shown = range(pred.sg_heatmaps.shape[2]) if len(steps) <= 4 else [0, len(steps) // 2, len(steps) - 1]
        goal_maps += [(f"goal @ step {steps[c]}", pred.sg_heatmaps[0, :, c].mean(0)) for c in shown]

    fig, axes = plt.subplots(1, len(goal_maps) + 1, figsize=(3.2 * (len(goal_maps) + 1), 3.4))
    past_l, fut_l = samples.past_local[i], samples.future_local[i]
    for ax, (title, hm) in zip(axes, goal_maps):
        ax.imshow(samples.maps[i], cmap="gray_r", vmin=0, vmax=1)
        ax.imshow(np.ma.masked_less(hm / max(hm.max(), 1e-12), 0.25), cmap="hot", alpha=0.75)
        ax.plot(past_l[:, 0], past_l[:, 1], ".-", color="tab:blue", ms=3, lw=1)
        ax.plot(fut_l[:, 0], fut_l[:, 1], ".-", color="tab:green", ms=3, lw=1)
        ax.set_title(title, fontsize=9)
        ax.axis("off")

    ax = axes[-1]
    past_px = world_to_pixel(h, samples.past_world[i])
    fut_px = world_to_pixel(h, samples.future_world[i])
    r = spec.radius_px
    cx, cy = spec.center_px
    ax.imshow(grid.value_lut()[grid.cells], cmap="gray_r", vmin=0, vmax=1)
    for traj in pred.trajectories[0]:
        p = world_to_pixel(h, traj)
        ax.plot(p[:, 0], p[:, 1], "-", color="tab:red", lw=0.8, alpha=0.6)
    ax.plot(past_px[:, 0], past_px[:, 1], ".-", color="tab:blue", ms=3, lw=1.2, label="past")
    ax.plot(fut_px[:, 0], fut_px[:, 1], ".-", color="tab:green", ms=3, lw=1.2, label="truth")
    ax.set_xlim(cx - r, cx + r)
    ax.set_ylim(cy + r, cy - r)
    ax.set_title(f"{k} forecasts", fontsize=9)
    ax.legend(fontsize=7, loc="lower right")
    ax.axis("off")
    fig.suptitle(scene_id, fontsize=10)
    fig.tight_layout()
    out_png = Path(out_png)
    out_png.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_png, dpi=110)
    plt.close(fig)
    return out_png
