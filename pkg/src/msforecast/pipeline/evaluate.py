"""K-sample forecasting over a split and metric report emission."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..envsim import FPS
from ..heatmap import decode_peaks
from ..metrics import ForecastSet, MetricReport, scene_metrics
from ..micro_model import MicroInput, kinematic_states, micro_sample
from ..macro_models import require_trained
from ..raster import Homography, pixel_to_world, world_to_pixel
from .config import RunConfig
from .data import Dataset, SceneSamples, build_samples, load_dataset
from .train import data_dir, load_stage

_ROWS = 256  # network rows per forward pass


@dataclass
class Prediction:
    lg_heatmaps: np.ndarray          # (B, K, S, S)
    sg_heatmaps: np.ndarray | None   # (B, K, n_sg + 1, S, S)
    goals_local: np.ndarray          # (B, K, G, 2) integer local pixels
    trajectories: np.ndarray         # (B, K, t_f, 2) world coordinates


class Forecaster:
    """Frozen cascade of trained stages, honouring the config's ablation flags."""

    def __init__(self, cfg: RunConfig, run_dir):
        self.cfg = cfg
        self.lg, lg_arch = load_stage(cfg, run_dir, "lg")
        self.hashes = {"lg": lg_arch["param_hash"]}
        self.sg = self.micro = None
        if not cfg.ablation.without_sg_net:
            self.sg, arch = load_stage(cfg, run_dir, "sg")
            self.hashes["sg"] = arch["param_hash"]
        if not cfg.ablation.without_micro:
            self.micro, arch = load_stage(cfg, run_dir, "micro", self.lg.feature_dim)
            self.hashes["micro"] = arch["param_hash"]
        if cfg.eval.degenerate_prior:
            self.lg.prior_std_override = 0.0
            if self.micro is not None:
                self.micro.prior_std_override = 0.0

    @torch.no_grad()
    def predict(self, samples: SceneSamples, idx, homs: list[Homography], k: int,
                gen: torch.Generator) -> Prediction:
        require_trained(self.lg, "long-goal model")
        idx = list(idx)
        b, size = len(idx), samples.raster_size
        i_m, i_x = samples.map_tensor(idx), samples.past_tensor(idx)
        lg_hm = self.lg.sample(i_m, i_x, k, gen)  # (B, K, S, S)
        sg_hm = None
        if self.sg is None:
            goal_maps = lg_hm[:, :, None]
        else:
            rep_m, rep_x = i_m.repeat_interleave(k, 0), i_x.repeat_interleave(k, 0)
            flat_lg = lg_hm.reshape(b * k, 1, size, size)
            out = [self.sg(rep_m[i:i + _ROWS], rep_x[i:i + _ROWS], flat_lg[i:i + _ROWS])
                   for i in range(0, b * k, _ROWS)]
            sg_hm = torch.cat(out).reshape(b, k, -1, size, size)
            goal_maps = sg_hm
        goals_local = decode_peaks(goal_maps.numpy())  # (B, K, G, 2)
        goals_world = np.stack([self._to_world(samples, i, homs[j], goals_local[j])
                                for j, i in enumerate(idx)])
        if self.micro is None:
            traj = goals_world
        else:
            traj = self._micro(samples, idx, i_m, i_x, goals_world, k, gen)
        return Prediction(lg_hm.numpy(), None if sg_hm is None else sg_hm.numpy(), goals_local, traj)

    @staticmethod
    def _to_world(samples: SceneSamples, i: int, h: Homography, local) -> np.ndarray:
        return pixel_to_world(h, samples.specs[i].to_global(local))

    def _micro(self, samples, idx, i_m, i_x, goals_world, k, gen) -> np.ndarray:
        b = len(idx)
        last = samples.past_world[idx][:, -1]  # (B, 2)
        states = kinematic_states(samples.past_world[idx], FPS)
        feats = self.lg.map_feature(i_m, i_x).repeat_interleave(k, 0)
        past = torch.from_numpy(np.repeat(states, k, axis=0).astype(np.float32))
        goals = torch.from_numpy((goals_world - last[:, None, None]).reshape(b * k, -1, 2).astype(np.float32))
        out = []
        for i in range(0, b * k, _ROWS):
            sl = slice(i, i + _ROWS)
            out.append(micro_sample(self.micro, MicroInput(past[sl], feats[sl], goals[sl]), gen))
        rel = torch.cat(out).numpy().astype(np.float64).reshape(b, k, -1, 2)
        return rel + last[:, None, None]


def eval_generator(cfg: RunConfig, k: int) -> torch.Generator:
    return torch.Generator().manual_seed(int(np.random.SeedSequence([cfg.eval.eval_seed, k]).generate_state(1)[0]))


def report_stem(k: int, ablation: str) -> str:
    return f"metrics_k{k}_{ablation}"


def evaluate(cfg: RunConfig, run_dir, k: int, out_dir=None, dataset: Dataset | None = None) -> MetricReport:
    """Forecast every scene of the eval split with ``k`` samples and write CSV/JSON reports."""
    if k < 1:
        raise ValueError("k must be >= 1")
    torch.set_num_threads(1)
    run_dir = Path(run_dir)
    forecaster = Forecaster(cfg, run_dir)
    d, e = cfg.dataset, cfg.eval
    ds = dataset or load_dataset(data_dir(cfg, run_dir), d.t_past, d.t_future)
    samples = build_samples(ds, e.eval_split, d, e.max_eval_scenes)
    homs = [ds.grid(env)[1] for env in samples.env_ids]
    gen = eval_generator(cfg, k)
    report = MetricReport(k=k, units=d.units, ablation=cfg.ablation.name)
    trajs = np.empty((len(samples), k, d.t_future, 2))
    bw = e.kde_bandwidth or None
    for start in range(0, len(samples), e.eval_batch):
        idx = list(range(start, min(start + e.eval_batch, len(samples))))
        pred = forecaster.predict(samples, idx, homs, k, gen)
        trajs[idx] = pred.trajectories
        for j, i in enumerate(idx):
            grid, h = ds.grid(samples.env_ids[i])
            fs = ForecastSet(samples.scene_ids[i], pred.trajectories[j], samples.future_world[i])
            if d.units == "pixels":
                fs = ForecastSet(fs.scene_id, world_to_pixel(h, fs.samples), world_to_pixel(h, fs.gt_future))
                h = Homography.similarity(1.0)
            report.add(fs.scene_id, scene_metrics(fs, grid, h, bw))
    out = Path(out_dir) if out_dir else run_dir / "eval"
    out.mkdir(parents=True, exist_ok=True)
    stem = report_stem(k, report.ablation)
    report.write_csv(out / f"{stem}.csv")
    (out / f"{stem}.json").write_text(report.to_json())
    np.savez_compressed(out / f"forecasts_k{k}_{report.ablation}.npz", scene_ids=np.array(samples.scene_ids),
                        trajectories=trajs)
    _record(out / "experiment.json", cfg, forecaster.hashes, stem, report)
    return report


def _record(path: Path, cfg: RunConfig, ckpt_hashes: dict, stem: str, report: MetricReport) -> None:
    """Append this report to the experiment record, keyed to the config hash."""
    rec = json.loads(path.read_text()) if path.is_file() else {"reports": {}}
    rec["reports"][stem] = {"config_hash": cfg.config_hash(), "training_hash": cfg.training_hash(),
                            "checkpoints": ckpt_hashes, "k": report.k, "ablation": report.ablation,
                            "aggregate": report.aggregate}
    path.write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")

