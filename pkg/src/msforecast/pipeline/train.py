"""Stage-wise training: pretrain -> long-goal CVAE -> short-goal net -> micro CVAE.

Each stage loads its frozen upstream from checkpoints, so any stage can be
rerun on its own without touching the others.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path

import torch

from ..envsim import FPS
from ..errors import StateError, TrainingFault
from ..macro_models import LGCVAE, SGNet, pretrain_lg_encoder, train_lg_cvae, train_sg_net
from ..micro_model import MicroCVAE, train_micro
from .checkpoint import checkpoint_path, load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import (build_samples, lg_batches, load_dataset, micro_arrays, micro_batches, sg_batches,
                   steps_per_epoch)

log = logging.getLogger(__name__)

STAGES = ("pretrain", "lg", "sg", "micro")
_SEED_OFFSET = {"pretrain": 0, "lg": 1, "sg": 2, "micro": 3}


def data_dir(cfg: RunConfig, run_dir) -> Path:
    d = Path(cfg.dataset.data_dir)
    return d if d.is_absolute() else Path(run_dir) / d


def build_lg(cfg: RunConfig) -> LGCVAE:
    m = cfg.model
    return LGCVAE(m.lg_encoder, m.lg_decoder, m.lg_prior_convs, m.lg_latent_dim)


def build_sg(cfg: RunConfig) -> SGNet:
    return SGNet(len(cfg.sg_goal_steps), cfg.model.lg_encoder, cfg.model.lg_decoder)


def build_micro(cfg: RunConfig, map_dim: int) -> MicroCVAE:
    m = cfg.model
    return MicroCVAE(map_dim, cfg.micro_goal_steps, cfg.dataset.t_future, m.z_dim, m.enc_hidden,
                     m.dec_hidden, m.fc_hidden, m.map_fc)


def stage_seed(cfg: RunConfig, stage: str) -> int:
    return cfg.model.train_seed * 16 + _SEED_OFFSET[stage]


def active_stages(cfg: RunConfig) -> tuple[str, ...]:
    skip = set()
    if cfg.ablation.without_sg_net:
        skip.add("sg")
    if cfg.ablation.without_micro:
        skip.add("micro")
    return tuple(s for s in STAGES if s not in skip)


def load_stage(cfg: RunConfig, run_dir, stage: str, map_dim: int | None = None):
    """Rebuild a trained model from its checkpoint; returns ``(model, archive)``."""
    archive = load_checkpoint(checkpoint_path(run_dir, stage, cfg.ablation.name), cfg.training_hash(), stage)
    if stage == "lg":
        model = build_lg(cfg)
    elif stage == "sg":
        model = build_sg(cfg)
    elif stage == "micro":
        model = build_micro(cfg, map_dim)
    else:
        raise StateError(f"stage {stage!r} has no standalone model")
    model.load_state_dict(archive["state_dict"])
    model.trained = True
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model, archive


class Trainer:
    def __init__(self, cfg: RunConfig, run_dir):
        self.cfg = cfg
        self.run_dir = Path(run_dir)
        self.variant = cfg.ablation.name
        self._train = None

    @property
    def train_samples(self):
        if self._train is None:
            d = self.cfg.dataset
            ds = load_dataset(data_dir(self.cfg, self.run_dir), d.t_past, d.t_future)
            self._train = build_samples(ds, "train", d, self.cfg.model.max_train_samples)
        return self._train

    def _save(self, stage, model_state, opt, epochs, history, upstream) -> str:
        digest = save_checkpoint(checkpoint_path(self.run_dir, stage, self.variant), stage=stage,
                                 config_hash=self.cfg.training_hash(), state_dict=model_state,
                                 optimizer_state=opt.state_dict() if opt is not None else None,
                                 epoch=epochs, history=history.rows, upstream=upstream)
        logs = self.run_dir / "logs" / self.variant
        logs.mkdir(parents=True, exist_ok=True)
        (logs / f"{stage}.json").write_text(json.dumps(
            {"stage": stage, "config_hash": self.cfg.training_hash(), "param_hash": digest,
             "upstream": upstream, "epochs": history.rows}, indent=2, sort_keys=True) + "\n")
        log.info("stage %s done: %s", stage, digest[:12])
        return digest

    def run(self, stage: str) -> str:
        if stage not in STAGES:
            raise StateError(f"unknown stage {stage!r}")
        if stage not in active_stages(self.cfg):
            raise StateError(f"stage {stage!r} is disabled by ablation {self.cfg.ablation.name}")
        torch.manual_seed(stage_seed(self.cfg, stage))
        try:
            return getattr(self, f"_stage_{stage}")(stage_seed(self.cfg, stage))
        except TrainingFault as exc:
            if exc.stage is None:
                exc.stage = stage
            raise

    def _stage_pretrain(self, seed):
        m, d = self.cfg.model, self.cfg.dataset
        model = build_lg(self.cfg)
        state, history = pretrain_lg_encoder(model, lg_batches(self.train_samples, m.batch_size, d.t_future),
                                             m.pretrain_epochs, m.lg_lr, seed)
        return self._save("pretrain", state, None, m.pretrain_epochs, history, {})

    def _stage_lg(self, seed):
        m, d = self.cfg.model, self.cfg.dataset
        pre = load_checkpoint(checkpoint_path(self.run_dir, "pretrain", self.variant), self.cfg.training_hash(), "pretrain")
        model = build_lg(self.cfg)
        model.unet.load_state_dict(pre["state_dict"])
        n = len(self.train_samples)
        history, opt = train_lg_cvae(model, lg_batches(self.train_samples, m.batch_size, d.t_future),
                                     m.lg_epochs, m.lg_lr, self.cfg.lg_fb_per_dim, m.anneal_epochs,
                                     steps_per_epoch(n, m.batch_size), seed)
        return self._save("lg", model.state_dict(), opt, m.lg_epochs, history, {"pretrain": pre["param_hash"]})

    def _stage_sg(self, seed):
        m, d = self.cfg.model, self.cfg.dataset
        lg, lg_arch = load_stage(self.cfg, self.run_dir, "lg")
        model = build_sg(self.cfg)
        batches = sg_batches(self.train_samples, m.batch_size, self.cfg.sg_goal_steps, d.t_future,
                             m.sg_input, lg, seed)
        history, opt = train_sg_net(model, batches, m.sg_epochs, m.sg_lr, seed)
        return self._save("sg", model.state_dict(), opt, m.sg_epochs, history, {"lg": lg_arch["param_hash"]})

    def _stage_micro(self, seed):
        m, d = self.cfg.model, self.cfg.dataset
        lg, lg_arch = load_stage(self.cfg, self.run_dir, "lg")
        upstream = {"lg": lg_arch["param_hash"]}
        if not self.cfg.ablation.without_sg_net:
            _, sg_arch = load_stage(self.cfg, self.run_dir, "sg")
            upstream["sg"] = sg_arch["param_hash"]
        samples = self.train_samples
        feats = map_features(lg, samples)
        model = build_micro(self.cfg, lg.feature_dim)
        arrays = micro_arrays(samples, self.cfg.micro_goal_steps, FPS)
        history, opt = train_micro(model, micro_batches(arrays, feats, m.batch_size), m.micro_epochs, m.micro_lr,
                                   m.beta, m.micro_free_bits, not self.cfg.ablation.without_ll_prior, seed)
        return self._save("micro", model.state_dict(), opt, m.micro_epochs, history, upstream)


@torch.no_grad()
def map_features(lg: LGCVAE, samples, chunk: int = 64) -> torch.Tensor:
    out = []
    for i in range(0, len(samples), chunk):
        idx = list(range(i, min(i + chunk, len(samples))))
        out.append(lg.map_feature(samples.map_tensor(idx), samples.past_tensor(idx)))
    return torch.cat(out)


def train_all(cfg: RunConfig, run_dir, stages=None) -> dict[str, str]:
    """Train the requested stages (default: every stage the ablation keeps) in order."""
    torch.set_num_threads(1)
    trainer = Trainer(cfg, run_dir)
    hashes = {}
    for stage in stages or active_stages(cfg):
        hashes[stage] = trainer.run(stage)
    return hashes
