"""Recurrent CVAE that turns goal points into full world-coordinate trajectories."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, StateError, TrainingFault
from .macro_models import DiagonalGaussian, EpochLog, gaussian_kl

Z_DIM = 20
ENC_HIDDEN = 64
DEC_HIDDEN = 128
FC_HIDDEN = 256
MAP_FC = 32
GOAL_FEATURE = 2
_LOG_2PI = math.log(2.0 * math.pi)


def kinematic_states(past: np.ndarray, fps: float = 2.5) -> np.ndarray:
    """``(..., T, 2)`` positions -> ``(..., T, 6)`` position/velocity/acceleration.

    Positions are taken relative to the last observed point; derivatives are
    backward differences with zeros at the start of the sequence.
    """
    past = np.asarray(past, dtype=np.float64)
    pos = past - past[..., -1:, :]
    vel = np.zeros_like(pos)
    vel[..., 1:, :] = np.diff(pos, axis=-2) * fps
    acc = np.zeros_like(pos)
    acc[..., 1:, :] = np.diff(vel, axis=-2) * fps
    return np.concatenate([pos, vel, acc], axis=-1)


@dataclass
class MicroInput:
    past_states: torch.Tensor   # (B, t_p, 6)
    map_feature: torch.Tensor   # (B, C)
    goal_points: torch.Tensor   # (B, n_goals, 2), relative to the last observed point

    def __post_init__(self):
        b = self.past_states.shape[0]
        if self.past_states.shape[-1] != 6:
            raise ConfigError("past states need 6 features (pos, vel, acc)")
        if self.map_feature.shape[0] != b or self.goal_points.shape[0] != b:
            raise ConfigError("micro inputs disagree on batch size")


@dataclass
class TrajectoryGaussianOutput:
    mean: torch.Tensor  # (B, t_f, 2)
    std: torch.Tensor


def teacher_force_goals(mode: str, gt_goals, predicted_goals):
    """Ground-truth goals while training, predicted ones at test time."""
    if tuple(gt_goals.shape) != tuple(predicted_goals.shape):
        raise ConfigError(f"goal sets disagree: {tuple(gt_goals.shape)} vs {tuple(predicted_goals.shape)}")
    if mode == "train":
        return gt_goals
    if mode == "test":
        return predicted_goals
    raise ConfigError(f"unknown mode {mode!r}")


class MicroCVAE(nn.Module):
    def __init__(self, map_dim: int, goal_steps=(4, 8, 12), t_f: int = 12, z_dim: int = Z_DIM,
                 enc_hidden: int = ENC_HIDDEN, dec_hidden: int = DEC_HIDDEN, fc_hidden: int = FC_HIDDEN,
                 map_fc: int = MAP_FC):
        super().__init__()
        goal_steps = tuple(int(s) for s in goal_steps)
        if list(goal_steps) != sorted(set(goal_steps)) or goal_steps[-1] != t_f or goal_steps[0] < 1:
            raise ConfigError(f"goal steps {goal_steps} must increase and end at t_f={t_f}")
        self.t_f = t_f
        self.z_dim = z_dim
        self.goal_steps = goal_steps
        # decoder step t (0-based) looks at the first goal not yet passed
        upcoming = [next(g for g, s in enumerate(goal_steps) if s >= t + 1) for t in range(t_f)]
        self.register_buffer("upcoming", torch.tensor(upcoming, dtype=torch.long), persistent=False)

        self.past_enc = nn.LSTM(6, enc_hidden, batch_first=True)
        self.prior_fc = nn.Sequential(nn.Linear(enc_hidden, fc_hidden), nn.ReLU())
        self.prior_out = nn.Linear(fc_hidden, 2 * z_dim)
        self.map_fc = nn.Sequential(nn.Linear(fc_hidden + map_dim, map_fc), nn.ReLU())

        self.future_enc = nn.LSTM(2, enc_hidden, batch_first=True, bidirectional=True)
        self.post_fc = nn.Sequential(nn.Linear(enc_hidden + 2 * enc_hidden, fc_hidden), nn.ReLU())
        self.post_out = nn.Linear(fc_hidden, 2 * z_dim)

        self.goal_enc = nn.LSTM(2, enc_hidden, batch_first=True, bidirectional=True)
        self.goal_fc = nn.Linear(2 * enc_hidden, GOAL_FEATURE)

        self.dec_init = nn.Linear(z_dim + map_fc, dec_hidden)
        self.gru = nn.GRUCell(2 + z_dim + GOAL_FEATURE, dec_hidden)
        self.out = nn.Linear(dec_hidden, 4)
        self.prior_std_override: float | None = None

    @property
    def n_goals(self) -> int:
        return len(self.goal_steps)

    def encode_past(self, past_states):
        _, (h, _) = self.past_enc(past_states)
        return h[-1]

    def prior(self, h_past) -> tuple[DiagonalGaussian, torch.Tensor]:
        hid = self.prior_fc(h_past)
        g = DiagonalGaussian.from_raw(self.prior_out(hid))
        if self.prior_std_override is not None:
            g = DiagonalGaussian(g.mean, torch.full_like(g.std, self.prior_std_override))
        return g, hid

    def posterior(self, h_past, future) -> DiagonalGaussian:
        _, (h, _) = self.future_enc(future)
        both = torch.cat([h_past, h[-2], h[-1]], dim=-1)
        return DiagonalGaussian.from_raw(self.post_out(self.post_fc(both)))

    def goal_features(self, goals) -> torch.Tensor:
        if goals.shape[1] != self.n_goals:
            raise ConfigError(f"expected {self.n_goals} goal points, got {goals.shape[1]}")
        seq, _ = self.goal_enc(goals)
        return self.goal_fc(seq)  # (B, n_goals, 2)

    def decode(self, z, context, goal_feat) -> TrajectoryGaussianOutput:
        h = torch.tanh(self.dec_init(torch.cat([z, context], dim=-1)))
        per_step = goal_feat[:, self.upcoming, :]
        pos = z.new_zeros(z.shape[0], 2)
        means, stds = [], []
        for t in range(self.t_f):
            h = self.gru(torch.cat([pos, z, per_step[:, t]], dim=-1), h)
            o = self.out(h)
            pos = pos + o[:, :2]
            means.append(pos)
            stds.append(F.softplus(o[:, 2:]) + 1e-4)
        return TrajectoryGaussianOutput(torch.stack(means, 1), torch.stack(stds, 1))

    def _condition(self, inp: MicroInput):
        h_past = self.encode_past(inp.past_states)
        prior, hid = self.prior(h_past)
        context = self.map_fc(torch.cat([hid, inp.map_feature], dim=-1))
        return h_past, prior, context, self.goal_features(inp.goal_points)

    def forward_train(self, inp: MicroInput, gt_future, generator=None, batch_index=None):
        """Decode once from a posterior draw and once from a prior draw."""
        h_past, prior, context, goal_feat = self._condition(inp)
        post = self.posterior(h_past, gt_future)
        post.check_finite("micro", batch_index)
        prior.check_finite("micro", batch_index)
        out_post = self.decode(post.sample(generator), context, goal_feat)
        out_prior = self.decode(prior.sample(generator), context, goal_feat)
        return out_post, out_prior, post, prior

    @torch.no_grad()
    def sample(self, inp: MicroInput, generator=None) -> torch.Tensor:
        """One prior draw per row; returns decoded means ``(B, t_f, 2)``."""
        _, prior, context, goal_feat = self._condition(inp)
        return self.decode(prior.sample(generator), context, goal_feat).mean


def gaussian_nll(out: TrajectoryGaussianOutput, target) -> torch.Tensor:
    """Per-sample NLL summed over steps and both coordinates: ``(B,)``."""
    z = (target - out.mean) / out.std
    return (0.5 * z ** 2 + torch.log(out.std) + 0.5 * _LOG_2PI).sum(dim=(1, 2))


def micro_loss(out_post, out_prior, gt_future, posterior: DiagonalGaussian, prior: DiagonalGaussian,
               beta: float = 50.0, fb: float = 0.07, prior_recon: bool = True) -> tuple[torch.Tensor, dict]:
    """Posterior (and optionally prior) reconstruction NLL plus beta-weighted, floored KL."""
    if beta <= 0:
        raise ConfigError("beta must be positive")
    nll_post = gaussian_nll(out_post, gt_future).mean()
    kl = gaussian_kl(posterior, prior).sum(-1).mean()
    kl_clamped = torch.clamp(kl, min=fb)
    loss = nll_post + beta * kl_clamped
    comp = {"nll_post": nll_post.item()}
    if prior_recon:
        nll_prior = gaussian_nll(out_prior, gt_future).mean()
        loss = loss + nll_prior
        comp["nll_prior"] = nll_prior.item()
    comp.update({"kl": kl.item(), "kl_clamped": kl_clamped.item(), "total": loss.item()})
    return loss, comp


def micro_sample(model: MicroCVAE, inp: MicroInput, generator=None) -> torch.Tensor:
    if not getattr(model, "trained", False):
        raise StateError("micro model has no trained parameters loaded")
    model.eval()
    return model.sample(inp, generator)


def train_micro(model: MicroCVAE, batches, epochs: int, lr: float = 1e-3, beta: float = 50.0,
                fb: float = 0.07, prior_recon: bool = True, seed: int = 0,
                optimizer: torch.optim.Optimizer | None = None) -> tuple[EpochLog, torch.optim.Optimizer]:
    """``batches(epoch, rng)`` yields ``(MicroInput, gt_future)``."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    opt = optimizer or torch.optim.Adam(model.parameters(), lr=lr)
    history = EpochLog()
    model.train()
    for epoch in range(epochs):
        parts = []
        for bi, (inp, gt) in enumerate(batches(epoch, rng)):
            out_post, out_prior, post, prior = model.forward_train(inp, gt, gen, batch_index=bi)
            loss, comp = micro_loss(out_post, out_prior, gt, post, prior, beta, fb, prior_recon)
            if not torch.isfinite(loss):
                raise TrainingFault("loss is not finite", stage="micro", batch_index=bi)
            opt.zero_grad()
            loss.backward()
            opt.step()
            parts.append(comp)
        history.add(epoch, parts)
    model.trained = True
    return history, opt
