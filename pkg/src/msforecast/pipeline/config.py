"""Run configuration: flat TOML key/value files mapped onto four profiles.

Every key belongs to exactly one profile (dataset, model, eval, ablation);
``profile = "desk" | "pfsd"`` selects the preset the remaining keys override.
"""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import ConfigError


@dataclass(frozen=True)
class DatasetProfile:
    data_dir: str = "data"
    units: str = "meters"
    t_past: int = 8
    t_future: int = 12
    sg_steps: tuple[int, ...] = (4, 8)
    raster_size: int = 64
    local_radius: int = 80          # 0 -> 20x mean per-step pixel distance
    heatmap_variance: float = 4.0
    env_counts: tuple[int, int, int] = (8, 1, 2)
    scenes_per_env: int = 50
    window_stride: int = 4
    grid_size: tuple[int, int] = (256, 256)
    px_per_meter: float = 15.0
    data_seed: int = 0
    workers: int = 1


@dataclass(frozen=True)
class ModelProfile:
    lg_encoder: tuple[int, ...] = (16, 16, 32, 32, 32)
    lg_decoder: tuple[int, ...] = (32, 32, 32, 16, 16)
    lg_prior_convs: tuple[int, ...] = (32, 32)
    lg_latent_dim: int = 10
    lg_free_bits: float = 0.8       # total-KL floor, split evenly over latent dims
    micro_free_bits: float = 0.07
    beta: float = 50.0
    z_dim: int = 20
    enc_hidden: int = 64
    dec_hidden: int = 128
    fc_hidden: int = 256
    map_fc: int = 32
    lg_lr: float = 1e-3
    sg_lr: float = 1e-3
    micro_lr: float = 1e-3
    pretrain_epochs: int = 10
    anneal_epochs: int = 10
    lg_epochs: int = 15
    sg_epochs: int = 10
    micro_epochs: int = 30
    batch_size: int = 32
    w_injection: str = "bottleneck"
    sg_input: str = "gt"            # gt | predicted | mixed
    max_train_samples: int = 0      # 0 -> all
    train_seed: int = 0


@dataclass(frozen=True)
class EvalProfile:
    k_list: tuple[int, ...] = (20,)
    eval_seed: int = 0
    eval_split: str = "test"
    max_eval_scenes: int = 0        # 0 -> all
    kde_bandwidth: float = 0.0      # 0 -> Scott's rule
    degenerate_prior: bool = False
    eval_batch: int = 16


@dataclass(frozen=True)
class AblationFlags:
    without_sg_net: bool = False
    without_micro: bool = False
    without_ll_prior: bool = False

    @property
    def name(self) -> str:
        on = [f.name.replace("without_", "no_") for f in fields(self) if getattr(self, f.name)]
        return "+".join(on) if on else "none"


PROFILE_TYPES = {"dataset": DatasetProfile, "model": ModelProfile, "eval": EvalProfile, "ablation": AblationFlags}

PRESETS = {
    "desk": {},
    "pfsd": {
        "dataset": {"raster_size": 160, "env_counts": (40, 2, 4), "scenes_per_env": 500},
        "model": {"lg_encoder": (32, 32, 64, 64, 64), "lg_decoder": (64, 64, 64, 32, 32),
                  "lg_epochs": 100, "sg_epochs": 100, "micro_epochs": 100},
        "eval": {"k_list": (20, 50)},
    },
}


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetProfile = field(default_factory=DatasetProfile)
    model: ModelProfile = field(default_factory=ModelProfile)
    eval: EvalProfile = field(default_factory=EvalProfile)
    ablation: AblationFlags = field(default_factory=AblationFlags)
    profile: str = "desk"

    def __post_init__(self):
        d, m = self.dataset, self.model
        steps = list(d.sg_steps)
        if steps != sorted(set(steps)) or (steps and (steps[0] < 1 or steps[-1] >= d.t_future - 1)):
            raise ConfigError(f"sg_steps {steps} must strictly increase and stay below t_future - 1")
        if d.units not in ("meters", "pixels"):
            raise ConfigError("units must be meters or pixels")
        if m.sg_input not in ("gt", "predicted", "mixed"):
            raise ConfigError("sg_input must be gt, predicted or mixed")
        if m.w_injection != "bottleneck":
            raise ConfigError("only bottleneck latent injection is implemented")
        if self.ablation.without_sg_net and self.ablation.without_micro:
            raise ConfigError("without_sg_net and without_micro cannot both be set")

    @property
    def lg_fb_per_dim(self) -> float:
        return self.model.lg_free_bits / self.model.lg_latent_dim

    @property
    def sg_goal_steps(self) -> tuple[int, ...]:
        """Future steps (1-based) predicted as short-term goals by the SG-net."""
        if self.ablation.without_micro:
            return tuple(range(1, self.dataset.t_future))
        return tuple(self.dataset.sg_steps)

    @property
    def micro_goal_steps(self) -> tuple[int, ...]:
        if self.ablation.without_sg_net:
            return (self.dataset.t_future,)
        return tuple(self.dataset.sg_steps) + (self.dataset.t_future,)

    def to_dict(self) -> dict:
        return {"profile": self.profile, **{k: asdict(getattr(self, k)) for k in PROFILE_TYPES}}

    def training_hash(self) -> str:
        """Hash of everything checkpoints depend on (the eval profile is excluded)."""
        payload = {k: v for k, v in self.to_dict().items() if k not in ("eval", "profile")}
        return _digest(payload)

    def config_hash(self) -> str:
        return _digest(self.to_dict())

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, dataset=replace(self.dataset, data_seed=seed),
                       model=replace(self.model, train_seed=seed), eval=replace(self.eval, eval_seed=seed))

    def with_ablation(self, names) -> "RunConfig":
        flags = {}
        for name in names:
            key = "without_" + name.replace("-", "_").removeprefix("without_").removeprefix("no_")
            if key not in {f.name for f in fields(AblationFlags)}:
                raise ConfigError(f"unknown ablation {name!r}")
            flags[key] = True
        return replace(self, ablation=replace(self.ablation, **flags))


def _digest(payload) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


_KEY_OWNER = {f.name: sec for sec, cls in PROFILE_TYPES.items() for f in fields(cls)}


def _coerce(cls, name, value):
    ftype = {f.name: f for f in fields(cls)}[name].type
    if isinstance(value, list):
        return tuple(value)
    if "float" in str(ftype) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def build_config(values: dict | None = None) -> RunConfig:
    values = dict(values or {})
    profile = values.pop("profile", "desk")
    if profile not in PRESETS:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PRESETS)}")
    sections = {sec: dict(PRESETS[profile].get(sec, {})) for sec in PROFILE_TYPES}
    for key, value in values.items():
        if isinstance(value, dict):
            raise ConfigError(f"config is flat key/value; table [{key}] not allowed")
        sec = _KEY_OWNER.get(key)
        if sec is None:
            raise ConfigError(f"unknown config key {key!r}")
        sections[sec][key] = _coerce(PROFILE_TYPES[sec], key, value)
    return RunConfig(profile=profile, **{sec: PROFILE_TYPES[sec](**kv) for sec, kv in sections.items()})


BUNDLED_DIR = Path(__file__).resolve().parent.parent / "configs"


def resolve_config_path(path):
    """Existing file paths win; otherwise ``desk`` / ``smoke.toml`` name a bundled config."""
    if path is None or Path(path).is_file():
        return path
    bundled = BUNDLED_DIR / (Path(path).stem + ".toml")
    if bundled.is_file():
        return bundled
    raise ConfigError(f"config file {path} not found")


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    values = {}
    if path is not None:
        try:
            values = tomllib.loads(Path(path).read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    values.update(overrides or {})
    return build_config(values)


def dump_config(cfg: RunConfig) -> str:
    """Flat TOML rendering that :func:`load_config` reads back to an equal config."""
    lines = [f'profile = "{cfg.profile}"']
    for sec in PROFILE_TYPES:
        lines.append(f"# {sec}")
        for key, value in asdict(getattr(cfg, sec)).items():
            lines.append(f"{key} = {_toml_value(value)}")
    return "\n".join(lines) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)
