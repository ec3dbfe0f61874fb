from dataclasses import replace

import pytest

from msforecast.errors import ConfigError
from msforecast.pipeline.config import (BUNDLED_DIR, RunConfig, build_config, dump_config, load_config,
                                        resolve_config_path)


def test_bundled_configs_load():
    desk = load_config(resolve_config_path("desk"))
    smoke = load_config(resolve_config_path("smoke.toml"))
    assert desk == RunConfig()
    assert smoke.model.lg_epochs == 2 and smoke.eval.k_list == (5,)
    assert desk.lg_fb_per_dim == pytest.approx(0.08)
    assert desk.model.micro_free_bits == 0.07 and desk.model.beta == 50.0


def test_pfsd_preset():
    cfg = build_config({"profile": "pfsd"})
    assert cfg.dataset.raster_size == 160 and cfg.eval.k_list == (20, 50)
    assert cfg.model.lg_encoder == (32, 32, 64, 64, 64)


@pytest.mark.parametrize("values", [
    {"no_such_key": 1},
    {"model": {"beta": 2}},
    {"profile": "huge"},
    {"sg_steps": [8, 4]},
    {"sg_steps": [4, 11]},
    {"units": "feet"},
    {"sg_input": "teacher"},
    {"without_sg_net": True, "without_micro": True},
])
def test_invalid_configs(values):
    with pytest.raises(ConfigError):
        build_config(values)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        resolve_config_path(tmp_path / "nope.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("beta = = 3\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_dump_round_trip(tmp_path):
    cfg = build_config({"beta": 10, "k_list": [1, 3], "without_ll_prior": True})
    path = tmp_path / "c.toml"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_hashes():
    cfg = RunConfig()
    ev = replace(cfg, eval=replace(cfg.eval, k_list=(1,)))
    assert ev.training_hash() == cfg.training_hash()
    assert ev.config_hash() != cfg.config_hash()
    assert cfg.with_seed(3).training_hash() != cfg.training_hash()
    assert cfg.with_ablation(["without_micro"]).training_hash() != cfg.training_hash()


def test_ablation_goal_steps():
    cfg = RunConfig()
    assert cfg.sg_goal_steps == (4, 8) and cfg.micro_goal_steps == (4, 8, 12)
    no_sg = cfg.with_ablation(["without_sg_net"])
    assert no_sg.micro_goal_steps == (12,) and no_sg.ablation.name == "no_sg_net"
    no_micro = cfg.with_ablation(["no_micro"])
    assert no_micro.sg_goal_steps == tuple(range(1, 12))
    assert cfg.with_ablation(["without_ll_prior", "without_micro"]).ablation.name == "no_micro+no_ll_prior"
    with pytest.raises(ConfigError):
        cfg.with_ablation(["without_everything"])


def test_bundled_dir_contents():
    assert {p.name for p in BUNDLED_DIR.glob("*.toml")} >= {"desk.toml", "smoke.toml"}
