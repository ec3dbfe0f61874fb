import json
import shutil
import warnings

import numpy as np
import pytest
import torch

from msforecast.errors import ParseError
from msforecast.heatmap import decode_peak
from msforecast.pipeline.data import (build_samples, epoch_order, lg_batches, load_dataset, micro_arrays,
                                      sg_batches, steps_per_epoch)
from msforecast.pipeline.train import data_dir
from msforecast.raster import round_half_away


@pytest.fixture(scope="module")
def data(smoke_run, smoke_cfg):
    return data_dir(smoke_cfg, smoke_run)


def test_generated_dataset_loads_cleanly(data):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ds = load_dataset(data)
    assert len(ds) > 0
    for rec, grid, h in ds:
        assert rec.points.shape == (20, 2)
    assert {r.split for r in ds.records} == {"train", "val", "test"}


def _copy(data, tmp_path):
    dst = tmp_path / "d"
    shutil.copytree(data, dst)
    return dst, (dst / "scenes.jsonl").read_text().splitlines()


def test_short_record_names_scene(data, tmp_path):
    dst, lines = _copy(data, tmp_path)
    rec = json.loads(lines[2])
    rec["points"] = rec["points"][:19]
    lines[2] = json.dumps(rec)
    (dst / "scenes.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError, match=rec["scene_id"]) as exc:
        load_dataset(dst)
    assert "line 3" in str(exc.value)


def test_duplicate_and_garbage(data, tmp_path):
    dst, lines = _copy(data, tmp_path)
    (dst / "scenes.jsonl").write_text("\n".join(lines + [lines[0]]) + "\n")
    with pytest.raises(ParseError, match="duplicate"):
        load_dataset(dst)
    (dst / "scenes.jsonl").write_text("\n".join(lines[:3] + ["{not json"]) + "\n")
    with pytest.raises(ParseError, match="line 4"):
        load_dataset(dst)
    (dst / "envs" / "env000.pgm").unlink()
    (dst / "scenes.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(FileNotFoundError):
        load_dataset(dst)


def test_local_frame_samples(data, smoke_cfg):
    ds = load_dataset(data)
    prof = smoke_cfg.dataset
    s = build_samples(ds, "train", prof, limit=10)
    assert len(s) == 10 and s.maps.shape == (10, 64, 64)
    for i in range(10):
        rec = ds.record(s.scene_ids[i])
        assert np.array_equal(s.past_world[i], rec.points[:8])
        goal = round_half_away(s.future_local[i, -1])
        if np.all((goal >= 0) & (goal < 64)):
            assert decode_peak(s.goal_tensor([i], [12])[0, 0].numpy()) == tuple(goal)
    past = s.past_tensor(list(range(3)))
    assert past.shape == (3, 1, 64, 64) and past.max() == 1.0
    with pytest.raises(ParseError):
        build_samples(ds, "nonexistent", prof)


def test_batch_factories(data, smoke_cfg):
    ds = load_dataset(data)
    s = build_samples(ds, "train", smoke_cfg.dataset, limit=20)
    order = epoch_order(20, 8, np.random.default_rng(0))
    assert [len(o) for o in order] == [8, 8, 4] and steps_per_epoch(20, 8) == 3
    assert sorted(np.concatenate(order).tolist()) == list(range(20))
    i_m, i_x, i_lg = next(lg_batches(s, 8, 12)(0, np.random.default_rng(0)))
    assert i_m.shape == i_x.shape == i_lg.shape == (8, 1, 64, 64)
    i_m, i_x, i_in, tgt = next(sg_batches(s, 8, (4, 8), 12)(0, np.random.default_rng(0)))
    assert tgt.shape == (8, 3, 64, 64) and torch.equal(i_in[:, 0], tgt[:, -1])
    arr = micro_arrays(s, (4, 8, 12), 2.5)
    assert arr["goals"].shape == (20, 3, 2)
    assert torch.equal(arr["goals"][:, -1], arr["future"][:, -1])
    assert torch.allclose(arr["past_states"][:, -1, :2], torch.zeros(20, 2))
