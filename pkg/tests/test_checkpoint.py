import io

import pytest
import torch

from msforecast.errors import StateError
from msforecast.pipeline.checkpoint import checkpoint_path, load_checkpoint, param_hash, save_checkpoint


def _state():
    torch.manual_seed(0)
    return torch.nn.Linear(3, 2).state_dict()


def test_round_trip(tmp_path):
    path = checkpoint_path(tmp_path, "lg")
    assert path == tmp_path / "checkpoints" / "none" / "lg.pt"
    digest = save_checkpoint(path, stage="lg", config_hash="abc", state_dict=_state(), epoch=3,
                             history=[{"epoch": 0, "total": 1.0}], upstream={"pretrain": "x"})
    arch = load_checkpoint(path, "abc", "lg")
    assert arch["param_hash"] == digest == param_hash(_state())
    assert arch["epoch"] == 3 and arch["upstream"] == {"pretrain": "x"}
    assert all(torch.equal(arch["state_dict"][k], v) for k, v in _state().items())


def test_param_hash_sensitivity():
    s = _state()
    t = {k: v.clone() for k, v in s.items()}
    t["bias"][0] += 1e-6
    assert param_hash(s) != param_hash(t)
    assert param_hash({k: v.double() for k, v in s.items()}) != param_hash(s)


def test_rejections(tmp_path):
    path = tmp_path / "c.pt"
    with pytest.raises(StateError, match="not found"):
        load_checkpoint(path, "abc")
    save_checkpoint(path, stage="sg", config_hash="abc", state_dict=_state())
    with pytest.raises(StateError, match="config"):
        load_checkpoint(path, "def")
    with pytest.raises(StateError, match="stage"):
        load_checkpoint(path, "abc", "lg")

    arch = torch.load(path, weights_only=False)
    arch["state_dict"]["bias"] += 1.0
    buf = io.BytesIO()
    torch.save(arch, buf)
    path.write_bytes(buf.getvalue())
    with pytest.raises(StateError, match="hash"):
        load_checkpoint(path, "abc")

    arch["format_version"] = 99
    torch.save(arch, path)
    with pytest.raises(StateError, match="format"):
        load_checkpoint(path, "abc")
