import numpy as np
import pytest

from trajsteer.checkpoint import (CheckpointError, load_checkpoint,
                                  save_checkpoint)
from trajsteer.policy import init_params
from test_policy import MICRO


def test_checkpoint_roundtrip(tmp_path):
    params = init_params(MICRO, seed=11)
    path = tmp_path / "policy.ckpt"
    save_checkpoint(path, params, MICRO)
    loaded, config = load_checkpoint(path)
    assert config == MICRO
    assert set(loaded) == set(params)
    for k in params:
        assert np.array_equal(loaded[k], params[k])


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(CheckpointError, match="bad magic"):
        load_checkpoint(path)


def test_checkpoint_truncated(tmp_path):
    params = init_params(MICRO, seed=1)
    path = tmp_path / "cut.ckpt"
    save_checkpoint(path, params, MICRO)
    path.write_bytes(path.read_bytes()[:-64])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)
