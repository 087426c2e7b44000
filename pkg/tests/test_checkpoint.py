import numpy as np
import pytest

from mrlabel.checkpoint import dumps_checkpoint, load_checkpoint, loads_checkpoint, save_checkpoint
from mrlabel.encoder import EncoderConfig, init_params
from mrlabel.errors import DataError


def test_round_trip_bit_exact(tmp_path):
    cfg = EncoderConfig(vocab_size=30, n_layers=2, d_model=8, n_heads=2, d_ff=16, max_len=10)
    p = init_params(cfg, np.random.default_rng(0))
    p["embed.token"][0, 0] = np.float32(-0.0)
    save_checkpoint(tmp_path / "a.ckpt", p, {"vocab_hash": "abc", "encoder": cfg.to_dict()})
    back, meta = load_checkpoint(tmp_path / "a.ckpt")
    assert meta["vocab_hash"] == "abc"
    assert back.keys() == p.keys()
    for k in p:
        assert back[k].dtype == np.float32
        assert back[k].tobytes() == p[k].tobytes()


def test_same_params_same_bytes():
    p = {"b": np.arange(3, dtype=np.float32), "a": np.ones((2, 2), np.float32)}
    q = {"a": np.ones((2, 2), np.float32), "b": np.arange(3, dtype=np.float32)}
    assert dumps_checkpoint(p, {"x": 1}) == dumps_checkpoint(q, {"x": 1})


def test_corrupt_files():
    with pytest.raises(DataError, match="magic"):
        loads_checkpoint(b"NOTACKPT" + bytes(16))
    blob = dumps_checkpoint({"a": np.ones(100, np.float32)})
    with pytest.raises(DataError, match="past end"):
        loads_checkpoint(blob[:-8])
