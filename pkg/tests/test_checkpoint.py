import struct

import numpy as np
import pytest

from msodnet import checkpoint
from msodnet.checkpoint import CheckpointError, decode_params, encode_params, load_into, save
from msodnet.layers import named_tensors
from msodnet.model import ModelConfig, init_params

TINY = ModelConfig(widths=(2, 2, 3, 3, 4, 4))


def test_layout_by_hand():
    from msodnet.tensor import Tensor
    params = [Tensor(np.array([[1.5, -2.0]])), Tensor(np.array(3.0))]
    buf = encode_params(params)
    expected = (b"MSOD1" + struct.pack("<I", 1) + b"0" + struct.pack("<I", 2) + struct.pack("<2Q", 1, 2)
                + struct.pack("<2d", 1.5, -2.0) + struct.pack("<I", 1) + b"1" + struct.pack("<I", 0)
                + struct.pack("<d", 3.0))
    assert buf == expected


def test_file_round_trip_is_byte_exact(tmp_path):
    p = init_params(TINY, 3)
    save(tmp_path / "a.ckpt", p)
    back = load_into(tmp_path / "a.ckpt", init_params(TINY, 0))
    save(tmp_path / "b.ckpt", back)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    for (n1, a), (n2, b) in zip(named_tensors(p), named_tensors(back)):
        assert n1 == n2 and np.array_equal(a.data, b.data)


def test_decoded_names_follow_tree_order():
    p = init_params(TINY, 0)
    assert list(decode_params(encode_params(p))) == [n for n, _ in named_tensors(p)]


def test_special_values_survive(tmp_path):
    from msodnet.tensor import Tensor
    vals = np.array([0.0, -0.0, np.inf, 5e-324, np.nextafter(1.0, 2.0)])
    save(tmp_path / "c.ckpt", [Tensor(vals)])
    back = decode_params((tmp_path / "c.ckpt").read_bytes())["0"]
    assert back.tobytes() == vals.tobytes()


def test_bad_magic():
    with pytest.raises(CheckpointError, match="magic"):
        decode_params(b"NOPE1")


def test_truncated():
    buf = encode_params(init_params(TINY, 0))
    with pytest.raises(CheckpointError, match="truncated"):
        decode_params(buf[:-3])
    with pytest.raises(CheckpointError, match="truncated"):
        decode_params(buf[:7])


def test_mismatched_model(tmp_path):
    save(tmp_path / "t.ckpt", init_params(TINY, 0))
    with pytest.raises(CheckpointError, match="shape"):
        load_into(tmp_path / "t.ckpt", init_params(ModelConfig(widths=(2, 2, 3, 3, 4, 5)), 0))
    with pytest.raises(CheckpointError, match="does not match"):
        load_into(tmp_path / "t.ckpt", init_params(ModelConfig(widths=(2, 2, 3, 3, 4, 4), nlgm=False), 0))


def test_module_exposes_magic():
    assert checkpoint.MAGIC == b"MSOD1"
