import numpy as np
import pytest

from skelex import skt


def test_tensor_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    for shape in [(3,), (2, 5), (2, 3, 4), (1, 2, 3, 4)]:
        arr = rng.standard_normal(shape).astype(np.float32)
        path = tmp_path / "t.skt"
        skt.write_tensor(path, arr)
        back = skt.read_tensor(path)
        assert back.shape == arr.shape
        assert np.array_equal(back, arr)


def test_tensor_header_layout(tmp_path):
    path = tmp_path / "t.skt"
    skt.write_tensor(path, np.zeros((2, 3), np.float32))
    raw = path.read_bytes()
    assert raw[:4] == b"SKT1"
    assert int.from_bytes(raw[4:8], "little") == 2
    assert int.from_bytes(raw[8:12], "little") == 2
    assert int.from_bytes(raw[12:16], "little") == 3
    assert len(raw) == 16 + 4 * 6


def test_tensor_bad_magic(tmp_path):
    path = tmp_path / "t.skt"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(skt.FormatError):
        skt.read_tensor(path)


def test_tensor_truncated(tmp_path):
    path = tmp_path / "t.skt"
    skt.write_tensor(path, np.zeros((4, 4), np.float32))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(skt.FormatError):
        skt.read_tensor(path)


def test_container_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    tensors = {f"p{i}": rng.standard_normal((i + 1, 3)).astype(np.float32)
               for i in range(4)}
    meta = {"iteration": 7, "config": {"lr": 0.001}}
    path = tmp_path / "c.skc"
    skt.write_container(path, tensors, meta)
    back, meta2 = skt.read_container(path)
    assert meta2 == meta
    assert list(back) == list(tensors)
    for k in tensors:
        assert np.array_equal(back[k], tensors[k])


def test_container_rejects_tensor_file(tmp_path):
    path = tmp_path / "t.skt"
    skt.write_tensor(path, np.zeros(3, np.float32))
    with pytest.raises(skt.FormatError):
        skt.read_container(path)
