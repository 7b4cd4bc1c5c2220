import numpy as np
import pytest

from iamp.binio import ContainerError, read_container, write_container

MAGIC = b"TESTMAG1"


def test_round_trip(tmp_path):
    arrays = {"a": np.arange(12, dtype=np.float64).reshape(3, 4), "b": np.array([1, -2, 3], dtype=np.int32)}
    path = tmp_path / "c.bin"
    write_container(path, MAGIC, {"note": "x"}, arrays)
    header, back = read_container(path, MAGIC)
    assert header["note"] == "x"
    for k in arrays:
        np.testing.assert_array_equal(back[k], arrays[k])
        assert back[k].dtype == arrays[k].dtype


def test_bad_magic_and_corruption(tmp_path):
    path = tmp_path / "c.bin"
    write_container(path, MAGIC, {}, {"a": np.ones(4)})
    with pytest.raises(ContainerError, match="magic"):
        read_container(path, b"OTHERMAG")
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(ContainerError, match="checksum"):
        read_container(path, MAGIC)


def test_deterministic_bytes(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    for p in (a, b):
        write_container(p, MAGIC, {"k": 1}, {"x": np.linspace(0, 1, 5)})
    assert a.read_bytes() == b.read_bytes()
