import struct

import numpy as np
import pytest

from pnoplan.fileio import (
    FileFormatError, load_field, load_grid, read_checkpoint, read_pgm, save_field,
    tensor_bytes, write_checkpoint, write_pgm,
)
from pnoplan.grid import OccupancyGrid, ScalarField, generate_random_map


def test_eikf_layout():
    raw = tensor_bytes(np.array([[1.0, 2.0, 3.0]]))
    assert raw[:4] == b"EIKF"
    assert struct.unpack("<IB", raw[4:9]) == (1, 2)
    assert struct.unpack("<2Q", raw[9:25]) == (1, 3)
    assert np.frombuffer(raw[25:], "<f4").tolist() == [1.0, 2.0, 3.0]
    assert len(raw) == 25 + 12


def test_field_roundtrip(tmp_path):
    g = generate_random_map(2, 20, 24)
    save_field(tmp_path / "g.eikf", g)
    assert load_grid(tmp_path / "g.eikf") == g
    v = np.array([[0.0, np.inf], [0.25, 1e-3]])
    save_field(tmp_path / "v.eikf", ScalarField(v, 0.5, "value"))
    back = load_field(tmp_path / "v.eikf")
    assert back.dtype == np.float32
    assert np.isinf(back[0, 1]) and back[1, 0] == 0.25


def test_field_errors(tmp_path):
    p = tmp_path / "bad.eikf"
    p.write_bytes(b"EIKX" + bytes(20))
    with pytest.raises(FileFormatError):
        load_field(p)
    raw = tensor_bytes(np.ones((3, 3)))
    p.write_bytes(raw[:-4])
    with pytest.raises(FileFormatError):
        load_field(p)
    p.write_bytes(raw[:4] + struct.pack("<I", 2) + raw[8:])
    with pytest.raises(FileFormatError):
        load_field(p)


def test_checkpoint_roundtrip(tmp_path):
    t = {"a.W": np.arange(6.0).reshape(2, 3), "b": np.array([1.5])}
    write_checkpoint(tmp_path / "m.eikm", t, {"model": "x", "width": "4"})
    back, meta = read_checkpoint(tmp_path / "m.eikm")
    assert meta == {"model": "x", "width": "4"}
    assert list(back) == ["a.W", "b"]
    np.testing.assert_array_equal(back["a.W"], t["a.W"])
    (tmp_path / "n.eikm").write_bytes(b"EIKF")
    with pytest.raises(FileFormatError):
        read_checkpoint(tmp_path / "n.eikm")


def test_pgm(tmp_path):
    v = np.array([[0.0, 1.0], [np.inf, 0.5]])
    write_pgm(tmp_path / "a.pgm", v)
    img = read_pgm(tmp_path / "a.pgm")
    assert img.tolist() == [[0, 255], [0, 128]]
    (tmp_path / "b.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(FileFormatError):
        read_pgm(tmp_path / "b.pgm")


def test_all_safe_grid_roundtrip(tmp_path):
    g = OccupancyGrid(np.ones((3, 2), bool))
    save_field(tmp_path / "g.eikf", g)
    assert load_grid(tmp_path / "g.eikf") == g
