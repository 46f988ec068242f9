"""Binary field files (``EIKF``), model checkpoints (``EIKM``) and PGM images.

EIKF layout (little-endian)::

    b"EIKF" | u32 version=1 | u8 rank | u64 dim[rank] | f32 data[prod(dims)]

EIKM layout (little-endian)::

    b"EIKM" | u32 version=1 | u32 meta_len | meta (utf-8 "key=value" lines)
    | u32 n_tensors | n_tensors * (u32 name_len | name (utf-8) | EIKF blob)

Booleans are stored as 0.0/1.0 and ``+inf`` is kept as float32 infinity.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .grid import OccupancyGrid, ScalarField

FIELD_MAGIC = b"EIKF"
MODEL_MAGIC = b"EIKM"
VERSION = 1


class FileFormatError(ValueError):
    pass


def write_tensor(f: BinaryIO, array) -> None:
    a = np.asarray(array)
    if a.dtype == bool:
        a = a.astype(np.float32)
    f.write(FIELD_MAGIC)
    f.write(struct.pack("<IB", VERSION, a.ndim))
    f.write(struct.pack(f"<{a.ndim}Q", *a.shape))
    f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def _read_exact(f: BinaryIO, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise FileFormatError("truncated file")
    return b


def read_tensor(f: BinaryIO) -> np.ndarray:
    if _read_exact(f, 4) != FIELD_MAGIC:
        raise FileFormatError("bad EIKF magic")
    version, rank = struct.unpack("<IB", _read_exact(f, 5))
    if version != VERSION:
        raise FileFormatError(f"unsupported EIKF version {version}")
    dims = struct.unpack(f"<{rank}Q", _read_exact(f, 8 * rank))
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    data = np.frombuffer(_read_exact(f, 4 * count), dtype="<f4")
    return data.reshape(dims).astype(np.float32)


def tensor_bytes(array) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, array)
    return buf.getvalue()


def save_field(path, obj) -> None:
    """Write an ``OccupancyGrid``, ``ScalarField`` or array as EIKF."""
    if isinstance(obj, OccupancyGrid):
        data = obj.cells
    elif isinstance(obj, ScalarField):
        data = obj.values
    else:
        data = obj
    with open(path, "wb") as f:
        write_tensor(f, data)


def load_field(path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_tensor(f)


def load_grid(path) -> OccupancyGrid:
    return OccupancyGrid(load_field(path) > 0.5)


# --------------------------------------------------------------------------

def write_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict[str, str]) -> None:
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    text = "".join(f"{k}={v}\n" for k, v in meta.items()).encode("utf-8")
    buf.write(struct.pack("<II", VERSION, len(text)))
    buf.write(text)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        write_tensor(buf, arr)
    Path(path).write_bytes(buf.getvalue())


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    with open(path, "rb") as f:
        if _read_exact(f, 4) != MODEL_MAGIC:
            raise FileFormatError("bad EIKM magic")
        version, meta_len = struct.unpack("<II", _read_exact(f, 8))
        if version != VERSION:
            raise FileFormatError(f"unsupported EIKM version {version}")
        meta = {}
        for line in _read_exact(f, meta_len).decode("utf-8").splitlines():
            if line:
                k, _, v = line.partition("=")
                meta[k] = v
        (n,) = struct.unpack("<I", _read_exact(f, 4))
        tensors = {}
        for _ in range(n):
            (ln,) = struct.unpack("<I", _read_exact(f, 4))
            name = _read_exact(f, ln).decode("utf-8")
            tensors[name] = read_tensor(f)
    return tensors, meta


# --------------------------------------------------------------------------

def write_pgm(path, values, vmin: float | None = None, vmax: float | None = None) -> None:
    """Binary (P5) 8-bit grayscale image; non-finite entries are drawn black."""
    v = np.asarray(values, dtype=float)
    finite = np.isfinite(v)
    lo = float(v[finite].min()) if vmin is None and finite.any() else (vmin or 0.0)
    hi = float(v[finite].max()) if vmax is None and finite.any() else (vmax or 1.0)
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    img = np.zeros(v.shape, dtype=np.uint8)
    img[finite] = np.clip(np.rint((v[finite] - lo) * scale), 0, 255).astype(np.uint8)
    header = f"P5\n{v.shape[1]} {v.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise FileFormatError("not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
