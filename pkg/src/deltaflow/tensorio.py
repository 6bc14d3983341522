"""Binary grid codec and netpbm frame I/O.

Grid files ("DFVT"): magic ``DFVT``, version u16=1 (little-endian), dtype
code u8 (1 = float32 LE), ndim u8, extents as u32 LE, raw row-major payload.
Grids are float64 in memory and float32 on disk.

Frames: PGM (P5, single channel) and PPM (P6, three channels), 8-bit,
[0, 1] scaled to [0, 255] with round-half-up. External masks load from
P5 files with the >=128 -> 1 convention, or from a DFVT grid.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CodecError, InvalidDimensionError
from .grids import validate_dims

MAGIC = b"DFVT"
VERSION = 1
DTYPE_F32 = 1

__all__ = [
    "write_grid",
    "read_grid",
    "write_pgm",
    "read_pgm",
    "write_ppm",
    "read_mask_pgm",
]


def write_grid(path, grid: np.ndarray) -> None:
    grid = np.ascontiguousarray(grid, dtype=np.float64)
    dims = validate_dims(grid.shape)
    header = MAGIC + struct.pack("<HBB", VERSION, DTYPE_F32, len(dims))
    header += struct.pack(f"<{len(dims)}I", *dims)
    payload = grid.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(header + payload)


def read_grid(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise CodecError(f"{path}: missing DFVT magic")
    version, dtype_code, ndim = struct.unpack_from("<HBB", raw, 4)
    if version != VERSION:
        raise CodecError(f"{path}: unsupported version {version}")
    if dtype_code != DTYPE_F32:
        raise CodecError(f"{path}: unsupported dtype code {dtype_code}")
    if ndim < 1:
        raise InvalidDimensionError(f"{path}: ndim {ndim} < 1")
    offset = 8
    if len(raw) < offset + 4 * ndim:
        raise CodecError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{ndim}I", raw, offset)
    validate_dims(dims)
    offset += 4 * ndim
    count = int(np.prod(dims))
    expected = offset + 4 * count
    if len(raw) != expected:
        raise CodecError(f"{path}: payload length {len(raw) - offset}, expected {4 * count}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
    return data.astype(np.float64).reshape(dims)


def _to_u8(frame: np.ndarray) -> np.ndarray:
    # round-half-up from [0,1] to [0,255]
    scaled = np.floor(np.clip(frame, 0.0, 1.0) * 255.0 + 0.5)
    return scaled.astype(np.uint8)


def write_pgm(path, frame: np.ndarray) -> None:
    """frame: (H, W) values in [0, 1]."""
    if frame.ndim != 2:
        raise CodecError(f"PGM frame must be 2-D, got shape {frame.shape}")
    h, w = frame.shape
    data = _to_u8(frame).tobytes()
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + data)


def write_ppm(path, frame: np.ndarray) -> None:
    """frame: (H, W, 3) values in [0, 1]."""
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise CodecError(f"PPM frame must be (H, W, 3), got shape {frame.shape}")
    h, w, _ = frame.shape
    data = _to_u8(frame).tobytes()
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + data)


def _read_netpbm(path, magic: str) -> tuple[np.ndarray, int, int]:
    raw = Path(path).read_bytes()
    if not raw.startswith(magic.encode()):
        raise CodecError(f"{path}: expected {magic} file")
    # header = magic, width, height, maxval, separated by whitespace/comments
    fields: list[int] = []
    i = 2
    while len(fields) < 3:
        while i < len(raw) and raw[i : i + 1].isspace():
            i += 1
        if i < len(raw) and raw[i : i + 1] == b"#":
            while i < len(raw) and raw[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(raw) and not raw[j : j + 1].isspace():
            j += 1
        if i == j:
            raise CodecError(f"{path}: truncated header")
        fields.append(int(raw[i:j]))
        i = j
    i += 1  # single whitespace byte after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise CodecError(f"{path}: only 8-bit maxval=255 supported, got {maxval}")
    channels = 3 if magic == "P6" else 1
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * channels, offset=i)
    if data.size != w * h * channels:
        raise CodecError(f"{path}: truncated payload")
    return data, h, w


def read_pgm(path) -> np.ndarray:
    """Read P5 into a (H, W) float64 grid in [0, 1]."""
    data, h, w = _read_netpbm(path, "P5")
    return data.reshape(h, w).astype(np.float64) / 255.0


def read_mask_pgm(path) -> np.ndarray:
    """Read P5 into a boolean (H, W) mask: byte >= 128 -> True."""
    data, h, w = _read_netpbm(path, "P5")
    return data.reshape(h, w) >= 128
