"""Binary tensor files and raw frame formats.

Tensor convention: a 16-byte header holding ``rows`` and ``cols`` as
little-endian unsigned 64-bit integers, then ``rows * cols`` little-endian
float64 values in row-major order. Tensors with more than two axes are
stored flattened to ``(prod(shape[:-1]), shape[-1])``; their full shape
lives in a JSON sidecar next to the file (``<name>.json``).

Raw video blob: header ``T, C, H, W`` as little-endian uint64, then
``T*C*H*W`` unsigned bytes in that axis order. Frames can also be a
directory of binary PGM (P5) or PPM (P6) images, read in name order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

_HEADER = struct.Struct("<QQ")
_VIDEO_HEADER = struct.Struct("<QQQQ")


def write_matrix(path, m) -> None:
    m = np.ascontiguousarray(m, dtype="<f8")
    if m.ndim != 2:
        raise DataError(f"write_matrix expects 2-D data, got {m.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*m.shape))
        fh.write(m.tobytes())


def read_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated tensor header")
    rows, cols = _HEADER.unpack_from(raw)
    expected = _HEADER.size + 8 * rows * cols
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes for {rows}x{cols}, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    return data.reshape(rows, cols).astype(np.float64)


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def write_tensor(path, arr, meta: dict | None = None) -> None:
    """Write ``arr`` in the matrix convention plus a shape/digest sidecar."""
    a = np.asarray(arr, dtype=np.float64)
    flat = a.reshape(-1, a.shape[-1]) if a.ndim >= 2 else a.reshape(1, -1)
    write_matrix(path, flat)
    side = {"shape": list(a.shape), "sha256": sha256_file(path)}
    if meta:
        side.update(meta)
    sidecar_path(path).write_text(json.dumps(side, sort_keys=True, indent=1) + "\n")


def read_tensor(path) -> np.ndarray:
    m = read_matrix(path)
    side = sidecar_path(path)
    if side.exists():
        shape = json.loads(side.read_text())["shape"]
        try:
            return m.reshape(shape)
        except ValueError as exc:
            raise DataError(f"{path}: sidecar shape {shape} does not fit data {m.shape}") from exc
    return m


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    while True:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        break
    start = pos
    while pos < len(buf) and not buf[pos:pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM/PPM into a ``C x H x W`` array scaled to [0, 1]."""
    buf = Path(path).read_bytes()
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise DataError(f"{path}: unsupported PNM magic {magic!r}")
    w, pos = _read_token(buf, pos)
    h, pos = _read_token(buf, pos)
    maxval, pos = _read_token(buf, pos)
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval > 255:
        raise DataError(f"{path}: 16-bit PNM not supported")
    c = 1 if magic == b"P5" else 3
    pos += 1
    data = np.frombuffer(buf, dtype=np.uint8, count=h * w * c, offset=pos)
    return data.reshape(h, w, c).transpose(2, 0, 1).astype(np.float64) / maxval


def write_pnm(path, frame) -> None:
    f = np.asarray(frame)
    if f.ndim == 2:
        f = f[None]
    c, h, w = f.shape
    if c not in (1, 3):
        raise DataError(f"PNM needs 1 or 3 channels, got {c}")
    px = np.clip(np.rint(f * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    magic = b"P5" if c == 1 else b"P6"
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(px.tobytes())


def write_raw_video(path, frames) -> None:
    f = np.asarray(frames)
    if f.ndim != 4:
        raise DataError(f"raw video must be T x C x H x W, got {f.shape}")
    px = np.clip(np.rint(f * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(_VIDEO_HEADER.pack(*px.shape))
        fh.write(px.tobytes())


def read_raw_video(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _VIDEO_HEADER.size:
        raise DataError(f"{path}: truncated video header")
    shape = _VIDEO_HEADER.unpack_from(raw)
    n = int(np.prod(shape))
    if len(raw) != _VIDEO_HEADER.size + n:
        raise DataError(f"{path}: size does not match header {shape}")
    data = np.frombuffer(raw, dtype=np.uint8, offset=_VIDEO_HEADER.size)
    return data.reshape(shape).astype(np.float64) / 255.0


def load_frames(path) -> np.ndarray:
    """Load ``T x C x H x W`` frames from a raw blob, a PNM file or a PNM directory."""
    p = Path(path)
    if not p.exists():
        raise DataError(f"{p}: no such file or directory")
    if p.is_dir():
        files = sorted(f for f in p.iterdir() if f.suffix.lower() in (".pgm", ".ppm"))
        if not files:
            raise DataError(f"{p}: no PGM/PPM frames")
        frames = [read_pnm(f) for f in files]
        if len({f.shape for f in frames}) != 1:
            raise DataError(f"{p}: frames differ in size")
        return np.stack(frames)
    if p.suffix.lower() in (".pgm", ".ppm"):
        return read_pnm(p)[None]
    return read_raw_video(p)
