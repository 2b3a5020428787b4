"""Binary PGM (P5) / PPM (P6) reading and writing, 8-bit only."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class NetpbmError(ValueError):
    pass


def _tokens(buf: bytes, count: int, origin: str):
    """First ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    out, pos, n = [], 0, len(buf)
    while len(out) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise NetpbmError(f"{origin}: truncated header")
        out.append(buf[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise NetpbmError(f"{origin}: malformed header")
    return out, pos + 1


def decode(buf: bytes, origin: str = "<bytes>") -> np.ndarray:
    """Decode to float64 in [0, 1]: ``[3,H,W]`` for P6, ``[H,W]`` for P5."""
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise NetpbmError(f"{origin}: not a binary PGM/PPM (magic {magic!r})")
    try:
        (w, h, maxval), start = _tokens(buf[2:], 3, origin)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise NetpbmError(f"{origin}: bad header ({exc})") from exc
    if w < 1 or h < 1 or not 0 < maxval < 256:
        raise NetpbmError(f"{origin}: unsupported size {w}x{h} / maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    need = w * h * channels
    raster = buf[2 + start:2 + start + need]
    if len(raster) != need:
        raise NetpbmError(f"{origin}: raster truncated ({len(raster)} of {need} bytes)")
    arr = np.frombuffer(raster, dtype=np.uint8).astype(np.float64) / maxval
    if channels == 3:
        return arr.reshape(h, w, 3).transpose(2, 0, 1).copy()
    return arr.reshape(h, w)


def read(path) -> np.ndarray:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise NetpbmError(f"{path}: unreadable ({exc})") from exc
    return decode(buf, str(path))


def to_bytes(values: np.ndarray) -> bytes:
    values = np.asarray(values, dtype=np.float64)
    q = np.rint(np.clip(values, 0.0, 1.0) * 255).astype(np.uint8)
    if values.ndim == 2:
        h, w = values.shape
        return f"P5\n{w} {h}\n255\n".encode() + q.tobytes()
    if values.ndim == 3 and values.shape[0] == 3:
        _, h, w = values.shape
        return f"P6\n{w} {h}\n255\n".encode() + q.transpose(1, 2, 0).tobytes()
    raise NetpbmError(f"cannot encode array of shape {values.shape}")


def write(path, values: np.ndarray) -> None:
    """Write ``[H,W]`` as P5 or ``[3,H,W]`` as P6, values ``round(255 * v)``."""
    Path(path).write_bytes(to_bytes(values))
