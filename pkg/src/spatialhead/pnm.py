"""Netpbm (PGM/PPM) reading and writing, plus an optional Pillow fallback."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataError

PNM_SUFFIXES = {".pgm", ".ppm", ".pnm"}


def _tokens(buf: bytes, count: int, pos: int) -> tuple[list[bytes], int]:
    out = []
    n = len(buf)
    while len(out) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError("truncated header")
        out.append(buf[start:pos])
    return out, pos


def decode_pnm(buf: bytes) -> np.ndarray:
    """Decode P2/P3/P5/P6 into a float64 array [h, w, channels] of raw sample values."""
    magic = buf[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise ValueError(f"unsupported magic {magic!r}")
    (w, h, maxval), pos = _tokens(buf, 3, 2)
    w, h, maxval = int(w), int(h), int(maxval)
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise ValueError("bad header values")
    channels = 3 if magic in (b"P3", b"P6") else 1
    count = w * h * channels
    if magic in (b"P2", b"P3"):
        vals, _ = _tokens(buf, count, pos)
        arr = np.array([int(v) for v in vals], dtype=np.float64)
    else:
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
        raw = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
        arr = raw.astype(np.float64)
    return arr.reshape(h, w, channels)


def encode_pnm(img: np.ndarray) -> bytes:
    """Binary P5 (one channel) or P6 (three channels), 8-bit."""
    a = np.asarray(img)
    if a.ndim == 2:
        a = a[:, :, None]
    h, w, c = a.shape
    if c not in (1, 3):
        raise ValueError(f"PNM needs 1 or 3 channels, got {c}")
    a = np.clip(a, 0, 255).astype(np.uint8)
    magic = b"P5" if c == 1 else b"P6"
    return magic + f"\n{w} {h}\n255\n".encode() + a.tobytes()


def read_image(path) -> np.ndarray:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if path.suffix.lower() in PNM_SUFFIXES or buf[:1] == b"P":
        try:
            return decode_pnm(buf)
        except ValueError as exc:
            raise DataError(f"cannot decode {path}: {exc}") from exc
    try:
        from PIL import Image
    except ImportError:
        raise DataError(f"cannot decode {path}: only PGM/PPM supported without Pillow") from None
    try:
        with Image.open(path) as im:
            im = im.convert("L" if im.mode in ("1", "L", "I", "I;16") else "RGB")
            arr = np.asarray(im, dtype=np.float64)
    except Exception as exc:
        raise DataError(f"cannot decode {path}: {exc}") from exc
    return arr[:, :, None] if arr.ndim == 2 else arr


def write_image(path, img: np.ndarray) -> None:
    Path(path).write_bytes(encode_pnm(img))
