"""Minimal raster I/O: binary PPM (P6) read/write by hand, PNG via Pillow."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np


def encode_ppm(image: np.ndarray) -> bytes:
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError("expected uint8 HxWx3 image")
    h, w = image.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + image.tobytes()


def decode_ppm(data: bytes) -> np.ndarray:
    fields: list[bytes] = []
    pos = 0
    # header = magic, width, height, maxval; '#' starts a comment line
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise ValueError(f"not a binary PPM: magic {fields[0]!r}")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    raw = data[pos : pos + w * h * 3]
    if len(raw) != w * h * 3:
        raise ValueError("truncated PPM payload")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).copy()


def load_image(path) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    if path.suffix.lower() == ".ppm" or data[:2] == b"P6":
        return decode_ppm(data)
    from PIL import Image

    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img.convert("RGB"))


def save_image(image: np.ndarray, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        path.write_bytes(encode_ppm(image))
        return
    from PIL import Image

    Image.fromarray(image, mode="RGB").save(path)
