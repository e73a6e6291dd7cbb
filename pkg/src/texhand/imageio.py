"""Binary PPM/PGM images and small CSV helpers."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    """Write a 3×H×W float image in [0,1] as 8-bit P6."""
    img = to_uint8(image)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected 3×H×W image, got {img.shape}")
    _, h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img.transpose(1, 2, 0)).tobytes())


def write_pgm(path, mask: np.ndarray) -> None:
    """Write an H×W image in [0,1] (or a boolean mask) as 8-bit P5."""
    img = to_uint8(np.asarray(mask, dtype=np.float64))
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def _read_netpbm(path):
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit images are supported")
    return magic, w, h, data[pos:]


def read_ppm(path) -> np.ndarray:
    magic, w, h, body = _read_netpbm(path)
    if magic != "P6":
        raise ValueError(f"{path}: not a binary PPM")
    arr = np.frombuffer(body, dtype=np.uint8, count=w * h * 3).reshape(h, w, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def read_pgm(path) -> np.ndarray:
    magic, w, h, body = _read_netpbm(path)
    if magic != "P5":
        raise ValueError(f"{path}: not a binary PGM")
    return np.frombuffer(body, dtype=np.uint8, count=w * h).reshape(h, w).astype(np.float64) / 255.0


def side_by_side(images, pad: int = 2, fill: float = 1.0) -> np.ndarray:
    """Horizontally tile 3×H×W images (heights padded to the tallest)."""
    h = max(im.shape[1] for im in images)
    cols = []
    for im in images:
        canvas = np.full((3, h, im.shape[2]), fill)
        canvas[:, :im.shape[1]] = im
        cols.append(canvas)
        cols.append(np.full((3, h, pad), fill))
    return np.concatenate(cols[:-1], axis=2)
