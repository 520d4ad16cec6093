"""Binary PPM (P6, 8-bit) reader and writer.

The format is a one-line magic, optional comment lines, width/height, the
maxval, then raw interleaved RGB bytes. No third-party imaging library is
needed to produce or consume the dataset.
"""

from __future__ import annotations

import numpy as np

__all__ = ["read_ppm", "write_ppm", "image_to_unit", "unit_to_image"]


def write_ppm(path, rgb: np.ndarray, comment: str | None = None):
    """Write an (H, W, 3) uint8 array as binary PPM."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 3) uint8 image, got {rgb.shape} {rgb.dtype}")
    h, w = rgb.shape[:2]
    header = b"P6\n"
    if comment:
        for line in comment.splitlines():
            header += b"# " + line.encode("utf-8") + b"\n"
    header += f"{w} {h}\n255\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM into an (H, W, 3) uint8 array."""
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P6"):
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(v) for v in fields)
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM supported, maxval was {maxval}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=h * w * 3, offset=pos)
    if pixels.size != h * w * 3:
        raise ValueError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w, 3).copy()


def image_to_unit(rgb: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 -> (3, H, W) float64 in [0, 1]."""
    return np.ascontiguousarray(rgb.transpose(2, 0, 1), dtype=np.float64) / 255.0


def unit_to_image(chw: np.ndarray) -> np.ndarray:
    """(3, H, W) float in [0, 1] -> (H, W, 3) uint8 with round-half-away quantization."""
    clipped = np.clip(np.asarray(chw, dtype=np.float64), 0.0, 1.0)
    return (clipped * 255.0 + 0.5).astype(np.uint8).transpose(1, 2, 0)
