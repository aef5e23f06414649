"""Grayscale pattern classification flattened to pixel-token sequences."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..vocab import N_PIXEL_TOKENS, VOCAB

CLASS_NAMES = (
    "horizontal_bar", "vertical_bar", "diagonal", "anti_diagonal", "ring",
    "corner_top_left", "corner_bottom_right", "checker_even", "checker_odd", "cross",
)
FOREGROUND = 200
BACKGROUND = 50


class ImageDataError(ValueError):
    pass


class PGMFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ImageTaskSpec:
    side: int = 8
    levels: int = 16
    n_classes: int = 10
    noise: float = 0.1
    n_train: int = 4000
    n_val: int = 500
    n_test: int = 500
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.levels <= N_PIXEL_TOKENS:
            raise ValueError(f"levels must lie in [1, {N_PIXEL_TOKENS}]")
        if not 1 <= self.n_classes <= len(CLASS_NAMES):
            raise ValueError(f"at most {len(CLASS_NAMES)} synthetic classes")
        if self.side < 4:
            raise ValueError("side must be at least 4")


def template(class_id: int, side: int) -> np.ndarray:
    """Noise-free uint8 image for a class."""
    n = side
    yy, xx = np.mgrid[0:n, 0:n]
    w = max(1, n // 4)
    lo, hi = (n - w) // 2, (n - w) // 2 + w
    name = CLASS_NAMES[class_id]
    if name == "horizontal_bar":
        on = (yy >= lo) & (yy < hi)
    elif name == "vertical_bar":
        on = (xx >= lo) & (xx < hi)
    elif name == "diagonal":
        on = np.abs(yy - xx) < max(1, w // 2 + 1)
    elif name == "anti_diagonal":
        on = np.abs(yy + xx - (n - 1)) < max(1, w // 2 + 1)
    elif name == "ring":
        r = np.hypot(yy - (n - 1) / 2, xx - (n - 1) / 2)
        on = (r > n * 0.22) & (r < n * 0.42)
    elif name == "corner_top_left":
        on = (yy < n // 2) & (xx < n // 2)
    elif name == "corner_bottom_right":
        on = (yy >= n // 2) & (xx >= n // 2)
    elif name in ("checker_even", "checker_odd"):
        cell = max(1, n // 4)
        on = ((yy // cell + xx // cell) % 2) == (0 if name == "checker_even" else 1)
    elif name == "cross":
        on = ((yy >= lo) & (yy < hi)) | ((xx >= lo) & (xx < hi))
    else:  # pragma: no cover
        raise AssertionError(name)
    return np.where(on, FOREGROUND, BACKGROUND).astype(np.uint8)


def synth_image_sample(class_id: int, spec: ImageTaskSpec, rng: np.random.Generator) -> np.ndarray:
    """Class template plus Gaussian pixel noise with std ``noise * 255``, clipped to 0-255."""
    if not 0 <= class_id < spec.n_classes:
        raise ValueError(f"class id {class_id} outside [0, {spec.n_classes})")
    img = template(class_id, spec.side).astype(np.float64)
    if spec.noise > 0:
        img = img + rng.standard_normal(img.shape) * (spec.noise * 255.0)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def quantize(image, levels: int) -> np.ndarray:
    img = np.asarray(image)
    if img.size and (img.min() < 0 or img.max() > 255):
        raise ImageDataError("pixel values must lie in 0-255")
    return (img.astype(np.int64) * levels) // 256


def image_flatten_quantize(image, levels: int) -> list[int]:
    """Row-major flatten of an N x N image into reserved pixel-token ids."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ImageDataError(f"expected a 2-D image, got shape {img.shape}")
    base = VOCAB.id("<px0>")
    return [base + int(q) for q in quantize(img, levels).reshape(-1)]


def unflatten(tokens, side: int) -> np.ndarray:
    """Inverse of the flattening: pixel tokens back to an N x N array of quantized levels."""
    base = VOCAB.id("<px0>")
    arr = np.asarray(tokens, dtype=np.int64) - base
    if arr.size != side * side:
        raise ImageDataError(f"{arr.size} tokens cannot form a {side}x{side} image")
    return arr.reshape(side, side)


def nearest_template_classify(image, spec: ImageTaskSpec) -> int:
    img = np.asarray(image, dtype=np.float64)
    dists = [np.sum((img - template(c, spec.side)) ** 2) for c in range(spec.n_classes)]
    return int(np.argmin(dists))


def save_pgm(image, path) -> None:
    img = np.asarray(image, dtype=np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def _pgm_fields(buf: bytes, count: int) -> tuple[list[int], int]:
    fields, pos = [], 0
    while len(fields) < count:
        while pos < len(buf) and (buf[pos:pos + 1].isspace() or buf[pos:pos + 1] == b"#"):
            if buf[pos:pos + 1] == b"#":
                end = buf.find(b"\n", pos)
                pos = len(buf) if end < 0 else end + 1
            else:
                pos += 1
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        tok = buf[start:pos]
        if not tok:
            raise PGMFormatError("truncated PGM header")
        fields.append(tok)
    return fields, pos


def load_pgm(path, require_square: bool = True) -> np.ndarray:
    """Read a binary (P5) PGM with maxval 255."""
    buf = Path(path).read_bytes()
    fields, pos = _pgm_fields(buf, 4)
    if fields[0] != b"P5":
        raise PGMFormatError(f"not a binary PGM (magic {fields[0]!r})")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise PGMFormatError("non-numeric PGM header field") from None
    if maxval != 255:
        raise PGMFormatError(f"maxval {maxval} unsupported (need 255)")
    if w < 1 or h < 1:
        raise PGMFormatError("empty image")
    data = buf[pos + 1:pos + 1 + w * h]
    if len(data) != w * h:
        raise PGMFormatError("PGM pixel data truncated")
    if require_square and w != h:
        raise PGMFormatError(f"image is {w}x{h}; the image task needs square images")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()
