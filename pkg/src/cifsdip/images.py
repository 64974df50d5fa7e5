"""Image I/O (binary PPM/PGM), gaussian noise, PSNR and synthetic test images.

Images are numpy arrays of shape C x H x W with float values in [0, 1].
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InputError, ParseError
from .jpeg import to_uint8


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float
    seed: int = 0
    clamp: bool = True

    def __post_init__(self):
        if not self.sigma >= 0:
            raise InputError(f"noise sigma must be >= 0, got {self.sigma}")


def add_gaussian_noise(x: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """Add i.i.d. N(0, (sigma/255)^2) noise per pixel and channel."""
    x = np.asarray(x, dtype=np.float64)
    if spec.sigma == 0:
        return x.copy()
    rng = np.random.default_rng(spec.seed)
    y = x + rng.standard_normal(x.shape) * (spec.sigma / 255.0)
    return np.clip(y, 0.0, 1.0) if spec.clamp else y


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB with peak 1.0; ``math.inf`` when the images are identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def stable_seed(*parts) -> int:
    """Seed derived from a hash of ``parts`` (stable across processes and runs)."""
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode())
    return int.from_bytes(h.digest()[:8], "little")


# ---------------------------------------------------------------------------
# netpbm
# ---------------------------------------------------------------------------

def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ParseError("unexpected end of header", f"offset {start}")
    return data[start:pos], pos


def decode_netpbm(data: bytes) -> np.ndarray:
    """Parse binary P5/P6 bytes into a C x H x W float array."""
    magic, pos = _read_token(data, 0)
    if magic == b"P6":
        channels = 3
    elif magic == b"P5":
        channels = 1
    else:
        raise ParseError(f"unsupported magic {magic!r}; expected P5 or P6", "offset 0")
    values = []
    for name in ("width", "height", "maxval"):
        start = pos
        tok, pos = _read_token(data, pos)
        try:
            v = int(tok)
        except ValueError:
            raise ParseError(f"bad {name} {tok!r}", f"offset {start}") from None
        if v < 1:
            raise ParseError(f"{name} must be positive, got {v}", f"offset {start}")
        values.append(v)
    width, height, maxval = values
    if maxval != 255:
        raise ParseError(f"only 8-bit images (maxval 255) are supported, got maxval {maxval}", f"offset {pos}")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ParseError("missing whitespace after maxval", f"offset {pos}")
    pos += 1
    need = width * height * channels
    raster = data[pos:pos + need]
    if len(raster) < need:
        raise ParseError(f"raster truncated: need {need} bytes, found {len(raster)}", f"offset {pos}")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def encode_netpbm(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[None]
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise InputError(f"netpbm needs 1 or 3 channels, got shape {image.shape}")
    pix = to_uint8(image)
    c, h, w = pix.shape
    header = f"{'P6' if c == 3 else 'P5'}\n{w} {h}\n255\n".encode()
    return header + pix.transpose(1, 2, 0).tobytes()


def load_image(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    try:
        return decode_netpbm(data)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}", exc.where) from None


def save_image(path, image: np.ndarray):
    Path(path).write_bytes(encode_netpbm(image))


def list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise InputError(f"not a directory: {directory}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in (".ppm", ".pgm", ".pnm"))


# ---------------------------------------------------------------------------
# synthetic structured images
# ---------------------------------------------------------------------------

SYNTHETIC_KINDS = ("gradient", "checker", "blobs", "rings", "texture", "shapes")


def _smooth_noise(rng, size, scale):
    from scipy.ndimage import gaussian_filter

    f = gaussian_filter(rng.standard_normal((size, size)), scale, mode="wrap")
    f -= f.min()
    return f / max(f.max(), 1e-12)


def synthetic_image(kind: str, size: int = 64, seed: int = 0, channels: int = 3) -> np.ndarray:
    """Deterministic structured test image (C x size x size, values in [0.05, 0.95])."""
    rng = np.random.default_rng(stable_seed("synthetic", kind, size, seed))
    yy, xx = np.mgrid[0:size, 0:size] / size
    phase = rng.uniform(0, 2 * np.pi, 3)
    if kind == "gradient":
        a = rng.uniform(0.5, 1.5, 3)
        planes = [0.5 + 0.5 * np.sin(np.pi * (a[i] * xx + (1 - a[i]) * yy) + phase[i]) for i in range(3)]
    elif kind == "checker":
        n = rng.integers(3, 7)
        cell = ((np.floor(xx * n) + np.floor(yy * n)) % 2)
        planes = [0.3 + 0.4 * cell * rng.uniform(0.6, 1.0) + 0.2 * xx * (i == 0) + 0.2 * yy * (i == 2)
                  for i in range(3)]
    elif kind == "blobs":
        planes = [_smooth_noise(rng, size, size / 10) for _ in range(3)]
    elif kind == "rings":
        cx, cy = rng.uniform(0.3, 0.7, 2)
        r = np.hypot(xx - cx, yy - cy)
        f = rng.uniform(4, 8)
        planes = [0.5 + 0.5 * np.cos(2 * np.pi * f * r + phase[i]) for i in range(3)]
    elif kind == "texture":
        base = _smooth_noise(rng, size, size / 24)
        planes = [0.7 * base + 0.3 * _smooth_noise(rng, size, size / 6) for _ in range(3)]
    elif kind == "shapes":
        img = np.zeros((3, size, size)) + rng.uniform(0.2, 0.4, (3, 1, 1))
        for _ in range(6):
            cx, cy, rad = rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.08, 0.25)
            color = rng.uniform(0, 1, (3, 1, 1))
            if rng.random() < 0.5:
                mask = np.hypot(xx - cx, yy - cy) < rad
            else:
                mask = (np.abs(xx - cx) < rad) & (np.abs(yy - cy) < rad * 0.7)
            img = np.where(mask[None], color, img)
        planes = list(img)
    else:
        raise InputError(f"unknown synthetic image kind {kind!r}; choose from {SYNTHETIC_KINDS}")
    img = np.stack(planes)
    img = 0.05 + 0.9 * (img - img.min()) / max(img.max() - img.min(), 1e-12)
    if channels == 1:
        img = img.mean(axis=0, keepdims=True)
    # store exactly representable 8-bit values
    return to_uint8(img).astype(np.float64) / 255.0


def synthetic_suite(count: int, size: int = 64, seed: int = 0, channels: int = 3) -> list[tuple[str, np.ndarray]]:
    """``count`` named images cycling through :data:`SYNTHETIC_KINDS`."""
    out = []
    for i in range(count):
        kind = SYNTHETIC_KINDS[i % len(SYNTHETIC_KINDS)]
        out.append((f"{kind}-{seed}-{i}", synthetic_image(kind, size, seed=seed * 1000 + i, channels=channels)))
    return out


def write_suite(directory, images) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, img in images:
        p = d / f"{name}.ppm" if img.shape[0] == 3 else d / f"{name}.pgm"
        save_image(p, img)
        paths.append(p)
    return paths


def crop_divisible(image: np.ndarray, multiple: int, max_size: Optional[int] = None) -> np.ndarray:
    """Centre-crop so H and W are multiples of ``multiple`` (and at most ``max_size``)."""
    c, h, w = image.shape
    th, tw = h - h % multiple, w - w % multiple
    if max_size:
        th = min(th, max_size - max_size % multiple)
        tw = min(tw, max_size - max_size % multiple)
    if th < multiple or tw < multiple:
        raise InputError(f"image {h}x{w} too small for multiples of {multiple}")
    top, left = (h - th) // 2, (w - tw) // 2
    return image[:, top:top + th, left:left + tw]
