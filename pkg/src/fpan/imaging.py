"""Image I/O, colour conversion, resampling, degradations and self-ensemble.

Images at the file boundary are ``uint8`` arrays of shape ``(H, W, 3)``.
Resampling and blur operate on float planes ``(H, W)`` or float images
``(H, W, C)``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image, UnidentifiedImageError

from .model import ConfigurationError


class ImageIOError(OSError):
    pass


# ----------------------------------------------------------------------
# PNG I/O
# ----------------------------------------------------------------------
_SUPPORTED_MODES = {"1", "L", "LA", "P", "RGB", "RGBA"}


def load_png(path) -> np.ndarray:
    """Read an 8-bit PNG as an ``(H, W, 3)`` uint8 array.

    Grayscale is expanded to three identical channels, palette images are
    converted, alpha is dropped. 16-bit or float images are rejected.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise ImageIOError(f"{path}: not a PNG file (format {im.format})")
            if im.mode not in _SUPPORTED_MODES:
                raise ImageIOError(f"{path}: unsupported PNG mode {im.mode!r} (8-bit RGB/gray only)")
            im.load()
            rgb = im.convert("RGB")
            return np.array(rgb, dtype=np.uint8)
    except ImageIOError:
        raise
    except (OSError, UnidentifiedImageError, SyntaxError, ValueError) as exc:
        raise ImageIOError(f"{path}: cannot read PNG: {exc}") from exc


def save_png(image: np.ndarray, path) -> None:
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        raise ValueError(f"save_png expects uint8, got {arr.dtype}")
    if arr.ndim == 2:
        mode = "L"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        mode = "RGB"
    else:
        raise ValueError(f"save_png expects (H,W) or (H,W,3), got {arr.shape}")
    try:
        Image.fromarray(arr, mode=mode).save(path, format="PNG")
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot write PNG: {exc}") from exc


def list_pngs(directory) -> list[Path]:
    """PNG files in ``directory``, sorted lexicographically by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ImageIOError(f"{directory}: not a directory")
    return sorted((p for p in directory.iterdir() if p.suffix.lower() == ".png"), key=lambda p: p.name)


# ----------------------------------------------------------------------
# colour
# ----------------------------------------------------------------------
# BT.601 studio swing, inputs in [0, 255]
_RGB2YCBCR = np.array(
    [
        [65.481, 128.553, 24.966],
        [-37.797, -74.203, 112.0],
        [112.0, -93.786, -18.214],
    ]
) / 255.0
_YCBCR_OFFSET = np.array([16.0, 128.0, 128.0])
_YCBCR2RGB = np.linalg.inv(_RGB2YCBCR)


def rgb_to_ycbcr(image) -> np.ndarray:
    """RGB ``(H,W,3)`` in [0,255] to float YCbCr; Y spans [16, 235]."""
    rgb = np.asarray(image, dtype=np.float64)
    return rgb @ _RGB2YCBCR.T + _YCBCR_OFFSET


def ycbcr_to_rgb(ycc) -> np.ndarray:
    ycc = np.asarray(ycc, dtype=np.float64)
    return (ycc - _YCBCR_OFFSET) @ _YCBCR2RGB.T


def rgb_to_y(image) -> np.ndarray:
    rgb = np.asarray(image, dtype=np.float64)
    return rgb @ _RGB2YCBCR[0] + 16.0


def quantize(values) -> np.ndarray:
    return np.clip(np.round(values), 0, 255).astype(np.uint8)


# ----------------------------------------------------------------------
# resampling
# ----------------------------------------------------------------------
def cubic_kernel(x, a: float = -0.5):
    """Keys cubic convolution kernel."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    return np.where(
        x <= 1,
        (a + 2) * x3 - (a + 3) * x2 + 1,
        np.where(x < 2, a * x3 - 5 * a * x2 + 8 * a * x - 4 * a, 0.0),
    )


def _resize_weights(in_size: int, out_size: int, scale: float):
    """Sparse (indices, weights) for one axis; antialiased when shrinking."""
    support = 2.0
    if scale < 1:
        kernel = lambda t: scale * cubic_kernel(scale * t)  # noqa: E731
        width = support / scale
    else:
        kernel = cubic_kernel
        width = support
    centers = (np.arange(out_size) + 0.5) / scale - 0.5
    left = np.floor(centers - width).astype(int)
    taps = int(np.ceil(2 * width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = kernel(centers[:, None] - idx)
    w /= w.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, in_size - 1)
    return idx, w


def _resize_axis(arr: np.ndarray, axis: int, out_size: int, scale: float) -> np.ndarray:
    in_size = arr.shape[axis]
    if out_size == in_size and scale == 1:
        return arr.copy()
    idx, w = _resize_weights(in_size, out_size, scale)
    moved = np.moveaxis(arr, axis, 0)
    gathered = moved[idx]  # (out, taps, ...)
    out = np.einsum("ot,ot...->o...", w, gathered)
    return np.moveaxis(out, 0, axis)


def bicubic_resize(image, factor: float, out_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Separable bicubic resize of a plane ``(H,W)`` or image ``(H,W,C)``.

    ``factor`` > 1 enlarges. Output size is ``ceil(factor * size)`` unless
    ``out_shape`` is given. Returns float64 (no rounding or clamping).
    """
    if factor <= 0:
        raise ValueError("bicubic_resize: factor must be positive")
    arr = np.asarray(image, dtype=np.float64)
    h, w = arr.shape[:2]
    if out_shape is None:
        out_shape = (int(np.ceil(h * factor - 1e-9)), int(np.ceil(w * factor - 1e-9)))
    oh, ow = out_shape
    if oh < 1 or ow < 1:
        raise ValueError(f"bicubic_resize: output size {oh}x{ow} is empty")
    # resize the shorter-output axis first (fewer operations when downscaling)
    out = _resize_axis(arr, 0, oh, factor)
    return _resize_axis(out, 1, ow, factor)


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    if size % 2 == 0:
        raise ValueError(f"gaussian kernel size must be odd, got {size}")
    r = np.arange(size) - size // 2
    k = np.exp(-(r**2) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(plane, kernel_size: int = 7, sigma: float = 1.6) -> np.ndarray:
    """Separable normalised Gaussian blur with edge clamping.

    Works on ``(H,W)`` planes and ``(H,W,C)`` images.
    """
    k = gaussian_kernel(kernel_size, sigma)
    arr = np.asarray(plane, dtype=np.float64)
    r = kernel_size // 2
    pad = [(r, r), (r, r)] + [(0, 0)] * (arr.ndim - 2)
    p = np.pad(arr, pad, mode="edge")
    h, w = arr.shape[:2]
    tmp = sum(k[i] * p[i : i + h] for i in range(kernel_size))
    return sum(k[j] * tmp[:, j : j + w] for j in range(kernel_size))


# ----------------------------------------------------------------------
# degradations
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class DegradationSpec:
    kind: str = "BI"
    scale: int = 4
    blur_size: int = 7
    blur_sigma: float = 1.6
    noise_sigma: float = 30.0
    seed: int = 0

    def __post_init__(self):
        kind = self.kind.upper()
        object.__setattr__(self, "kind", kind)
        if kind not in ("BI", "BD", "DN"):
            raise ConfigurationError(f"unknown degradation {self.kind!r}")
        if self.scale < 1:
            raise ConfigurationError("degradation scale must be >= 1")


def crop_to_multiple(image: np.ndarray, s: int) -> np.ndarray:
    """Center crop so both dimensions are divisible by ``s``."""
    h, w = image.shape[:2]
    nh, nw = h - h % s, w - w % s
    top, left = (h - nh) // 2, (w - nw) // 2
    return image[top : top + nh, left : left + nw]


def degrade(hr: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Synthesize an LR uint8 image from an HR uint8 image.

    BI: bicubic downscale. BD: Gaussian blur, then take every s-th pixel.
    DN: bicubic downscale, then seeded Gaussian noise.
    """
    s = spec.scale
    h, w = hr.shape[:2]
    if h % s or w % s:
        raise ConfigurationError(f"HR size {h}x{w} not divisible by scale {s}; crop first")
    hr_f = np.asarray(hr, dtype=np.float64)
    if spec.kind == "BI":
        lr = bicubic_resize(hr_f, 1.0 / s, (h // s, w // s))
    elif spec.kind == "BD":
        lr = gaussian_blur(hr_f, spec.blur_size, spec.blur_sigma)[::s, ::s]
    else:
        lr = bicubic_resize(hr_f, 1.0 / s, (h // s, w // s))
        rng = np.random.default_rng(spec.seed)
        lr = lr + rng.normal(0.0, spec.noise_sigma, size=lr.shape)
    return quantize(lr)


# ----------------------------------------------------------------------
# inference helpers
# ----------------------------------------------------------------------
def to_chw(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(image, dtype=np.float64).transpose(2, 0, 1) / 255.0)


def from_chw(arr: np.ndarray) -> np.ndarray:
    return quantize(np.clip(np.asarray(arr).transpose(1, 2, 0), 0.0, 1.0) * 255.0)


def _as_sr_fn(model) -> Callable[[np.ndarray], np.ndarray]:
    """Turn a model into ``f(float HWC in [0,1]) -> float HWC``."""
    if hasattr(model, "predict"):
        return lambda img: model.predict(img.transpose(2, 0, 1)).transpose(1, 2, 0)
    return model


def super_resolve(model, lr: np.ndarray) -> np.ndarray:
    """Single forward pass on a uint8 image, returning uint8."""
    fn = _as_sr_fn(model)
    out = fn(np.asarray(lr, dtype=np.float64) / 255.0)
    return quantize(np.clip(out, 0.0, 1.0) * 255.0)


def dihedral(image: np.ndarray, k: int) -> np.ndarray:
    """Transform ``k`` in 0..7: rotate by ``(k % 4) * 90`` degrees, flipping first if ``k >= 4``."""
    out = image[:, ::-1] if k >= 4 else image
    return np.rot90(out, k % 4, axes=(0, 1))


def dihedral_inverse(image: np.ndarray, k: int) -> np.ndarray:
    out = np.rot90(image, -(k % 4), axes=(0, 1))
    return out[:, ::-1] if k >= 4 else out


def self_ensemble_sr(model, lr: np.ndarray) -> np.ndarray:
    """Average the model output over the 8 dihedral transforms of ``lr``."""
    fn = _as_sr_fn(model)
    x = np.asarray(lr, dtype=np.float64) / 255.0
    acc = None
    for k in range(8):
        y = dihedral_inverse(np.asarray(fn(np.ascontiguousarray(dihedral(x, k)))), k)
        acc = y if acc is None else acc + y
    return quantize(np.clip(acc / 8.0, 0.0, 1.0) * 255.0)


def bicubic_upscaler(scale: int) -> Callable[[np.ndarray], np.ndarray]:
    """A stand-in SR model that just bicubically enlarges."""

    def fn(img: np.ndarray) -> np.ndarray:
        return bicubic_resize(img, float(scale))

    return fn


def image_seed(seed: int, index: int) -> int:
    return seed ^ index


def read_dataset(hr_dir, lr_dir=None) -> list[tuple[str, np.ndarray, np.ndarray | None]]:
    """Load ``(name, hr, lr_or_None)`` triples in lexicographic order."""
    out = []
    for p in list_pngs(hr_dir):
        lr = None
        if lr_dir is not None and os.path.exists(Path(lr_dir) / p.name):
            lr = load_png(Path(lr_dir) / p.name)
        out.append((p.name, load_png(p), lr))
    return out
