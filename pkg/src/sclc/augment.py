"""Stochastic crop/flip/colour augmentation and half-pixel bilinear resizing."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class AugmentPolicy:
    crop_range: tuple[float, float] = (0.7, 1.0)
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5
    color_drop_prob: float = 0.2
    jitter_prob: float = 0.8
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    target: tuple[int, int] = (32, 32)

    def __post_init__(self):
        for name in ("hflip_prob", "vflip_prob", "color_drop_prob", "jitter_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        lo, hi = self.crop_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError("crop fractions must satisfy 0 < lo <= hi <= 1")
        if min(self.brightness, self.contrast, self.saturation) < 0:
            raise ValueError("jitter strengths must be >= 0")

    @classmethod
    def identity(cls, target) -> "AugmentPolicy":
        return cls((1.0, 1.0), 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, tuple(target))


def resize_bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize ``[C,H,W]`` (or ``[H,W]``) by sampling source coordinate
    ``(i + 0.5) * scale - 0.5``, clamped to the border."""
    if height < 1 or width < 1:
        raise ValueError(f"target size must be positive, got {height}x{width}")
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[None]
    _, h, w = img.shape
    if h < 1 or w < 1:
        raise ValueError("source image is empty")

    def axis(n_out, n_in):
        c = np.clip((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5, 0.0, n_in - 1)
        lo = np.floor(c).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, c - lo

    y0, y1, fy = axis(height, h)
    x0, x1, fx = axis(width, w)
    top = img[:, y0][:, :, x0] * (1 - fx) + img[:, y0][:, :, x1] * fx
    bot = img[:, y1][:, :, x0] * (1 - fx) + img[:, y1][:, :, x1] * fx
    out = top * (1 - fy)[:, None] + bot * fy[:, None]
    return out[0] if squeeze else out


def grayscale(image: np.ndarray) -> np.ndarray:
    gray = np.tensordot(LUMA, image, axes=1)
    return np.broadcast_to(gray, image.shape).copy()


def hflip(image):
    return image[..., ::-1].copy()


def vflip(image):
    return image[..., ::-1, :].copy()


def sample_rng(base_seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for one sample, derived by hashing its keys."""
    digest = hashlib.sha256(repr((int(base_seed),) + tuple(int(k) for k in keys)).encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def augment(image: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    """Random crop -> resize -> flips -> colour jitter -> colour drop, clamped to [0, 1].

    The same number of draws is taken from ``rng`` whatever branches fire.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected [3,H,W] image, got {list(img.shape)}")
    _, h, w = img.shape
    if h < 2 or w < 2:
        raise ValueError(f"image too small to augment: {h}x{w}")
    u = rng.random(11)
    lo, hi = policy.crop_range
    frac = lo + (hi - lo) * u[0]
    ch, cw = max(1, int(round(frac * h))), max(1, int(round(frac * w)))
    top = int(u[1] * (h - ch + 1))
    left = int(u[2] * (w - cw + 1))
    img = img[:, top:top + ch, left:left + cw]
    if img.shape[1:] != tuple(policy.target):
        img = resize_bilinear(img, *policy.target)
    if u[3] < policy.hflip_prob:
        img = hflip(img)
    if u[4] < policy.vflip_prob:
        img = vflip(img)
    if u[5] < policy.jitter_prob:
        img = img * (1 + policy.brightness * (2 * u[6] - 1))
        mean = np.tensordot(LUMA, img, axes=1).mean()
        img = (img - mean) * (1 + policy.contrast * (2 * u[7] - 1)) + mean
        gray = np.tensordot(LUMA, img, axes=1)
        img = (img - gray) * (1 + policy.saturation * (2 * u[8] - 1)) + gray
    if u[9] < policy.color_drop_prob:
        img = grayscale(img)
    return np.clip(img, 0.0, 1.0)


def augment_batch(images: np.ndarray, policy: AugmentPolicy, seed: int, keys) -> np.ndarray:
    """Augment ``images[i]`` with the generator ``sample_rng(seed, *keys[i])``."""
    return np.stack([augment(img, policy, sample_rng(seed, *k)) for img, k in zip(images, keys)])
