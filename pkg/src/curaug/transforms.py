"""Deterministic image mutations: affine warp, brightness, contrast.

The warp composes rotation, uniform scale, horizontal shear, and
translation about the image center (applied to coordinates in that order)
and resamples with bilinear interpolation; samples outside the frame clamp
to the nearest edge pixel. Output dimensions always equal input dimensions.
Positive angles rotate the raster clockwise (x right, y down). Brightness
is an additive per-channel shift expressed as a fraction of full scale;
contrast scales each channel about its own mean. Both clamp to [0, 255].

An identity spec (angle 0, scale 1, shear 0, zero translation, zero
brightness delta, contrast 1) reproduces the input byte for byte: each
stage is skipped outright when its parameter is the identity value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class TransformSpec:
    """Parameters of one mutation, plus provenance."""

    source_id: str
    rotation_deg: float
    translate_frac: tuple[float, float]
    scale: float
    shear: float
    brightness_delta: float
    contrast_factor: float
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "translate_frac", tuple(self.translate_frac))
        values = (
            self.rotation_deg,
            *self.translate_frac,
            self.scale,
            self.shear,
            self.brightness_delta,
            self.contrast_factor,
        )
        if len(self.translate_frac) != 2:
            raise ConfigError("translate_frac must be (dx, dy)")
        if not all(math.isfinite(v) for v in values):
            raise ConfigError(f"non-finite transform parameter in {values}")
        if self.scale <= 0:
            raise ConfigError(f"scale must be positive, got {self.scale}")

    def is_identity_warp(self) -> bool:
        return (
            self.rotation_deg == 0.0
            and self.scale == 1.0
            and self.shear == 0.0
            and self.translate_frac == (0.0, 0.0)
        )


def _check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise DataError(f"image must be uint8, got {image.dtype}")
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"image must be (h, w, 3), got shape {image.shape}")
    if image.shape[0] < 1 or image.shape[1] < 1:
        raise DataError("image must have at least one pixel")
    return image


def _warp(image: np.ndarray, spec: TransformSpec) -> np.ndarray:
    h, w = image.shape[:2]
    theta = math.radians(spec.rotation_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    # coordinate map, rightmost factor applied first: shear . scale . rotation
    rot = np.array([[cos_t, -sin_t], [sin_t, cos_t]])
    sca = np.array([[spec.scale, 0.0], [0.0, spec.scale]])
    shr = np.array([[1.0, spec.shear], [0.0, 1.0]])
    fwd = shr @ sca @ rot
    det = fwd[0, 0] * fwd[1, 1] - fwd[0, 1] * fwd[1, 0]
    inv = np.array([[fwd[1, 1], -fwd[0, 1]], [-fwd[1, 0], fwd[0, 0]]]) / det
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    tx, ty = spec.translate_frac[0] * w, spec.translate_frac[1] * h

    ys, xs = np.indices((h, w), dtype=np.float64)
    dx = xs - cx - tx
    dy = ys - cy - ty
    src_x = inv[0, 0] * dx + inv[0, 1] * dy + cx
    src_y = inv[1, 0] * dx + inv[1, 1] * dy + cy

    src_x = np.clip(src_x, 0.0, w - 1.0)
    src_y = np.clip(src_y, 0.0, h - 1.0)
    x0 = np.floor(src_x).astype(np.intp)
    y0 = np.floor(src_y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (src_x - x0)[..., None]
    fy = (src_y - y0)[..., None]

    img = image.astype(np.float64)
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def apply_transform(image: np.ndarray, spec: TransformSpec) -> np.ndarray:
    """Apply warp, then brightness, then contrast. Returns uint8, same shape."""
    image = _check_image(image)
    if spec.is_identity_warp():
        out = image.astype(np.float64)
    else:
        out = _warp(image, spec)
    if spec.brightness_delta != 0.0:
        out = np.clip(out + spec.brightness_delta * 255.0, 0.0, 255.0)
    if spec.contrast_factor != 1.0:
        mean = out.mean(axis=(0, 1), keepdims=True)
        out = np.clip(mean + spec.contrast_factor * (out - mean), 0.0, 255.0)
    # round half away from zero; values are already non-negative
    return np.floor(out + 0.5).clip(0, 255).astype(np.uint8)


def load_png(path: str) -> np.ndarray:
    """Read an image file as an (h, w, 3) uint8 RGB array."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def save_png(image: np.ndarray, path: str) -> None:
    """Write an (h, w, 3) uint8 array as an RGB PNG."""
    image = _check_image(image)
    Image.fromarray(image, mode="RGB").save(path, format="PNG")
