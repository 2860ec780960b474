from __future__ import annotations

import numpy as np
import pytest
from PIL import Image

from curaug.errors import ConfigError, DataError
from curaug.transforms import TransformSpec, apply_transform, load_png, save_png


def _identity(**overrides) -> TransformSpec:
    params = dict(
        source_id="img",
        rotation_deg=0.0,
        translate_frac=(0.0, 0.0),
        scale=1.0,
        shear=0.0,
        brightness_delta=0.0,
        contrast_factor=1.0,
    )
    params.update(overrides)
    return TransformSpec(**params)


def _rgb(plane) -> np.ndarray:
    """Stack a 2-d plane into all three channels."""
    plane = np.asarray(plane, dtype=np.uint8)
    return np.dstack([plane, plane, plane])


def test_identity_is_byte_exact():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(7, 11, 3), dtype=np.uint8)
    out = apply_transform(img, _identity())
    assert out.tobytes() == img.tobytes()


def test_full_turn_rotation_is_byte_exact():
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, size=(9, 9, 3), dtype=np.uint8)
    out = apply_transform(img, _identity(rotation_deg=360.0))
    assert np.array_equal(out, img)


def test_quarter_turn_clockwise_2x2():
    img = _rgb([[10, 20], [30, 40]])
    out = apply_transform(img, _identity(rotation_deg=90.0))
    assert np.array_equal(out, _rgb([[30, 10], [40, 20]]))
    assert np.array_equal(out, np.rot90(img, k=-1))


def test_quarter_turn_counterclockwise_matches_numpy():
    rng = np.random.default_rng(2)
    img = rng.integers(0, 256, size=(5, 5, 3), dtype=np.uint8)
    out = apply_transform(img, _identity(rotation_deg=-90.0))
    assert np.array_equal(out, np.rot90(img, k=1))


def test_integer_translation_shifts_and_clamps():
    img = _rgb(np.arange(12, dtype=np.uint8).reshape(3, 4) * 20)
    # a quarter of width 4 is exactly one pixel to the right
    out = apply_transform(img, _identity(translate_frac=(0.25, 0.0)))
    assert np.array_equal(out[:, 1:], img[:, :-1])
    assert np.array_equal(out[:, 0], img[:, 0])  # edge replication


def test_bilinear_midpoint_rounds_half_up():
    img = _rgb([[0, 101]])
    # a quarter of width 2 shifts left half a pixel: output 0 samples
    # x=0.5 -> 50.5 -> 51
    out = apply_transform(img, _identity(translate_frac=(-0.25, 0.0)))
    assert out[0, 0, 0] == 51
    assert out[0, 1, 0] == 101  # clamps to the right edge


def test_scale_preserves_center_pixel():
    rng = np.random.default_rng(3)
    img = rng.integers(0, 256, size=(5, 5, 3), dtype=np.uint8)
    out = apply_transform(img, _identity(scale=2.0))
    assert np.array_equal(out[2, 2], img[2, 2])


def test_warp_preserves_dimensions():
    rng = np.random.default_rng(4)
    img = rng.integers(0, 256, size=(6, 10, 3), dtype=np.uint8)
    spec = _identity(
        rotation_deg=13.0, translate_frac=(0.05, -0.08), scale=1.07, shear=0.04
    )
    out = apply_transform(img, spec)
    assert out.shape == img.shape and out.dtype == np.uint8


def test_brightness_saturates_both_ways():
    rng = np.random.default_rng(5)
    img = rng.integers(0, 256, size=(4, 4, 3), dtype=np.uint8)
    assert (apply_transform(img, _identity(brightness_delta=1.0)) == 255).all()
    assert (apply_transform(img, _identity(brightness_delta=-1.0)) == 0).all()


def test_brightness_additive_fraction_of_full_scale():
    img = _rgb([[100]])
    out = apply_transform(img, _identity(brightness_delta=0.1))
    assert out[0, 0, 0] == 126  # 100 + 25.5 rounded half up


def test_contrast_scales_about_channel_mean():
    img = _rgb([[100, 200]])
    out = apply_transform(img, _identity(contrast_factor=0.8))
    assert out[0, 0, 0] == 110 and out[0, 1, 0] == 190
    # expansion clips at the byte range
    wide = apply_transform(img, _identity(contrast_factor=4.0))
    assert wide[0, 0, 0] == 0 and wide[0, 1, 0] == 255


def test_contrast_uses_per_channel_mean():
    img = np.zeros((1, 2, 3), dtype=np.uint8)
    img[..., 0] = [100, 200]
    img[..., 1] = [0, 50]
    img[..., 2] = 77
    out = apply_transform(img, _identity(contrast_factor=0.5))
    assert list(out[0, :, 0]) == [125, 175]  # about 150
    assert list(out[0, :, 1]) == [13, 38]  # about 25: 12.5 and 37.5 round up
    assert list(out[0, :, 2]) == [77, 77]  # constant channel is unchanged


def test_brightness_applies_before_contrast():
    img = _rgb([[100, 200]])
    spec = _identity(brightness_delta=0.1, contrast_factor=0.8)
    out = apply_transform(img, spec)
    # (100, 200) + 25.5 -> (125.5, 225.5), mean 175.5, contract by 0.8
    assert out[0, 0, 0] == 136 and out[0, 1, 0] == 216


def test_spec_validation():
    with pytest.raises(ConfigError, match="non-finite"):
        _identity(rotation_deg=float("nan"))
    with pytest.raises(ConfigError, match="scale must be positive"):
        _identity(scale=0.0)
    with pytest.raises(ConfigError, match="scale must be positive"):
        _identity(scale=-1.0)
    with pytest.raises(ConfigError, match="dx, dy"):
        _identity(translate_frac=(0.1, 0.2, 0.3))


def test_is_identity_warp_ignores_photometric_fields():
    assert _identity(brightness_delta=0.5, contrast_factor=1.2).is_identity_warp()
    assert not _identity(rotation_deg=1.0).is_identity_warp()
    assert not _identity(translate_frac=(0.0, 0.01)).is_identity_warp()


def test_apply_rejects_bad_arrays():
    spec = _identity()
    with pytest.raises(DataError, match="uint8"):
        apply_transform(np.zeros((2, 2, 3), dtype=np.float32), spec)
    with pytest.raises(DataError, match="shape"):
        apply_transform(np.zeros((2, 2), dtype=np.uint8), spec)
    with pytest.raises(DataError, match="shape"):
        apply_transform(np.zeros((2, 2, 4), dtype=np.uint8), spec)


def test_png_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    img = rng.integers(0, 256, size=(8, 5, 3), dtype=np.uint8)
    path = str(tmp_path / "img.png")
    save_png(img, path)
    assert np.array_equal(load_png(path), img)


def test_load_png_promotes_grayscale(tmp_path):
    path = str(tmp_path / "gray.png")
    Image.fromarray(np.arange(16, dtype=np.uint8).reshape(4, 4) * 16, "L").save(path)
    img = load_png(path)
    assert img.shape == (4, 4, 3)
    assert np.array_equal(img[..., 0], img[..., 1])
    assert np.array_equal(img[..., 0], img[..., 2])


def test_load_png_rejects_non_image(tmp_path):
    path = str(tmp_path / "junk.png")
    open(path, "w").write("this is not a png")
    with pytest.raises(DataError, match="cannot read image"):
        load_png(path)
