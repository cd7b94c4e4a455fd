"""Pipeline stage tests, each against an independent oracle."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drgrade import imgproc as ip
from drgrade.imgproc import PipelineConfig


# ---------------------------------------------------------------------------
# oracles


def bbox_oracle(img, threshold):
    """O(W*H) scan for the tight bounding box of pixels with luma > threshold."""
    h, w, _ = img.shape
    lo_y = lo_x = None
    hi_y = hi_x = None
    for y in range(h):
        for x in range(w):
            r, g, b = (int(v) for v in img[y, x])
            lum = math.floor(0.299 * r + 0.587 * g + 0.114 * b + 0.5)
            if lum > threshold:
                lo_y = y if lo_y is None else min(lo_y, y)
                hi_y = y if hi_y is None else max(hi_y, y)
                lo_x = x if lo_x is None else min(lo_x, x)
                hi_x = x if hi_x is None else max(hi_x, x)
    if lo_y is None:
        return None
    return lo_y, hi_y, lo_x, hi_x


def median_oracle(img, kernel):
    """Sorts every window explicitly; out-of-bounds samples clamp coordinates."""
    h, w = img.shape
    r = kernel // 2
    out = np.empty_like(img)
    for y in range(h):
        for x in range(w):
            window = sorted(
                int(img[min(max(y + dy, 0), h - 1), min(max(x + dx, 0), w - 1)])
                for dy in range(-r, r + 1) for dx in range(-r, r + 1))
            out[y, x] = window[len(window) // 2]
    return out


def global_he_oracle(img):
    """Plain global histogram equalization: m(v) = round(255 * CDF(v))."""
    hist = np.bincount(img.ravel(), minlength=256).astype(np.float64)
    cdf = np.cumsum(hist) / img.size
    return np.floor(255.0 * cdf + 0.5).astype(np.uint8)[img]


def resize_oracle(img, side):
    """Direct four-neighbor interpolation, one pixel at a time."""
    h, w = img.shape
    out = np.empty((side, side), dtype=np.uint8)
    for dy in range(side):
        sy = min(max((dy + 0.5) * (h / side) - 0.5, 0.0), float(h - 1))
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for dx in range(side):
            sx = min(max((dx + 0.5) * (w / side) - 0.5, 0.0), float(w - 1))
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            a, b = float(img[y0, x0]), float(img[y0, x1])
            c, d = float(img[y1, x0]), float(img[y1, x1])
            val = (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * c + fx * d)
            out[dy, dx] = int(math.floor(val + 0.5))
    return out


def rand_gray(rng, h, w):
    return rng.randint(0, 256, (h, w), dtype=np.uint8)


def rand_rgb(rng, h, w):
    return rng.randint(0, 256, (h, w, 3), dtype=np.uint8)


# ---------------------------------------------------------------------------
# mask_background


def test_mask_all_black_returns_input_unchanged():
    img = np.zeros((100, 100, 3), dtype=np.uint8)
    out = ip.mask_background(img, 10)
    assert out.shape == img.shape
    assert np.array_equal(out, img)


def test_mask_bright_rectangle_cropped_exactly():
    img = np.zeros((100, 100, 3), dtype=np.uint8)
    img[10:40, 50:70] = 200
    out = ip.mask_background(img, 10)
    assert out.shape == (30, 20, 3)
    assert (out == 200).all()


def test_mask_matches_full_scan_oracle_on_synthetic_discs():
    rng = np.random.RandomState(4)
    for _ in range(10):
        h, w = rng.randint(20, 60), rng.randint(20, 60)
        img = np.zeros((h, w, 3), dtype=np.uint8)
        cy, cx = rng.randint(5, h - 5), rng.randint(5, w - 5)
        rad = rng.randint(3, 8)
        yy, xx = np.mgrid[0:h, 0:w]
        disc = (yy - cy) ** 2 + (xx - cx) ** 2 <= rad ** 2
        img[disc] = rng.randint(60, 255)
        threshold = 10
        lo_y, hi_y, lo_x, hi_x = bbox_oracle(img, threshold)
        out = ip.mask_background(img, threshold)
        assert np.array_equal(out, img[lo_y:hi_y + 1, lo_x:hi_x + 1])


def test_mask_threshold_validation():
    img = np.zeros((4, 4, 3), dtype=np.uint8)
    with pytest.raises(ValueError):
        ip.mask_background(img, 256)
    with pytest.raises(ValueError):
        ip.mask_background(img, -1)


# ---------------------------------------------------------------------------
# green_channel


def test_green_single_pixel():
    img = np.array([[[10, 200, 30]]], dtype=np.uint8)
    assert ip.green_channel(img).tolist() == [[200]]


def test_green_equal_channels_identity():
    rng = np.random.RandomState(1)
    gray = rand_gray(rng, 8, 9)
    img = np.stack([gray, gray, gray], axis=2)
    assert np.array_equal(ip.green_channel(img), gray)


def test_green_matches_indexing_oracle():
    rng = np.random.RandomState(2)
    img = rand_rgb(rng, 17, 23)
    out = ip.green_channel(img)
    for y in range(17):
        for x in range(23):
            assert out[y, x] == img[y, x, 1]


# ---------------------------------------------------------------------------
# median_filter


def test_median_constant_image_unchanged():
    img = np.full((9, 7), 123, dtype=np.uint8)
    for kernel in (1, 3, 5):
        assert np.array_equal(ip.median_filter(img, kernel), img)


def test_median_removes_single_salt_pixel():
    img = np.zeros((3, 3), dtype=np.uint8)
    img[1, 1] = 255
    assert ip.median_filter(img, 3).max() == 0


def test_median_rejects_even_kernel():
    img = np.zeros((4, 4), dtype=np.uint8)
    with pytest.raises(ValueError):
        ip.median_filter(img, 2)
    with pytest.raises(ValueError):
        ip.median_filter(img, 0)


def test_median_matches_sort_oracle():
    rng = np.random.RandomState(3)
    for _ in range(20):
        img = rand_gray(rng, rng.randint(3, 33), rng.randint(3, 33))
        for kernel in (3, 5):
            assert np.array_equal(ip.median_filter(img, kernel), median_oracle(img, kernel))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 16), st.integers(2, 16), st.sampled_from([3, 5]), st.integers(0, 2**32 - 1))
def test_median_output_is_window_order_statistic(h, w, kernel, seed):
    rng = np.random.RandomState(seed)
    img = rand_gray(rng, h, w)
    out = ip.median_filter(img, kernel)
    r = kernel // 2
    padded = np.pad(img, r, mode="edge")
    for y in range(h):
        for x in range(w):
            window = padded[y:y + kernel, x:x + kernel]
            assert out[y, x] in window


# ---------------------------------------------------------------------------
# clahe


def test_clahe_constant_image_near_constant():
    img = np.full((40, 48), 77, dtype=np.uint8)
    out = ip.clahe(img, tiles=8, clip=2.0)
    assert int(out.max()) - int(out.min()) <= 1


def low_contrast_gradient_fixture():
    # Sawtooth gradient confined to [100, 140] with a period smaller than a
    # tile, so every tile sees the whole compressed range. (A smooth
    # image-wide ramp is the one thing adaptive equalization flattens: each
    # tile normalizes its local span, so that is not a contrast fixture.)
    period = np.floor(np.linspace(100, 140, 16) + 0.5).astype(np.uint8)
    return np.tile(period, (64, 4))


def test_clahe_expands_low_contrast_gradient():
    img = low_contrast_gradient_fixture()
    assert img.min() >= 100 and img.max() <= 140
    out = ip.clahe(img, tiles=8, clip=2.0)
    assert float(np.std(out)) > float(np.std(img))


def test_clahe_single_tile_unclipped_equals_global_he():
    rng = np.random.RandomState(5)
    for _ in range(5):
        img = rand_gray(rng, rng.randint(8, 50), rng.randint(8, 50))
        out = ip.clahe(img, tiles=1, clip=float("inf"))
        assert np.array_equal(out, global_he_oracle(img))


def test_clahe_mappings_monotone():
    rng = np.random.RandomState(6)
    for _ in range(10):
        img = rand_gray(rng, rng.randint(16, 64), rng.randint(16, 64))
        maps = ip.clahe_mappings(img, tiles=4, clip=2.0)
        assert maps.shape == (4, 4, 256)
        assert (np.diff(maps, axis=-1) >= 0).all()
        assert maps.min() >= 0 and maps.max() <= 255


def test_clahe_rejects_image_smaller_than_grid():
    img = np.zeros((4, 10), dtype=np.uint8)
    with pytest.raises(ValueError):
        ip.clahe(img, tiles=8, clip=2.0)


def test_clahe_parameter_validation():
    img = np.zeros((16, 16), dtype=np.uint8)
    with pytest.raises(ValueError):
        ip.clahe(img, tiles=0, clip=2.0)
    with pytest.raises(ValueError):
        ip.clahe(img, tiles=2, clip=0.0)


def test_clahe_output_range_and_determinism():
    rng = np.random.RandomState(7)
    img = rand_gray(rng, 45, 61)
    a = ip.clahe(img, tiles=8, clip=2.0)
    b = ip.clahe(img, tiles=8, clip=2.0)
    assert np.array_equal(a, b)
    assert a.dtype == np.uint8


# ---------------------------------------------------------------------------
# resize_bilinear


def test_resize_constant_stays_constant():
    img = np.full((5, 9), 201, dtype=np.uint8)
    for side in (1, 3, 224):
        out = ip.resize_bilinear(img, side)
        assert out.shape == (side, side)
        assert (out == 201).all()


def test_resize_2x2_ramp():
    img = np.array([[0, 255], [0, 255]], dtype=np.uint8)
    out = ip.resize_bilinear(img, 4)
    # rows equal, columns are a non-decreasing 0..255 ramp
    assert (out == out[0]).all()
    row = out[0].astype(int)
    assert row[0] == 0 and row[-1] == 255
    assert (np.diff(row) >= 0).all()


def test_resize_matches_scalar_oracle():
    rng = np.random.RandomState(8)
    img = rand_gray(rng, 7, 5)
    assert np.array_equal(ip.resize_bilinear(img, 224), resize_oracle(img, 224))


def test_resize_downscale_matches_scalar_oracle():
    rng = np.random.RandomState(9)
    img = rand_gray(rng, 31, 45)
    assert np.array_equal(ip.resize_bilinear(img, 12), resize_oracle(img, 12))


# ---------------------------------------------------------------------------
# replicate_channels


def test_replicate_endpoints():
    ones = np.full((224, 224), 255, dtype=np.uint8)
    t = ip.replicate_channels(ones)
    assert t.shape == (3, 224, 224)
    assert t.dtype == np.float32
    assert (t == 1.0).all()
    assert (ip.replicate_channels(np.zeros((224, 224), np.uint8)) == 0.0).all()


def test_replicate_matches_per_element_oracle():
    rng = np.random.RandomState(10)
    img = rand_gray(rng, 224, 224)
    t = ip.replicate_channels(img)
    assert np.array_equal(t[0], t[1]) and np.array_equal(t[1], t[2])
    expected = img.astype(np.float32) / np.float32(255.0)
    assert np.array_equal(t[0], expected)


def test_replicate_rejects_wrong_size():
    with pytest.raises(ValueError):
        ip.replicate_channels(np.zeros((100, 100), np.uint8))


# ---------------------------------------------------------------------------
# preprocess composition


def test_preprocess_constant_midgray_near_constant():
    img = np.full((64, 64, 3), 128, dtype=np.uint8)
    t = ip.preprocess(img, PipelineConfig())
    assert t.shape == (3, 224, 224)
    for c in range(3):
        assert float(t[c].max() - t[c].min()) <= 1.0 / 255.0 + 1e-7


def test_preprocess_deterministic():
    rng = np.random.RandomState(11)
    img = rand_rgb(rng, 48, 56)
    cfg = PipelineConfig()
    a = ip.preprocess(img, cfg)
    b = ip.preprocess(img, cfg)
    assert np.array_equal(a, b)


def test_preprocess_matches_stage_composition():
    rng = np.random.RandomState(12)
    img = rand_rgb(rng, 40, 52)
    cfg = PipelineConfig(mask_threshold=30, median_kernel=5, clahe_tiles=4, clahe_clip=3.0)
    expected = ip.replicate_channels(
        ip.resize_bilinear(
            ip.clahe(
                ip.median_filter(
                    ip.green_channel(ip.mask_background(img, 30)), 5), 4, 3.0), 224))
    assert np.array_equal(ip.preprocess(img, cfg), expected)


def test_preprocess_undersized_image_raises_stage_error_not_crash():
    tiny = np.full((1, 1, 3), 200, dtype=np.uint8)
    with pytest.raises(ValueError, match="tile grid"):
        ip.preprocess(tiny, PipelineConfig())


def test_pipeline_config_validation_and_json_round_trip():
    with pytest.raises(ValueError):
        PipelineConfig(median_kernel=4)
    with pytest.raises(ValueError):
        PipelineConfig(clahe_clip=-1.0)
    with pytest.raises(ValueError):
        PipelineConfig(output_side=128)
    cfg = PipelineConfig(mask_threshold=7, median_kernel=5)
    assert PipelineConfig.from_json_dict(cfg.to_json_dict()) == cfg
    with pytest.raises(ValueError):
        PipelineConfig.from_json_dict({"bogus": 1})


# ---------------------------------------------------------------------------
# tensor files


def test_fundus_tensor_round_trip(tmp_path):
    rng = np.random.RandomState(13)
    t = rng.rand(3, 224, 224).astype(np.float32)
    path = tmp_path / "t.fdt"
    ip.write_fundus_tensor(path, t)
    back = ip.read_fundus_tensor(path)
    assert np.array_equal(back, t)
    raw = path.read_bytes()
    assert raw[:4] == b"FDT1"
    assert len(raw) == 16 + 3 * 224 * 224 * 4


def test_fundus_tensor_rejects_bad_files(tmp_path):
    p = tmp_path / "bad.fdt"
    p.write_bytes(b"NOPE" + b"\x00" * 12)
    with pytest.raises(ValueError, match="magic"):
        ip.read_fundus_tensor(p)
    p.write_bytes(b"FD")
    with pytest.raises(ValueError, match="truncated"):
        ip.read_fundus_tensor(p)
