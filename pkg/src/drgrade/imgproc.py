"""Five-stage fundus preprocessing pipeline.

Stage order (fixed):

    mask_background -> green_channel -> median_filter -> clahe
        -> resize_bilinear -> replicate_channels

Array conventions:

* RGB image:   uint8 array of shape (height, width, 3)
* gray image:  uint8 array of shape (height, width)
* input tensor: float32 array of shape (3, 224, 224), values in [0, 1],
  all three channels identical (replicated grayscale)

All stages are pure functions on integer intensities; quantization always
rounds half away from zero (see util.round_half_away) so that the whole
pipeline is bit-reproducible and golden files are stable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, asdict

import numpy as np

from .util import round_half_away

TENSOR_SIDE = 224
_TENSOR_MAGIC = b"FDT1"

# Rec. 601 luma coefficients, used only for background masking.
_LUMA_R, _LUMA_G, _LUMA_B = 0.299, 0.587, 0.114


@dataclass(frozen=True)
class PipelineConfig:
    """Parameters of the preprocessing pipeline.

    ``output_side`` is pinned to 224: the model input contract is a
    224x224 3-channel tensor.
    """

    mask_threshold: int = 10
    median_kernel: int = 3
    clahe_tiles: int = 8
    clahe_clip: float = 2.0
    output_side: int = TENSOR_SIDE

    def __post_init__(self):
        if not 0 <= self.mask_threshold <= 255:
            raise ValueError(f"mask_threshold must be in [0, 255], got {self.mask_threshold}")
        if self.median_kernel < 1 or self.median_kernel % 2 == 0:
            raise ValueError(f"median_kernel must be odd and >= 1, got {self.median_kernel}")
        if self.clahe_tiles < 1:
            raise ValueError(f"clahe_tiles must be >= 1, got {self.clahe_tiles}")
        if not self.clahe_clip > 0:
            raise ValueError(f"clahe_clip must be > 0, got {self.clahe_clip}")
        if self.output_side != TENSOR_SIDE:
            raise ValueError(f"output_side is fixed at {TENSOR_SIDE}, got {self.output_side}")

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, d: dict) -> "PipelineConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
        return cls(**d)


def validate_rgb8(img: np.ndarray) -> None:
    if not isinstance(img, np.ndarray) or img.dtype != np.uint8:
        raise ValueError("RGB image must be a uint8 array")
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"RGB image must have shape (h, w, 3), got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must be at least 1x1")


def validate_gray8(img: np.ndarray) -> None:
    if not isinstance(img, np.ndarray) or img.dtype != np.uint8:
        raise ValueError("gray image must be a uint8 array")
    if img.ndim != 2:
        raise ValueError(f"gray image must have shape (h, w), got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must be at least 1x1")


def luma(img: np.ndarray) -> np.ndarray:
    """Per-pixel grayscale luma, rounded half away from zero to uint8."""
    validate_rgb8(img)
    r = img[:, :, 0].astype(np.float64)
    g = img[:, :, 1].astype(np.float64)
    b = img[:, :, 2].astype(np.float64)
    return round_half_away(_LUMA_R * r + _LUMA_G * g + _LUMA_B * b).astype(np.uint8)


def mask_background(img: np.ndarray, threshold: int = 10) -> np.ndarray:
    """Crop to the tight bounding box of pixels whose luma exceeds ``threshold``.

    If no pixel exceeds the threshold the image is returned unchanged (the
    fallback for frames with no detectable foreground).
    """
    validate_rgb8(img)
    if not 0 <= threshold <= 255:
        raise ValueError(f"threshold must be in [0, 255], got {threshold}")
    bright = luma(img) > threshold
    rows = np.flatnonzero(bright.any(axis=1))
    if rows.size == 0:
        return img.copy()
    cols = np.flatnonzero(bright.any(axis=0))
    return img[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1].copy()


def green_channel(img: np.ndarray) -> np.ndarray:
    """Extract the green channel (highest vessel/lesion contrast)."""
    validate_rgb8(img)
    return img[:, :, 1].copy()


def median_filter(img: np.ndarray, kernel: int = 3) -> np.ndarray:
    """Median filter with edge-replicated borders.

    The output pixel is the exact middle order statistic of the
    kernel x kernel window; out-of-bounds samples replicate the nearest
    edge pixel.
    """
    validate_gray8(img)
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be odd and >= 1, got {kernel}")
    if kernel == 1:
        return img.copy()
    r = kernel // 2
    padded = np.pad(img, r, mode="edge")
    h, w = img.shape
    stack = np.empty((kernel * kernel, h, w), dtype=np.uint8)
    i = 0
    for dy in range(kernel):
        for dx in range(kernel):
            stack[i] = padded[dy:dy + h, dx:dx + w]
            i += 1
    mid = (kernel * kernel) // 2
    return np.partition(stack, mid, axis=0)[mid]


def _clahe_geometry(h: int, w: int, tiles: int) -> tuple[int, int]:
    # tile sizes after padding both dimensions up to multiples of `tiles`
    return -(-h // tiles), -(-w // tiles)


def clahe_mappings(img: np.ndarray, tiles: int = 8, clip: float = 2.0) -> np.ndarray:
    """Per-tile intensity mappings used by :func:`clahe`.

    Returns an int32 array of shape (tiles, tiles, 256); entry [ty, tx, v]
    is the remapped intensity of value v inside tile (ty, tx). Exposed so
    the monotonicity of the mappings can be checked directly.

    Histogram clipping is single-pass: mass above the ceiling
    ``clip * tile_area / 256`` moves to an excess pool that is redistributed
    uniformly over all 256 bins of a real-valued histogram (no iterative
    re-clipping).
    """
    validate_gray8(img)
    if tiles < 1:
        raise ValueError(f"tiles must be >= 1, got {tiles}")
    if not clip > 0:
        raise ValueError(f"clip must be > 0, got {clip}")
    h, w = img.shape
    if h < tiles or w < tiles:
        raise ValueError(f"image {h}x{w} is smaller than the {tiles}x{tiles} tile grid")
    th, tw = _clahe_geometry(h, w, tiles)
    padded = np.pad(img, ((0, th * tiles - h), (0, tw * tiles - w)), mode="edge")
    area = th * tw
    ceiling = clip * area / 256.0
    maps = np.empty((tiles, tiles, 256), dtype=np.int32)
    for ty in range(tiles):
        for tx in range(tiles):
            tile = padded[ty * th:(ty + 1) * th, tx * tw:(tx + 1) * tw]
            hist = np.bincount(tile.ravel(), minlength=256).astype(np.float64)
            excess = np.maximum(hist - ceiling, 0.0).sum()
            clipped = np.minimum(hist, ceiling) + excess / 256.0
            cdf = np.cumsum(clipped) / area
            maps[ty, tx] = np.clip(round_half_away(255.0 * cdf), 0, 255).astype(np.int32)
    return maps


def _axis_tile_weights(n_pix: int, tile_size: int, tiles: int):
    pos = (np.arange(n_pix, dtype=np.float64) - (tile_size - 1) / 2.0) / tile_size
    t = np.clip(pos, 0.0, float(tiles - 1))
    i0 = np.minimum(t.astype(np.int64), tiles - 2)
    return i0, t - i0


def clahe(img: np.ndarray, tiles: int = 8, clip: float = 2.0) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization.

    Each pixel is remapped by bilinear interpolation between the mappings of
    the four tiles whose centers surround it; pixels outside the convex hull
    of tile centers clamp to the nearest tile row/column. With ``tiles=1``
    and ``clip=inf`` this reduces exactly to global histogram equalization.
    """
    maps = clahe_mappings(img, tiles, clip)
    if tiles == 1:
        return maps[0, 0].astype(np.uint8)[img]
    h, w = img.shape
    th, tw = _clahe_geometry(h, w, tiles)
    iy, fy = _axis_tile_weights(h, th, tiles)
    ix, fx = _axis_tile_weights(w, tw, tiles)
    mf = maps.astype(np.float64)
    m00 = mf[iy[:, None], ix[None, :], img]
    m01 = mf[iy[:, None], ix[None, :] + 1, img]
    m10 = mf[iy[:, None] + 1, ix[None, :], img]
    m11 = mf[iy[:, None] + 1, ix[None, :] + 1, img]
    fyc = fy[:, None]
    val = (1.0 - fyc) * ((1.0 - fx) * m00 + fx * m01) + fyc * ((1.0 - fx) * m10 + fx * m11)
    return np.clip(round_half_away(val), 0, 255).astype(np.uint8)


def resize_bilinear(img: np.ndarray, side: int) -> np.ndarray:
    """Resize to side x side with bilinear interpolation.

    Half-pixel-center convention: source coordinate of output pixel d is
    (d + 0.5) * (src / dst) - 0.5, clamped to the valid range; the
    interpolated value rounds half away from zero.
    """
    validate_gray8(img)
    if side < 1:
        raise ValueError(f"side must be >= 1, got {side}")
    h, w = img.shape
    sy = np.clip((np.arange(side, dtype=np.float64) + 0.5) * (h / side) - 0.5, 0.0, float(h - 1))
    sx = np.clip((np.arange(side, dtype=np.float64) + 0.5) * (w / side) - 0.5, 0.0, float(w - 1))
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[:, None]
    fx = (sx - x0)[None, :]
    imgf = img.astype(np.float64)
    a = imgf[y0[:, None], x0[None, :]]
    b = imgf[y0[:, None], x1[None, :]]
    c = imgf[y1[:, None], x0[None, :]]
    d = imgf[y1[:, None], x1[None, :]]
    val = (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * c + fx * d)
    return np.clip(round_half_away(val), 0, 255).astype(np.uint8)


def replicate_channels(img: np.ndarray) -> np.ndarray:
    """Replicate a 224x224 grayscale image into a float32 (3, 224, 224) tensor.

    Values are scaled to [0, 1] by float32 division by 255; this is the only
    place the pipeline leaves integer intensities.
    """
    validate_gray8(img)
    if img.shape != (TENSOR_SIDE, TENSOR_SIDE):
        raise ValueError(f"expected a {TENSOR_SIDE}x{TENSOR_SIDE} image, got {img.shape}")
    chan = img.astype(np.float32) / np.float32(255.0)
    return np.stack([chan, chan, chan], axis=0)


def preprocess_stages(img: np.ndarray, cfg: PipelineConfig | None = None) -> dict:
    """Run the pipeline and return every stage output (keyed by stage name)."""
    cfg = cfg or PipelineConfig()
    masked = mask_background(img, cfg.mask_threshold)
    green = green_channel(masked)
    filtered = median_filter(green, cfg.median_kernel)
    enhanced = clahe(filtered, cfg.clahe_tiles, cfg.clahe_clip)
    resized = resize_bilinear(enhanced, cfg.output_side)
    tensor = replicate_channels(resized)
    return {
        "masked": masked,
        "green": green,
        "filtered": filtered,
        "enhanced": enhanced,
        "resized": resized,
        "tensor": tensor,
    }


def preprocess(img: np.ndarray, cfg: PipelineConfig | None = None) -> np.ndarray:
    """Full pipeline: RGB fundus image in, float32 (3, 224, 224) tensor out."""
    return preprocess_stages(img, cfg)["tensor"]


def write_fundus_tensor(path, tensor: np.ndarray) -> None:
    """Write a tensor file: 16-byte header (magic 'FDT1', u32 channels,
    u32 height, u32 width, little-endian) + float32 LE values, row-major,
    channel-major."""
    if tensor.ndim != 3:
        raise ValueError(f"tensor must be 3-d (c, h, w), got shape {tensor.shape}")
    c, h, w = tensor.shape
    header = struct.pack("<4sIII", _TENSOR_MAGIC, c, h, w)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def read_fundus_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) != 16:
            raise ValueError(f"{path}: truncated tensor header")
        magic, c, h, w = struct.unpack("<4sIII", header)
        if magic != _TENSOR_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        data = f.read()
    expected = c * h * w * 4
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} payload bytes, got {len(data)}")
    return np.frombuffer(data, dtype="<f4").reshape(c, h, w).astype(np.float32)
