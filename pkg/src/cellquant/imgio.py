"""Image and raster-stack types, TIFF/PNG I/O, and intensity normalization.

All pixel data is held as 64-bit floats internally; quantization happens
only when writing TIFF or PNG files. Arrays inside :class:`Image` are
marked read-only so values can be shared across threads safely.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tifffile
from PIL import Image as PILImage
from scipy import ndimage

from .errors import MaskFormatError, StackReadError
from .masks import MaskSet

# 20 um field of view over 256 px; override per instrument.
DEFAULT_PIXEL_PITCH_UM = 20.0 / 256.0

_ALLOWED_TIFF_DTYPES = ("uint8", "int8", "uint16", "int16", "float32")


@dataclass(frozen=True)
class Image:
    """Single-channel intensity grid with a physical pixel pitch (um/px)."""

    data: np.ndarray
    pixel_pitch_um: float = DEFAULT_PIXEL_PITCH_UM

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"image data must be a non-empty 2D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite values")
        if arr.min() < 0:
            raise ValueError("image contains negative intensities")
        if not self.pixel_pitch_um > 0:
            raise ValueError(f"pixel_pitch_um must be positive, got {self.pixel_pitch_um}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "Image":
        """New image with the same pitch and different pixel values."""
        return Image(data, self.pixel_pitch_um)


@dataclass(frozen=True)
class RasterStack:
    """Ordered co-registered single-scan frames from one field of view."""

    frames: tuple[Image, ...] = field(default_factory=tuple)

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) < 1:
            raise ValueError("a raster stack needs at least one frame")
        h, w = frames[0].height, frames[0].width
        pitch = frames[0].pixel_pitch_um
        for i, f in enumerate(frames):
            if (f.height, f.width) != (h, w):
                raise ValueError(
                    f"frame {i} is {f.width}x{f.height}, expected {w}x{h}"
                )
            if f.pixel_pitch_um != pitch:
                raise ValueError(f"frame {i} has pixel pitch {f.pixel_pitch_um}, expected {pitch}")
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def pixel_pitch_um(self) -> float:
        return self.frames[0].pixel_pitch_um

    def as_array(self) -> np.ndarray:
        """Frames stacked into one (F, H, W) float array."""
        return np.stack([f.data for f in self.frames], axis=0)


def read_stack(path, pixel_pitch_um: float = DEFAULT_PIXEL_PITCH_UM) -> RasterStack:
    """Read a single-channel multi-page TIFF into a :class:`RasterStack`.

    Accepts 8/16-bit integer or 32-bit float samples; values are converted
    losslessly to float64. Multi-channel (RGB) pages and pages whose
    dimensions differ from page 0 are rejected with the page index named.
    """
    path = Path(path)
    if not path.exists():
        raise StackReadError(f"stack file not found: {path}")
    try:
        tif = tifffile.TiffFile(path)
    except (tifffile.TiffFileError, OSError) as exc:
        raise StackReadError(f"cannot read TIFF {path}: {exc}") from exc
    frames = []
    with tif:
        for i, page in enumerate(tif.pages):
            arr = page.asarray()
            if arr.ndim != 2:
                raise StackReadError(
                    f"page {i} of {path} is not single-channel (shape {arr.shape})"
                )
            if arr.dtype.name not in _ALLOWED_TIFF_DTYPES:
                raise StackReadError(
                    f"page {i} of {path} has unsupported sample type {arr.dtype}; "
                    f"expected one of {_ALLOWED_TIFF_DTYPES}"
                )
            if np.issubdtype(arr.dtype, np.integer) and arr.min() < 0:
                raise StackReadError(f"page {i} of {path} contains negative samples")
            if frames and arr.shape != frames[0].shape:
                raise StackReadError(
                    f"page {i} of {path} is {arr.shape[1]}x{arr.shape[0]}, "
                    f"expected {frames[0].shape[1]}x{frames[0].shape[0]}"
                )
            if not np.all(np.isfinite(arr)):
                raise StackReadError(f"page {i} of {path} contains non-finite samples")
            frames.append(arr.astype(np.float64))
    if not frames:
        raise StackReadError(f"{path} contains no image pages")
    return RasterStack(tuple(Image(f, pixel_pitch_um) for f in frames))


def write_stack(stack: RasterStack, path, dtype=np.float32) -> None:
    """Write frames as a multi-page single-channel TIFF with the given sample type."""
    data = stack.as_array()
    dtype = np.dtype(dtype)
    if np.issubdtype(dtype, np.integer):
        info = np.iinfo(dtype)
        data = np.clip(np.rint(data), info.min, info.max)
    tifffile.imwrite(str(path), data.astype(dtype), photometric="minisblack")


def write_image(img: Image, path, dtype=np.float32) -> None:
    """Write one image as a single-page TIFF."""
    write_stack(RasterStack((img,)), path, dtype=dtype)


def normalize(img: Image, lo_pct: float = 0.1, hi_pct: float = 99.9) -> Image:
    """Affine-map the [lo_pct, hi_pct] percentile range onto [0, 1] and clamp.

    Percentiles use the lower order statistic: value at index
    floor(q/100 * (n - 1)) of the sorted pixels. A constant image (or any
    degenerate percentile range) maps to all zeros.
    """
    if not (0 <= lo_pct < hi_pct <= 100):
        raise ValueError(f"need 0 <= lo_pct < hi_pct <= 100, got {lo_pct}, {hi_pct}")
    lo = float(np.percentile(img.data, lo_pct, method="lower"))
    hi = float(np.percentile(img.data, hi_pct, method="lower"))
    if hi <= lo:
        return img.with_data(np.zeros_like(img.data))
    return img.with_data(np.clip((img.data - lo) / (hi - lo), 0.0, 1.0))


def mask_color(index: int) -> tuple[int, int, int]:
    """Deterministic 8-bit RGB color for a mask index (golden-angle hue walk)."""
    hue = (index * 0.6180339887498949) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.85, 1.0)
    return int(round(r * 255)), int(round(g * 255)), int(round(b * 255))


def write_overlay(img: Image, masks: MaskSet, path) -> None:
    """Render masks over a grayscale background and save an 8-bit RGB PNG.

    Each mask is tinted with its index color at 50% opacity plus a 1-px
    solid contour; masks are painted in index order. Output is byte-stable
    across runs for identical inputs.
    """
    if (masks.height, masks.width) != (img.height, img.width):
        raise MaskFormatError(
            f"mask set is {masks.width}x{masks.height}, image is {img.width}x{img.height}"
        )
    vmax = img.data.max()
    gray = np.zeros(img.data.shape, dtype=np.uint8)
    if vmax > 0:
        gray = np.clip(np.rint(img.data / vmax * 255.0), 0, 255).astype(np.uint8)
    rgb = np.repeat(gray[:, :, None], 3, axis=2).astype(np.float64)
    for m in masks.masks:
        color = np.array(mask_color(m.id), dtype=np.float64)
        interior = m.bitmap
        rgb[interior] = 0.5 * rgb[interior] + 0.5 * color
        eroded = ndimage.binary_erosion(m.bitmap, structure=np.ones((3, 3), bool))
        contour = m.bitmap & ~eroded
        rgb[contour] = color
    out = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    PILImage.fromarray(out, mode="RGB").save(str(path), format="PNG")


def write_label_map(masks: MaskSet, path) -> None:
    """Save masks as a 16-bit grayscale PNG: background 0, mask i as i + 1.

    Masks must be pairwise disjoint; overlapping sets need the RLE or
    one-PNG-per-mask formats instead.
    """
    if len(masks.masks) > 65534:
        raise MaskFormatError("too many masks for a 16-bit label map")
    canvas = np.zeros((masks.height, masks.width), dtype=np.uint16)
    for m in masks.masks:
        if np.any(canvas[m.bitmap] != 0):
            raise MaskFormatError(
                f"mask {m.id} overlaps an earlier mask; label maps require disjoint masks"
            )
        canvas[m.bitmap] = m.id + 1
    PILImage.fromarray(canvas, mode="I;16").save(str(path), format="PNG")
