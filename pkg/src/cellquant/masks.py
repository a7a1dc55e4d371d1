"""Binary instance masks and their interchange formats.

A :class:`MaskSet` is the unit that flows through post-processing. Two
on-disk forms are supported:

* RLE JSON: ``{"width": W, "height": H, "masks": [{"id": k, "counts": [...]}]}``
  where counts alternate background/foreground runs starting with background
  (first count may be 0), scan order is column-major, and each mask's counts
  sum to W*H.
* A directory of binary PNGs named ``NNN.png``, one file per mask.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import MaskFormatError


@dataclass(frozen=True)
class Mask:
    """One candidate cell: id, bitmap, cached area and tight bbox.

    ``bbox`` is (col0, row0, col1, row1) with exclusive upper bounds.
    """

    id: int
    bitmap: np.ndarray
    area_px: int
    bbox: tuple[int, int, int, int]

    @classmethod
    def from_bitmap(cls, mask_id: int, bitmap: np.ndarray) -> "Mask":
        bm = np.array(bitmap, dtype=bool, copy=True)
        if bm.ndim != 2:
            raise ValueError(f"mask bitmap must be 2D, got shape {bm.shape}")
        area = int(bm.sum())
        if area == 0:
            raise MaskFormatError(f"mask {mask_id} is empty")
        rows = np.flatnonzero(bm.any(axis=1))
        cols = np.flatnonzero(bm.any(axis=0))
        bbox = (int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)
        bm.setflags(write=False)
        return cls(id=mask_id, bitmap=bm, area_px=area, bbox=bbox)

    def with_id(self, mask_id: int) -> "Mask":
        return Mask(id=mask_id, bitmap=self.bitmap, area_px=self.area_px, bbox=self.bbox)


@dataclass(frozen=True)
class MaskSet:
    """Masks over one image; ids are unique and contiguous from 0."""

    masks: tuple[Mask, ...]
    width: int
    height: int

    def __post_init__(self):
        masks = tuple(self.masks)
        for i, m in enumerate(masks):
            if m.id != i:
                raise ValueError(f"mask ids must be contiguous from 0; position {i} has id {m.id}")
            if m.bitmap.shape != (self.height, self.width):
                raise ValueError(
                    f"mask {i} bitmap shape {m.bitmap.shape} does not match "
                    f"set dims {self.width}x{self.height}"
                )
        object.__setattr__(self, "masks", masks)

    def __len__(self) -> int:
        return len(self.masks)

    @classmethod
    def from_bitmaps(cls, bitmaps, width: int, height: int) -> "MaskSet":
        """Build a set from bitmaps, assigning ids in iteration order."""
        masks = tuple(Mask.from_bitmap(i, bm) for i, bm in enumerate(bitmaps))
        return cls(masks=masks, width=width, height=height)

    def reindexed(self, keep) -> "MaskSet":
        """Subset preserving order, ids reassigned contiguously from 0."""
        kept = tuple(m.with_id(i) for i, m in enumerate(keep))
        return MaskSet(masks=kept, width=self.width, height=self.height)


def encode_rle(bitmap: np.ndarray) -> list[int]:
    """Column-major run lengths, alternating starting with background."""
    flat = np.asarray(bitmap, dtype=bool).flatten(order="F")
    if flat.size == 0:
        return []
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return [int(c) for c in counts]


def decode_rle(counts, width: int, height: int, *, mask_id=None) -> np.ndarray:
    """Inverse of :func:`encode_rle`; validates that counts sum to W*H."""
    label = "mask" if mask_id is None else f"mask {mask_id}"
    counts = list(counts)
    if any((not isinstance(c, int)) or c < 0 for c in counts):
        raise MaskFormatError(f"{label}: RLE counts must be non-negative integers")
    total = sum(counts)
    if total != width * height:
        raise MaskFormatError(
            f"{label}: RLE counts sum to {total}, expected {width * height} for {width}x{height}"
        )
    flat = np.zeros(width * height, dtype=bool)
    pos = 0
    value = False
    for c in counts:
        if value:
            flat[pos : pos + c] = True
        pos += c
        value = not value
    return flat.reshape((height, width), order="F")


def save_masks(ms: MaskSet, path) -> None:
    """Write a mask set as an RLE JSON document."""
    doc = {
        "width": ms.width,
        "height": ms.height,
        "masks": [{"id": m.id, "counts": encode_rle(m.bitmap)} for m in ms.masks],
    }
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def _load_masks_json(path: Path, dims) -> MaskSet:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MaskFormatError(f"{path} is not valid JSON: {exc}") from exc
    for key in ("width", "height", "masks"):
        if key not in doc:
            raise MaskFormatError(f"{path} is missing required key '{key}'")
    width, height = int(doc["width"]), int(doc["height"])
    if dims is not None and (width, height) != tuple(dims):
        raise MaskFormatError(
            f"{path} declares {width}x{height}, expected {dims[0]}x{dims[1]}"
        )
    bitmaps = []
    for i, entry in enumerate(doc["masks"]):
        counts = entry.get("counts")
        if counts is None:
            raise MaskFormatError(f"{path}: mask entry {i} has no 'counts'")
        bitmaps.append(decode_rle(counts, width, height, mask_id=entry.get("id", i)))
    return MaskSet.from_bitmaps(bitmaps, width, height)


def _load_masks_dir(path: Path, dims) -> MaskSet:
    files = sorted(path.glob("*.png"))
    if not files:
        raise MaskFormatError(f"no PNG masks found in {path}")
    bitmaps = []
    width = height = None
    for f in files:
        arr = np.asarray(PILImage.open(f))
        if arr.ndim != 2:
            raise MaskFormatError(f"{f} is not a single-channel PNG (shape {arr.shape})")
        h, w = arr.shape
        if dims is not None and (w, h) != tuple(dims):
            raise MaskFormatError(f"{f} is {w}x{h}, expected {dims[0]}x{dims[1]}")
        if width is None:
            width, height = w, h
        elif (w, h) != (width, height):
            raise MaskFormatError(f"{f} is {w}x{h}, other masks are {width}x{height}")
        bitmaps.append(arr != 0)
    return MaskSet.from_bitmaps(bitmaps, width, height)


def load_masks(path, dims: tuple[int, int] | None = None) -> MaskSet:
    """Load a mask set from an RLE JSON file or a directory of binary PNGs.

    ``dims`` is (width, height) of the source image; when given, every mask
    is checked against it. Ids are assigned in array/filename order. Empty
    masks are rejected rather than dropped, to surface exporter bugs.
    """
    path = Path(path)
    if not path.exists():
        raise MaskFormatError(f"mask source not found: {path}")
    if path.is_dir():
        return _load_masks_dir(path, dims)
    return _load_masks_json(path, dims)
