"""Six-step refinement chain for candidate cell masks.

Steps run in a fixed order: area filter, intensity filter, contained-mask
removal, IoU suppression, erosion-based overlap removal, edge-mask
removal, morphological closing. Each removal carries one reason code, so
an audit trail can account for every input mask.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imgio import Image
from .masks import Mask, MaskSet


@dataclass(frozen=True)
class StructElem:
    """Structuring element spec: Euclidean disk or full square of given radius."""

    shape: str = "disk"
    radius: int = 1

    def __post_init__(self):
        if self.shape not in ("disk", "square"):
            raise ValueError(f"unknown structuring element shape {self.shape!r}")
        if self.radius < 1:
            raise ValueError(f"structuring element radius must be >= 1, got {self.radius}")

    def footprint(self) -> np.ndarray:
        r = self.radius
        if self.shape == "square":
            return np.ones((2 * r + 1, 2 * r + 1), dtype=bool)
        yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
        return (yy * yy + xx * xx) <= r * r


@dataclass(frozen=True)
class PostprocessConfig:
    """Thresholds and elements for the refinement chain.

    Area bounds are inclusive (areas of exactly ``min_area_px`` or
    ``max_area_px`` are kept); the intensity band is strict on both sides.
    """

    min_area_px: int = 100
    max_area_px: int = 1250
    intensity_lo: float = 0.35
    intensity_hi: float = 1.6
    iou_thresh: float = 0.3
    erosion_elem: StructElem = field(default_factory=StructElem)
    border_px: int = 2
    closing_elem: StructElem = field(default_factory=StructElem)

    def __post_init__(self):
        if not 0 < self.min_area_px < self.max_area_px:
            raise ValueError("need 0 < min_area_px < max_area_px")
        if not 0 < self.intensity_lo < self.intensity_hi:
            raise ValueError("need 0 < intensity_lo < intensity_hi")
        if not 0 < self.iou_thresh < 1:
            raise ValueError("need 0 < iou_thresh < 1")
        if self.border_px < 0:
            raise ValueError("border_px must be >= 0")


@dataclass(frozen=True)
class AuditEntry:
    """One audit row; ``mask_id`` is None for per-step summary lines."""

    step: str
    mask_id: int | None
    reason: str
    metric_value: float


def write_audit_csv(entries, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "mask_id", "reason", "metric_value"])
        for e in entries:
            writer.writerow(
                [e.step, "" if e.mask_id is None else e.mask_id, e.reason, f"{e.metric_value:.6f}"]
            )


def _log(audit, step, mask_id, reason, metric):
    if audit is not None:
        audit.append(AuditEntry(step=step, mask_id=mask_id, reason=reason, metric_value=float(metric)))


def _bbox_overlap(a: Mask, b: Mask) -> bool:
    ax0, ay0, ax1, ay1 = a.bbox
    bx0, by0, bx1, by1 = b.bbox
    return ax0 < bx1 and bx0 < ax1 and ay0 < by1 and by0 < ay1


def _bbox_contains(inner: Mask, outer: Mask) -> bool:
    ix0, iy0, ix1, iy1 = inner.bbox
    ox0, oy0, ox1, oy1 = outer.bbox
    return ox0 <= ix0 and oy0 <= iy0 and ix1 <= ox1 and iy1 <= oy1


def _window(a: Mask, b: Mask):
    x0 = min(a.bbox[0], b.bbox[0])
    y0 = min(a.bbox[1], b.bbox[1])
    x1 = max(a.bbox[2], b.bbox[2])
    y1 = max(a.bbox[3], b.bbox[3])
    return slice(y0, y1), slice(x0, x1)


def _intersection_px(a: Mask, b: Mask) -> int:
    if not _bbox_overlap(a, b):
        return 0
    win = _window(a, b)
    return int(np.count_nonzero(a.bitmap[win] & b.bitmap[win]))


def _is_subset(inner: Mask, outer: Mask) -> bool:
    if not _bbox_contains(inner, outer):
        return False
    win = _window(inner, outer)
    return bool(np.all(outer.bitmap[win][inner.bitmap[win]]))


def iou(a: Mask, b: Mask) -> float:
    """Intersection-over-union of two masks' pixel sets."""
    inter = _intersection_px(a, b)
    if inter == 0:
        return 0.0
    return inter / float(a.area_px + b.area_px - inter)


def filter_area(ms: MaskSet, cfg: PostprocessConfig, audit=None) -> MaskSet:
    """Keep masks with min_area_px <= area <= max_area_px."""
    keep = []
    for m in ms.masks:
        if cfg.min_area_px <= m.area_px <= cfg.max_area_px:
            keep.append(m)
        else:
            _log(audit, "filter", m.id, "area", m.area_px)
    return ms.reindexed(keep)


def filter_intensity(ms: MaskSet, stacked: Image, cfg: PostprocessConfig, audit=None) -> MaskSet:
    """Drop masks whose mean intensity falls outside the band around the set mean.

    The set mean intensity is computed once over the input masks (single
    pass, not iterated); the band (intensity_lo * mean, intensity_hi * mean)
    is open on both sides. An empty set is returned unchanged because the
    mean is undefined.
    """
    if (stacked.height, stacked.width) != (ms.height, ms.width):
        raise ValueError("stacked image and mask set dimensions differ")
    if len(ms) == 0:
        return ms
    means = np.array([stacked.data[m.bitmap].mean() for m in ms.masks])
    set_mean = float(means.mean())
    lo, hi = cfg.intensity_lo * set_mean, cfg.intensity_hi * set_mean
    keep = []
    for m, mi in zip(ms.masks, means):
        if lo < mi < hi:
            keep.append(m)
        else:
            _log(audit, "filter", m.id, "intensity", mi)
    return ms.reindexed(keep)


def remove_contained(ms: MaskSet, audit=None) -> MaskSet:
    """Remove masks fully contained in another surviving mask.

    Candidates are processed by ascending area so the largest
    representative survives; equal-area duplicates are processed by
    descending id so the lower id survives.
    """
    alive = {m.id: True for m in ms.masks}
    by_id = {m.id: m for m in ms.masks}
    for m in sorted(ms.masks, key=lambda m: (m.area_px, -m.id)):
        for other in ms.masks:
            if other.id == m.id or not alive[other.id]:
                continue
            if other.area_px >= m.area_px and _is_subset(m, other):
                alive[m.id] = False
                _log(audit, "contained", m.id, "contained", other.id)
                break
    return ms.reindexed([m for m in ms.masks if alive[m.id]])


def nms(ms: MaskSet, cfg: PostprocessConfig, audit=None) -> MaskSet:
    """Greedy suppression of overlapping masks above the IoU threshold.

    Masks are visited by descending area (ties: lower id first); a mask is
    accepted iff its IoU with every already-accepted mask stays at or
    below ``iou_thresh``.
    """
    accepted: list[Mask] = []
    for m in sorted(ms.masks, key=lambda m: (-m.area_px, m.id)):
        worst = 0.0
        for a in accepted:
            worst = max(worst, iou(m, a))
            if worst > cfg.iou_thresh:
                break
        if worst > cfg.iou_thresh:
            _log(audit, "nms", m.id, "overlap", worst)
        else:
            accepted.append(m)
    accepted_ids = {m.id for m in accepted}
    return ms.reindexed([m for m in ms.masks if m.id in accepted_ids])


def erode_bitmap(bitmap: np.ndarray, elem: StructElem) -> np.ndarray:
    """Morphological erosion; pixels whose element leaves the frame erode away."""
    return ndimage.binary_erosion(bitmap, structure=elem.footprint(), border_value=0)


def close_bitmap(bitmap: np.ndarray, elem: StructElem) -> np.ndarray:
    """Morphological closing with plane semantics (zero-padded by the radius)."""
    r = elem.radius
    fp = elem.footprint()
    padded = np.pad(bitmap, r)
    dil = ndimage.binary_dilation(padded, structure=fp)
    closed = ndimage.binary_erosion(dil, structure=fp, border_value=0)
    return closed[r:-r, r:-r]


def erosion_overlap_removal(ms: MaskSet, cfg: PostprocessConfig, audit=None) -> MaskSet:
    """Remove the smaller of an overlapping pair when its erosion fits in the larger.

    For each intersecting pair, the smaller mask (ties: lower id) is
    eroded by ``erosion_elem``; if the eroded mask is fully contained in
    the larger one, the smaller is removed. An empty erosion counts as
    contained. Pairs are examined by ascending smaller-mask area.
    """
    pairs = []
    for i, a in enumerate(ms.masks):
        for b in ms.masks[i + 1 :]:
            small, large = (a, b) if (a.area_px, a.id) < (b.area_px, b.id) else (b, a)
            if _intersection_px(small, large) > 0:
                pairs.append((small, large))
    pairs.sort(key=lambda p: (p[0].area_px, p[0].id, p[1].area_px, p[1].id))
    alive = {m.id: True for m in ms.masks}
    eroded_cache: dict[int, np.ndarray] = {}
    for small, large in pairs:
        if not (alive[small.id] and alive[large.id]):
            continue
        if small.id not in eroded_cache:
            eroded_cache[small.id] = erode_bitmap(small.bitmap, cfg.erosion_elem)
        eroded = eroded_cache[small.id]
        if not np.any(eroded & ~large.bitmap):
            alive[small.id] = False
            _log(audit, "erosion_overlap", small.id, "erosion_overlap", large.id)
    return ms.reindexed([m for m in ms.masks if alive[m.id]])


def remove_edge_masks(ms: MaskSet, cfg: PostprocessConfig, audit=None) -> MaskSet:
    """Remove masks with any pixel within ``border_px`` of an image edge."""
    b = cfg.border_px
    keep = []
    for m in ms.masks:
        x0, y0, x1, y1 = m.bbox
        margin = min(x0, y0, ms.width - x1, ms.height - y1)
        if margin < b:
            _log(audit, "edge", m.id, "edge", margin)
        else:
            keep.append(m)
    return ms.reindexed(keep)


def close_masks(ms: MaskSet, cfg: PostprocessConfig, audit=None) -> MaskSet:
    """Replace each bitmap by its morphological closing; removes nothing."""
    closed = [close_bitmap(m.bitmap, cfg.closing_elem) for m in ms.masks]
    return MaskSet.from_bitmaps(closed, ms.width, ms.height)


def _filter_step(ms, img, cfg, audit):
    return filter_intensity(filter_area(ms, cfg, audit), img, cfg, audit)


# The paper-order chain; area and intensity filtering count as one step.
_STEPS = (
    ("filter", _filter_step),
    ("contained", lambda ms, img, cfg, audit: remove_contained(ms, audit)),
    ("nms", lambda ms, img, cfg, audit: nms(ms, cfg, audit)),
    ("erosion_overlap", lambda ms, img, cfg, audit: erosion_overlap_removal(ms, cfg, audit)),
    ("edge", lambda ms, img, cfg, audit: remove_edge_masks(ms, cfg, audit)),
    ("closing", lambda ms, img, cfg, audit: close_masks(ms, cfg, audit)),
)


def postprocess_pipeline(
    ms: MaskSet, stacked: Image, cfg: PostprocessConfig | None = None
) -> tuple[MaskSet, list[AuditEntry]]:
    """Run the full chain and return the survivors plus the audit trail.

    The audit gets one summary line per step (metric = number removed; the
    closing step removes nothing by construction) after that step's
    per-removal lines. Ids in removal lines refer to the ids the masks
    held entering that step.
    """
    cfg = cfg or PostprocessConfig()
    audit: list[AuditEntry] = []
    current = ms
    for name, step in _STEPS:
        before = len(current)
        current = step(current, stacked, cfg, audit)
        _log(audit, name, None, "summary", before - len(current))
    return current, audit
