"""Synthetic fields of rod-shaped cells with exact ground truth.

Cells are capsules (cylinder plus hemispherical caps) so their true
volume matches the measurement model by construction, which lets
end-to-end tests isolate algorithmic bias. Frames carry Poisson shot
noise; the generator is driven by numpy's seeded PCG64 generator, so a
fixed seed reproduces the field bit-for-bit for a given numpy version.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SynthesisError
from .evaluation import AnnotationSet, write_annotations
from .imgio import DEFAULT_PIXEL_PITCH_UM, Image, RasterStack, write_stack
from .masks import MaskSet, save_masks
from .morphometry import CellFeatures, volume, write_features_csv


@dataclass(frozen=True)
class SynthParams:
    """Field geometry, photometry, and noise settings.

    ``noise_scale`` is the Poisson scaling factor in photon counts per
    intensity unit per frame; ``math.inf`` disables noise. Orientations
    are uniform in [0, 180). ``edge_margin_px`` keeps whole cells clear of
    the image border (the border-removal band plus slack), so ground
    truth stays consistent with the refinement chain.
    """

    image_size_px: int = 256
    pixel_pitch_um: float = DEFAULT_PIXEL_PITCH_UM
    n_cells: int = 120
    length_um_range: tuple[float, float] = (2.0, 4.0)
    width_um_range: tuple[float, float] = (0.7, 1.0)
    intensity_cell: float = 3.0
    intensity_bg: float = 0.2
    frames: int = 7
    noise_scale: float = 3.0
    min_gap_px: float = 3.0
    edge_margin_px: float = 4.0
    rng_seed: int = 0
    max_tries_per_cell: int = 2000

    def __post_init__(self):
        lmin, lmax = self.length_um_range
        wmin, wmax = self.width_um_range
        if not (0 < lmin <= lmax and 0 < wmin <= wmax):
            raise ValueError("length/width ranges must be positive and ordered")
        if lmin < wmax:
            raise ValueError("length range must stay >= width range so every cell is a rod")
        if self.min_gap_px < 0:
            raise ValueError("min_gap_px must be >= 0")
        if self.n_cells < 0 or self.frames < 1 or self.image_size_px < 8:
            raise ValueError("invalid field size, frame count, or cell count")
        if not (self.intensity_cell > 0 and self.intensity_bg >= 0):
            raise ValueError("intensities must be positive (background may be 0)")
        if not self.noise_scale > 0:
            raise ValueError("noise_scale must be positive (use math.inf for noiseless)")


@dataclass(frozen=True)
class SyntheticField:
    stack: RasterStack
    clean: Image
    truth_masks: MaskSet
    annotations: AnnotationSet
    truth_features: tuple[CellFeatures, ...]


def _segment_distance(a0, a1, b0, b1) -> float:
    """Euclidean distance between two segments given as (x, y) endpoint pairs."""
    a0, a1, b0, b1 = (np.asarray(p, dtype=np.float64) for p in (a0, a1, b0, b1))
    d1 = a1 - a0
    d2 = b1 - b0
    r = a0 - b0
    a = d1 @ d1
    e = d2 @ d2
    f = d2 @ r
    if a == 0 and e == 0:
        return float(np.hypot(*r))
    if a == 0:
        s, t = 0.0, np.clip(f / e, 0.0, 1.0)
    else:
        c = d1 @ r
        if e == 0:
            s, t = np.clip(-c / a, 0.0, 1.0), 0.0
        else:
            b = d1 @ d2
            denom = a * e - b * b
            s = np.clip((b * f - c * e) / denom, 0.0, 1.0) if denom != 0 else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = np.clip(-c / a, 0.0, 1.0)
            elif t > 1.0:
                t = 1.0
                s = np.clip((b - c) / a, 0.0, 1.0)
    closest1 = a0 + s * d1
    closest2 = b0 + t * d2
    return float(np.hypot(*(closest1 - closest2)))


def _capsule_endpoints(cx, cy, length_px, width_px, theta):
    half = (length_px - width_px) / 2.0
    dx, dy = math.cos(theta) * half, math.sin(theta) * half
    return (cx - dx, cy - dy), (cx + dx, cy + dy)


def _rasterize_capsule(size, cx, cy, length_px, width_px, theta) -> np.ndarray:
    """Pixel centers within width/2 of the capsule axis segment."""
    r = width_px / 2.0
    (x0, y0), (x1, y1) = _capsule_endpoints(cx, cy, length_px, width_px, theta)
    lo_c = max(0, int(math.floor(min(x0, x1) - r - 1)))
    hi_c = min(size - 1, int(math.ceil(max(x0, x1) + r + 1)))
    lo_r = max(0, int(math.floor(min(y0, y1) - r - 1)))
    hi_r = min(size - 1, int(math.ceil(max(y0, y1) + r + 1)))
    cols, rows = np.meshgrid(
        np.arange(lo_c, hi_c + 1, dtype=np.float64),
        np.arange(lo_r, hi_r + 1, dtype=np.float64),
    )
    ax, ay = x1 - x0, y1 - y0
    seg_len2 = ax * ax + ay * ay
    if seg_len2 == 0:
        dist = np.hypot(cols - x0, rows - y0)
    else:
        t = np.clip(((cols - x0) * ax + (rows - y0) * ay) / seg_len2, 0.0, 1.0)
        dist = np.hypot(cols - (x0 + t * ax), rows - (y0 + t * ay))
    window = dist <= r
    bitmap = np.zeros((size, size), dtype=bool)
    bitmap[lo_r : hi_r + 1, lo_c : hi_c + 1] = window
    return bitmap


def _normalize_angle_deg(theta: float) -> float:
    a = math.degrees(theta) % 180.0
    return a - 180.0 if a >= 90.0 else a


def generate_field(p: SynthParams) -> SyntheticField:
    """Place capsules by rejection sampling, rasterize, and add shot noise.

    Placement keeps every pair of capsules at least ``min_gap_px`` apart
    (measured between their continuous outlines) and every capsule at
    least ``edge_margin_px`` from the frame. Fails with the achieved count
    if a cell cannot be placed within the retry budget.
    """
    rng = np.random.default_rng(p.rng_seed)
    size = p.image_size_px
    pitch = p.pixel_pitch_um
    placed = []  # (cx, cy, L_px, W_px, theta, L_um, W_um)
    for i in range(p.n_cells):
        for _ in range(p.max_tries_per_cell):
            l_um = rng.uniform(*p.length_um_range)
            w_um = rng.uniform(*p.width_um_range)
            theta = rng.uniform(0.0, math.pi)
            l_px, w_px = l_um / pitch, w_um / pitch
            half = (l_px - w_px) / 2.0
            margin_x = p.edge_margin_px + w_px / 2.0 + half * abs(math.cos(theta))
            margin_y = p.edge_margin_px + w_px / 2.0 + half * abs(math.sin(theta))
            if margin_x * 2 >= size - 1 or margin_y * 2 >= size - 1:
                continue
            cx = rng.uniform(margin_x, size - 1 - margin_x)
            cy = rng.uniform(margin_y, size - 1 - margin_y)
            e0, e1 = _capsule_endpoints(cx, cy, l_px, w_px, theta)
            ok = True
            for qx, qy, ql, qw, qt, _, _ in placed:
                q0, q1 = _capsule_endpoints(qx, qy, ql, qw, qt)
                gap = _segment_distance(e0, e1, q0, q1) - w_px / 2.0 - qw / 2.0
                if gap < p.min_gap_px:
                    ok = False
                    break
            if ok:
                placed.append((cx, cy, l_px, w_px, theta, l_um, w_um))
                break
        else:
            raise SynthesisError(
                f"placed only {len(placed)} of {p.n_cells} cells "
                f"within {p.max_tries_per_cell} tries each; field too crowded"
            )

    clean = np.full((size, size), float(p.intensity_bg))
    bitmaps = []
    for cx, cy, l_px, w_px, theta, _, _ in placed:
        bm = _rasterize_capsule(size, cx, cy, l_px, w_px, theta)
        bitmaps.append(bm)
        clean[bm] = p.intensity_cell
    truth_masks = MaskSet.from_bitmaps(bitmaps, size, size)

    frames = []
    for _ in range(p.frames):
        if math.isinf(p.noise_scale):
            frames.append(Image(clean, pitch))
        else:
            counts = rng.poisson(clean * p.noise_scale).astype(np.float64)
            frames.append(Image(counts / p.noise_scale, pitch))
    stack = RasterStack(tuple(frames))

    annotations = AnnotationSet(
        points=tuple((cx, cy) for cx, cy, *_ in placed),
        image_id=f"synthetic-{p.rng_seed}",
    )
    features = tuple(
        CellFeatures(
            mask_id=i,
            mean_intensity=float(p.intensity_cell),
            length_um=l_um,
            width_um=w_um,
            volume_fl=volume(l_um, w_um),
            centroid_px=(cx, cy),
            angle_deg=_normalize_angle_deg(theta),
        )
        for i, (cx, cy, _, _, theta, l_um, w_um) in enumerate(placed)
    )
    return SyntheticField(
        stack=stack,
        clean=Image(clean, pitch),
        truth_masks=truth_masks,
        annotations=annotations,
        truth_features=features,
    )


def write_field(field: SyntheticField, out_dir) -> dict[str, Path]:
    """Write stack.tiff, masks.json, annotations.csv, and truth.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "stack": out / "stack.tiff",
        "masks": out / "masks.json",
        "annotations": out / "annotations.csv",
        "truth": out / "truth.csv",
    }
    write_stack(field.stack, paths["stack"], dtype=np.float32)
    save_masks(field.truth_masks, paths["masks"])
    write_annotations(field.annotations, paths["annotations"])
    write_features_csv(field.truth_features, paths["truth"])
    return paths
