"""Per-cell geometry: rotated-box length, quarter-split width, volume.

A pixel occupies the unit square around its center, so box fitting works
on pixel corners (a 1-px mask yields a 1x1 box, not a degenerate point).
Lengths are in pixels here; callers convert via the pixel pitch. Volume
uses the capsule model: a cylinder of diameter W and length L - W capped
by two hemispheres, with 1 um^3 = 1 fL.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import UnmeasurableWidthError
from .imgio import Image
from .masks import Mask, MaskSet


@dataclass(frozen=True)
class CellFeatures:
    """One measured cell; lengths in um, volume in fL, intensity in a.u."""

    mask_id: int
    mean_intensity: float
    length_um: float
    width_um: float
    volume_fl: float
    centroid_px: tuple[float, float]
    angle_deg: float


@dataclass(frozen=True)
class RotatedBox:
    """Minimum-area enclosing rectangle of a mask's pixel corners.

    ``corners`` are (x, y) in pixel units; ``angle_deg`` is the long-side
    orientation in [-90, 90).
    """

    length_px: float
    width_px: float
    angle_deg: float
    corners: np.ndarray


def _pixel_corner_points(bitmap: np.ndarray) -> np.ndarray:
    """Unique pixel-corner coordinates, doubled so they stay integers."""
    rows, cols = np.nonzero(bitmap)
    cc, rr = cols * 2, rows * 2
    pts = np.concatenate(
        [
            np.stack([cc - 1, rr - 1], axis=1),
            np.stack([cc + 1, rr - 1], axis=1),
            np.stack([cc - 1, rr + 1], axis=1),
            np.stack([cc + 1, rr + 1], axis=1),
        ]
    )
    return np.unique(pts, axis=0)


def _convex_hull(pts: np.ndarray) -> np.ndarray:
    """Monotone-chain hull of integer points, counterclockwise, no duplicates."""
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def half(iterable):
        chain: list[np.ndarray] = []
        for p in iterable:
            while len(chain) >= 2:
                o, a = chain[-2], chain[-1]
                cross = (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0])
                if cross <= 0:
                    chain.pop()
                else:
                    break
            chain.append(p)
        return chain

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def fit_rotated_box(m: Mask) -> RotatedBox:
    """Minimum-area rotated rectangle enclosing the mask's pixel corners.

    Computed by convex hull plus rotating calipers; the optimum is always
    flush with a hull edge, so every edge direction is tried and the
    smallest-area box wins (first minimal edge on ties).
    """
    hull2 = _convex_hull(_pixel_corner_points(m.bitmap)).astype(np.float64)
    edges = np.roll(hull2, -1, axis=0) - hull2
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    best = None
    for i in range(len(hull2)):
        ux, uy = edges[i, 0] / lengths[i], edges[i, 1] / lengths[i]
        su = hull2[:, 0] * ux + hull2[:, 1] * uy
        sn = hull2[:, 0] * -uy + hull2[:, 1] * ux
        du, dn = su.max() - su.min(), sn.max() - sn.min()
        area = du * dn
        if best is None or area < best[0]:
            best = (area, du, dn, ux, uy, su.min(), sn.min())
    _, du, dn, ux, uy, u0, n0 = best
    nx, ny = -uy, ux
    if du >= dn:
        length2, width2 = du, dn
        ax, ay = ux, uy
    else:
        length2, width2 = dn, du
        ax, ay = nx, ny
    angle = math.degrees(math.atan2(ay, ax))
    if angle >= 90.0:
        angle -= 180.0
    elif angle < -90.0:
        angle += 180.0
    corners2 = np.array(
        [
            [u0 * ux + n0 * nx, u0 * uy + n0 * ny],
            [(u0 + du) * ux + n0 * nx, (u0 + du) * uy + n0 * ny],
            [(u0 + du) * ux + (n0 + dn) * nx, (u0 + du) * uy + (n0 + dn) * ny],
            [u0 * ux + (n0 + dn) * nx, u0 * uy + (n0 + dn) * ny],
        ]
    )
    return RotatedBox(
        length_px=length2 / 2.0,
        width_px=width2 / 2.0,
        angle_deg=angle,
        corners=corners2 / 2.0,
    )


def avg_width(m: Mask, box: RotatedBox) -> float:
    """Average width over the middle two of four equal sections along the box.

    Mask pixel centers are rotated into the box frame; the length axis is
    split into four equal sections, and over the middle two the foreground
    extent (max - min + 1 along the width axis) is averaged per unit-length
    column. The result is clipped to the box's short side. Raises
    :class:`UnmeasurableWidthError` when the middle sections are empty.
    """
    theta = math.radians(box.angle_deg)
    ux, uy = math.cos(theta), math.sin(theta)
    nx, ny = -uy, ux
    rows, cols_px = np.nonzero(m.bitmap)
    s = cols_px * ux + rows * uy
    t = cols_px * nx + rows * ny
    cu = box.corners[:, 0] * ux + box.corners[:, 1] * uy
    s_rel = s - cu.min()
    quarter = box.length_px / 4.0
    sel = (s_rel >= quarter) & (s_rel < 3.0 * quarter)
    if not np.any(sel):
        raise UnmeasurableWidthError(
            f"mask {m.id}: no pixels in the middle sections of the fitted box"
        )
    cols = np.floor(s_rel[sel] - quarter).astype(np.int64)
    t_sel = t[sel]
    order = np.argsort(cols, kind="stable")
    cols, t_sel = cols[order], t_sel[order]
    bounds = np.flatnonzero(np.diff(cols)) + 1
    extents = [seg.max() - seg.min() + 1.0 for seg in np.split(t_sel, bounds)]
    width = float(np.mean(extents))
    return min(width, box.width_px)


def volume(length_um: float, width_um: float) -> float:
    """Capsule volume in fL: cylinder of length L - W plus two hemispheres."""
    if not width_um > 0:
        raise ValueError(f"width must be positive, got {width_um}")
    if length_um < width_um:
        raise ValueError(f"length {length_um} is smaller than width {width_um}")
    r = width_um / 2.0
    return math.pi * r * r * (length_um - width_um) + (4.0 / 3.0) * math.pi * r**3


def mean_intensity(m: Mask, stacked: Image) -> float:
    """Mean stacked-image value over the mask's pixels."""
    if m.bitmap.shape != stacked.data.shape:
        raise ValueError("mask and image dimensions differ")
    return float(stacked.data[m.bitmap].mean())


@dataclass(frozen=True)
class FeatureFailure:
    mask_id: int
    message: str


def extract_features(
    ms: MaskSet, stacked: Image, pixel_pitch_um: float | None = None
) -> tuple[list[CellFeatures], list[FeatureFailure]]:
    """Measure every mask on the stacked image; one record per mask, id order.

    Pixel lengths convert to um via ``pixel_pitch_um`` (default: the
    stacked image's pitch). Masks whose width cannot be measured become
    failure entries instead of aborting the batch.
    """
    pitch = stacked.pixel_pitch_um if pixel_pitch_um is None else pixel_pitch_um
    features: list[CellFeatures] = []
    failures: list[FeatureFailure] = []
    for m in ms.masks:
        box = fit_rotated_box(m)
        try:
            width_px = avg_width(m, box)
        except UnmeasurableWidthError as exc:
            failures.append(FeatureFailure(mask_id=m.id, message=str(exc)))
            continue
        rows, cols = np.nonzero(m.bitmap)
        features.append(
            CellFeatures(
                mask_id=m.id,
                mean_intensity=mean_intensity(m, stacked),
                length_um=box.length_px * pitch,
                width_um=width_px * pitch,
                volume_fl=volume(box.length_px * pitch, width_px * pitch),
                centroid_px=(float(cols.mean()), float(rows.mean())),
                angle_deg=box.angle_deg,
            )
        )
    return features, failures


def write_features_csv(features, path) -> None:
    """Write the per-cell feature table (6 decimal places, UTF-8, header row)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "mask_id",
                "centroid_x_px",
                "centroid_y_px",
                "angle_deg",
                "mean_intensity_au",
                "length_um",
                "width_um",
                "volume_fl",
            ]
        )
        for f in features:
            writer.writerow(
                [
                    f.mask_id,
                    f"{f.centroid_px[0]:.6f}",
                    f"{f.centroid_px[1]:.6f}",
                    f"{f.angle_deg:.6f}",
                    f"{f.mean_intensity:.6f}",
                    f"{f.length_um:.6f}",
                    f"{f.width_um:.6f}",
                    f"{f.volume_fl:.6f}",
                ]
            )
