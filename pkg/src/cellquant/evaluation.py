"""Count-based error rate of a mask set against manual point annotations.

A point lies in a mask when the pixel containing it is set (a pixel spans
the half-open unit square around its center). Matching is greedy and
one-to-one: masks are visited in row-major centroid order so the result
does not depend on mask ids or annotation order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AnnotationError
from .masks import MaskSet


@dataclass(frozen=True)
class AnnotationSet:
    """Manually marked cell locations, (x, y) in pixels."""

    points: tuple[tuple[float, float], ...]
    image_id: str = ""

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.points)
        if len(set(pts)) != len(pts):
            raise AnnotationError("annotation set contains duplicate points")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class ErrorReport:
    """Tallies behind the error rate.

    wrong_position counts masks matched to no point (or surplus masks on
    already-claimed points); missed counts points covered by no mask.
    """

    total_cells: int
    matched: int
    wrong_position: int
    missed: int
    error_rate: float


def _containing_pixel(x: float, y: float) -> tuple[int, int]:
    return int(np.floor(y + 0.5)), int(np.floor(x + 0.5))


def match_masks_to_points(ms: MaskSet, ann: AnnotationSet) -> list[tuple[int, int]]:
    """Greedy one-to-one (mask_id, point_index) matches.

    Masks are processed by ascending (centroid row, centroid column). A
    mask claims the single unclaimed point inside it; with several
    unclaimed points it claims the one nearest its centroid (ties broken
    by point coordinates, then index) and leaves the rest available.
    """
    pixels = []
    for i, (x, y) in enumerate(ann.points):
        r, c = _containing_pixel(x, y)
        if not (0 <= r < ms.height and 0 <= c < ms.width):
            raise AnnotationError(f"point {i} at ({x}, {y}) lies outside the {ms.width}x{ms.height} image")
        pixels.append((r, c))
    centroids = {}
    for m in ms.masks:
        rows, cols = np.nonzero(m.bitmap)
        centroids[m.id] = (float(rows.mean()), float(cols.mean()))
    order = sorted(ms.masks, key=lambda m: centroids[m.id])
    claimed = [False] * len(ann.points)
    pairs: list[tuple[int, int]] = []
    for m in order:
        inside = [
            i
            for i, (r, c) in enumerate(pixels)
            if not claimed[i] and m.bitmap[r, c]
        ]
        if not inside:
            continue
        cy, cx = centroids[m.id]
        best = min(
            inside,
            key=lambda i: (
                (ann.points[i][0] - cx) ** 2 + (ann.points[i][1] - cy) ** 2,
                ann.points[i][1],
                ann.points[i][0],
                i,
            ),
        )
        claimed[best] = True
        pairs.append((m.id, best))
    return pairs


def evaluate(ms: MaskSet, ann: AnnotationSet) -> ErrorReport:
    """Error rate = (wrong-position masks + missed points) / total points."""
    if len(ann.points) == 0:
        raise AnnotationError("cannot evaluate against an empty annotation set")
    pairs = match_masks_to_points(ms, ann)
    total = len(ann.points)
    matched = len(pairs)
    wrong = len(ms) - matched
    missed = total - matched
    return ErrorReport(
        total_cells=total,
        matched=matched,
        wrong_position=wrong,
        missed=missed,
        error_rate=(wrong + missed) / total,
    )


def format_report(report: ErrorReport) -> str:
    return (
        f"error rate {report.error_rate * 100:.2f}% "
        f"(wrong_position={report.wrong_position}, missed={report.missed}, "
        f"matched={report.matched}, total={report.total_cells})"
    )


def write_report_csv(report: ErrorReport, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["total_cells", "matched", "wrong_position", "missed", "error_rate"])
        writer.writerow(
            [
                report.total_cells,
                report.matched,
                report.wrong_position,
                report.missed,
                f"{report.error_rate:.6f}",
            ]
        )


def load_annotations(path) -> AnnotationSet:
    """Read an annotations CSV with header ``x_px,y_px``."""
    path = Path(path)
    if not path.exists():
        raise AnnotationError(f"annotation file not found: {path}")
    points = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["x_px", "y_px"]:
            raise AnnotationError(f"{path}: expected header 'x_px,y_px', got {header}")
        for row_num, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise AnnotationError(f"{path}: row {row_num} has {len(row)} columns, expected 2")
            try:
                points.append((float(row[0]), float(row[1])))
            except ValueError as exc:
                raise AnnotationError(f"{path}: row {row_num} is not numeric: {row}") from exc
    try:
        return AnnotationSet(points=tuple(points), image_id=path.stem)
    except AnnotationError as exc:
        raise AnnotationError(f"{path}: {exc}") from exc


def write_annotations(ann: AnnotationSet, path) -> None:
    """Write points with full float precision so a reload is exact."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x_px", "y_px"])
        for x, y in ann.points:
            writer.writerow([repr(x), repr(y)])
