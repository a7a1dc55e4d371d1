"""Initial mask proposals: a classical grid-seeded proposer and an adapter
for external segmenter executables.

The built-in proposer mirrors a grid-prompt protocol with classical
machinery: Otsu foreground, a smoothed-intensity plateau per cell, and a
marker-based watershed seeded at grid points. It exists so the pipeline
runs end to end without any ML tooling; exported mask files from heavier
segmenters enter through :func:`cellquant.masks.load_masks` or
:func:`run_external_segmenter`.
"""

from __future__ import annotations

import shlex
import subprocess
import tempfile
from pathlib import Path

import numpy as np
from scipy import ndimage
from skimage.filters import threshold_otsu
from skimage.segmentation import watershed

from .errors import ExternalSegmenterError
from .imgio import Image
from .masks import MaskSet, load_masks


def propose_masks_baseline(
    img: Image,
    grid_n: int = 32,
    smooth_size: int = 3,
    plateau_tol: float = 0.05,
    plateau_radius: int | None = None,
) -> MaskSet:
    """Propose one mask per watershed basin seeded from a point grid.

    The image is thresholded globally (Otsu) into foreground, and mean-
    filtered with a ``smooth_size`` window. Foreground pixels within
    ``plateau_tol`` of the local maximum over a ``plateau_radius`` disk
    form near-maximum plateaus; a grid of ``grid_n`` x ``grid_n`` points
    claims the plateau component nearest each point (within half the grid
    spacing). Watershed on the negated smoothed image, restricted to
    foreground and seeded with the claimed plateaus, yields the masks;
    empty basins are dropped. Deterministic for fixed input and settings.
    """
    if grid_n < 1:
        raise ValueError(f"grid_n must be >= 1, got {grid_n}")
    data = img.data
    h, w = data.shape
    if data.max() == data.min():
        return MaskSet(masks=(), width=w, height=h)
    fg = data > threshold_otsu(data)
    if not fg.any():
        return MaskSet(masks=(), width=w, height=h)
    smoothed = ndimage.uniform_filter(data, size=smooth_size)

    spacing = min(h, w) / grid_n
    if plateau_radius is None:
        plateau_radius = max(2, int(round(spacing / 2)))
    r = plateau_radius
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    footprint = (yy * yy + xx * xx) <= r * r
    local_max = ndimage.maximum_filter(smoothed, footprint=footprint)
    plateau = fg & (smoothed >= local_max - plateau_tol)
    labels, n_labels = ndimage.label(plateau, structure=np.ones((3, 3), dtype=int))
    if n_labels == 0:
        return MaskSet(masks=(), width=w, height=h)

    # Snap each grid point to the nearest plateau pixel within half a cell.
    dist, (near_r, near_c) = ndimage.distance_transform_edt(~plateau, return_indices=True)
    snap_radius = spacing / 2.0
    grid_rows = np.clip(((np.arange(grid_n) + 0.5) * h / grid_n).astype(int), 0, h - 1)
    grid_cols = np.clip(((np.arange(grid_n) + 0.5) * w / grid_n).astype(int), 0, w - 1)
    claimed = np.zeros(n_labels + 1, dtype=bool)
    for gr in grid_rows:
        for gc in grid_cols:
            if dist[gr, gc] <= snap_radius:
                claimed[labels[near_r[gr, gc], near_c[gr, gc]]] = True
    claimed[0] = False
    markers = np.where(claimed[labels], labels, 0)
    if not markers.any():
        return MaskSet(masks=(), width=w, height=h)

    basins = watershed(-smoothed, markers=markers, mask=fg)
    bitmaps = []
    for label_id in np.unique(basins):
        if label_id == 0:
            continue
        bm = basins == label_id
        if bm.any():
            bitmaps.append(bm)
    return MaskSet.from_bitmaps(bitmaps, w, h)


def run_external_segmenter(
    command_template: str,
    img_path,
    dims: tuple[int, int] | None = None,
    out_path=None,
    timeout: float | None = None,
) -> MaskSet:
    """Run an external segmenter command and load the masks it produces.

    ``command_template`` must contain ``{input}`` and ``{output}``
    placeholders; they are substituted per shell token, so paths with
    spaces survive. The child must create ``out_path`` (a file or
    directory ``load_masks`` understands); a temporary location is used
    when none is given. Nonzero exit status, a missing output, and mask
    decoding problems all surface as :class:`ExternalSegmenterError`
    (the child's stderr is included).
    """
    if "{input}" not in command_template or "{output}" not in command_template:
        raise ExternalSegmenterError(
            "command template must contain {input} and {output} placeholders"
        )
    img_path = Path(img_path)
    if not img_path.exists():
        raise ExternalSegmenterError(f"segmenter input not found: {img_path}")
    with tempfile.TemporaryDirectory(prefix="segmenter-") as tmp:
        target = Path(out_path) if out_path is not None else Path(tmp) / "masks.json"
        tokens = [
            t.replace("{input}", str(img_path)).replace("{output}", str(target))
            for t in shlex.split(command_template)
        ]
        try:
            result = subprocess.run(
                tokens, capture_output=True, text=True, timeout=timeout, check=False
            )
        except FileNotFoundError as exc:
            raise ExternalSegmenterError(f"segmenter executable not found: {tokens[0]}") from exc
        except subprocess.TimeoutExpired as exc:
            raise ExternalSegmenterError(f"segmenter timed out after {timeout}s") from exc
        if result.returncode != 0:
            raise ExternalSegmenterError(
                f"segmenter exited with code {result.returncode}; stderr: {result.stderr.strip()}"
            )
        if not target.exists():
            raise ExternalSegmenterError(f"segmenter produced no output at {target}")
        return load_masks(target, dims)
