"""Temporal averaging of repeated raster scans."""

from __future__ import annotations

import numpy as np

from .imgio import Image, RasterStack


def stack_average(stack: RasterStack) -> Image:
    """Per-pixel arithmetic mean of all frames.

    Dimensions and pixel pitch are preserved; summation is in float64 so
    no overflow handling is needed for realistic frame counts.
    """
    mean = np.mean(stack.as_array(), axis=0)
    return Image(mean, stack.pixel_pitch_um)
