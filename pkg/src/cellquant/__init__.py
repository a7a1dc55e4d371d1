"""Cell morphometry from multi-frame fluorescence raster scans.

The pipeline: read a raster-scan stack, average it, normalize, denoise,
propose instance masks (built-in proposer or imported mask files), refine
them through the six-step chain, and extract per-cell features (mean
intensity, length, width, capsule volume). A synthetic ground-truth
generator and a count-based error-rate evaluator close the loop for
verification.
"""

__version__ = "0.1.0"

from .bm3d import Bm3dParams, block_match, bm3d, bm3d_stage1
from .errors import (
    AnnotationError,
    CellquantError,
    ConfigError,
    ExternalSegmenterError,
    MaskFormatError,
    StackReadError,
    SynthesisError,
    UnmeasurableWidthError,
)
from .evaluation import (
    AnnotationSet,
    ErrorReport,
    evaluate,
    load_annotations,
    match_masks_to_points,
)
from .imgio import (
    DEFAULT_PIXEL_PITCH_UM,
    Image,
    RasterStack,
    normalize,
    read_stack,
    write_image,
    write_label_map,
    write_overlay,
    write_stack,
)
from .masks import Mask, MaskSet, load_masks, save_masks
from .morphometry import (
    CellFeatures,
    RotatedBox,
    avg_width,
    extract_features,
    fit_rotated_box,
    mean_intensity,
    volume,
)
from .postprocess import (
    PostprocessConfig,
    StructElem,
    close_masks,
    erosion_overlap_removal,
    filter_area,
    filter_intensity,
    nms,
    postprocess_pipeline,
    remove_contained,
    remove_edge_masks,
)
from .proposals import propose_masks_baseline, run_external_segmenter
from .stacking import stack_average
from .synthgen import SynthParams, SyntheticField, generate_field, write_field

__all__ = [
    "AnnotationError",
    "AnnotationSet",
    "Bm3dParams",
    "CellFeatures",
    "CellquantError",
    "ConfigError",
    "DEFAULT_PIXEL_PITCH_UM",
    "ErrorReport",
    "ExternalSegmenterError",
    "Image",
    "Mask",
    "MaskFormatError",
    "MaskSet",
    "PostprocessConfig",
    "RasterStack",
    "RotatedBox",
    "StackReadError",
    "StructElem",
    "SynthParams",
    "SyntheticField",
    "SynthesisError",
    "UnmeasurableWidthError",
    "avg_width",
    "block_match",
    "bm3d",
    "bm3d_stage1",
    "close_masks",
    "erosion_overlap_removal",
    "evaluate",
    "extract_features",
    "filter_area",
    "filter_intensity",
    "fit_rotated_box",
    "generate_field",
    "load_annotations",
    "load_masks",
    "match_masks_to_points",
    "mean_intensity",
    "nms",
    "normalize",
    "postprocess_pipeline",
    "propose_masks_baseline",
    "read_stack",
    "remove_contained",
    "remove_edge_masks",
    "run_external_segmenter",
    "save_masks",
    "stack_average",
    "volume",
    "write_field",
    "write_image",
    "write_label_map",
    "write_overlay",
    "write_stack",
]
