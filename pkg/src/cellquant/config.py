"""Pipeline configuration: defaults, INI-style files, and CLI overrides.

Files are UTF-8 ``key = value`` lines under bracketed section headers.
Precedence is CLI flag > config file > built-in default. A written config
parses back to an identical value, so manifests can reproduce runs.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

from .bm3d import Bm3dParams
from .errors import ConfigError
from .imgio import DEFAULT_PIXEL_PITCH_UM
from .postprocess import PostprocessConfig, StructElem
from .synthgen import SynthParams

PROPOSERS = ("baseline", "external")


@dataclass(frozen=True)
class PipelineConfig:
    """Every module's settings plus the proposer choice."""

    pixel_pitch_um: float = DEFAULT_PIXEL_PITCH_UM
    normalize_lo_pct: float = 0.1
    normalize_hi_pct: float = 99.9
    proposer: str = "baseline"
    grid_n: int = 32
    segmenter_cmd: str = ""
    denoise: Bm3dParams = field(default_factory=Bm3dParams)
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)
    synth: SynthParams = field(default_factory=SynthParams)

    def __post_init__(self):
        if self.proposer not in PROPOSERS:
            raise ConfigError(f"proposer must be one of {PROPOSERS}, got {self.proposer!r}")
        if not (0 <= self.normalize_lo_pct < self.normalize_hi_pct <= 100):
            raise ConfigError("need 0 <= normalize_lo_pct < normalize_hi_pct <= 100")
        if not self.pixel_pitch_um > 0:
            raise ConfigError("pixel_pitch_um must be positive")
        if self.grid_n < 1:
            raise ConfigError("grid_n must be >= 1")


def _pitch(cfg: PipelineConfig) -> float:
    return cfg.pixel_pitch_um


# (section, key) -> (getter, setter-path builder, type). Tuples keep parsing,
# writing, and the manifest dictionary in lockstep.
def _schema():
    return {
        ("image", "pixel_pitch_um"): (float, _pitch, lambda c, v: replace(c, pixel_pitch_um=v)),
        ("image", "normalize_lo_pct"): (
            float,
            lambda c: c.normalize_lo_pct,
            lambda c, v: replace(c, normalize_lo_pct=v),
        ),
        ("image", "normalize_hi_pct"): (
            float,
            lambda c: c.normalize_hi_pct,
            lambda c, v: replace(c, normalize_hi_pct=v),
        ),
        ("proposals", "proposer"): (str, lambda c: c.proposer, lambda c, v: replace(c, proposer=v)),
        ("proposals", "grid_n"): (int, lambda c: c.grid_n, lambda c, v: replace(c, grid_n=v)),
        ("proposals", "segmenter_cmd"): (
            str,
            lambda c: c.segmenter_cmd,
            lambda c, v: replace(c, segmenter_cmd=v),
        ),
        ("denoise", "sigma"): (float, lambda c: c.denoise.sigma, _den("sigma", float)),
        ("denoise", "block"): (int, lambda c: c.denoise.block, _den("block", int)),
        ("denoise", "search_window"): (
            int,
            lambda c: c.denoise.search_window,
            _den("search_window", int),
        ),
        ("denoise", "max_group"): (int, lambda c: c.denoise.max_group, _den("max_group", int)),
        ("denoise", "match_step"): (int, lambda c: c.denoise.match_step, _den("match_step", int)),
        ("denoise", "hard_tau"): (float, lambda c: c.denoise.hard_tau, _den("hard_tau", float)),
        ("denoise", "match_thresh_stage1"): (
            float,
            lambda c: c.denoise.match_thresh_stage1,
            _den("match_thresh_stage1", float),
        ),
        ("denoise", "match_thresh_stage2"): (
            float,
            lambda c: c.denoise.match_thresh_stage2,
            _den("match_thresh_stage2", float),
        ),
        ("postprocess", "min_area_px"): (
            int,
            lambda c: c.postprocess.min_area_px,
            _post("min_area_px", int),
        ),
        ("postprocess", "max_area_px"): (
            int,
            lambda c: c.postprocess.max_area_px,
            _post("max_area_px", int),
        ),
        ("postprocess", "intensity_lo"): (
            float,
            lambda c: c.postprocess.intensity_lo,
            _post("intensity_lo", float),
        ),
        ("postprocess", "intensity_hi"): (
            float,
            lambda c: c.postprocess.intensity_hi,
            _post("intensity_hi", float),
        ),
        ("postprocess", "iou_thresh"): (
            float,
            lambda c: c.postprocess.iou_thresh,
            _post("iou_thresh", float),
        ),
        ("postprocess", "border_px"): (
            int,
            lambda c: c.postprocess.border_px,
            _post("border_px", int),
        ),
        ("postprocess", "erosion_shape"): (
            str,
            lambda c: c.postprocess.erosion_elem.shape,
            _elem("erosion_elem", "shape", str),
        ),
        ("postprocess", "erosion_radius"): (
            int,
            lambda c: c.postprocess.erosion_elem.radius,
            _elem("erosion_elem", "radius", int),
        ),
        ("postprocess", "closing_shape"): (
            str,
            lambda c: c.postprocess.closing_elem.shape,
            _elem("closing_elem", "shape", str),
        ),
        ("postprocess", "closing_radius"): (
            int,
            lambda c: c.postprocess.closing_elem.radius,
            _elem("closing_elem", "radius", int),
        ),
        ("synth", "image_size_px"): (
            int,
            lambda c: c.synth.image_size_px,
            _syn("image_size_px", int),
        ),
        ("synth", "pixel_pitch_um"): (
            float,
            lambda c: c.synth.pixel_pitch_um,
            _syn("pixel_pitch_um", float),
        ),
        ("synth", "n_cells"): (int, lambda c: c.synth.n_cells, _syn("n_cells", int)),
        ("synth", "length_um_min"): (
            float,
            lambda c: c.synth.length_um_range[0],
            lambda c, v: replace(
                c, synth=replace(c.synth, length_um_range=(v, c.synth.length_um_range[1]))
            ),
        ),
        ("synth", "length_um_max"): (
            float,
            lambda c: c.synth.length_um_range[1],
            lambda c, v: replace(
                c, synth=replace(c.synth, length_um_range=(c.synth.length_um_range[0], v))
            ),
        ),
        ("synth", "width_um_min"): (
            float,
            lambda c: c.synth.width_um_range[0],
            lambda c, v: replace(
                c, synth=replace(c.synth, width_um_range=(v, c.synth.width_um_range[1]))
            ),
        ),
        ("synth", "width_um_max"): (
            float,
            lambda c: c.synth.width_um_range[1],
            lambda c, v: replace(
                c, synth=replace(c.synth, width_um_range=(c.synth.width_um_range[0], v))
            ),
        ),
        ("synth", "intensity_cell"): (
            float,
            lambda c: c.synth.intensity_cell,
            _syn("intensity_cell", float),
        ),
        ("synth", "intensity_bg"): (
            float,
            lambda c: c.synth.intensity_bg,
            _syn("intensity_bg", float),
        ),
        ("synth", "frames"): (int, lambda c: c.synth.frames, _syn("frames", int)),
        ("synth", "noise_scale"): (
            float,
            lambda c: c.synth.noise_scale,
            _syn("noise_scale", float),
        ),
        ("synth", "min_gap_px"): (float, lambda c: c.synth.min_gap_px, _syn("min_gap_px", float)),
        ("synth", "edge_margin_px"): (
            float,
            lambda c: c.synth.edge_margin_px,
            _syn("edge_margin_px", float),
        ),
        ("synth", "rng_seed"): (int, lambda c: c.synth.rng_seed, _syn("rng_seed", int)),
        ("synth", "max_tries_per_cell"): (
            int,
            lambda c: c.synth.max_tries_per_cell,
            _syn("max_tries_per_cell", int),
        ),
    }


def _den(name, _type):
    return lambda c, v: replace(c, denoise=replace(c.denoise, **{name: v}))


def _post(name, _type):
    return lambda c, v: replace(c, postprocess=replace(c.postprocess, **{name: v}))


def _syn(name, _type):
    return lambda c, v: replace(c, synth=replace(c.synth, **{name: v}))


def _elem(elem_field, attr, _type):
    def setter(c, v):
        elem = getattr(c.postprocess, elem_field)
        new_elem = StructElem(
            shape=v if attr == "shape" else elem.shape,
            radius=v if attr == "radius" else elem.radius,
        )
        return replace(c, postprocess=replace(c.postprocess, **{elem_field: new_elem}))

    return setter


def _format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_to_dict(cfg: PipelineConfig) -> dict[str, dict[str, str]]:
    """Normalized nested form used by config files and run manifests."""
    out: dict[str, dict[str, str]] = {}
    for (section, key), (_type, getter, _setter) in _schema().items():
        out.setdefault(section, {})[key] = _format_value(getter(cfg))
    return out


def write_config(cfg: PipelineConfig, path) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    for section, entries in config_to_dict(cfg).items():
        parser[section] = entries
    with Path(path).open("w", encoding="utf-8") as fh:
        parser.write(fh)


def load_config(path, base: PipelineConfig | None = None) -> PipelineConfig:
    """Parse an INI config onto ``base`` (default: built-in defaults).

    Unknown sections or keys are errors so typos surface immediately.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return _apply_parser(parser, base or PipelineConfig(), str(path))


def parse_config_text(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_file(io.StringIO(text))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    return _apply_parser(parser, base or PipelineConfig(), "<string>")


def _apply_parser(parser, cfg: PipelineConfig, source: str) -> PipelineConfig:
    schema = _schema()
    known_sections = {section for section, _ in schema}
    for section in parser.sections():
        if section not in known_sections:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            entry = schema.get((section, key))
            if entry is None:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            typ, _getter, setter = entry
            try:
                value = typ(raw)
            except ValueError as exc:
                raise ConfigError(
                    f"{source}: cannot parse [{section}] {key} = {raw!r} as {typ.__name__}"
                ) from exc
            try:
                cfg = setter(cfg, value)
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"{source}: invalid value for [{section}] {key}: {exc}") from exc
    return cfg


def apply_overrides(cfg: PipelineConfig, overrides: dict[tuple[str, str], object]) -> PipelineConfig:
    """Apply (section, key) -> value overrides (already typed), e.g. from CLI flags."""
    schema = _schema()
    for (section, key), value in overrides.items():
        entry = schema.get((section, key))
        if entry is None:
            raise ConfigError(f"unknown override [{section}] {key}")
        _typ, _getter, setter = entry
        try:
            cfg = setter(cfg, value)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"invalid override [{section}] {key}: {exc}") from exc
    return cfg
