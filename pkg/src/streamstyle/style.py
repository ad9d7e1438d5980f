"""Band-based line styles: attribute mapping, shape patterns, directional
color patterns, and style transfer functions.

A :class:`LineStyle` is an ordered list of bands running from the
centerline outward, mirrored to both sides of the ribbon. Each band
controls its color (constant, colormap over an attribute, or a two-color
directional pattern), its width (fixed, attribute-driven, or a repeating
shape), and an optional depth offset that folds the band away from the
viewer to act as a depth-dependent halo.

Longitudinal patterns are driven by the periodic coordinate
``((x / l + phase) mod 1)`` where x is either arc length (constant-size
patterns) or integration time (pattern size tracks local speed). The
modulo is mathematical (result always in [0, 1), including for negative x
on upstream-traced halves), which keeps patterns continuous across the
seed. ``phase=0`` is the neutral setting; nonzero phase slides patterns
along the line for animation.

All objects here are immutable after construction and evaluation is pure,
so styles can be shared freely across render workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Union

import numpy as np

from .field import normalize01

__all__ = [
    "StyleError",
    "ColorMap",
    "COLORMAPS",
    "ShapeMappingFunction",
    "SHAPE_PRESETS",
    "ShapePattern",
    "DirectionalColorPattern",
    "ConstantColor",
    "ColormapColor",
    "PatternColor",
    "BandColorSource",
    "BandWidth",
    "BandSpec",
    "LineStyle",
    "TransferEntry",
    "LineStyleTransferFunction",
    "eval_shape_attribute",
    "eval_band_width",
    "eval_directional_pattern",
    "resolve_color",
    "select_style",
    "style_total_width",
    "wrap01",
    "BUILTIN_ATTRS",
]

BUILTIN_ATTRS = ("t", "s", "speed")


class StyleError(ValueError):
    """Invalid style construction."""


def wrap01(v: float) -> float:
    """Mathematical modulo 1: result in [0, 1) for any finite input."""
    r = v % 1.0
    # v fractionally below an integer can round the remainder up to 1.0.
    return r - 1.0 if r >= 1.0 else r


# ---------------------------------------------------------------------------
# Color maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ColorMap:
    """Piecewise-linear RGB map over [0, 1]. Stops are (u, (r, g, b)) with
    strictly increasing u, the first at 0 and the last at 1."""

    name: str
    stops: tuple[tuple[float, tuple[float, float, float]], ...]

    def __post_init__(self):
        us = [u for u, _ in self.stops]
        if len(us) < 2 or us[0] != 0.0 or us[-1] != 1.0:
            raise StyleError(f"colormap '{self.name}': stops must span 0..1, got {us}")
        if any(b <= a for a, b in zip(us, us[1:])):
            raise StyleError(f"colormap '{self.name}': stop positions must strictly increase")

    def eval(self, u):
        """RGB at u (scalar or array); input clamped to [0, 1]."""
        us = np.array([p for p, _ in self.stops])
        cols = np.array([c for _, c in self.stops])
        uq = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)
        out = np.stack([np.interp(uq, us, cols[:, i]) for i in range(3)], axis=-1)
        return out


COLORMAPS: dict[str, ColorMap] = {
    cm.name: cm
    for cm in [
        ColorMap("grayscale", ((0.0, (0.0, 0.0, 0.0)), (1.0, (1.0, 1.0, 1.0)))),
        ColorMap("blue_purple", (
            (0.0, (0.10, 0.20, 0.75)),
            (0.5, (0.38, 0.22, 0.78)),
            (1.0, (0.72, 0.22, 0.65)),
        )),
        ColorMap("yellow_green", (
            (0.0, (0.95, 0.93, 0.25)),
            (0.5, (0.55, 0.78, 0.22)),
            (1.0, (0.10, 0.50, 0.18)),
        )),
        ColorMap("heat", (
            (0.0, (0.05, 0.03, 0.02)),
            (0.4, (0.75, 0.15, 0.05)),
            (0.75, (0.98, 0.72, 0.10)),
            (1.0, (1.0, 0.98, 0.85)),
        )),
    ]
}


# ---------------------------------------------------------------------------
# Shape mapping functions and patterns
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShapeMappingFunction:
    """Piecewise-linear width profile over one pattern period.

    Control points map the periodic coordinate in [0, 1] to a width factor
    in [0, 1]; positions strictly increase from 0 to 1.
    """

    name: str
    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        ss = [s for s, _ in self.points]
        ws = [w for _, w in self.points]
        if len(ss) < 2 or ss[0] != 0.0 or ss[-1] != 1.0:
            raise StyleError(f"shape '{self.name}': control points must span 0..1")
        if any(b <= a for a, b in zip(ss, ss[1:])):
            raise StyleError(f"shape '{self.name}': control point positions must strictly increase")
        if any(w < 0.0 or w > 1.0 for w in ws):
            raise StyleError(f"shape '{self.name}': widths must lie in [0, 1]")

    def eval(self, sx: float) -> float:
        xs = [s for s, _ in self.points]
        ws = [w for _, w in self.points]
        sx = min(max(sx, 0.0), 1.0)
        j = 0
        while j + 2 < len(xs) and sx > xs[j + 1]:
            j += 1
        f = (sx - xs[j]) / (xs[j + 1] - xs[j])
        return ws[j] + (ws[j + 1] - ws[j]) * f


# Preset profiles; hand-placed approximations of the classic dash, arrow,
# droplet, and tadpole silhouettes, <= 8 control points each.
SHAPE_PRESETS: dict[str, ShapeMappingFunction] = {
    f.name: f
    for f in [
        ShapeMappingFunction("constant", ((0.0, 1.0), (1.0, 1.0))),
        ShapeMappingFunction("dash", ((0.0, 1.0), (0.55, 1.0), (0.6, 0.0), (1.0, 0.0))),
        ShapeMappingFunction("triangle_arrow", (
            (0.0, 0.0), (0.35, 1.0), (0.4, 0.25), (0.8, 0.25), (0.85, 0.0), (1.0, 0.0),
        )),
        ShapeMappingFunction("droplet", (
            (0.0, 0.0), (0.1, 0.7), (0.25, 1.0), (0.45, 0.75),
            (0.6, 0.35), (0.7, 0.1), (0.75, 0.0), (1.0, 0.0),
        )),
        ShapeMappingFunction("tadpole", (
            (0.0, 0.0), (0.08, 0.9), (0.2, 1.0), (0.35, 0.45),
            (0.55, 0.2), (0.8, 0.08), (0.9, 0.0), (1.0, 0.0),
        )),
    ]
}


@dataclass(frozen=True)
class ShapePattern:
    """Repeating width profile along the line.

    ``x_source`` selects the longitudinal coordinate: "arc_length" gives
    constant-size patterns, "integration_time" stretches patterns with
    local speed. ``l`` is the pattern period in the units of x_source.
    """

    mapping: ShapeMappingFunction
    l: float = 1.0
    x_source: str = "arc_length"
    phase: float = 0.0

    def __post_init__(self):
        if self.l <= 0:
            raise StyleError(f"shape pattern length must be > 0, got {self.l}")
        if self.x_source not in ("arc_length", "integration_time"):
            raise StyleError(f"unknown x_source {self.x_source!r}")
        if not 0.0 <= self.phase < 1.0:
            raise StyleError(f"phase must lie in [0, 1), got {self.phase}")


def eval_shape_attribute(x: float, l: float, phase: float = 0.0) -> float:
    """Periodic longitudinal coordinate ((x / l + phase) mod 1) in [0, 1)."""
    if l <= 0:
        raise StyleError(f"pattern length must be > 0, got {l}")
    return wrap01(x / l + phase)


# ---------------------------------------------------------------------------
# Band color sources
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantColor:
    rgb: tuple[float, float, float]


@dataclass(frozen=True)
class ColormapColor:
    colormap: str
    channel: str                       # grid channel or builtin t / s / speed


@dataclass(frozen=True)
class DirectionalColorPattern:
    """Two-color procedural band texture conveying direction.

    The decision value ``((x / l + phase + a * b**c) mod 1) - w`` slants
    the color boundary across the band: ``a`` is the slope steepness,
    ``c > 0`` its curvature, and ``w`` the relative width of color A.
    Fragments with a negative decision value take color A, the rest
    color B.
    """

    color_a: Union[ConstantColor, ColormapColor]
    color_b: Union[ConstantColor, ColormapColor]
    l: float = 1.0
    a: float = 0.0
    c: float = 1.0
    w: float = 0.5
    x_source: str = "arc_length"
    phase: float = 0.0

    def __post_init__(self):
        if self.l <= 0:
            raise StyleError(f"pattern length must be > 0, got {self.l}")
        if self.c <= 0:
            raise StyleError(f"slope exponent c must be > 0, got {self.c}")
        if not 0.0 <= self.w <= 1.0:
            raise StyleError(f"relative color width w must lie in [0, 1], got {self.w}")
        if self.x_source not in ("arc_length", "integration_time"):
            raise StyleError(f"unknown x_source {self.x_source!r}")
        for side, col in (("color_a", self.color_a), ("color_b", self.color_b)):
            if not isinstance(col, (ConstantColor, ColormapColor)):
                raise StyleError(f"{side} must be a constant or colormap source "
                                 "(patterns cannot nest inside patterns)")


@dataclass(frozen=True)
class PatternColor:
    pattern: DirectionalColorPattern


BandColorSource = Union[ConstantColor, ColormapColor, PatternColor]


def eval_directional_pattern(p: DirectionalColorPattern, x: float, b: float) -> str:
    """Pick 'A' or 'B' for longitudinal position x and lateral position b in [0, 1]."""
    fd = wrap01(x / p.l + p.phase + p.a * b**p.c) - p.w
    return "A" if fd < 0.0 else "B"


def resolve_color(src: BandColorSource, norm_attrs: Mapping[str, float],
                  x_values: Mapping[str, float], b: float = 0.0,
                  colormaps: Mapping[str, ColorMap] | None = None) -> np.ndarray:
    """Evaluate a band color source to RGB in [0, 1].

    ``norm_attrs`` maps attribute names (grid channels plus t/s/speed) to
    their normalized [0, 1] values at the fragment; ``x_values`` provides
    the raw longitudinal coordinates {'t': ..., 's': ...} for patterns.
    ``colormaps`` defaults to the built-in registry.
    """
    if isinstance(src, ConstantColor):
        return np.asarray(src.rgb, dtype=np.float64)
    if isinstance(src, ColormapColor):
        cmap = (colormaps if colormaps is not None else COLORMAPS).get(src.colormap)
        if cmap is None:
            raise StyleError(f"unknown colormap {src.colormap!r}")
        if src.channel not in norm_attrs:
            raise StyleError(f"unknown attribute channel {src.channel!r}")
        return np.asarray(cmap.eval(norm_attrs[src.channel]), dtype=np.float64)
    if isinstance(src, PatternColor):
        p = src.pattern
        x = x_values["s"] if p.x_source == "arc_length" else x_values["t"]
        sel = eval_directional_pattern(p, x, b)
        return resolve_color(p.color_a if sel == "A" else p.color_b,
                             norm_attrs, x_values, b, colormaps)
    raise StyleError(f"unknown color source {src!r}")


# ---------------------------------------------------------------------------
# Bands and styles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BandWidth:
    """Band width range with an optional driver.

    driver is None (always w_max), a channel name (lerp w_min..w_max by the
    normalized attribute), or a :class:`ShapePattern` (lerp by the shape
    profile at the periodic coordinate).
    """

    w_min: float = 0.0
    w_max: float = 1.0
    driver: Union[None, str, ShapePattern] = None

    def __post_init__(self):
        if not (0.0 <= self.w_min <= 1.0 and 0.0 <= self.w_max <= 1.0):
            raise StyleError(f"band widths must lie in [0, 1], got ({self.w_min}, {self.w_max})")
        if self.w_min > self.w_max:
            raise StyleError(f"w_min {self.w_min} exceeds w_max {self.w_max}")
        if self.w_max <= 0.0:
            raise StyleError("w_max must be > 0")


@dataclass(frozen=True)
class BandSpec:
    """One band of a line style (mirrored to both sides of the centerline)."""

    color: BandColorSource
    width: BandWidth = field(default_factory=BandWidth)
    depth_offset: float = 0.0
    is_halo: bool = False

    def __post_init__(self):
        if self.depth_offset < 0:
            raise StyleError(f"depth_offset must be >= 0, got {self.depth_offset}")
        if not self.is_halo and self.depth_offset != 0.0:
            raise StyleError("depth_offset is only meaningful on halo bands")


@dataclass(frozen=True)
class LineStyle:
    """Ordered bands from the centerline outward."""

    id: str
    bands: tuple[BandSpec, ...]

    def __post_init__(self):
        if len(self.bands) < 1:
            raise StyleError(f"style '{self.id}' needs at least one band")

    @property
    def max_total_width(self) -> float:
        return style_total_width(self)

    def with_phase(self, phase: float) -> "LineStyle":
        """Copy of the style with every pattern phase overridden (animation)."""
        new_bands = []
        for b in self.bands:
            width = b.width
            if isinstance(width.driver, ShapePattern):
                width = replace(width, driver=replace(width.driver, phase=phase))
            color = b.color
            if isinstance(color, PatternColor):
                color = PatternColor(replace(color.pattern, phase=phase))
            new_bands.append(replace(b, width=width, color=color))
        return LineStyle(self.id, tuple(new_bands))


def style_total_width(style: LineStyle) -> float:
    """Sum of band maximum widths: the style's half-strip extent in width units."""
    return float(sum(b.width.w_max for b in style.bands))


def eval_band_width(band: BandSpec, s_x: float = 0.0, norm_attr: float = 0.0) -> float:
    """Current width of a band given the periodic coordinate and/or the
    normalized driving attribute (whichever its driver consumes)."""
    w = band.width
    if w.driver is None:
        return w.w_max
    if isinstance(w.driver, str):
        return w.w_min + (w.w_max - w.w_min) * norm_attr
    return w.w_min + (w.w_max - w.w_min) * w.driver.mapping.eval(s_x)


# ---------------------------------------------------------------------------
# Line style transfer functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransferEntry:
    lo: float
    hi: float
    style_id: str


@dataclass(frozen=True)
class LineStyleTransferFunction:
    """Maps ranges of a normalized guiding attribute to whole line styles.

    Ranges are half-open [lo, hi); as the one exception, hi == 1 is treated
    as closed so the normalized maximum does not fall through to the
    default. Selection is a hard switch with no blending.
    """

    guiding_attribute: str             # channel name or builtin t / s / speed
    entries: tuple[TransferEntry, ...] = ()
    default_style: str = ""

    def __post_init__(self):
        for e in self.entries:
            if not e.lo < e.hi:
                raise StyleError(f"transfer range [{e.lo}, {e.hi}) is empty")
        es = sorted(self.entries, key=lambda e: e.lo)
        for a, b in zip(es, es[1:]):
            if b.lo < a.hi:
                raise StyleError(
                    f"transfer ranges [{a.lo}, {a.hi}) and [{b.lo}, {b.hi}) overlap"
                )

    def validate_against(self, styles: Mapping[str, LineStyle]) -> None:
        for e in self.entries:
            if e.style_id not in styles:
                raise StyleError(f"transfer entry references unknown style {e.style_id!r}")
        if self.default_style not in styles:
            raise StyleError(f"default style {self.default_style!r} is not registered")

    @staticmethod
    def single(style_id: str) -> "LineStyleTransferFunction":
        """Trivial transfer function applying one style everywhere."""
        return LineStyleTransferFunction(guiding_attribute="s", entries=(),
                                         default_style=style_id)


def select_style(tf: LineStyleTransferFunction, styles: Mapping[str, LineStyle],
                 norm_guiding: float) -> LineStyle:
    """First entry whose range contains the value, else the default style."""
    for e in tf.entries:
        if e.lo <= norm_guiding < e.hi or (norm_guiding == e.hi == 1.0):
            return styles[e.style_id]
    return styles[tf.default_style]


def referenced_styles(tf: LineStyleTransferFunction) -> list[str]:
    ids = [e.style_id for e in tf.entries]
    if tf.default_style not in ids:
        ids.append(tf.default_style)
    return ids


def referenced_channels(styles: Mapping[str, LineStyle],
                        tf: LineStyleTransferFunction) -> list[str]:
    """Grid channels (non-builtin attributes) the styles and transfer
    function actually consume, in stable order."""
    names: list[str] = []

    def _add(ch: str):
        if ch not in BUILTIN_ATTRS and ch not in names:
            names.append(ch)

    def _color(src):
        if isinstance(src, ColormapColor):
            _add(src.channel)
        elif isinstance(src, PatternColor):
            _color(src.pattern.color_a)
            _color(src.pattern.color_b)

    for sid in referenced_styles(tf):
        for band in styles[sid].bands:
            _color(band.color)
            if isinstance(band.width.driver, str):
                _add(band.width.driver)
    _add(tf.guiding_attribute)
    return names


def normalize01_named(name: str, raw: float,
                      ranges: Mapping[str, tuple[float, float]]) -> float:
    """Normalize a raw attribute by its (lo, hi) range; unknown names raise."""
    if name not in ranges:
        raise StyleError(f"no normalization range for attribute {name!r}")
    lo, hi = ranges[name]
    return normalize01(raw, lo, hi)
