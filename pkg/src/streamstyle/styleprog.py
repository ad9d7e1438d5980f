"""Compilation of style objects into flat numeric tables.

The rasterizer's fragment loop cannot walk Python objects, so a styleset
plus transfer function is compiled once per scene into a
:class:`StyleProgram`: contiguous arrays describing every band (widths,
drivers, color sources, halo offsets), the colormap and shape-profile
control points, and the transfer-function ranges. Attribute references
become slot indices into the interpolated per-fragment attribute vector
``[u, t, s, speed, centerline_depth, channels...]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Mapping, Sequence

import numpy as np

from .style import (
    COLORMAPS,
    BandSpec,
    ColorMap,
    ColormapColor,
    ConstantColor,
    LineStyle,
    LineStyleTransferFunction,
    PatternColor,
    ShapePattern,
    StyleError,
    referenced_channels,
    referenced_styles,
    style_total_width,
)

# Attribute slots in the interpolated fragment vector.
SLOT_U = 0
SLOT_T = 1
SLOT_S = 2
SLOT_SPEED = 3
SLOT_CDEPTH = 4
SLOT_CH0 = 5

# band_f columns
FW_MIN, FW_MAX, FW_ALO, FW_AHI = 0, 1, 2, 3
FSH_L, FSH_PHASE = 4, 5
FD_OFF = 6
FC_R, FC_G, FC_B, FC_ALO, FC_AHI = 7, 8, 9, 10, 11
FP_L, FP_A, FP_C, FP_W, FP_PH = 12, 13, 14, 15, 16
FPA_R, FPA_G, FPA_B, FPA_ALO, FPA_AHI = 17, 18, 19, 20, 21
FPB_R, FPB_G, FPB_B, FPB_ALO, FPB_AHI = 22, 23, 24, 25, 26
NF = 27

# band_i columns
IW_DRV, IW_SLOT = 0, 1
ISH_OFF, ISH_LEN, ISH_XSRC = 2, 3, 4
IHALO = 5
IC_KIND, IC_CM_OFF, IC_CM_LEN, IC_SLOT = 6, 7, 8, 9
IP_XSRC = 10
IPA_KIND, IPA_CM_OFF, IPA_CM_LEN, IPA_SLOT = 11, 12, 13, 14
IPB_KIND, IPB_CM_OFF, IPB_CM_LEN, IPB_SLOT = 15, 16, 17, 18
NI = 19


@dataclass
class StyleProgram:
    """Flat-table form of a styleset + transfer function."""

    style_ids: list[str]
    channel_names: list[str]
    width_units: float                 # strip footprint in band-width units
    attr_ranges: dict[str, tuple[float, float]]

    tf_lo: np.ndarray
    tf_hi: np.ndarray
    tf_sid: np.ndarray
    tf_default: int
    guide_slot: int
    guide_lo: float
    guide_hi: float

    sty_start: np.ndarray              # (S+1,) CSR over bands
    sty_wtotal: np.ndarray             # (S,)
    band_f: np.ndarray                 # (B, NF) float64
    band_i: np.ndarray                 # (B, NI) int32
    cm_pos: np.ndarray
    cm_r: np.ndarray
    cm_g: np.ndarray
    cm_b: np.ndarray
    shp_x: np.ndarray
    shp_w: np.ndarray

    def kernel_args(self):
        """Tables in the order the raster kernels expect."""
        return (
            self.tf_lo, self.tf_hi, self.tf_sid, self.tf_default,
            self.guide_slot, self.guide_lo, self.guide_hi,
            self.sty_start, self.band_f, self.band_i,
            self.cm_pos, self.cm_r, self.cm_g, self.cm_b,
            self.shp_x, self.shp_w,
        )


def _slot(name: str, channel_names: Sequence[str]) -> int:
    builtin = {"t": SLOT_T, "s": SLOT_S, "speed": SLOT_SPEED}
    if name in builtin:
        return builtin[name]
    try:
        return SLOT_CH0 + list(channel_names).index(name)
    except ValueError:
        raise StyleError(f"attribute {name!r} is not among the carried channels "
                         f"{list(channel_names)}") from None


class _Tables:
    """Accumulators for colormap stops and shape control points."""

    def __init__(self):
        self.cm_pos: list[float] = []
        self.cm_rgb: list[tuple[float, float, float]] = []
        self.shp_x: list[float] = []
        self.shp_w: list[float] = []

    def add_cmap(self, cmap: ColorMap) -> tuple[int, int]:
        off = len(self.cm_pos)
        for u, rgb in cmap.stops:
            self.cm_pos.append(float(u))
            self.cm_rgb.append(tuple(float(c) for c in rgb))
        return off, len(cmap.stops)

    def add_shape(self, pts) -> tuple[int, int]:
        off = len(self.shp_x)
        for sx, w in pts:
            self.shp_x.append(float(sx))
            self.shp_w.append(float(w))
        return off, len(pts)


def _pack_source(src, bf, bi, tables, colormaps, channel_names, ranges,
                 f_rgb, f_alo, f_ahi, i_kind, i_off, i_len, i_slot):
    """Fill one constant-or-colormap color source into a band row."""
    if isinstance(src, ConstantColor):
        bi[i_kind] = 0
        bf[f_rgb], bf[f_rgb + 1], bf[f_rgb + 2] = (float(c) for c in src.rgb)
    elif isinstance(src, ColormapColor):
        cmap = colormaps.get(src.colormap)
        if cmap is None:
            raise StyleError(f"unknown colormap {src.colormap!r}")
        bi[i_kind] = 1
        bi[i_off], bi[i_len] = tables.add_cmap(cmap)
        bi[i_slot] = _slot(src.channel, channel_names)
        lo, hi = ranges.get(src.channel, (0.0, 1.0))
        bf[f_alo], bf[f_ahi] = lo, hi
    else:
        raise StyleError(f"cannot nest color source {src!r} here")


def compile_program(styles: Mapping[str, LineStyle],
                    tf: LineStyleTransferFunction | None = None,
                    attr_ranges: Mapping[str, tuple[float, float]] | None = None,
                    colormaps: Mapping[str, ColorMap] | None = None,
                    channel_names: Sequence[str] | None = None) -> StyleProgram:
    """Flatten a styleset for the raster kernels.

    ``attr_ranges`` supplies raw-to-[0,1] normalization per attribute name;
    missing names default to an identity (0, 1) range.
    """
    if tf is None:
        if len(styles) != 1:
            raise StyleError("without a transfer function exactly one style is required")
        tf = LineStyleTransferFunction.single(next(iter(styles)))
    tf.validate_against(styles)
    colormaps = dict(colormaps or COLORMAPS)
    ranges = dict(attr_ranges or {})
    if channel_names is None:
        channel_names = referenced_channels(styles, tf)
    channel_names = list(channel_names)

    style_ids = list(styles)
    tables = _Tables()
    band_rows_f: list[np.ndarray] = []
    band_rows_i: list[np.ndarray] = []
    sty_start = [0]

    for sid in style_ids:
        for band in styles[sid].bands:
            bf = np.zeros(NF)
            bi = np.zeros(NI, dtype=np.int32)
            _fill_band(band, bf, bi, tables, colormaps, channel_names, ranges)
            band_rows_f.append(bf)
            band_rows_i.append(bi)
        sty_start.append(len(band_rows_f))

    tf_lo = np.array([e.lo for e in tf.entries], dtype=np.float64)
    tf_hi = np.array([e.hi for e in tf.entries], dtype=np.float64)
    tf_sid = np.array([style_ids.index(e.style_id) for e in tf.entries], dtype=np.int32)
    glo, ghi = ranges.get(tf.guiding_attribute, (0.0, 1.0))

    return StyleProgram(
        style_ids=style_ids,
        channel_names=channel_names,
        width_units=max(style_total_width(styles[sid]) for sid in referenced_styles(tf)),
        attr_ranges=ranges,
        tf_lo=tf_lo,
        tf_hi=tf_hi,
        tf_sid=tf_sid,
        tf_default=style_ids.index(tf.default_style),
        guide_slot=_slot(tf.guiding_attribute, channel_names),
        guide_lo=float(glo),
        guide_hi=float(ghi),
        sty_start=np.array(sty_start, dtype=np.int32),
        sty_wtotal=np.array([style_total_width(styles[sid]) for sid in style_ids]),
        band_f=(np.vstack(band_rows_f) if band_rows_f else np.zeros((0, NF))),
        band_i=(np.vstack(band_rows_i) if band_rows_i else np.zeros((0, NI), dtype=np.int32)),
        cm_pos=np.array(tables.cm_pos, dtype=np.float64),
        cm_r=np.array([c[0] for c in tables.cm_rgb], dtype=np.float64),
        cm_g=np.array([c[1] for c in tables.cm_rgb], dtype=np.float64),
        cm_b=np.array([c[2] for c in tables.cm_rgb], dtype=np.float64),
        shp_x=np.array(tables.shp_x, dtype=np.float64),
        shp_w=np.array(tables.shp_w, dtype=np.float64),
    )


def _fill_band(band: BandSpec, bf, bi, tables, colormaps, channel_names, ranges):
    bf[FW_MIN], bf[FW_MAX] = band.width.w_min, band.width.w_max
    drv = band.width.driver
    if drv is None:
        bi[IW_DRV] = 0
    elif isinstance(drv, str):
        bi[IW_DRV] = 1
        bi[IW_SLOT] = _slot(drv, channel_names)
        lo, hi = ranges.get(drv, (0.0, 1.0))
        bf[FW_ALO], bf[FW_AHI] = lo, hi
    elif isinstance(drv, ShapePattern):
        bi[IW_DRV] = 2
        bi[ISH_OFF], bi[ISH_LEN] = tables.add_shape(drv.mapping.points)
        bi[ISH_XSRC] = 0 if drv.x_source == "arc_length" else 1
        bf[FSH_L], bf[FSH_PHASE] = drv.l, drv.phase
    else:
        raise StyleError(f"unknown width driver {drv!r}")

    bf[FD_OFF] = band.depth_offset
    bi[IHALO] = 1 if band.is_halo else 0

    color = band.color
    if isinstance(color, PatternColor):
        p = color.pattern
        bi[IC_KIND] = 2
        bi[IP_XSRC] = 0 if p.x_source == "arc_length" else 1
        bf[FP_L], bf[FP_A], bf[FP_C], bf[FP_W], bf[FP_PH] = p.l, p.a, p.c, p.w, p.phase
        _pack_source(p.color_a, bf, bi, tables, colormaps, channel_names, ranges,
                     FPA_R, FPA_ALO, FPA_AHI, IPA_KIND, IPA_CM_OFF, IPA_CM_LEN, IPA_SLOT)
        _pack_source(p.color_b, bf, bi, tables, colormaps, channel_names, ranges,
                     FPB_R, FPB_ALO, FPB_AHI, IPB_KIND, IPB_CM_OFF, IPB_CM_LEN, IPB_SLOT)
    else:
        _pack_source(color, bf, bi, tables, colormaps, channel_names, ranges,
                     FC_R, FC_ALO, FC_AHI, IC_KIND, IC_CM_OFF, IC_CM_LEN, IC_SLOT)
