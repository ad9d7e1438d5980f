"""Software rasterization of ribbon strips.

Strips are scan-converted with perspective-correct attribute
interpolation; every covered fragment re-resolves its line style from the
interpolated guiding attribute, picks the band containing its lateral
position, and takes that band's color and depth. Halo bands fold away
from the viewer (depth grows linearly across the band), which is what
makes halo width encode depth separation between overlapping lines.

Rendering is opaque with a strict less-than depth test; equal-depth
fragments keep the earlier submission, and the frame is tiled into
disjoint write regions so output is bit-identical for any worker count.

:func:`shade_fragment` is the readable single-fragment reference;
:func:`rasterize` runs the numba kernels, which implement the same
decision procedure over the compiled :class:`~.styleprog.StyleProgram`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .geometry import Camera, RibbonStrip
from .style import (
    COLORMAPS,
    LineStyle,
    eval_band_width,
    eval_shape_attribute,
    resolve_color,
    style_total_width,
)
from .field import normalize01
from .styleprog import SLOT_CH0, StyleProgram

__all__ = [
    "Frame",
    "FragmentContext",
    "FragmentResult",
    "shade_fragment",
    "rasterize",
    "set_worker_count",
    "save_image",
    "downsample",
]

TILE = 64


@dataclass
class Frame:
    """RGBA8 image plus float32 view-space depth buffer."""

    width: int
    height: int
    color: np.ndarray                  # (H, W, 4) uint8
    depth: np.ndarray                  # (H, W) float32
    background: tuple[int, int, int, int] = (255, 255, 255, 255)

    @staticmethod
    def new(width: int, height: int,
            background=(255, 255, 255, 255),
            far: float = np.inf) -> "Frame":
        """Cleared frame; depth starts at the far-plane distance so
        fragments beyond it fail the less-than test."""
        color = np.empty((height, width, 4), dtype=np.uint8)
        color[:, :] = np.asarray(background, dtype=np.uint8)
        depth = np.full((height, width), far, dtype=np.float32)
        return Frame(width, height, color, depth, tuple(background))


@dataclass
class FragmentContext:
    """Everything one fragment needs: interpolated strip values plus the
    resolved style. ``width_scale`` is the strip footprint in band-width
    units (defaults to the style's own total). ``attr_ranges`` normalizes
    raw attributes; values default to being treated as already normalized."""

    u: float
    t: float
    s: float
    speed: float
    attrs: Mapping[str, float]
    centerline_depth: float
    style: LineStyle
    width_scale: float | None = None
    attr_ranges: Mapping[str, tuple[float, float]] | None = None
    colormaps: Mapping | None = None


@dataclass
class FragmentResult:
    color: np.ndarray                  # RGB floats in [0, 1]
    depth: float
    band_index: int
    b: float


def shade_fragment(ctx: FragmentContext) -> FragmentResult | None:
    """Band decision for one fragment; None means discard.

    Band widths are evaluated at the fragment's longitudinal position and
    accumulated from the centerline outward, so a shrinking inner band
    pulls the outer bands inward with it. The lateral position in width
    units is ``|u| * width_scale``; fragments past the accumulated total
    fall in the transparent margin. Interior band boundaries belong to the
    outer band; the strip's outer edge belongs to the last non-empty band.
    """
    style = ctx.style
    scale = ctx.width_scale if ctx.width_scale is not None else style_total_width(style)
    ranges = ctx.attr_ranges or {}

    def raw_of(name: str) -> float:
        if name == "t":
            return ctx.t
        if name == "s":
            return ctx.s
        if name == "speed":
            return ctx.speed
        return ctx.attrs[name]

    def norm_of(name: str) -> float:
        lo, hi = ranges.get(name, (0.0, 1.0))
        return normalize01(raw_of(name), lo, hi)

    x_of = {"arc_length": ctx.s, "integration_time": ctx.t}

    U = abs(ctx.u) * scale
    cum = 0.0
    chosen = None
    chosen_b = 0.0
    last = None                        # (index, band, cum_before, width)
    for i, band in enumerate(style.bands):
        drv = band.width.driver
        if drv is None:
            wk = eval_band_width(band)
        elif isinstance(drv, str):
            wk = eval_band_width(band, norm_attr=norm_of(drv))
        else:
            sx = eval_shape_attribute(x_of[drv.x_source], drv.l, drv.phase)
            wk = eval_band_width(band, s_x=sx)
        if wk > 0.0:
            if U < cum + wk:
                chosen = (i, band)
                chosen_b = (U - cum) / wk
                break
            last = (i, band, cum, wk)
        cum += wk
    if chosen is None:
        if last is not None and U == cum:
            i, band, cum_before, wk = last
            chosen = (i, band)
            chosen_b = (U - cum_before) / wk
        else:
            return None

    i, band = chosen
    norm_attrs = {name: norm_of(name)
                  for name in list(ctx.attrs) + ["t", "s", "speed"]}
    color = resolve_color(band.color, norm_attrs, {"t": ctx.t, "s": ctx.s},
                          chosen_b, colormaps=ctx.colormaps)
    depth = ctx.centerline_depth
    if band.is_halo:
        depth += band.depth_offset * chosen_b
    return FragmentResult(color=np.asarray(color, dtype=np.float64),
                          depth=float(depth), band_index=i, b=float(chosen_b))


# ---------------------------------------------------------------------------
# Full-frame rasterization
# ---------------------------------------------------------------------------

def set_worker_count(threads: int) -> int:
    """Set the raster worker count (0 = auto). Returns the count in use.
    Output does not depend on this; tiles are disjoint write regions."""
    import numba

    if threads <= 0:
        threads = min(os_cpu_count(), numba.config.NUMBA_NUM_THREADS)
    threads = max(1, min(threads, numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(threads)
    return threads


def os_cpu_count() -> int:
    import os

    return os.cpu_count() or 1


def _flatten_strips(strips: Sequence[RibbonStrip], camera: Camera):
    """Interleave strip edges into one triangle soup.

    Vertices go [L0, R0, L1, R1, ...] per strip; each quad contributes two
    triangles in submission order. Attribute columns are
    [u, t, s, speed, centerline_depth, channels...].
    """
    right, up, fwd = camera.basis()
    eye = np.asarray(camera.eye, dtype=np.float64)
    basis = np.column_stack([right, up, fwd])

    vv_parts = []
    at_parts = []
    tri_parts = []
    base = 0
    for strip in strips:
        n = len(strip)
        if n < 2:
            continue
        verts = np.empty((2 * n, 3), dtype=np.float64)
        verts[0::2] = strip.left
        verts[1::2] = strip.right
        vview = (verts - eye) @ basis

        ncha = strip.channels.shape[1]
        at = np.empty((2 * n, 5 + ncha), dtype=np.float32)
        at[0::2, 0] = -1.0
        at[1::2, 0] = 1.0
        for col, vals in ((1, strip.t), (2, strip.s), (3, strip.speed),
                          (4, strip.centerline_depth)):
            at[0::2, col] = vals
            at[1::2, col] = vals
        if ncha:
            at[0::2, 5:] = strip.channels
            at[1::2, 5:] = strip.channels

        quad = np.arange(n - 1) * 2 + base
        tris = np.empty((2 * (n - 1), 3), dtype=np.int32)
        tris[0::2, 0] = quad
        tris[0::2, 1] = quad + 1
        tris[0::2, 2] = quad + 3
        tris[1::2, 0] = quad
        tris[1::2, 1] = quad + 3
        tris[1::2, 2] = quad + 2

        vv_parts.append(vview.astype(np.float32))
        at_parts.append(at)
        tri_parts.append(tris)
        base += 2 * n

    if not vv_parts:
        return (np.zeros((0, 3), np.float32), np.zeros((0, 5), np.float32),
                np.zeros((0, 3), np.int32))
    return (np.concatenate(vv_parts), np.concatenate(at_parts),
            np.concatenate(tri_parts))


def rasterize(strips: Sequence[RibbonStrip], camera: Camera, frame: Frame,
              program: StyleProgram, threads: int = 0) -> Frame:
    """Scan-convert strips into the frame using the compiled style program."""
    from . import _kernels as K

    set_worker_count(threads)
    vview, attrs_v, tris = _flatten_strips(strips, camera)
    if strips and strips[0].channels.shape[1] != len(program.channel_names):
        raise ValueError(
            f"strips carry {strips[0].channels.shape[1]} channels but the style "
            f"program expects {program.channel_names}"
        )
    if tris.shape[0] == 0:
        return frame

    tan_y = math.tan(math.radians(camera.fov_y) / 2.0)
    fy = frame.height / (2.0 * tan_y)
    fx = frame.width / (2.0 * tan_y * camera.aspect)
    cx = frame.width / 2.0
    cy = frame.height / 2.0

    bbox = np.zeros((tris.shape[0], 4), dtype=np.int32)
    flags = np.zeros(tris.shape[0], dtype=np.uint8)
    K.setup_triangles(vview, tris, float(camera.near), fx, fy, cx, cy,
                      frame.width, frame.height, bbox, flags)

    ntx = (frame.width + TILE - 1) // TILE
    nty = (frame.height + TILE - 1) // TILE
    counts = np.zeros(ntx * nty, dtype=np.int64)
    K.bin_count(bbox, flags, TILE, ntx, counts)
    offsets = np.zeros(ntx * nty + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    items = np.zeros(int(offsets[-1]), dtype=np.int32)
    cursor = np.zeros(ntx * nty, dtype=np.int64)
    K.bin_fill(bbox, flags, TILE, ntx, offsets, cursor, items)

    K.raster_tiles(vview, attrs_v, tris, flags, bbox, offsets, items,
                   frame.color, frame.depth, TILE, ntx, nty,
                   frame.width, frame.height,
                   float(camera.near), fx, fy, cx, cy,
                   float(program.width_units),
                   *program.kernel_args())
    return frame


# ---------------------------------------------------------------------------
# Image output
# ---------------------------------------------------------------------------

def downsample(frame: Frame, factor: int) -> Frame:
    """Box-average supersampled output back to the target resolution."""
    if factor <= 1:
        return frame
    h = frame.height // factor
    w = frame.width // factor
    c = frame.color[: h * factor, : w * factor].astype(np.float64)
    c = c.reshape(h, factor, w, factor, 4).mean(axis=(1, 3))
    color = np.floor(c + 0.5).clip(0, 255).astype(np.uint8)
    depth = frame.depth[: h * factor : factor, : w * factor : factor].copy()
    return Frame(w, h, color, depth, frame.background)


def save_image(frame: Frame, path) -> None:
    """Write the frame as 8-bit RGBA PNG (or P6 PPM for .ppm paths)."""
    path = str(path)
    if path.endswith(".ppm"):
        with open(path, "wb") as fh:
            fh.write(f"P6\n{frame.width} {frame.height}\n255\n".encode("ascii"))
            fh.write(np.ascontiguousarray(frame.color[:, :, :3]).tobytes())
        return
    from PIL import Image

    img = Image.fromarray(frame.color, mode="RGBA")
    img.save(path, format="PNG")


def quantize8(v: float) -> int:
    """Round-half-up quantization of a [0,1] float to a byte."""
    v = min(max(v, 0.0), 1.0)
    return int(math.floor(v * 255.0 + 0.5))
