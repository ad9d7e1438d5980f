"""View-oriented ribbon strips: the CPU stand-in for per-frame strip
generation.

Each streamline vertex is pushed sideways along ``normalize(tangent x
view_dir)`` so the ribbon always faces the camera. The half-width is the
global scale times the maximum total band width over every style the
transfer function can select, so the strip footprint never changes when
the style switches mid-line; narrower styles simply leave transparent
margins for the rasterizer to discard.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .style import (
    LineStyle,
    LineStyleTransferFunction,
    referenced_styles,
    select_style,
    style_total_width,
)
from .field import normalize01_array
from .tracer import Streamline

__all__ = ["Camera", "RibbonStrip", "build_strips", "attribute_ranges"]

# Below this, tangent and view direction are considered parallel and the
# previous vertex's offset direction is reused.
DEGENERATE_CROSS = 1e-6


@dataclass(frozen=True)
class Camera:
    eye: tuple[float, float, float]
    look_at: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 1.0, 0.0)
    fov_y: float = 45.0
    aspect: float = 1.0
    near: float = 0.05
    far: float = 1000.0

    def __post_init__(self):
        if not (0 < self.near < self.far):
            raise ValueError(f"need 0 < near < far, got ({self.near}, {self.far})")
        if np.allclose(self.eye, self.look_at):
            raise ValueError("camera eye and look_at coincide")
        if not 0 < self.fov_y < 180:
            raise ValueError(f"fov_y must be in (0, 180), got {self.fov_y}")

    def basis(self):
        """Orthonormal (right, up, forward) world-space camera axes."""
        eye = np.asarray(self.eye, dtype=np.float64)
        fwd = np.asarray(self.look_at, dtype=np.float64) - eye
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(self.up, dtype=np.float64))
        nr = np.linalg.norm(right)
        if nr < 1e-12:
            raise ValueError("camera up vector is parallel to the view direction")
        right /= nr
        up = np.cross(right, fwd)
        return right, up, fwd

    def view_depth(self, points: np.ndarray) -> np.ndarray:
        """Distance along the forward axis (positive in front of the camera)."""
        _, _, fwd = self.basis()
        return (np.atleast_2d(points) - np.asarray(self.eye)) @ fwd

    def project(self, points: np.ndarray, width: int, height: int):
        """Screen-space pixel coordinates plus view depth for N world points.

        Returns (sx, sy, depth); sx/sy are valid only where depth > 0.
        """
        right, up, fwd = self.basis()
        rel = np.atleast_2d(points) - np.asarray(self.eye)
        vx = rel @ right
        vy = rel @ up
        w = rel @ fwd
        tan_y = math.tan(math.radians(self.fov_y) / 2.0)
        fy = height / (2.0 * tan_y)
        fx = width / (2.0 * tan_y * self.aspect)
        safe = np.where(w > 0, w, 1.0)
        sx = width / 2.0 + fx * (vx / safe)
        sy = height / 2.0 - fy * (vy / safe)
        return sx, sy, w


@dataclass
class RibbonStrip:
    """Camera-facing ribbon for one streamline.

    Left edge carries lateral coordinate u = -1, right edge u = +1; both
    edges share the centerline's longitudinal attributes and view depth.
    ``channels`` holds the attribute columns (in ``channel_names`` order)
    that the active styles consume.
    """

    left: np.ndarray                   # (n, 3) world positions
    right: np.ndarray                  # (n, 3)
    t: np.ndarray
    s: np.ndarray
    speed: np.ndarray
    channels: np.ndarray               # (n, C)
    channel_names: tuple[str, ...]
    centerline_depth: np.ndarray       # (n,) view depth
    style_index: np.ndarray            # (n,) resolved style per vertex
    line_index: int = 0

    def __len__(self):
        return self.left.shape[0]


def attribute_ranges(lines: Sequence[Streamline],
                     grid_ranges: Mapping[str, tuple[float, float]] | None = None,
                     ) -> dict[str, tuple[float, float]]:
    """Normalization ranges: grid channels keep their dataset-global range;
    the builtins t, s, speed span the whole line set's observed values."""
    ranges = dict(grid_ranges or {})
    for key in ("t", "s", "speed"):
        vals = [getattr(ln, key) for ln in lines if len(ln)]
        if vals:
            ranges[key] = (float(min(v.min() for v in vals)),
                           float(max(v.max() for v in vals)))
        else:
            ranges[key] = (0.0, 1.0)
    if grid_ranges is None and lines:
        for name in lines[0].attrs:
            vals = [ln.attrs[name] for ln in lines]
            ranges[name] = (float(min(v.min() for v in vals)),
                            float(max(v.max() for v in vals)))
    return ranges


def _offset_directions(positions: np.ndarray, eye: np.ndarray) -> np.ndarray:
    """Unit offsets perpendicular to both tangent and view direction.

    Central-difference tangents (one-sided at the ends). View-parallel
    vertices reuse the nearest previous valid direction, or the next one at
    the line start, so degenerate segments never emit NaN geometry.
    """
    n = positions.shape[0]
    tang = np.empty_like(positions)
    tang[1:-1] = positions[2:] - positions[:-2]
    tang[0] = positions[1] - positions[0]
    tang[-1] = positions[-1] - positions[-2]
    tn = np.linalg.norm(tang, axis=1, keepdims=True)
    tang = np.divide(tang, tn, out=np.zeros_like(tang), where=tn > 0)

    view = eye - positions
    vn = np.linalg.norm(view, axis=1, keepdims=True)
    view = np.divide(view, vn, out=np.zeros_like(view), where=vn > 0)

    raw = np.cross(tang, view)
    mag = np.linalg.norm(raw, axis=1)
    ok = mag >= DEGENERATE_CROSS

    dirs = np.zeros_like(raw)
    dirs[ok] = raw[ok] / mag[ok, None]
    if not ok.all():
        if ok.any():
            valid_idx = np.flatnonzero(ok)
            # Nearest previous valid vertex; leading run borrows the first valid.
            prev = np.searchsorted(valid_idx, np.arange(n), side="right") - 1
            src = valid_idx[np.clip(prev, 0, None)]
            dirs[~ok] = dirs[src[~ok]]
        else:
            # Whole line is view-parallel: any perpendicular to the view works.
            v = view[0]
            probe = np.array([1.0, 0.0, 0.0])
            if abs(v @ probe) > 0.9:
                probe = np.array([0.0, 1.0, 0.0])
            d = np.cross(v, probe)
            dirs[:] = d / np.linalg.norm(d)
    return dirs


def build_strips(lines: Sequence[Streamline], camera: Camera,
                 styles: Mapping[str, LineStyle],
                 tf: LineStyleTransferFunction | None,
                 global_scale: float,
                 attr_ranges: Mapping[str, tuple[float, float]] | None = None,
                 channel_names: Sequence[str] | None = None,
                 ) -> list[RibbonStrip]:
    """Turn streamlines into view-oriented ribbons with per-vertex styles."""
    if global_scale <= 0:
        raise ValueError(f"global_scale must be > 0, got {global_scale}")
    if tf is None:
        if len(styles) != 1:
            raise ValueError("without a transfer function exactly one style is required")
        tf = LineStyleTransferFunction.single(next(iter(styles)))
    tf.validate_against(styles)

    if attr_ranges is None:
        attr_ranges = attribute_ranges(lines)
    if channel_names is None:
        channel_names = tuple(lines[0].attrs) if lines else ()
    channel_names = tuple(channel_names)

    width_units = max(style_total_width(styles[sid]) for sid in referenced_styles(tf))
    half_width = global_scale * width_units
    eye = np.asarray(camera.eye, dtype=np.float64)
    _, _, fwd = camera.basis()
    style_order = {sid: i for i, sid in enumerate(styles)}
    glo, ghi = attr_ranges.get(tf.guiding_attribute, (0.0, 1.0))

    strips = []
    for li, ln in enumerate(lines):
        dirs = _offset_directions(ln.positions, eye)
        offset = dirs * half_width
        depth = (ln.positions - eye) @ fwd

        if tf.guiding_attribute in ("t", "s", "speed"):
            graw = getattr(ln, tf.guiding_attribute)
        else:
            graw = ln.attrs[tf.guiding_attribute]
        gnorm = normalize01_array(graw, glo, ghi)
        sidx = np.fromiter(
            (style_order[select_style(tf, styles, float(g)).id] for g in gnorm),
            dtype=np.int32, count=len(ln),
        )

        chans = (np.column_stack([ln.attrs[c] for c in channel_names])
                 if channel_names else np.zeros((len(ln), 0)))
        strips.append(RibbonStrip(
            left=(ln.positions - offset).astype(np.float32),
            right=(ln.positions + offset).astype(np.float32),
            t=ln.t.astype(np.float32),
            s=ln.s.astype(np.float32),
            speed=ln.speed.astype(np.float32),
            channels=chans.astype(np.float32),
            channel_names=channel_names,
            centerline_depth=depth.astype(np.float32),
            style_index=sidx,
            line_index=li,
        ))
    return strips
