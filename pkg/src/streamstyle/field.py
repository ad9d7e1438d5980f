"""Regular-grid 3D vector fields with named scalar attribute channels.

A :class:`VectorFieldGrid` holds node velocities plus any number of scalar
channels (temperature, pressure, ...) on a regular structured grid. Grids
are immutable after construction and safe to share across trace/render
workers. Sampling is trilinear; positions outside the grid bounds yield an
``inside=False`` sample with zeroed values, which the tracer uses as its
termination signal.

On-disk format (SFG, "streamline field grid", little-endian):

    SFG1 nx ny nz ox oy oz sx sy sz C\n
    channel <name>\n          (C lines)
    \n
    <binary float32 payload>

The payload is the velocity array (3*n values, xyz-interleaved, x-fastest
node order) followed by each channel array (n values) in header order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "VectorFieldGrid",
    "FieldSample",
    "FieldError",
    "SFGError",
    "load_grid",
    "save_grid",
    "gen_analytic_field",
    "sample",
    "sample_many",
    "normalize_attribute",
    "normalize01",
    "ANALYTIC_KINDS",
]


class FieldError(ValueError):
    """Invalid grid construction or channel access."""


class SFGError(FieldError):
    """Malformed SFG file (bad header, short arrays, non-finite values)."""


def normalize01(raw: float, lo: float, hi: float) -> float:
    """Map raw to [0,1] over (lo, hi), clamped; degenerate range maps to 0.5."""
    if hi <= lo:
        return 0.5
    v = (raw - lo) / (hi - lo)
    return 0.0 if v < 0.0 else (1.0 if v > 1.0 else v)


def normalize01_array(raw: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi <= lo:
        return np.full_like(np.asarray(raw, dtype=np.float64), 0.5)
    return np.clip((np.asarray(raw, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)


@dataclass(frozen=True)
class FieldSample:
    """Point sample of a grid: velocity, raw channel values, inside flag."""

    velocity: np.ndarray
    attributes: dict[str, float]
    inside: bool


@dataclass(frozen=True)
class VectorFieldGrid:
    """Regular 3D grid of velocity vectors plus scalar attribute channels.

    Arrays are indexed ``[iz, iy, ix]`` (x fastest in memory, matching the
    file layout). ``channel_ranges`` holds dataset-global per-channel
    (min, max) used for attribute normalization so colors stay stable
    under camera motion.
    """

    dims: tuple[int, int, int]
    origin: np.ndarray
    spacing: np.ndarray
    velocity: np.ndarray                      # (nz, ny, nx, 3)
    channels: dict[str, np.ndarray] = field(default_factory=dict)
    channel_ranges: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        nx, ny, nz = self.dims
        if min(nx, ny, nz) < 2:
            raise FieldError(f"grid dims must be >= 2 per axis, got {self.dims}")
        if not np.all(np.asarray(self.spacing) > 0):
            raise FieldError(f"grid spacing must be strictly positive, got {self.spacing}")
        if self.velocity.shape != (nz, ny, nx, 3):
            raise FieldError(
                f"velocity shape {self.velocity.shape} does not match dims {self.dims}"
            )
        n = nx * ny * nz
        for name, arr in self.channels.items():
            if arr.shape != (nz, ny, nx):
                raise FieldError(
                    f"channel '{name}' has {arr.size} values, expected {n} for dims {self.dims}"
                )
        for name, (lo, hi) in self.channel_ranges.items():
            if lo > hi:
                raise FieldError(f"channel_ranges['{name}'] has min > max: ({lo}, {hi})")

    @property
    def node_count(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def bounds_min(self) -> np.ndarray:
        return self.origin

    @property
    def bounds_max(self) -> np.ndarray:
        return self.origin + (np.asarray(self.dims, dtype=np.float64) - 1.0) * self.spacing

    def node_position(self, i: int, j: int, k: int) -> np.ndarray:
        return self.origin + np.array([i, j, k], dtype=np.float64) * self.spacing


def _compute_ranges(channels: dict[str, np.ndarray]) -> dict[str, tuple[float, float]]:
    return {name: (float(arr.min()), float(arr.max())) for name, arr in channels.items()}


def make_grid(dims, origin, spacing, velocity, channels) -> VectorFieldGrid:
    """Assemble a grid, computing channel ranges from the data."""
    return VectorFieldGrid(
        dims=tuple(int(d) for d in dims),
        origin=np.asarray(origin, dtype=np.float64),
        spacing=np.asarray(spacing, dtype=np.float64),
        velocity=np.ascontiguousarray(velocity, dtype=np.float64),
        channels={k: np.ascontiguousarray(v, dtype=np.float64) for k, v in channels.items()},
        channel_ranges=_compute_ranges(channels),
    )


# ---------------------------------------------------------------------------
# SFG file I/O
# ---------------------------------------------------------------------------

def load_grid(path) -> VectorFieldGrid:
    """Load a grid from an SFG file.

    Raises :class:`SFGError` naming the offending channel or byte offset
    on malformed headers, short arrays, or non-finite values.
    """
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").strip()
        parts = header.split()
        if len(parts) != 11 or parts[0] != "SFG1":
            raise SFGError(f"malformed SFG header: {header!r}")
        try:
            nx, ny, nz = (int(p) for p in parts[1:4])
            origin = np.array([float(p) for p in parts[4:7]])
            spacing = np.array([float(p) for p in parts[7:10]])
            nchan = int(parts[10])
        except ValueError as exc:
            raise SFGError(f"malformed SFG header fields: {header!r}") from exc
        names = []
        for i in range(nchan):
            line = fh.readline().decode("ascii", errors="replace").rstrip("\n")
            if not line.startswith("channel "):
                raise SFGError(f"expected 'channel <name>' line {i}, got {line!r}")
            names.append(line[len("channel "):])
        blank = fh.readline().decode("ascii", errors="replace").strip()
        if blank:
            raise SFGError(f"expected blank separator line, got {blank!r}")

        n = nx * ny * nz
        vel_flat = np.frombuffer(fh.read(3 * n * 4), dtype="<f4")
        if vel_flat.size != 3 * n:
            raise SFGError(
                f"velocity array truncated: {vel_flat.size} of {3 * n} values"
            )
        if not np.all(np.isfinite(vel_flat)):
            bad = int(np.flatnonzero(~np.isfinite(vel_flat))[0])
            raise SFGError(f"non-finite velocity value at flat offset {bad}")
        channels = {}
        for name in names:
            arr = np.frombuffer(fh.read(n * 4), dtype="<f4")
            if arr.size != n:
                raise SFGError(
                    f"channel '{name}' truncated: {arr.size} of {n} values"
                )
            if not np.all(np.isfinite(arr)):
                bad = int(np.flatnonzero(~np.isfinite(arr))[0])
                raise SFGError(f"non-finite value in channel '{name}' at offset {bad}")
            channels[name] = arr.astype(np.float64).reshape(nz, ny, nx)

    velocity = vel_flat.astype(np.float64).reshape(nz, ny, nx, 3)
    return make_grid((nx, ny, nz), origin, spacing, velocity, channels)


def save_grid(grid: VectorFieldGrid, path) -> None:
    """Write a grid as SFG. Arrays are stored as float32."""
    nx, ny, nz = grid.dims
    with open(path, "wb") as fh:
        head = "SFG1 %d %d %d %.17g %.17g %.17g %.17g %.17g %.17g %d\n" % (
            nx, ny, nz, *grid.origin, *grid.spacing, len(grid.channels)
        )
        fh.write(head.encode("ascii"))
        for name in grid.channels:
            fh.write(f"channel {name}\n".encode("ascii"))
        fh.write(b"\n")
        fh.write(np.ascontiguousarray(grid.velocity, dtype="<f4").tobytes())
        for arr in grid.channels.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


# ---------------------------------------------------------------------------
# Analytic test fields
# ---------------------------------------------------------------------------

ANALYTIC_KINDS = ("constant", "circular", "abc", "cavity_like")

# Natural world-space domain per kind (min corner, max corner).
_DOMAINS = {
    "constant": ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)),
    "circular": ((-2.0, -2.0, -2.0), (2.0, 2.0, 2.0)),
    "abc": ((0.0, 0.0, 0.0), (2.0 * math.pi,) * 3),
    "cavity_like": ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)),
}


def gen_analytic_field(kind: str, dims, params: dict | None = None) -> VectorFieldGrid:
    """Generate a closed-form test field with speed/temperature/pressure channels.

    Kinds:
      constant     uniform velocity (params vx, vy, vz; default (1,0,0))
      circular     rigid rotation about the grid center in the xy plane
                   (params omega; default 1)
      abc          v = (A sin z + C cos y, B sin x + A cos z, C sin y + B cos x)
                   on [0, 2pi]^3 (params A, B, C; default 1)
      cavity_like  closed recirculating roll in a unit box, zero normal
                   velocity on all walls (params scale, swirl)
    """
    params = dict(params or {})
    if kind not in ANALYTIC_KINDS:
        raise FieldError(f"unknown analytic field kind {kind!r}; choose from {ANALYTIC_KINDS}")
    dims = tuple(int(d) for d in dims)
    if min(dims) < 2:
        raise FieldError(f"grid dims must be >= 2 per axis, got {dims}")
    nx, ny, nz = dims
    lo, hi = (np.array(_DOMAINS[kind][0]), np.array(_DOMAINS[kind][1]))
    spacing = (hi - lo) / (np.array(dims, dtype=np.float64) - 1.0)

    zs, ys, xs = np.meshgrid(
        lo[2] + spacing[2] * np.arange(nz),
        lo[1] + spacing[1] * np.arange(ny),
        lo[0] + spacing[0] * np.arange(nx),
        indexing="ij",
    )

    if kind == "constant":
        v = np.array([params.get("vx", 1.0), params.get("vy", 0.0), params.get("vz", 0.0)])
        vel = np.broadcast_to(v, (nz, ny, nx, 3)).copy()
        temp = (xs - lo[0]) / (hi[0] - lo[0])
        pres = (ys - lo[1]) / (hi[1] - lo[1])
    elif kind == "circular":
        omega = params.get("omega", 1.0)
        center = (lo + hi) / 2.0
        vel = np.stack(
            [-omega * (ys - center[1]), omega * (xs - center[0]), np.zeros_like(xs)],
            axis=-1,
        )
        r = np.hypot(xs - center[0], ys - center[1])
        temp = r / r.max()
        pres = 0.5 * omega**2 * r**2
    elif kind == "abc":
        A = params.get("A", 1.0)
        B = params.get("B", 1.0)
        C = params.get("C", 1.0)
        vel = np.stack(
            [
                A * np.sin(zs) + C * np.cos(ys),
                B * np.sin(xs) + A * np.cos(zs),
                C * np.sin(ys) + B * np.cos(xs),
            ],
            axis=-1,
        )
        temp = 0.5 + 0.5 * np.sin(xs) * np.cos(ys)
        pres = 0.5 + 0.5 * np.cos(zs) * np.sin(ys)
    else:  # cavity_like
        s = params.get("scale", 1.0)
        sw = params.get("swirl", 0.35)
        px, py, pz = np.pi * xs, np.pi * ys, np.pi * zs
        vel = np.stack(
            [
                s * np.sin(px) * np.cos(pz),
                s * sw * np.sin(py) * np.cos(px + pz),
                -s * np.cos(px) * np.sin(pz),
            ],
            axis=-1,
        )
        # Hot floor, cool ceiling, with a lateral plume.
        temp = (1.0 - zs) * (0.75 + 0.25 * np.sin(px))
        pres = 0.5 + 0.4 * np.cos(px) * np.cos(pz)

    channels = {
        "speed": np.linalg.norm(vel, axis=-1),
        "temperature": temp,
        "pressure": pres,
    }
    return make_grid(dims, lo, spacing, vel, channels)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_many(grid: VectorFieldGrid, points: np.ndarray):
    """Trilinear sample of velocity and every channel at N points.

    Returns (velocity (N,3), attrs {name: (N,)}, inside (N,) bool). Values
    at outside points are zero. Points that coincide bitwise with a node
    position are snapped onto that node so stored values are reproduced
    exactly even for spacings that do not divide cleanly.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = pts.shape[0]
    dims = np.asarray(grid.dims, dtype=np.float64)
    g = (pts - grid.origin) / grid.spacing

    # Exact-node snap: only when the point is bitwise equal to the node.
    nearest = np.rint(g)
    ok = (nearest >= 0) & (nearest <= dims - 1)
    exact = ok & (grid.origin + nearest * grid.spacing == pts)
    g = np.where(exact, nearest, g)

    inside = np.all((g >= 0.0) & (g <= dims - 1.0), axis=1)

    gc = np.clip(g, 0.0, dims - 1.0)
    idx = np.minimum(gc.astype(np.int64), np.asarray(grid.dims) - 2)
    frac = gc - idx
    ix, iy, iz = idx[:, 0], idx[:, 1], idx[:, 2]
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]

    w = np.empty((8, n))
    w[0] = (1 - fx) * (1 - fy) * (1 - fz)
    w[1] = fx * (1 - fy) * (1 - fz)
    w[2] = (1 - fx) * fy * (1 - fz)
    w[3] = fx * fy * (1 - fz)
    w[4] = (1 - fx) * (1 - fy) * fz
    w[5] = fx * (1 - fy) * fz
    w[6] = (1 - fx) * fy * fz
    w[7] = fx * fy * fz

    corners = ((0, 0, 0), (0, 0, 1), (0, 1, 0), (0, 1, 1),
               (1, 0, 0), (1, 0, 1), (1, 1, 0), (1, 1, 1))

    vel = np.zeros((n, 3))
    for c, (dz, dy, dx) in enumerate(corners):
        vel += w[c, :, None] * grid.velocity[iz + dz, iy + dy, ix + dx]
    vel[~inside] = 0.0

    attrs = {}
    for name, arr in grid.channels.items():
        acc = np.zeros(n)
        for c, (dz, dy, dx) in enumerate(corners):
            acc += w[c] * arr[iz + dz, iy + dy, ix + dx]
        acc[~inside] = 0.0
        attrs[name] = acc
    return vel, attrs, inside


def sample(grid: VectorFieldGrid, p) -> FieldSample:
    """Trilinear sample at one world position; outside is a value, not an error."""
    vel, attrs, inside = sample_many(grid, np.asarray(p, dtype=np.float64)[None, :])
    return FieldSample(
        velocity=vel[0],
        attributes={k: float(v[0]) for k, v in attrs.items()},
        inside=bool(inside[0]),
    )


def normalize_attribute(grid: VectorFieldGrid, name: str, raw: float) -> float:
    """Normalize a raw channel value into [0,1] using the dataset-global range."""
    if name not in grid.channel_ranges:
        raise FieldError(f"unknown channel {name!r}; have {sorted(grid.channel_ranges)}")
    lo, hi = grid.channel_ranges[name]
    return normalize01(raw, lo, hi)
