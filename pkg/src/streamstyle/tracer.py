"""Streamline seeding and integration.

Integration is classical fixed-step RK4 in integration time, vectorized
across all seeds at once (every live seed advances through the same time
step, so per-vertex t values are exact multiples of h). A line terminates
when it leaves the grid, stalls below ``min_speed``, or hits the step/time
budget; when ``max_time`` is set the final step is shortened to land on it
exactly.

Each vertex records integration time t, arc length s from the seed
(straight-segment cumulative distance), speed, and the raw value of every
grid channel. For ``direction="both"`` the backward and forward halves are
joined into one polyline sharing the seed vertex: t is signed and strictly
increasing along the whole line, while s is measured outward from the seed
in both directions (so longitudinal patterns emanate symmetrically).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .field import VectorFieldGrid, sample_many

__all__ = [
    "SeedSpec",
    "TraceParams",
    "StreamVertex",
    "Streamline",
    "TraceStats",
    "TraceResult",
    "TraceError",
    "SeedError",
    "seed_points",
    "trace",
    "trace_all",
    "save_streamlines",
    "load_streamlines",
]


class TraceError(RuntimeError):
    """Trace could not produce a line (for example, seed outside the grid)."""


class SeedError(ValueError):
    """Invalid seed specification."""


@dataclass(frozen=True)
class SeedSpec:
    """Seed placement: a uniform lattice or uniform-random points in a box."""

    strategy: str                      # "uniform_grid" | "random"
    count_or_dims: int | tuple[int, int, int]
    region: tuple[tuple[float, float, float], tuple[float, float, float]]
    rng_seed: int = 0


@dataclass(frozen=True)
class TraceParams:
    h: float = 0.01
    max_steps: int = 1000
    max_time: float | None = None
    min_speed: float = 1e-6
    direction: str = "both"            # "forward" | "backward" | "both"

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError(f"step size h must be > 0, got {self.h}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.direction not in ("forward", "backward", "both"):
            raise ValueError(f"unknown direction {self.direction!r}")


@dataclass(frozen=True)
class StreamVertex:
    position: np.ndarray
    t: float
    s: float
    speed: float
    attrs: dict[str, float]


@dataclass
class Streamline:
    """Polyline with per-vertex attributes, stored column-wise."""

    positions: np.ndarray              # (n, 3)
    t: np.ndarray                      # (n,)
    s: np.ndarray                      # (n,) distance from seed, >= 0
    speed: np.ndarray                  # (n,)
    attrs: dict[str, np.ndarray] = field(default_factory=dict)
    seed_index: int = 0
    seed_offset: int = 0               # index of the seed vertex in the polyline

    def __len__(self) -> int:
        return self.positions.shape[0]

    def vertex(self, i: int) -> StreamVertex:
        return StreamVertex(
            position=self.positions[i],
            t=float(self.t[i]),
            s=float(self.s[i]),
            speed=float(self.speed[i]),
            attrs={k: float(v[i]) for k, v in self.attrs.items()},
        )

    def validate(self) -> None:
        n = len(self)
        if n < 2:
            raise ValueError("streamline needs at least 2 vertices")
        if not np.all(np.diff(self.t) > 0):
            raise ValueError("integration time must be strictly increasing")
        k = self.seed_offset
        back, fwd = self.s[: k + 1], self.s[k:]
        if np.any(np.diff(back) > 0) or np.any(np.diff(fwd) < 0):
            raise ValueError("arc length must be non-decreasing away from the seed")
        if np.any(self.speed < 0):
            raise ValueError("speed must be non-negative")


@dataclass
class TraceStats:
    requested: int = 0
    traced: int = 0
    dropped: int = 0
    total_vertices: int = 0


@dataclass
class TraceResult:
    lines: list[Streamline]
    stats: TraceStats

    def __iter__(self):
        return iter(self.lines)

    def __len__(self):
        return len(self.lines)


# ---------------------------------------------------------------------------
# Seeding
# ---------------------------------------------------------------------------

def seed_points(spec: SeedSpec, grid: VectorFieldGrid) -> np.ndarray:
    """Generate seed positions (N, 3) for a spec; deterministic given rng_seed."""
    lo = np.asarray(spec.region[0], dtype=np.float64)
    hi = np.asarray(spec.region[1], dtype=np.float64)
    if np.any(lo > hi):
        raise SeedError(f"seed region min {lo} exceeds max {hi}")
    if np.any(hi < grid.bounds_min) or np.any(lo > grid.bounds_max):
        raise SeedError("seed region does not intersect grid bounds")

    if spec.strategy == "uniform_grid":
        cd = spec.count_or_dims
        dims = (cd, cd, cd) if isinstance(cd, int) else tuple(cd)
        if len(dims) != 3 or min(dims) < 1:
            raise SeedError(f"uniform_grid dims must be 3 positive counts, got {cd}")
        axes = [
            np.array([(a + b) / 2.0]) if n == 1 else np.linspace(a, b, n)
            for a, b, n in zip(lo, hi, dims)
        ]
        zz, yy, xx = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])
    if spec.strategy == "random":
        count = spec.count_or_dims
        if not isinstance(count, int) or count < 1:
            raise SeedError(f"random strategy needs a positive count, got {count}")
        rng = np.random.default_rng(spec.rng_seed)
        return rng.uniform(lo, hi, size=(count, 3))
    raise SeedError(f"unknown seed strategy {spec.strategy!r}")


# ---------------------------------------------------------------------------
# Integration
# ---------------------------------------------------------------------------

def _integrate(grid: VectorFieldGrid, seeds: np.ndarray, params: TraceParams, sign: float):
    """March all seeds with RK4 in lockstep; sign=-1 integrates upstream.

    Returns per-step recorded columns plus per-seed vertex counts. A seed's
    vertex k exists iff k < counts[seed].
    """
    n = seeds.shape[0]
    steps = params.max_steps
    names = list(grid.channels)

    pos = np.zeros((steps + 1, n, 3))
    spd = np.zeros((steps + 1, n))
    alen = np.zeros((steps + 1, n))
    attr = {name: np.zeros((steps + 1, n)) for name in names}
    tvals = np.zeros(steps + 1)
    counts = np.zeros(n, dtype=np.int64)

    p = np.array(seeds, dtype=np.float64)
    active = np.ones(n, dtype=bool)
    t = 0.0

    for k in range(steps + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        vel, attrs, inside = sample_many(grid, p[idx])
        # Leaving the grid ends a line before this vertex is recorded.
        active[idx[~inside]] = False
        idx = idx[inside]
        if idx.size == 0:
            break
        vel = vel[inside]
        speed = np.linalg.norm(vel, axis=1)

        tvals[k] = t
        pos[k, idx] = p[idx]
        spd[k, idx] = speed
        for name in names:
            attr[name][k, idx] = attrs[name][inside]
        counts[idx] = k + 1

        # Stagnation ends the line after recording the stalled vertex.
        stalled = speed < params.min_speed
        active[idx[stalled]] = False
        idx = idx[~stalled]
        vel = vel[~stalled]
        if k == steps or idx.size == 0:
            break

        h = params.h
        if params.max_time is not None:
            remaining = params.max_time - t
            if remaining <= params.h * 1e-9:
                break
            h = min(h, remaining)
        t_next = params.max_time if (params.max_time is not None and h < params.h) else (k + 1) * params.h

        k1 = sign * vel
        k2 = sign * _velocity(grid, p[idx] + 0.5 * h * k1)
        k3 = sign * _velocity(grid, p[idx] + 0.5 * h * k2)
        k4 = sign * _velocity(grid, p[idx] + h * k3)
        p_new = p[idx] + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

        bad = ~np.all(np.isfinite(p_new), axis=1)
        if np.any(bad):
            active[idx[bad]] = False
            idx = idx[~bad]
            p_new = p_new[~bad]
        seg = np.linalg.norm(p_new - p[idx], axis=1)
        alen[k + 1, idx] = alen[k, idx] + seg
        p[idx] = p_new
        t = t_next

    return pos, tvals, alen, spd, attr, counts


def _velocity(grid: VectorFieldGrid, pts: np.ndarray) -> np.ndarray:
    vel, _, inside = sample_many(grid, pts)
    # Outside substeps produce zero velocity; the next vertex sample will
    # terminate the line if it actually left the grid.
    return vel


def _assemble(grid, seeds, params: TraceParams):
    """Run the directional passes and stitch per-seed polylines."""
    names = list(grid.channels)
    runs = {}
    if params.direction in ("forward", "both"):
        runs["fwd"] = _integrate(grid, seeds, params, +1.0)
    if params.direction in ("backward", "both"):
        runs["bwd"] = _integrate(grid, seeds, params, -1.0)

    lines: list[Streamline | None] = []
    for i in range(seeds.shape[0]):
        parts = []
        seed_offset = 0
        if "bwd" in runs:
            pos, tv, al, sp, at, counts = runs["bwd"]
            nb = int(counts[i])
            if nb > 0:
                # Reverse into increasing-t order; drop the duplicated seed
                # vertex when a forward half follows.
                keep = slice(1, nb) if "fwd" in runs else slice(0, nb)
                sl = np.s_[keep, i]
                parts.append((
                    pos[sl][::-1], -tv[keep][::-1], al[sl][::-1], sp[sl][::-1],
                    {n: at[n][sl][::-1] for n in names},
                ))
                seed_offset = nb - 1
        if "fwd" in runs:
            pos, tv, al, sp, at, counts = runs["fwd"]
            nf = int(counts[i])
            if nf > 0:
                sl = np.s_[0:nf, i]
                parts.append((
                    pos[sl], tv[0:nf], al[sl], sp[sl],
                    {n: at[n][sl] for n in names},
                ))
        if not parts:
            lines.append(None)
            continue
        line = Streamline(
            positions=np.ascontiguousarray(np.concatenate([p[0] for p in parts])),
            t=np.concatenate([p[1] for p in parts]),
            s=np.concatenate([p[2] for p in parts]),
            speed=np.concatenate([p[3] for p in parts]),
            attrs={n: np.concatenate([p[4][n] for p in parts]) for n in names},
            seed_index=i,
            seed_offset=seed_offset,
        )
        lines.append(line if len(line) >= 2 else None)
    return lines


def trace(grid: VectorFieldGrid, seed, params: TraceParams) -> Streamline:
    """Trace a single streamline; raises :class:`TraceError` for a seed
    outside the grid or a trace too short to form a line."""
    seeds = np.asarray(seed, dtype=np.float64)[None, :]
    _, _, inside = sample_many(grid, seeds)
    if not inside[0]:
        raise TraceError(f"seed {np.asarray(seed).tolist()} is outside the grid bounds")
    line = _assemble(grid, seeds, params)[0]
    if line is None:
        raise TraceError("trace produced fewer than 2 vertices")
    return line


def trace_all(grid: VectorFieldGrid, seeds, params: TraceParams) -> TraceResult:
    """Trace every seed in lockstep; failures become drops in the stats."""
    seeds = np.atleast_2d(np.asarray(seeds, dtype=np.float64))
    maybe = _assemble(grid, seeds, params)
    lines = [ln for ln in maybe if ln is not None]
    stats = TraceStats(
        requested=seeds.shape[0],
        traced=len(lines),
        dropped=seeds.shape[0] - len(lines),
        total_vertices=sum(len(ln) for ln in lines),
    )
    return TraceResult(lines=lines, stats=stats)


# ---------------------------------------------------------------------------
# SLS serialization (streamline sets)
# ---------------------------------------------------------------------------

def save_streamlines(path, lines: Iterable[Streamline], channel_names=None) -> None:
    """Write an SLS file: ASCII header ``SLS1 <count> <channels...>``, then
    per line a uint32 vertex count followed by float32 rows
    (x, y, z, t, s, speed, channels...). Positions and attributes are
    quantized to float32."""
    lines = list(lines)
    if channel_names is None:
        channel_names = list(lines[0].attrs) if lines else []
    with open(path, "wb") as fh:
        head = " ".join(["SLS1", str(len(lines))] + list(channel_names))
        fh.write((head + "\n").encode("ascii"))
        for ln in lines:
            n = len(ln)
            fh.write(np.uint32(n).tobytes())
            rows = np.column_stack(
                [ln.positions, ln.t, ln.s, ln.speed]
                + [ln.attrs[c] for c in channel_names]
            ).astype("<f4")
            fh.write(rows.tobytes())


def load_streamlines(path) -> list[Streamline]:
    """Read an SLS file. seed_index is the file order; the seed vertex is
    recovered as the vertex with t closest to zero."""
    with open(path, "rb") as fh:
        head = fh.readline().decode("ascii").split()
        if len(head) < 2 or head[0] != "SLS1":
            raise TraceError(f"malformed SLS header: {head!r}")
        count = int(head[1])
        channel_names = head[2:]
        ncol = 6 + len(channel_names)
        out = []
        for i in range(count):
            raw = fh.read(4)
            if len(raw) != 4:
                raise TraceError(f"SLS truncated at line {i}")
            n = int(np.frombuffer(raw, dtype="<u4")[0])
            rows = np.frombuffer(fh.read(n * ncol * 4), dtype="<f4")
            if rows.size != n * ncol:
                raise TraceError(f"SLS line {i} truncated")
            rows = rows.reshape(n, ncol).astype(np.float64)
            t = rows[:, 3]
            out.append(Streamline(
                positions=rows[:, 0:3].copy(),
                t=t.copy(),
                s=rows[:, 4].copy(),
                speed=rows[:, 5].copy(),
                attrs={c: rows[:, 6 + j].copy() for j, c in enumerate(channel_names)},
                seed_index=i,
                seed_offset=int(np.argmin(np.abs(t))),
            ))
    return out
