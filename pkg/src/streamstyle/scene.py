"""Scene configs: JSON in, rendered frame out.

A scene config bundles every knob of the pipeline: dataset (SFG path or
analytic spec), seeding, trace parameters, the styleset, an optional
transfer function, camera, image size, and the global width scale.
``validate_config`` checks structure and cross-references without
rendering and reports findings with JSON-pointer paths; ``run_scene``
executes field -> tracer -> geometry -> raster and writes the PNG.

Rendering is a pure function of the config and dataset files: the RNG
seed comes from the config and stage timings go to stderr only.
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import field as field_mod
from . import tracer as tracer_mod
from .geometry import Camera, attribute_ranges, build_strips
from .style import (
    COLORMAPS,
    SHAPE_PRESETS,
    BandSpec,
    BandWidth,
    ColorMap,
    ColormapColor,
    ConstantColor,
    DirectionalColorPattern,
    LineStyle,
    LineStyleTransferFunction,
    PatternColor,
    ShapeMappingFunction,
    ShapePattern,
    StyleError,
    TransferEntry,
)
from .styleprog import compile_program
from .raster import Frame, downsample, rasterize, save_image

__all__ = [
    "ConfigError",
    "PipelineError",
    "Finding",
    "ValidationReport",
    "SceneConfig",
    "load_config",
    "validate_config",
    "build_styles",
    "run_scene",
]

STYLESET_VERSION = 1


class ConfigError(ValueError):
    """Config failed schema or cross-reference validation."""

    def __init__(self, report: "ValidationReport"):
        self.report = report
        super().__init__("; ".join(f"{f.path}: {f.message}" for f in report.findings))


class PipelineError(RuntimeError):
    """Failure in the render pipeline itself."""


@dataclass
class Finding:
    path: str
    message: str

    def as_dict(self):
        return {"path": self.path, "message": self.message}


@dataclass
class ValidationReport:
    findings: list[Finding] = dc_field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings

    def add(self, path: str, message: str):
        self.findings.append(Finding(path, message))

    def as_dict(self):
        return {"valid": self.ok, "findings": [f.as_dict() for f in self.findings]}


@dataclass
class SceneConfig:
    raw: dict
    base_dir: Path


def load_config(path) -> SceneConfig:
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(ValidationReport([Finding("", f"config file not found: {p}")]))
    except json.JSONDecodeError as exc:
        raise ConfigError(ValidationReport([Finding("", f"invalid JSON: {exc}")]))
    if not isinstance(raw, dict):
        raise ConfigError(ValidationReport([Finding("", "config root must be an object")]))
    return SceneConfig(raw=raw, base_dir=p.parent)


# ---------------------------------------------------------------------------
# Typed builders (shared by validation and execution)
# ---------------------------------------------------------------------------

def _vec3(obj, key, path, rep, default=None):
    v = obj.get(key, default)
    if v is None:
        rep.add(f"{path}/{key}", "missing required field")
        return None
    if (not isinstance(v, (list, tuple)) or len(v) != 3
            or not all(isinstance(x, (int, float)) for x in v)):
        rep.add(f"{path}/{key}", "expected a list of 3 numbers")
        return None
    return tuple(float(x) for x in v)


def _build_colormaps(cfg, rep) -> dict[str, ColorMap]:
    maps = dict(COLORMAPS)
    for i, obj in enumerate(cfg.get("colormaps", [])):
        path = f"/colormaps/{i}"
        if not isinstance(obj, dict):
            rep.add(path, "expected an object")
            continue
        name = obj.get("name")
        stops = obj.get("stops")
        if not isinstance(name, str) or not isinstance(stops, list):
            rep.add(path, "colormap needs 'name' and 'stops'")
            continue
        try:
            maps[name] = ColorMap(name, tuple(
                (float(u), tuple(float(c) for c in rgb)) for u, rgb in stops
            ))
        except (StyleError, TypeError, ValueError) as exc:
            rep.add(path, str(exc))
    return maps


def _build_color_source(obj, path, rep, colormaps, allow_pattern=True):
    if not isinstance(obj, dict):
        rep.add(path, "color source must be an object")
        return None
    kinds = [k for k in ("constant", "colormap", "pattern") if k in obj]
    if len(kinds) != 1:
        rep.add(path, "color source needs exactly one of constant/colormap/pattern")
        return None
    kind = kinds[0]
    if kind == "constant":
        rgb = obj["constant"]
        if not isinstance(rgb, list) or len(rgb) != 3:
            rep.add(f"{path}/constant", "expected [r, g, b] floats in 0..1")
            return None
        return ConstantColor(tuple(float(c) for c in rgb))
    if kind == "colormap":
        name = obj["colormap"]
        channel = obj.get("channel")
        if not isinstance(name, str) or name not in colormaps:
            rep.add(f"{path}/colormap", f"unknown colormap {name!r}")
            return None
        if not isinstance(channel, str):
            rep.add(f"{path}/channel", "colormap source needs a 'channel' name")
            return None
        return ColormapColor(name, channel)
    if not allow_pattern:
        rep.add(f"{path}/pattern", "patterns cannot nest inside patterns")
        return None
    p = obj["pattern"]
    if not isinstance(p, dict):
        rep.add(f"{path}/pattern", "expected an object")
        return None
    ca = _build_color_source(p.get("color_a"), f"{path}/pattern/color_a", rep,
                             colormaps, allow_pattern=False)
    cb = _build_color_source(p.get("color_b"), f"{path}/pattern/color_b", rep,
                             colormaps, allow_pattern=False)
    if ca is None or cb is None:
        return None
    try:
        return PatternColor(DirectionalColorPattern(
            color_a=ca, color_b=cb,
            l=float(p.get("l", 1.0)), a=float(p.get("a", 0.0)),
            c=float(p.get("c", 1.0)), w=float(p.get("w", 0.5)),
            x_source=p.get("x_source", "arc_length"),
            phase=float(p.get("phase", 0.0)),
        ))
    except StyleError as exc:
        rep.add(f"{path}/pattern", str(exc))
        return None


def _build_width(obj, path, rep):
    if obj is None:
        return BandWidth()
    if not isinstance(obj, dict):
        rep.add(path, "width must be an object")
        return None
    driver_obj = obj.get("driver")
    driver = None
    if driver_obj is not None:
        if isinstance(driver_obj, dict) and "attribute" in driver_obj:
            driver = str(driver_obj["attribute"])
        elif isinstance(driver_obj, dict) and "shape" in driver_obj:
            sh = driver_obj["shape"]
            mapping = sh.get("mapping", "constant")
            if isinstance(mapping, str):
                if mapping not in SHAPE_PRESETS:
                    rep.add(f"{path}/driver/shape/mapping",
                            f"unknown shape preset {mapping!r}; "
                            f"have {sorted(SHAPE_PRESETS)}")
                    return None
                fn = SHAPE_PRESETS[mapping]
            else:
                try:
                    fn = ShapeMappingFunction("custom", tuple(
                        (float(s), float(w)) for s, w in mapping.get("points", [])
                    ))
                except (StyleError, TypeError, ValueError) as exc:
                    rep.add(f"{path}/driver/shape/mapping", str(exc))
                    return None
            try:
                driver = ShapePattern(
                    mapping=fn, l=float(sh.get("l", 1.0)),
                    x_source=sh.get("x_source", "arc_length"),
                    phase=float(sh.get("phase", 0.0)),
                )
            except StyleError as exc:
                rep.add(f"{path}/driver/shape", str(exc))
                return None
        else:
            rep.add(f"{path}/driver", "driver must be null, {'attribute': name} "
                                      "or {'shape': {...}}")
            return None
    try:
        return BandWidth(w_min=float(obj.get("min", 0.0)),
                         w_max=float(obj.get("max", 1.0)), driver=driver)
    except StyleError as exc:
        rep.add(path, str(exc))
        return None


def build_styles(cfg: Mapping, rep: ValidationReport, colormaps) -> dict[str, LineStyle]:
    styles: dict[str, LineStyle] = {}
    arr = cfg.get("styles")
    if not isinstance(arr, list) or not arr:
        rep.add("/styles", "at least one style is required")
        return styles
    for i, sobj in enumerate(arr):
        path = f"/styles/{i}"
        if not isinstance(sobj, dict):
            rep.add(path, "expected an object")
            continue
        sid = sobj.get("id")
        if not isinstance(sid, str) or not sid:
            rep.add(f"{path}/id", "style needs a non-empty string id")
            continue
        if sid in styles:
            rep.add(f"{path}/id", f"duplicate style id {sid!r}")
            continue
        bands = []
        barr = sobj.get("bands")
        if not isinstance(barr, list) or not barr:
            rep.add(f"{path}/bands", "style needs at least one band")
            continue
        for j, bobj in enumerate(barr):
            bpath = f"{path}/bands/{j}"
            if not isinstance(bobj, dict):
                rep.add(bpath, "expected an object")
                continue
            color = _build_color_source(bobj.get("color"), f"{bpath}/color", rep, colormaps)
            width = _build_width(bobj.get("width"), f"{bpath}/width", rep)
            if color is None or width is None:
                continue
            try:
                bands.append(BandSpec(
                    color=color, width=width,
                    depth_offset=float(bobj.get("depth_offset", 0.0)),
                    is_halo=bool(bobj.get("halo", False)),
                ))
            except StyleError as exc:
                rep.add(bpath, str(exc))
        if len(bands) == len(barr):
            styles[sid] = LineStyle(sid, tuple(bands))
    return styles


def _build_tf(cfg, rep, styles) -> LineStyleTransferFunction | None:
    obj = cfg.get("transfer_function")
    if obj is None:
        if len(styles) > 1:
            rep.add("/transfer_function",
                    "required when more than one style is defined")
        return None
    path = "/transfer_function"
    if not isinstance(obj, dict):
        rep.add(path, "expected an object")
        return None
    guiding = obj.get("guiding")
    if not isinstance(guiding, str):
        rep.add(f"{path}/guiding", "transfer function needs a guiding attribute name")
        return None
    entries = []
    for i, e in enumerate(obj.get("entries", [])):
        epath = f"{path}/entries/{i}"
        rng = e.get("range") if isinstance(e, dict) else None
        sid = e.get("style") if isinstance(e, dict) else None
        if (not isinstance(rng, list) or len(rng) != 2
                or not all(isinstance(x, (int, float)) for x in rng)):
            rep.add(epath, "entry needs 'range': [lo, hi]")
            continue
        if not isinstance(sid, str) or sid not in styles:
            rep.add(epath, f"entry references unknown style {sid!r}")
            continue
        if not rng[0] < rng[1]:
            rep.add(epath, f"range [{rng[0]}, {rng[1]}) is empty")
            continue
        entries.append(TransferEntry(float(rng[0]), float(rng[1]), sid))
    default = obj.get("default")
    if not isinstance(default, str) or default not in styles:
        rep.add(f"{path}/default", f"unknown default style {default!r}")
        return None
    # Pairwise overlap check with per-entry findings.
    es = sorted(range(len(entries)), key=lambda k: entries[k].lo)
    for a, b in zip(es, es[1:]):
        if entries[b].lo < entries[a].hi:
            rep.add(f"{path}/entries/{b}",
                    f"range [{entries[b].lo}, {entries[b].hi}) overlaps "
                    f"[{entries[a].lo}, {entries[a].hi})")
    if rep.ok:
        return LineStyleTransferFunction(guiding, tuple(entries), default)
    return None


def _dataset_info(cfg, base_dir, rep):
    """Resolve channels and bounds without loading payloads.

    Returns (kind, channels, bounds) where kind is 'analytic' or 'path';
    bounds is (lo, hi) numpy arrays or None when unavailable.
    """
    obj = cfg.get("dataset")
    if not isinstance(obj, dict):
        rep.add("/dataset", "dataset must be an object with 'analytic' or 'path'")
        return None
    if "analytic" in obj:
        a = obj["analytic"]
        if not isinstance(a, dict):
            rep.add("/dataset/analytic", "expected an object")
            return None
        kind = a.get("kind")
        if kind not in field_mod.ANALYTIC_KINDS:
            rep.add("/dataset/analytic/kind",
                    f"unknown kind {kind!r}; choose from {field_mod.ANALYTIC_KINDS}")
            return None
        dims = a.get("dims", [16, 16, 16])
        if (not isinstance(dims, list) or len(dims) != 3
                or not all(isinstance(d, int) and d >= 2 for d in dims)):
            rep.add("/dataset/analytic/dims", "dims must be 3 integers >= 2")
            return None
        lo, hi = field_mod._DOMAINS[kind]
        return ("analytic", ["speed", "temperature", "pressure"],
                (np.array(lo), np.array(hi)))
    if "path" in obj:
        p = Path(obj["path"])
        if not p.is_absolute():
            p = base_dir / p
        if not p.exists():
            rep.add("/dataset/path", f"dataset file not found: {p}")
            return None
        try:
            with open(p, "rb") as fh:
                parts = fh.readline().decode("ascii", errors="replace").split()
                if len(parts) != 11 or parts[0] != "SFG1":
                    raise field_mod.SFGError("malformed header")
                dims = np.array([int(x) for x in parts[1:4]])
                origin = np.array([float(x) for x in parts[4:7]])
                spacing = np.array([float(x) for x in parts[7:10]])
                names = []
                for _ in range(int(parts[10])):
                    names.append(fh.readline().decode("ascii").rstrip("\n")
                                 .removeprefix("channel "))
        except (field_mod.SFGError, ValueError) as exc:
            rep.add("/dataset/path", f"unreadable SFG header: {exc}")
            return None
        return ("path", names, (origin, origin + (dims - 1) * spacing))
    rep.add("/dataset", "dataset needs 'analytic' or 'path'")
    return None


def _build_seeds(cfg, rep, bounds):
    obj = cfg.get("seeds")
    if not isinstance(obj, dict):
        rep.add("/seeds", "seeds must be an object")
        return None
    strategy = obj.get("strategy")
    if strategy not in ("uniform_grid", "random"):
        rep.add("/seeds/strategy", f"unknown strategy {strategy!r}")
        return None
    region = obj.get("region")
    if region is None:
        if bounds is None:
            rep.add("/seeds/region", "region required (dataset bounds unknown)")
            return None
        region = [list(bounds[0]), list(bounds[1])]
    if (not isinstance(region, list) or len(region) != 2
            or any(len(r) != 3 for r in region)):
        rep.add("/seeds/region", "region must be [[x0,y0,z0],[x1,y1,z1]]")
        return None
    if strategy == "uniform_grid":
        cd = obj.get("dims", obj.get("count"))
        if isinstance(cd, list):
            cd = tuple(int(x) for x in cd)
        elif not isinstance(cd, int):
            rep.add("/seeds/dims", "uniform_grid needs 'dims' (int or [nx,ny,nz])")
            return None
    else:
        cd = obj.get("count")
        if not isinstance(cd, int) or cd < 1:
            rep.add("/seeds/count", "random strategy needs a positive integer count")
            return None
    try:
        return tracer_mod.SeedSpec(
            strategy=strategy, count_or_dims=cd,
            region=(tuple(float(x) for x in region[0]),
                    tuple(float(x) for x in region[1])),
            rng_seed=int(obj.get("rng_seed", 0)),
        )
    except (TypeError, ValueError) as exc:
        rep.add("/seeds", str(exc))
        return None


def _build_trace(cfg, rep):
    obj = cfg.get("trace", {})
    if not isinstance(obj, dict):
        rep.add("/trace", "trace must be an object")
        return None
    try:
        return tracer_mod.TraceParams(
            h=float(obj.get("h", 0.01)),
            max_steps=int(obj.get("max_steps", 500)),
            max_time=(None if obj.get("max_time") is None
                      else float(obj["max_time"])),
            min_speed=float(obj.get("min_speed", 1e-6)),
            direction=obj.get("direction", "both"),
        )
    except (TypeError, ValueError) as exc:
        rep.add("/trace", str(exc))
        return None


def _build_camera(cfg, rep, aspect):
    obj = cfg.get("camera")
    if not isinstance(obj, dict):
        rep.add("/camera", "camera must be an object")
        return None
    eye = _vec3(obj, "eye", "/camera", rep)
    look = _vec3(obj, "look_at", "/camera", rep)
    up = _vec3(obj, "up", "/camera", rep, default=(0.0, 1.0, 0.0))
    if eye is None or look is None or up is None:
        return None
    try:
        return Camera(
            eye=eye, look_at=look, up=up,
            fov_y=float(obj.get("fov_y", 45.0)),
            aspect=float(obj.get("aspect", aspect)),
            near=float(obj.get("near", 0.05)),
            far=float(obj.get("far", 1000.0)),
        )
    except ValueError as exc:
        rep.add("/camera", str(exc))
        return None


def _build_image(cfg, rep):
    obj = cfg.get("image", {})
    if not isinstance(obj, dict):
        rep.add("/image", "image must be an object")
        return None
    w = obj.get("width", 512)
    h = obj.get("height", 512)
    ss = obj.get("supersample", 1)
    bg = obj.get("background", [255, 255, 255, 255])
    if not (isinstance(w, int) and isinstance(h, int) and w >= 1 and h >= 1):
        rep.add("/image", "width/height must be positive integers")
        return None
    if not (isinstance(ss, int) and ss >= 1):
        rep.add("/image/supersample", "supersample must be a positive integer")
        return None
    if (not isinstance(bg, list) or len(bg) != 4
            or not all(isinstance(c, int) and 0 <= c <= 255 for c in bg)):
        rep.add("/image/background", "background must be 4 bytes (RGBA)")
        return None
    return {"width": w, "height": h, "supersample": ss, "background": tuple(bg)}


@dataclass
class BuiltScene:
    dataset: tuple
    seeds: tracer_mod.SeedSpec
    trace_params: tracer_mod.TraceParams
    styles: dict[str, LineStyle]
    tf: LineStyleTransferFunction | None
    colormaps: dict[str, ColorMap]
    camera: Camera
    image: dict
    global_scale: float
    output: str


def _validate_and_build(config: SceneConfig) -> tuple[ValidationReport, BuiltScene | None]:
    cfg = config.raw
    rep = ValidationReport()

    version = cfg.get("styleset_version", STYLESET_VERSION)
    if version != STYLESET_VERSION:
        rep.add("/styleset_version", f"unsupported version {version!r}")

    colormaps = _build_colormaps(cfg, rep)
    styles = build_styles(cfg, rep, colormaps)
    tf = _build_tf(cfg, rep, styles) if styles else None
    info = _dataset_info(cfg, config.base_dir, rep)
    bounds = info[2] if info else None
    seeds = _build_seeds(cfg, rep, bounds)
    trace_params = _build_trace(cfg, rep)
    image = _build_image(cfg, rep)
    camera = None
    if image:
        camera = _build_camera(cfg, rep, aspect=image["width"] / image["height"])
    gs = cfg.get("global_scale", 0.01)
    if not isinstance(gs, (int, float)) or gs <= 0:
        rep.add("/global_scale", "global_scale must be a positive number")
    output = cfg.get("output", "out.png")
    if not isinstance(output, str):
        rep.add("/output", "output must be a path string")

    # Channel cross-references against the dataset's channel list.
    if info and styles:
        known = set(info[1]) | {"t", "s", "speed"}
        from .style import referenced_channels, referenced_styles
        use_tf = tf if tf is not None else (
            LineStyleTransferFunction.single(next(iter(styles)))
            if len(styles) == 1 else None)
        if use_tf is not None and all(
                e.style_id in styles for e in use_tf.entries) and (
                use_tf.default_style in styles):
            for name in referenced_channels(styles, use_tf):
                if name not in known:
                    rep.add("/styles", f"referenced channel {name!r} is not in the "
                                       f"dataset (has {sorted(known)})")
    # Seed region must intersect dataset bounds.
    if seeds and bounds is not None:
        lo = np.asarray(seeds.region[0])
        hi = np.asarray(seeds.region[1])
        if np.any(hi < bounds[0]) or np.any(lo > bounds[1]):
            rep.add("/seeds/region", "region does not intersect dataset bounds")

    if not rep.ok:
        return rep, None
    return rep, BuiltScene(
        dataset=info, seeds=seeds, trace_params=trace_params, styles=styles,
        tf=tf, colormaps=colormaps, camera=camera, image=image,
        global_scale=float(gs), output=output,
    )


def validate_config(config_path) -> ValidationReport:
    """Schema and cross-reference check without rendering."""
    try:
        config = load_config(config_path)
    except ConfigError as exc:
        return exc.report
    rep, _ = _validate_and_build(config)
    return rep


def _load_dataset(config: SceneConfig):
    obj = config.raw["dataset"]
    if "analytic" in obj:
        a = obj["analytic"]
        return field_mod.gen_analytic_field(
            a["kind"], tuple(a.get("dims", [16, 16, 16])), a.get("params", {}))
    p = Path(obj["path"])
    if not p.is_absolute():
        p = config.base_dir / p
    return field_mod.load_grid(p)


def run_scene(config_path, threads: int = 0, output_override: str | None = None,
              phase_override: float | None = None,
              cache_lines: str | None = None, quiet: bool = False):
    """Execute the full pipeline for a config; returns (output_path, stats).

    Raises :class:`ConfigError` for invalid configs and
    :class:`PipelineError` for failures during execution.
    """
    config = load_config(config_path)
    rep, scene = _validate_and_build(config)
    if not rep.ok:
        raise ConfigError(rep)

    timings: dict[str, float] = {}
    stats: dict[str, Any] = {}

    def _stage(name):
        return _StageTimer(timings, name)

    try:
        with _stage("dataset_ms"):
            grid = _load_dataset(config)
    except field_mod.FieldError as exc:
        raise PipelineError(f"dataset: {exc}") from exc

    styles = scene.styles
    if phase_override is not None:
        styles = {sid: st.with_phase(phase_override % 1.0)
                  for sid, st in styles.items()}

    try:
        with _stage("trace_ms"):
            if cache_lines and Path(cache_lines).exists():
                lines = tracer_mod.load_streamlines(cache_lines)
                stats["trace_cache"] = "hit"
                drops = 0
            else:
                pts = tracer_mod.seed_points(scene.seeds, grid)
                result = tracer_mod.trace_all(grid, pts, scene.trace_params)
                lines, drops = result.lines, result.stats.dropped
                if cache_lines:
                    # Round-trip through the cache so cached and fresh runs
                    # render from identical float32-quantized lines.
                    tracer_mod.save_streamlines(cache_lines, lines)
                    lines = tracer_mod.load_streamlines(cache_lines)
                    stats["trace_cache"] = "miss"
    except (tracer_mod.SeedError, tracer_mod.TraceError) as exc:
        raise PipelineError(f"trace: {exc}") from exc
    if not lines:
        raise PipelineError("trace: no streamlines produced (all seeds dropped)")

    stats["lines"] = len(lines)
    stats["vertices"] = int(sum(len(ln) for ln in lines))
    stats["trace_drops"] = int(drops)

    with _stage("build_ms"):
        ranges = attribute_ranges(lines, grid.channel_ranges)
        program = compile_program(styles, scene.tf, ranges, scene.colormaps)
        strips = build_strips(
            lines, scene.camera, styles, scene.tf, scene.global_scale,
            attr_ranges=ranges, channel_names=program.channel_names)

    img = scene.image
    ss = img["supersample"]
    with _stage("raster_ms"):
        frame = Frame.new(img["width"] * ss, img["height"] * ss,
                          background=img["background"], far=scene.camera.far)
        rasterize(strips, scene.camera, frame, program, threads=threads)
        if ss > 1:
            frame = downsample(frame, ss)

    out_path = Path(output_override or scene.output)
    if not out_path.is_absolute():
        out_path = (Path.cwd() / out_path) if output_override else (config.base_dir / out_path)
    with _stage("encode_ms"):
        out_path.parent.mkdir(parents=True, exist_ok=True)
        save_image(frame, out_path)

    stats.update({k: round(v, 2) for k, v in timings.items()})
    if not quiet:
        for k, v in stats.items():
            print(f"{k}={v}", file=sys.stderr)
    return out_path, stats


class _StageTimer:
    def __init__(self, sink, name):
        self.sink = sink
        self.name = name

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.sink[self.name] = (time.perf_counter() - self.t0) * 1000.0
        return False
