"""HTTP render service for interactive style exploration.

Sessions trace once and cache the streamlines; style and camera edits
never re-trace, which is what keeps the edit-preview loop fast. Style
updates are validated and swapped in atomically as immutable snapshots,
so a concurrent render sees entirely the old or entirely the new styleset.
Every endpoint is a deterministic function of (session state, request
body): identical render requests return byte-identical PNGs.
"""

from __future__ import annotations

import base64
import io
import itertools
import tempfile
import threading
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Any

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from . import field as field_mod
from . import tracer as tracer_mod
from .geometry import Camera, attribute_ranges, build_strips
from .scene import (
    ValidationReport,
    _build_camera,
    _build_colormaps,
    _build_seeds,
    _build_tf,
    _build_trace,
    build_styles,
)
from .style import COLORMAPS, SHAPE_PRESETS, LineStyleTransferFunction, referenced_channels
from .styleprog import compile_program
from .raster import Frame, downsample, rasterize, save_image

__all__ = ["create_app"]


@dataclass
class StyleSnapshot:
    styles: dict
    tf: Any
    colormaps: dict


@dataclass
class Session:
    id: str
    grid: field_mod.VectorFieldGrid
    lines: list
    ranges: dict
    stats: dict
    style: StyleSnapshot | None = None
    lock: threading.Lock = dc_field(default_factory=threading.Lock)


def _error(status: int, message: str, findings=None):
    body = {"error": message}
    if findings is not None:
        body["findings"] = findings
    return JSONResponse(body, status_code=status)


def create_app() -> FastAPI:
    app = FastAPI(title="streamstyle render service")
    sessions: dict[str, Session] = {}
    counter = itertools.count(1)
    registry_lock = threading.Lock()

    @app.exception_handler(Exception)
    async def _unhandled(request: Request, exc: Exception):
        return _error(500, f"{type(exc).__name__}: {exc}")

    @app.get("/colormaps")
    def get_colormaps():
        return {
            name: {"stops": [[u, list(rgb)] for u, rgb in cm.stops]}
            for name, cm in COLORMAPS.items()
        }

    @app.get("/style-presets")
    def get_style_presets():
        return {
            "shape_mappings": {
                name: {"points": [[s, w] for s, w in fn.points]}
                for name, fn in SHAPE_PRESETS.items()
            },
            "analytic_kinds": list(field_mod.ANALYTIC_KINDS),
            "builtin_attributes": ["t", "s", "speed"],
        }

    @app.post("/sessions")
    async def create_session(request: Request):
        try:
            body = await request.json()
        except Exception:
            return _error(400, "request body is not valid JSON")
        if not isinstance(body, dict):
            return _error(400, "request body must be an object")

        rep = ValidationReport()
        grid = None
        ds = body.get("dataset")
        if not isinstance(ds, dict):
            rep.add("/dataset", "dataset must be an object")
        elif "analytic" in ds:
            a = ds["analytic"]
            try:
                grid = field_mod.gen_analytic_field(
                    a.get("kind"), tuple(a.get("dims", [16, 16, 16])),
                    a.get("params", {}))
            except (field_mod.FieldError, TypeError) as exc:
                rep.add("/dataset/analytic", str(exc))
        elif "sfg_b64" in ds:
            try:
                payload = base64.b64decode(ds["sfg_b64"])
                with tempfile.NamedTemporaryFile(suffix=".sfg") as fh:
                    fh.write(payload)
                    fh.flush()
                    grid = field_mod.load_grid(fh.name)
            except (field_mod.SFGError, ValueError) as exc:
                rep.add("/dataset/sfg_b64", str(exc))
        elif "path" in ds:
            try:
                grid = field_mod.load_grid(ds["path"])
            except (field_mod.FieldError, OSError) as exc:
                rep.add("/dataset/path", str(exc))
        else:
            rep.add("/dataset", "dataset needs 'analytic', 'path', or 'sfg_b64'")
        if not rep.ok or grid is None:
            return _error(400, "invalid session request", [f.as_dict() for f in rep.findings])

        bounds = (grid.bounds_min, grid.bounds_max)
        spec = _build_seeds(body, rep, bounds)
        params = _build_trace(body, rep)
        if not rep.ok:
            return _error(400, "invalid session request", [f.as_dict() for f in rep.findings])

        try:
            pts = tracer_mod.seed_points(spec, grid)
            result = tracer_mod.trace_all(grid, pts, params)
        except (tracer_mod.SeedError, tracer_mod.TraceError) as exc:
            return _error(422, f"trace failed: {exc}")
        if not result.lines:
            return _error(422, "trace produced no usable streamlines "
                               f"({result.stats.dropped} seeds dropped)")

        sid = f"s{next(counter)}"
        stats = {
            "lines": result.stats.traced,
            "vertices": result.stats.total_vertices,
            "dropped": result.stats.dropped,
            "channels": list(grid.channels),
        }
        with registry_lock:
            sessions[sid] = Session(
                id=sid, grid=grid, lines=result.lines,
                ranges=attribute_ranges(result.lines, grid.channel_ranges),
                stats=stats)
        return JSONResponse({"session_id": sid, "stats": stats}, status_code=201)

    @app.put("/sessions/{sid}/style")
    async def put_style(sid: str, request: Request):
        sess = sessions.get(sid)
        if sess is None:
            return _error(404, f"unknown session {sid!r}")
        try:
            body = await request.json()
        except Exception:
            return _error(400, "request body is not valid JSON")

        rep = ValidationReport()
        colormaps = _build_colormaps(body, rep)
        styles = build_styles(body, rep, colormaps)
        tf = _build_tf(body, rep, styles) if styles else None
        if rep.ok and styles:
            use_tf = tf if tf is not None else (
                LineStyleTransferFunction.single(next(iter(styles))))
            known = set(sess.grid.channels) | {"t", "s", "speed"}
            for name in referenced_channels(styles, use_tf):
                if name not in known:
                    rep.add("/styles", f"referenced channel {name!r} not in "
                                       f"session dataset (has {sorted(known)})")
        if not rep.ok:
            return JSONResponse(
                {"valid": False, "findings": [f.as_dict() for f in rep.findings]},
                status_code=409)
        # Atomic swap: renders pick up the whole snapshot or none of it.
        sess.style = StyleSnapshot(styles=styles, tf=tf, colormaps=colormaps)
        return {"valid": True, "findings": []}

    @app.post("/sessions/{sid}/render")
    async def render(sid: str, request: Request):
        sess = sessions.get(sid)
        if sess is None:
            return _error(404, f"unknown session {sid!r}")
        snapshot = sess.style
        if snapshot is None:
            return _error(422, "session has no style state; PUT a styleset first")
        try:
            body = await request.json()
        except Exception:
            return _error(400, "request body is not valid JSON")

        rep = ValidationReport()
        width = body.get("width", 512)
        height = body.get("height", 512)
        if not (isinstance(width, int) and isinstance(height, int)
                and 1 <= width <= 4096 and 1 <= height <= 4096):
            rep.add("/width", "width/height must be integers in 1..4096")
        camera = _build_camera(body, rep, aspect=(width / height if height else 1.0))
        gs = body.get("global_scale", 0.01)
        if not isinstance(gs, (int, float)) or gs <= 0:
            rep.add("/global_scale", "global_scale must be positive")
        ss = body.get("supersample", 1)
        if not isinstance(ss, int) or ss < 1 or ss > 4:
            rep.add("/supersample", "supersample must be an integer in 1..4")
        bg = tuple(body.get("background", (255, 255, 255, 255)))
        phase = body.get("phase")
        if not rep.ok:
            return _error(400, "invalid render request",
                          [f.as_dict() for f in rep.findings])

        styles = snapshot.styles
        if phase is not None:
            styles = {k: st.with_phase(float(phase) % 1.0) for k, st in styles.items()}

        timings = {}
        t0 = time.perf_counter()
        program = compile_program(styles, snapshot.tf, sess.ranges, snapshot.colormaps)
        strips = build_strips(sess.lines, camera, styles, snapshot.tf, float(gs),
                              attr_ranges=sess.ranges,
                              channel_names=program.channel_names)
        timings["strips"] = (time.perf_counter() - t0) * 1000

        t0 = time.perf_counter()
        frame = Frame.new(width * ss, height * ss, background=bg, far=camera.far)
        rasterize(strips, camera, frame, program)
        if ss > 1:
            frame = downsample(frame, ss)
        timings["raster"] = (time.perf_counter() - t0) * 1000

        t0 = time.perf_counter()
        buf = io.BytesIO()
        from PIL import Image

        Image.fromarray(frame.color, mode="RGBA").save(buf, format="PNG")
        timings["encode"] = (time.perf_counter() - t0) * 1000

        header = ";".join(f"{k}={v:.2f}" for k, v in timings.items())
        return Response(content=buf.getvalue(), media_type="image/png",
                        headers={"X-Render-Millis": header})

    return app
