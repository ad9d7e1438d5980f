"""Numba kernels for the tile-parallel software rasterizer.

Tiles are disjoint write regions and each tile replays its triangles in
submission order, so the rendered frame is bit-identical regardless of the
worker count. All floating-point work is strict IEEE (no fastmath).

The thread pool is sized before numba is imported so worker counts above
the physical core count still work (tiles are tiny; oversubscription is
harmless).
"""

import os

os.environ.setdefault("NUMBA_NUM_THREADS", str(max(os.cpu_count() or 1, 16)))
# Skip the TBB probe; omp keeps the pool quiet and deterministic here.
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import warnings

import numpy as np
from numba import njit, prange
from numba.core.errors import NumbaPerformanceWarning, NumbaWarning

from .styleprog import (
    FC_ALO, FC_AHI, FC_B, FC_G, FC_R, FD_OFF, FP_A, FP_C, FP_L, FP_PH, FP_W,
    FPA_ALO, FPA_AHI, FPA_B, FPA_G, FPA_R, FPB_ALO, FPB_AHI, FPB_B, FPB_G,
    FPB_R, FSH_L, FSH_PHASE, FW_ALO, FW_AHI, FW_MAX, FW_MIN, IC_CM_LEN,
    IC_CM_OFF, IC_KIND, IC_SLOT, IHALO, IP_XSRC, IPA_CM_LEN, IPA_CM_OFF,
    IPA_KIND, IPA_SLOT, IPB_CM_LEN, IPB_CM_OFF, IPB_KIND, IPB_SLOT, ISH_LEN,
    ISH_OFF, ISH_XSRC, IW_DRV, IW_SLOT, SLOT_CDEPTH, SLOT_S, SLOT_SPEED,
    SLOT_T, SLOT_U,
)

warnings.filterwarnings("ignore", category=NumbaPerformanceWarning)
warnings.filterwarnings("ignore", category=NumbaWarning, module=r"numba\.np\.ufunc")


@njit(cache=True, inline="always")
def _wrap01(v):
    r = v % 1.0
    if r >= 1.0:
        r -= 1.0
    return r


@njit(cache=True, inline="always")
def _norm01(v, lo, hi):
    if hi <= lo:
        return 0.5
    u = (v - lo) / (hi - lo)
    if u < 0.0:
        return 0.0
    if u > 1.0:
        return 1.0
    return u


@njit(cache=True, inline="always")
def _piecewise(xs, ys, off, n, v):
    j = off
    end = off + n - 1
    while j < end - 1 and v > xs[j + 1]:
        j += 1
    f = (v - xs[j]) / (xs[j + 1] - xs[j])
    return ys[j] + (ys[j + 1] - ys[j]) * f


@njit(cache=True)
def shade_fragment_kernel(attrs, width_scale,
                          tf_lo, tf_hi, tf_sid, tf_default,
                          guide_slot, guide_lo, guide_hi,
                          sty_start, band_f, band_i,
                          cm_pos, cm_r, cm_g, cm_b, shp_x, shp_w,
                          out):
    """Resolve style, band, color, and depth for one fragment.

    ``attrs`` is the interpolated slot vector; on success ``out`` receives
    (r, g, b, depth, band_row, b_coord) and True is returned. False means
    the fragment falls in a transparent margin and is discarded.
    """
    gv = _norm01(attrs[guide_slot], guide_lo, guide_hi)
    sid = tf_default
    for e in range(tf_lo.shape[0]):
        hi = tf_hi[e]
        if (tf_lo[e] <= gv and gv < hi) or (gv == hi and hi == 1.0):
            sid = tf_sid[e]
            break

    U = abs(attrs[SLOT_U]) * width_scale
    cum = 0.0
    chosen = -1
    bcoord = 0.0
    last_pos = -1
    last_cum = 0.0
    last_w = 0.0
    for k in range(sty_start[sid], sty_start[sid + 1]):
        drv = band_i[k, IW_DRV]
        wmin = band_f[k, FW_MIN]
        wmax = band_f[k, FW_MAX]
        if drv == 0:
            wk = wmax
        elif drv == 1:
            a = _norm01(attrs[band_i[k, IW_SLOT]], band_f[k, FW_ALO], band_f[k, FW_AHI])
            wk = wmin + (wmax - wmin) * a
        else:
            x = attrs[SLOT_S] if band_i[k, ISH_XSRC] == 0 else attrs[SLOT_T]
            sx = _wrap01(x / band_f[k, FSH_L] + band_f[k, FSH_PHASE])
            m = _piecewise(shp_x, shp_w, band_i[k, ISH_OFF], band_i[k, ISH_LEN], sx)
            wk = wmin + (wmax - wmin) * m
        if wk > 0.0:
            if U < cum + wk:
                chosen = k
                bcoord = (U - cum) / wk
                break
            last_pos = k
            last_cum = cum
            last_w = wk
        cum += wk
    if chosen < 0:
        # Strip edge belongs to the outermost non-empty band.
        if last_pos >= 0 and U == cum:
            chosen = last_pos
            bcoord = (U - last_cum) / last_w
        else:
            return False

    k = chosen
    ckind = band_i[k, IC_KIND]
    if ckind == 2:
        x = attrs[SLOT_S] if band_i[k, IP_XSRC] == 0 else attrs[SLOT_T]
        fd = _wrap01(x / band_f[k, FP_L] + band_f[k, FP_PH]
                     + band_f[k, FP_A] * bcoord ** band_f[k, FP_C]) - band_f[k, FP_W]
        if fd < 0.0:
            if band_i[k, IPA_KIND] == 0:
                r, g, b = band_f[k, FPA_R], band_f[k, FPA_G], band_f[k, FPA_B]
            else:
                u = _norm01(attrs[band_i[k, IPA_SLOT]], band_f[k, FPA_ALO], band_f[k, FPA_AHI])
                off, n = band_i[k, IPA_CM_OFF], band_i[k, IPA_CM_LEN]
                r = _piecewise(cm_pos, cm_r, off, n, u)
                g = _piecewise(cm_pos, cm_g, off, n, u)
                b = _piecewise(cm_pos, cm_b, off, n, u)
        else:
            if band_i[k, IPB_KIND] == 0:
                r, g, b = band_f[k, FPB_R], band_f[k, FPB_G], band_f[k, FPB_B]
            else:
                u = _norm01(attrs[band_i[k, IPB_SLOT]], band_f[k, FPB_ALO], band_f[k, FPB_AHI])
                off, n = band_i[k, IPB_CM_OFF], band_i[k, IPB_CM_LEN]
                r = _piecewise(cm_pos, cm_r, off, n, u)
                g = _piecewise(cm_pos, cm_g, off, n, u)
                b = _piecewise(cm_pos, cm_b, off, n, u)
    elif ckind == 1:
        u = _norm01(attrs[band_i[k, IC_SLOT]], band_f[k, FC_ALO], band_f[k, FC_AHI])
        off, n = band_i[k, IC_CM_OFF], band_i[k, IC_CM_LEN]
        r = _piecewise(cm_pos, cm_r, off, n, u)
        g = _piecewise(cm_pos, cm_g, off, n, u)
        b = _piecewise(cm_pos, cm_b, off, n, u)
    else:
        r, g, b = band_f[k, FC_R], band_f[k, FC_G], band_f[k, FC_B]

    depth = attrs[SLOT_CDEPTH]
    if band_i[k, IHALO] == 1:
        depth += band_f[k, FD_OFF] * bcoord

    out[0] = r
    out[1] = g
    out[2] = b
    out[3] = depth
    out[4] = float(k)
    out[5] = bcoord
    return True


@njit(cache=True, inline="always")
def _project(vx, vy, w, fx, fy, cx, cy):
    sx = cx + fx * (vx / w)
    sy = cy - fy * (vy / w)
    return sx, sy


@njit(cache=True)
def _clip_near(vv, av, i0, i1, i2, near, pxs, pys, pws, pattr):
    """Sutherland-Hodgman clip of one triangle against view depth >= near.

    Writes projected-ready view coords and lerped attributes into the
    4-slot scratch arrays; returns the polygon vertex count (0, 3, or 4).
    """
    na = av.shape[1]
    idx = (i0, i1, i2)
    count = 0
    for e in range(3):
        ia = idx[e]
        ib = idx[(e + 1) % 3]
        wa = np.float64(vv[ia, 2])
        wb = np.float64(vv[ib, 2])
        ina = wa >= near
        inb = wb >= near
        if ina:
            pxs[count] = vv[ia, 0]
            pys[count] = vv[ia, 1]
            pws[count] = wa
            for j in range(na):
                pattr[count, j] = av[ia, j]
            count += 1
        if ina != inb:
            f = (near - wa) / (wb - wa)
            pxs[count] = vv[ia, 0] + f * (vv[ib, 0] - vv[ia, 0])
            pys[count] = vv[ia, 1] + f * (vv[ib, 1] - vv[ia, 1])
            pws[count] = near
            for j in range(na):
                pattr[count, j] = av[ia, j] + f * (av[ib, j] - av[ia, j])
            count += 1
    return count


@njit(cache=True, parallel=True)
def setup_triangles(vview, tris, near, fx, fy, cx, cy, width, height,
                    bbox, flags):
    """Per-triangle screen bounding boxes and near-clip classification.

    flags: 0 skip, 1 plain, 2 needs near clipping. bbox holds inclusive
    pixel loop bounds.
    """
    no_attrs = np.zeros((vview.shape[0], 0), np.float32)
    for t in prange(tris.shape[0]):
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        w0 = np.float64(vview[i0, 2])
        w1 = np.float64(vview[i1, 2])
        w2 = np.float64(vview[i2, 2])
        flags[t] = 0
        if w0 < near and w1 < near and w2 < near:
            continue
        minx = 1e30
        miny = 1e30
        maxx = -1e30
        maxy = -1e30
        if w0 >= near and w1 >= near and w2 >= near:
            flags[t] = 1
            for q in range(3):
                i = tris[t, q]
                sx, sy = _project(np.float64(vview[i, 0]), np.float64(vview[i, 1]),
                                  np.float64(vview[i, 2]), fx, fy, cx, cy)
                minx = min(minx, sx); maxx = max(maxx, sx)
                miny = min(miny, sy); maxy = max(maxy, sy)
        else:
            flags[t] = 2
            pxs = np.empty(4, np.float64)
            pys = np.empty(4, np.float64)
            pws = np.empty(4, np.float64)
            pattr = np.empty((4, 0), np.float64)
            npoly = _clip_near(vview, no_attrs, i0, i1, i2, near, pxs, pys, pws, pattr)
            if npoly < 3:
                flags[t] = 0
                continue
            for q in range(npoly):
                sx, sy = _project(pxs[q], pys[q], pws[q], fx, fy, cx, cy)
                minx = min(minx, sx); maxx = max(maxx, sx)
                miny = min(miny, sy); maxy = max(maxy, sy)
        x0 = int(np.ceil(minx - 0.5))
        x1 = int(np.floor(maxx - 0.5))
        y0 = int(np.ceil(miny - 0.5))
        y1 = int(np.floor(maxy - 0.5))
        if x0 < 0:
            x0 = 0
        if y0 < 0:
            y0 = 0
        if x1 > width - 1:
            x1 = width - 1
        if y1 > height - 1:
            y1 = height - 1
        if x0 > x1 or y0 > y1:
            flags[t] = 0
            continue
        bbox[t, 0] = x0
        bbox[t, 1] = y0
        bbox[t, 2] = x1
        bbox[t, 3] = y1


@njit(cache=True)
def bin_count(bbox, flags, tile, ntx, counts):
    for t in range(flags.shape[0]):
        if flags[t] == 0:
            continue
        tx0 = bbox[t, 0] // tile
        ty0 = bbox[t, 1] // tile
        tx1 = bbox[t, 2] // tile
        ty1 = bbox[t, 3] // tile
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                counts[ty * ntx + tx] += 1


@njit(cache=True)
def bin_fill(bbox, flags, tile, ntx, offsets, cursor, items):
    for t in range(flags.shape[0]):
        if flags[t] == 0:
            continue
        tx0 = bbox[t, 0] // tile
        ty0 = bbox[t, 1] // tile
        tx1 = bbox[t, 2] // tile
        ty1 = bbox[t, 3] // tile
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                tid = ty * ntx + tx
                items[offsets[tid] + cursor[tid]] = t
                cursor[tid] += 1


@njit(cache=True, inline="always")
def _edge_accept(e, dx, dy):
    """Top-left style tie rule: shared-edge pixels land in exactly one
    triangle, keeping submission-order determinism meaningful."""
    if e > 0.0:
        return True
    if e < 0.0:
        return False
    return dy > 0.0 or (dy == 0.0 and dx > 0.0)


@njit(cache=True, parallel=True)
def raster_tiles(vview, attrs_v, tris, flags, bbox, offsets, items,
                 color, depth, tile, ntx, nty, width, height,
                 near, fx, fy, cx, cy, width_scale,
                 tf_lo, tf_hi, tf_sid, tf_default,
                 guide_slot, guide_lo, guide_hi,
                 sty_start, band_f, band_i,
                 cm_pos, cm_r, cm_g, cm_b, shp_x, shp_w):
    na = attrs_v.shape[1]
    for tid in prange(ntx * nty):
        ty = tid // ntx
        tx = tid - ty * ntx
        tpx0 = tx * tile
        tpy0 = ty * tile
        tpx1 = min(tpx0 + tile, width) - 1
        tpy1 = min(tpy0 + tile, height) - 1

        frag = np.empty(na, np.float64)
        out = np.empty(6, np.float64)
        pxs = np.empty(4, np.float64)
        pys = np.empty(4, np.float64)
        pws = np.empty(4, np.float64)
        pattr = np.empty((4, na), np.float64)
        sxs = np.empty(4, np.float64)
        sys_ = np.empty(4, np.float64)

        for it in range(offsets[tid], offsets[tid + 1]):
            t = items[it]
            i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
            if flags[t] == 1:
                npoly = 3
                for q in range(3):
                    i = tris[t, q]
                    pws[q] = np.float64(vview[i, 2])
                    sxq, syq = _project(np.float64(vview[i, 0]),
                                        np.float64(vview[i, 1]), pws[q],
                                        fx, fy, cx, cy)
                    sxs[q] = sxq
                    sys_[q] = syq
                    for j in range(na):
                        pattr[q, j] = attrs_v[i, j]
            else:
                npoly = _clip_near(vview, attrs_v, i0, i1, i2, near,
                                   pxs, pys, pws, pattr)
                if npoly < 3:
                    continue
                for q in range(npoly):
                    sxq, syq = _project(pxs[q], pys[q], pws[q], fx, fy, cx, cy)
                    sxs[q] = sxq
                    sys_[q] = syq

            for fan in range(1, npoly - 1):
                _raster_one(sxs, sys_, pws, pattr, 0, fan, fan + 1, na,
                            tpx0, tpy0, tpx1, tpy1,
                            bbox[t, 0], bbox[t, 1], bbox[t, 2], bbox[t, 3],
                            frag, out, color, depth, width_scale,
                            tf_lo, tf_hi, tf_sid, tf_default,
                            guide_slot, guide_lo, guide_hi,
                            sty_start, band_f, band_i,
                            cm_pos, cm_r, cm_g, cm_b, shp_x, shp_w)


@njit(cache=True)
def _raster_one(sxs, sys_, pws, pattr, a, bvx, cvx, na,
                tpx0, tpy0, tpx1, tpy1, bx0, by0, bx1, by1,
                frag, out, color, depth, width_scale,
                tf_lo, tf_hi, tf_sid, tf_default,
                guide_slot, guide_lo, guide_hi,
                sty_start, band_f, band_i,
                cm_pos, cm_r, cm_g, cm_b, shp_x, shp_w):
    xa, ya = sxs[a], sys_[a]
    xb, yb = sxs[bvx], sys_[bvx]
    xc, yc = sxs[cvx], sys_[cvx]
    area = (xb - xa) * (yc - ya) - (yb - ya) * (xc - xa)
    if area == 0.0:
        return
    if area < 0.0:
        bvx, cvx = cvx, bvx
        xb, yb, xc, yc = xc, yc, xb, yb
        area = -area

    iwa = 1.0 / pws[a]
    iwb = 1.0 / pws[bvx]
    iwc = 1.0 / pws[cvx]

    # Intersect triangle bbox with the tile.
    minx = max(max(tpx0, bx0), int(np.ceil(min(min(xa, xb), xc) - 0.5)))
    maxx = min(min(tpx1, bx1), int(np.floor(max(max(xa, xb), xc) - 0.5)))
    miny = max(max(tpy0, by0), int(np.ceil(min(min(ya, yb), yc) - 0.5)))
    maxy = min(min(tpy1, by1), int(np.floor(max(max(ya, yb), yc) - 0.5)))
    if minx > maxx or miny > maxy:
        return

    dab_x, dab_y = xb - xa, yb - ya
    dbc_x, dbc_y = xc - xb, yc - yb
    dca_x, dca_y = xa - xc, ya - yc

    for py in range(miny, maxy + 1):
        pyc = py + 0.5
        for px in range(minx, maxx + 1):
            pxc = px + 0.5
            e_ab = dab_x * (pyc - ya) - dab_y * (pxc - xa)
            if not _edge_accept(e_ab, dab_x, dab_y):
                continue
            e_bc = dbc_x * (pyc - yb) - dbc_y * (pxc - xb)
            if not _edge_accept(e_bc, dbc_x, dbc_y):
                continue
            e_ca = dca_x * (pyc - yc) - dca_y * (pxc - xc)
            if not _edge_accept(e_ca, dca_x, dca_y):
                continue
            la = e_bc / area
            lb = e_ca / area
            lc = e_ab / area
            den = la * iwa + lb * iwb + lc * iwc
            for j in range(na):
                frag[j] = (la * iwa * pattr[a, j] + lb * iwb * pattr[bvx, j]
                           + lc * iwc * pattr[cvx, j]) / den
            if shade_fragment_kernel(frag, width_scale,
                                     tf_lo, tf_hi, tf_sid, tf_default,
                                     guide_slot, guide_lo, guide_hi,
                                     sty_start, band_f, band_i,
                                     cm_pos, cm_r, cm_g, cm_b,
                                     shp_x, shp_w, out):
                d32 = np.float32(out[3])
                if d32 < depth[py, px]:
                    depth[py, px] = d32
                    for ch in range(3):
                        v = out[ch]
                        if v < 0.0:
                            v = 0.0
                        elif v > 1.0:
                            v = 1.0
                        color[py, px, ch] = np.uint8(v * 255.0 + 0.5)
                    color[py, px, 3] = np.uint8(255)
