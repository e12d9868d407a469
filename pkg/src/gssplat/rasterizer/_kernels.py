"""Numba kernels for projection, per-tile compositing and their adjoints.

All kernels release the GIL and take an explicit ``[start, stop)`` work range so the
caller can split work across threads. Every output element is written by exactly one
range, which keeps results independent of the thread count.
"""
import math

import numpy as np
from numba import njit

_NOGIL = dict(nogil=True, cache=True, fastmath=False)
# splats whose Gaussian falloff at a pixel is below exp(-32) (~1e-14) are skipped there
POWER_FLOOR = -32.0


@njit(**_NOGIL)
def _quat_to_rot(qw, qx, qy, qz, r):
    r[0, 0] = 1.0 - 2.0 * (qy * qy + qz * qz)
    r[0, 1] = 2.0 * (qx * qy - qw * qz)
    r[0, 2] = 2.0 * (qx * qz + qw * qy)
    r[1, 0] = 2.0 * (qx * qy + qw * qz)
    r[1, 1] = 1.0 - 2.0 * (qx * qx + qz * qz)
    r[1, 2] = 2.0 * (qy * qz - qw * qx)
    r[2, 0] = 2.0 * (qx * qz - qw * qy)
    r[2, 1] = 2.0 * (qy * qz + qw * qx)
    r[2, 2] = 1.0 - 2.0 * (qx * qx + qy * qy)


@njit(**_NOGIL)
def preprocess(start, stop, centers, quats, log_scales, log_lo, log_hi, wrot, wtrans,
               fx, fy, cx, cy, width, height, near, low_pass, radius_sigma, tile,
               tiles_x, tiles_y, mean2d, conic, depth, radius, rect, cov3d):
    """Project Gaussians to screen space. ``radius == 0`` marks culled entries."""
    r = np.empty((3, 3))
    m = np.empty((3, 3))
    t = np.empty((2, 3))
    for i in range(start, stop):
        radius[i] = 0
        rect[i, 0] = 0
        rect[i, 1] = 0
        rect[i, 2] = 0
        rect[i, 3] = 0
        px = centers[i, 0]
        py = centers[i, 1]
        pz = centers[i, 2]
        x = wrot[0, 0] * px + wrot[0, 1] * py + wrot[0, 2] * pz + wtrans[0]
        y = wrot[1, 0] * px + wrot[1, 1] * py + wrot[1, 2] * pz + wtrans[1]
        z = wrot[2, 0] * px + wrot[2, 1] * py + wrot[2, 2] * pz + wtrans[2]
        depth[i] = z
        if z <= near:
            continue
        qw = quats[i, 0]
        qx = quats[i, 1]
        qy = quats[i, 2]
        qz = quats[i, 3]
        qn = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
        if qn > 1e-12:
            qw /= qn
            qx /= qn
            qy /= qn
            qz /= qn
        else:
            qw = 1.0
            qx = 0.0
            qy = 0.0
            qz = 0.0
        _quat_to_rot(qw, qx, qy, qz, r)
        for k in range(3):
            ls = min(max(log_scales[i, k], log_lo), log_hi)
            s = math.exp(ls)
            for a in range(3):
                m[a, k] = r[a, k] * s
        for a in range(3):
            for b in range(3):
                cov3d[i, a, b] = m[a, 0] * m[b, 0] + m[a, 1] * m[b, 1] + m[a, 2] * m[b, 2]
        # T = J W, J the perspective Jacobian at the camera-frame centre.
        j00 = fx / z
        j02 = -fx * x / (z * z)
        j11 = fy / z
        j12 = -fy * y / (z * z)
        for b in range(3):
            t[0, b] = j00 * wrot[0, b] + j02 * wrot[2, b]
            t[1, b] = j11 * wrot[1, b] + j12 * wrot[2, b]
        # Σ' = T Σ Tᵀ
        s00 = 0.0
        s01 = 0.0
        s11 = 0.0
        for a in range(3):
            for b in range(3):
                c = cov3d[i, a, b]
                s00 += t[0, a] * c * t[0, b]
                s01 += t[0, a] * c * t[1, b]
                s11 += t[1, a] * c * t[1, b]
        s00 += low_pass
        s11 += low_pass
        det = s00 * s11 - s01 * s01
        if det <= 0.0:
            continue
        u = fx * x / z + cx
        v = fy * y / z + cy
        mid = 0.5 * (s00 + s11)
        lam = mid + math.sqrt(max(0.1, mid * mid - det))
        rad = math.ceil(radius_sigma * math.sqrt(lam))
        if u + rad < 0.0 or u - rad > width or v + rad < 0.0 or v - rad > height:
            continue
        x0 = max(0, min(tiles_x, int(math.floor((u - rad) / tile))))
        x1 = max(0, min(tiles_x, int(math.floor((u + rad) / tile)) + 1))
        y0 = max(0, min(tiles_y, int(math.floor((v - rad) / tile))))
        y1 = max(0, min(tiles_y, int(math.floor((v + rad) / tile)) + 1))
        if x1 <= x0 or y1 <= y0:
            continue
        mean2d[i, 0] = u
        mean2d[i, 1] = v
        conic[i, 0] = s11 / det
        conic[i, 1] = -s01 / det
        conic[i, 2] = s00 / det
        radius[i] = int(rad)
        rect[i, 0] = x0
        rect[i, 1] = y0
        rect[i, 2] = x1
        rect[i, 3] = y1


@njit(**_NOGIL)
def fill_entries(rect, offsets, tiles_x, entry_tile, entry_gauss):
    for i in range(rect.shape[0]):
        k = offsets[i]
        for ty in range(rect[i, 1], rect[i, 3]):
            for tx in range(rect[i, 0], rect[i, 2]):
                entry_tile[k] = ty * tiles_x + tx
                entry_gauss[k] = i
                k += 1


@njit(**_NOGIL)
def _gather_tile(lo, hi, entry_gauss, mean2d, conic, opac, buf):
    """Copy one tile's splat terms into a contiguous (mx, my, A, B, C, opacity) buffer."""
    for k in range(lo, hi):
        g = entry_gauss[k]
        j = k - lo
        buf[j, 0] = mean2d[g, 0]
        buf[j, 1] = mean2d[g, 1]
        buf[j, 2] = conic[g, 0]
        buf[j, 3] = conic[g, 1]
        buf[j, 4] = conic[g, 2]
        buf[j, 5] = opac[g]


@njit(**_NOGIL)
def _max_range(tile_start, tile_stop, ranges):
    m = 0
    for tid in range(tile_start, tile_stop):
        m = max(m, ranges[tid, 1] - ranges[tid, 0])
    return m


@njit(**_NOGIL)
def render_tiles(tile_start, tile_stop, ranges, entry_gauss, mean2d, conic, opac, feats, bg,
                 width, height, tile, tiles_x, t_cut, out, final_t, n_contrib):
    nf = feats.shape[1]
    acc = np.empty(nf)
    buf = np.empty((_max_range(tile_start, tile_stop, ranges), 6))
    for tid in range(tile_start, tile_stop):
        tx = tid % tiles_x
        ty = tid // tiles_x
        lo = ranges[tid, 0]
        hi = ranges[tid, 1]
        _gather_tile(lo, hi, entry_gauss, mean2d, conic, opac, buf)
        for py in range(ty * tile, min((ty + 1) * tile, height)):
            for px in range(tx * tile, min((tx + 1) * tile, width)):
                fu = px + 0.5
                fv = py + 0.5
                tr = 1.0
                for f in range(nf):
                    acc[f] = 0.0
                count = 0
                for j in range(hi - lo):
                    dx = fu - buf[j, 0]
                    dy = fv - buf[j, 1]
                    power = -0.5 * (buf[j, 2] * dx * dx + buf[j, 4] * dy * dy) \
                        - buf[j, 3] * dx * dy
                    if power < POWER_FLOOR:
                        continue
                    a = buf[j, 5] * math.exp(power)
                    w = a * tr
                    g = entry_gauss[lo + j]
                    for f in range(nf):
                        acc[f] += feats[g, f] * w
                    tr = tr * (1.0 - a)
                    count = j + 1
                    if tr < t_cut:
                        break
                for f in range(nf):
                    out[py, px, f] = acc[f] + tr * bg[f]
                final_t[py, px] = tr
                n_contrib[py, px] = count


@njit(**_NOGIL)
def backward_tiles(tile_start, tile_stop, ranges, entry_gauss, mean2d, conic, opac, feats, bg,
                   width, height, tile, tiles_x, n_contrib, grad_out,
                   g_mean, g_conic, g_opac, g_feat):
    """Per-entry adjoints; entries of one tile are owned by one call, so no races."""
    nf = feats.shape[1]
    max_len = 0
    for tid in range(tile_start, tile_stop):
        max_len = max(max_len, ranges[tid, 1] - ranges[tid, 0])
    a_buf = np.empty(max_len)
    t_buf = np.empty(max_len)
    behind = np.empty(nf)
    for tid in range(tile_start, tile_stop):
        tx = tid % tiles_x
        ty = tid // tiles_x
        lo = ranges[tid, 0]
        for py in range(ty * tile, min((ty + 1) * tile, height)):
            for px in range(tx * tile, min((tx + 1) * tile, width)):
                n = n_contrib[py, px]
                if n == 0:
                    continue
                fu = px + 0.5
                fv = py + 0.5
                tr = 1.0
                for j in range(n):
                    g = entry_gauss[lo + j]
                    dx = fu - mean2d[g, 0]
                    dy = fv - mean2d[g, 1]
                    power = -0.5 * (conic[g, 0] * dx * dx + conic[g, 2] * dy * dy) \
                        - conic[g, 1] * dx * dy
                    a = opac[g] * math.exp(power) if power >= POWER_FLOOR else 0.0
                    a_buf[j] = a
                    t_buf[j] = tr
                    tr = tr * (1.0 - a)
                # behind = composite of everything after entry j as seen from just behind j
                for f in range(nf):
                    behind[f] = bg[f]
                for j in range(n - 1, -1, -1):
                    k = lo + j
                    g = entry_gauss[k]
                    a = a_buf[j]
                    if a == 0.0:
                        continue
                    tj = t_buf[j]
                    ga = 0.0
                    w = a * tj
                    for f in range(nf):
                        go = grad_out[py, px, f]
                        g_feat[k, f] += w * go
                        ga += go * (feats[g, f] - behind[f])
                    ga *= tj
                    for f in range(nf):
                        behind[f] = feats[g, f] * a + (1.0 - a) * behind[f]
                    if ga == 0.0:
                        continue
                    dx = fu - mean2d[g, 0]
                    dy = fv - mean2d[g, 1]
                    gval = a / opac[g] if opac[g] > 0.0 else 0.0
                    g_opac[k] += ga * gval
                    gp = ga * a  # dL/dpower
                    g_mean[k, 0] += gp * (conic[g, 0] * dx + conic[g, 1] * dy)
                    g_mean[k, 1] += gp * (conic[g, 1] * dx + conic[g, 2] * dy)
                    g_conic[k, 0] += gp * (-0.5 * dx * dx)
                    g_conic[k, 1] += gp * (-dx * dy)
                    g_conic[k, 2] += gp * (-0.5 * dy * dy)


@njit(**_NOGIL)
def reduce_entries(entry_gauss, g_mean, g_conic, g_opac, g_feat,
                   o_mean, o_conic, o_opac, o_feat):
    """Sum entry adjoints into Gaussians in canonical (sorted entry) order."""
    nf = g_feat.shape[1]
    for k in range(entry_gauss.shape[0]):
        g = entry_gauss[k]
        o_mean[g, 0] += g_mean[k, 0]
        o_mean[g, 1] += g_mean[k, 1]
        o_conic[g, 0] += g_conic[k, 0]
        o_conic[g, 1] += g_conic[k, 1]
        o_conic[g, 2] += g_conic[k, 2]
        o_opac[g] += g_opac[k]
        for f in range(nf):
            o_feat[g, f] += g_feat[k, f]


@njit(**_NOGIL)
def preprocess_backward(start, stop, centers, quats, log_scales, log_lo, log_hi, wrot, wtrans,
                        fx, fy, radius, conic, cov3d, g_mean2d, g_conic, g_depth,
                        g_centers, g_quats, g_log_scales):
    r = np.empty((3, 3))
    t = np.empty((2, 3))
    gsig = np.empty((2, 2))
    gcov = np.empty((3, 3))
    gm = np.empty((3, 3))
    gr = np.empty((3, 3))
    sc = np.empty(3)
    for i in range(start, stop):
        g_centers[i, 0] = 0.0
        g_centers[i, 1] = 0.0
        g_centers[i, 2] = 0.0
        for k in range(4):
            g_quats[i, k] = 0.0
        for k in range(3):
            g_log_scales[i, k] = 0.0
        if radius[i] == 0:
            continue
        px = centers[i, 0]
        py = centers[i, 1]
        pz = centers[i, 2]
        x = wrot[0, 0] * px + wrot[0, 1] * py + wrot[0, 2] * pz + wtrans[0]
        y = wrot[1, 0] * px + wrot[1, 1] * py + wrot[1, 2] * pz + wtrans[1]
        z = wrot[2, 0] * px + wrot[2, 1] * py + wrot[2, 2] * pz + wtrans[2]
        j00 = fx / z
        j02 = -fx * x / (z * z)
        j11 = fy / z
        j12 = -fy * y / (z * z)
        for b in range(3):
            t[0, b] = j00 * wrot[0, b] + j02 * wrot[2, b]
            t[1, b] = j11 * wrot[1, b] + j12 * wrot[2, b]
        # conic adjoint -> screen covariance adjoint: G_Σ' = -Q G_Q Q
        qa = conic[i, 0]
        qb = conic[i, 1]
        qc = conic[i, 2]
        ga = g_conic[i, 0]
        gb = 0.5 * g_conic[i, 1]
        gc = g_conic[i, 2]
        # Q G_Q
        m00 = qa * ga + qb * gb
        m01 = qa * gb + qb * gc
        m10 = qb * ga + qc * gb
        m11 = qb * gb + qc * gc
        gsig[0, 0] = -(m00 * qa + m01 * qb)
        gsig[0, 1] = -(m00 * qb + m01 * qc)
        gsig[1, 0] = -(m10 * qa + m11 * qb)
        gsig[1, 1] = -(m10 * qb + m11 * qc)
        # G_Σ = Tᵀ G_Σ' T
        for a in range(3):
            for b in range(3):
                acc = 0.0
                for p in range(2):
                    for q in range(2):
                        acc += t[p, a] * gsig[p, q] * t[q, b]
                gcov[a, b] = acc
        # G_T = 2 G_Σ' T Σ ; G_J = G_T Wᵀ (only the four non-zero Jacobian slots matter)
        gt00 = 0.0
        gt02 = 0.0
        gt11 = 0.0
        gt12 = 0.0
        for b in range(3):
            ts0 = 0.0
            ts1 = 0.0
            for c in range(3):
                ts0 += t[0, c] * cov3d[i, c, b]
                ts1 += t[1, c] * cov3d[i, c, b]
            row0 = 2.0 * (gsig[0, 0] * ts0 + gsig[0, 1] * ts1)
            row1 = 2.0 * (gsig[1, 0] * ts0 + gsig[1, 1] * ts1)
            gt00 += row0 * wrot[0, b]
            gt02 += row0 * wrot[2, b]
            gt11 += row1 * wrot[1, b]
            gt12 += row1 * wrot[2, b]
        gu = g_mean2d[i, 0]
        gv = g_mean2d[i, 1]
        z2 = z * z
        z3 = z2 * z
        gx = gu * fx / z + gt02 * (-fx / z2)
        gy = gv * fy / z + gt12 * (-fy / z2)
        gz = (g_depth[i] - gu * fx * x / z2 - gv * fy * y / z2
              - gt00 * fx / z2 + gt02 * 2.0 * fx * x / z3
              - gt11 * fy / z2 + gt12 * 2.0 * fy * y / z3)
        for a in range(3):
            g_centers[i, a] = wrot[0, a] * gx + wrot[1, a] * gy + wrot[2, a] * gz
        # Σ = M Mᵀ, M = R S
        qw = quats[i, 0]
        qx = quats[i, 1]
        qy = quats[i, 2]
        qz = quats[i, 3]
        qn = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
        if qn <= 1e-12:
            continue
        qw /= qn
        qx /= qn
        qy /= qn
        qz /= qn
        _quat_to_rot(qw, qx, qy, qz, r)
        for k in range(3):
            ls = min(max(log_scales[i, k], log_lo), log_hi)
            sc[k] = math.exp(ls)
        for a in range(3):
            for b in range(3):
                acc = 0.0
                for c in range(3):
                    acc += (gcov[a, c] + gcov[c, a]) * r[c, b] * sc[b]
                gm[a, b] = acc
        for k in range(3):
            gs = gm[0, k] * r[0, k] + gm[1, k] * r[1, k] + gm[2, k] * r[2, k]
            ls = log_scales[i, k]
            if log_lo < ls < log_hi:
                g_log_scales[i, k] = gs * sc[k]
        for a in range(3):
            for b in range(3):
                gr[a, b] = gm[a, b] * sc[b]
        dw = 2.0 * (-qz * gr[0, 1] + qy * gr[0, 2] + qz * gr[1, 0] - qx * gr[1, 2]
                    - qy * gr[2, 0] + qx * gr[2, 1])
        dx = 2.0 * (qy * gr[0, 1] + qz * gr[0, 2] + qy * gr[1, 0] - 2.0 * qx * gr[1, 1]
                    - qw * gr[1, 2] + qz * gr[2, 0] + qw * gr[2, 1] - 2.0 * qx * gr[2, 2])
        dy = 2.0 * (-2.0 * qy * gr[0, 0] + qx * gr[0, 1] + qw * gr[0, 2] + qx * gr[1, 0]
                    + qz * gr[1, 2] - qw * gr[2, 0] + qz * gr[2, 1] - 2.0 * qy * gr[2, 2])
        dz = 2.0 * (-2.0 * qz * gr[0, 0] - qw * gr[0, 1] + qx * gr[0, 2] + qw * gr[1, 0]
                    - 2.0 * qz * gr[1, 1] + qy * gr[1, 2] + qx * gr[2, 0] + qy * gr[2, 1])
        dot = qw * dw + qx * dx + qy * dy + qz * dz
        g_quats[i, 0] = (dw - qw * dot) / qn
        g_quats[i, 1] = (dx - qx * dot) / qn
        g_quats[i, 2] = (dy - qy * dot) / qn
        g_quats[i, 3] = (dz - qz * dot) / qn
