"""Hot inner loops of the splatting renderer and the UV rasterizer.

Everything here is plain loop code over contiguous float64/int64 arrays so it
compiles under numba's nopython mode and still runs (slowly) uncompiled when
GEMSPLAT_NUMBA=0. No fastmath; the two paths agree except for last-ulp
differences in transcendental calls (numba links its own libm).

A splat contributes to a pixel iff the pixel lies inside the splat's integer
3-sigma bounding box (cmin..cmax columns, rmin..rmax rows). The same predicate
is applied during tile binning (conservatively) and per pixel, in forward and
backward, so tiled, single-tile, and brute-force evaluation agree exactly.
"""

import numpy as np

from ._accel import jit


@jit
def bin_splats(order, cmin, cmax, rmin, rmax, n_tx, n_ty, tile_size, width, height):
    """Assign depth-ordered splats to the 16x16 tiles their bbox overlaps.

    Returns (offsets, lst): tile t owns lst[offsets[t]:offsets[t+1]], already
    in depth order because splats are visited in depth order.
    """
    n = order.shape[0]
    n_tiles = n_tx * n_ty
    counts = np.zeros(n_tiles, np.int64)
    for oi in range(n):
        i = order[oi]
        c0 = cmin[i]
        c1 = cmax[i]
        r0 = rmin[i]
        r1 = rmax[i]
        if c0 < 0:
            c0 = 0
        if r0 < 0:
            r0 = 0
        if c1 > width - 1:
            c1 = width - 1
        if r1 > height - 1:
            r1 = height - 1
        if c0 > c1 or r0 > r1:
            continue
        for ty in range(r0 // tile_size, r1 // tile_size + 1):
            for tx in range(c0 // tile_size, c1 // tile_size + 1):
                counts[ty * n_tx + tx] += 1
    offsets = np.zeros(n_tiles + 1, np.int64)
    for t in range(n_tiles):
        offsets[t + 1] = offsets[t] + counts[t]
    lst = np.empty(offsets[n_tiles], np.int64)
    cursor = offsets[:n_tiles].copy()
    for oi in range(n):
        i = order[oi]
        c0 = cmin[i]
        c1 = cmax[i]
        r0 = rmin[i]
        r1 = rmax[i]
        if c0 < 0:
            c0 = 0
        if r0 < 0:
            r0 = 0
        if c1 > width - 1:
            c1 = width - 1
        if r1 > height - 1:
            r1 = height - 1
        if c0 > c1 or r0 > r1:
            continue
        for ty in range(r0 // tile_size, r1 // tile_size + 1):
            for tx in range(c0 // tile_size, c1 // tile_size + 1):
                t = ty * n_tx + tx
                lst[cursor[t]] = i
                cursor[t] += 1
    return offsets, lst


@jit
def composite_forward(offsets, lst, n_tx, n_ty, tile_size,
                      cmin, cmax, rmin, rmax,
                      centers, cinvs, alpha0, colors, bg,
                      width, height, alpha_clamp, t_min):
    """Front-to-back alpha compositing over depth-sorted tile lists.

    Returns (image, transmittance, weight_sum); remaining transmittance
    multiplies the background.
    """
    img = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    wsum = np.zeros((height, width))
    for ty in range(n_ty):
        for tx in range(n_tx):
            t = ty * n_tx + tx
            s0 = offsets[t]
            s1 = offsets[t + 1]
            y1 = min(height, (ty + 1) * tile_size)
            x1 = min(width, (tx + 1) * tile_size)
            for r in range(ty * tile_size, y1):
                py = r + 0.5
                for c in range(tx * tile_size, x1):
                    px = c + 0.5
                    tr = 1.0
                    acc0 = 0.0
                    acc1 = 0.0
                    acc2 = 0.0
                    ws = 0.0
                    for si in range(s0, s1):
                        i = lst[si]
                        if c < cmin[i] or c > cmax[i] or r < rmin[i] or r > rmax[i]:
                            continue
                        dx = px - centers[i, 0]
                        dy = py - centers[i, 1]
                        m = cinvs[i, 0] * dx * dx + 2.0 * cinvs[i, 1] * dx * dy + cinvs[i, 2] * dy * dy
                        a = alpha0[i] * np.exp(-0.5 * m)
                        if a > alpha_clamp:
                            a = alpha_clamp
                        w = a * tr
                        acc0 += w * colors[i, 0]
                        acc1 += w * colors[i, 1]
                        acc2 += w * colors[i, 2]
                        ws += w
                        tr *= 1.0 - a
                        if tr < t_min:
                            break
                    img[r, c, 0] = acc0 + tr * bg[0]
                    img[r, c, 1] = acc1 + tr * bg[1]
                    img[r, c, 2] = acc2 + tr * bg[2]
                    trans[r, c] = tr
                    wsum[r, c] = ws
    return img, trans, wsum


@jit
def composite_backward(offsets, lst, n_tx, n_ty, tile_size,
                       cmin, cmax, rmin, rmax,
                       centers, cinvs, alpha0, colors, bg,
                       width, height, alpha_clamp, t_min, d_pixels):
    """Adjoint of composite_forward w.r.t. per-splat 2D quantities.

    Recomputes per-pixel transmittance front-to-back, then walks the counted
    splats in reverse, so memory stays O(pixels + splats). Splats whose alpha
    hit the clamp, or that fell after the early-out, receive zero gradient,
    matching the forward exactly.
    """
    n = alpha0.shape[0]
    g_center = np.zeros((n, 2))
    g_cinv = np.zeros((n, 3))
    g_alpha0 = np.zeros(n)
    g_color = np.zeros((n, 3))
    max_len = 0
    for t in range(n_tx * n_ty):
        ln = offsets[t + 1] - offsets[t]
        if ln > max_len:
            max_len = ln
    buf = np.empty(max_len if max_len > 0 else 1, np.int64)
    for ty in range(n_ty):
        for tx in range(n_tx):
            t = ty * n_tx + tx
            s0 = offsets[t]
            s1 = offsets[t + 1]
            if s1 == s0:
                continue
            y1 = min(height, (ty + 1) * tile_size)
            x1 = min(width, (tx + 1) * tile_size)
            for r in range(ty * tile_size, y1):
                py = r + 0.5
                for c in range(tx * tile_size, x1):
                    px = c + 0.5
                    # pass 1: replay the forward to find the counted set
                    tr = 1.0
                    cnt = 0
                    for si in range(s0, s1):
                        i = lst[si]
                        if c < cmin[i] or c > cmax[i] or r < rmin[i] or r > rmax[i]:
                            continue
                        dx = px - centers[i, 0]
                        dy = py - centers[i, 1]
                        m = cinvs[i, 0] * dx * dx + 2.0 * cinvs[i, 1] * dx * dy + cinvs[i, 2] * dy * dy
                        a = alpha0[i] * np.exp(-0.5 * m)
                        if a > alpha_clamp:
                            a = alpha_clamp
                        buf[cnt] = i
                        cnt += 1
                        tr *= 1.0 - a
                        if tr < t_min:
                            break
                    g0 = d_pixels[r, c, 0]
                    g1 = d_pixels[r, c, 1]
                    g2 = d_pixels[r, c, 2]
                    # suffix = contribution composited after the current splat
                    suf0 = tr * bg[0]
                    suf1 = tr * bg[1]
                    suf2 = tr * bg[2]
                    t_cur = tr
                    for j in range(cnt - 1, -1, -1):
                        i = buf[j]
                        dx = px - centers[i, 0]
                        dy = py - centers[i, 1]
                        m = cinvs[i, 0] * dx * dx + 2.0 * cinvs[i, 1] * dx * dy + cinvs[i, 2] * dy * dy
                        g = np.exp(-0.5 * m)
                        a_raw = alpha0[i] * g
                        a = a_raw
                        if a > alpha_clamp:
                            a = alpha_clamp
                        om = 1.0 - a
                        t_before = t_cur / om
                        w = a * t_before
                        g_color[i, 0] += g0 * w
                        g_color[i, 1] += g1 * w
                        g_color[i, 2] += g2 * w
                        ga = (g0 * (colors[i, 0] * t_before - suf0 / om)
                              + g1 * (colors[i, 1] * t_before - suf1 / om)
                              + g2 * (colors[i, 2] * t_before - suf2 / om))
                        if a_raw < alpha_clamp:
                            g_alpha0[i] += ga * g
                            gg = ga * alpha0[i] * g
                            gm = gg * (-0.5)
                            g_cinv[i, 0] += gm * dx * dx
                            g_cinv[i, 1] += gm * 2.0 * dx * dy
                            g_cinv[i, 2] += gm * dy * dy
                            g_center[i, 0] += gg * (cinvs[i, 0] * dx + cinvs[i, 1] * dy)
                            g_center[i, 1] += gg * (cinvs[i, 1] * dx + cinvs[i, 2] * dy)
                        suf0 += w * colors[i, 0]
                        suf1 += w * colors[i, 1]
                        suf2 += w * colors[i, 2]
                        t_cur = t_before
    return g_center, g_cinv, g_alpha0, g_color


@jit
def rasterize_uv(tri_uv, tex_width, tex_height):
    """Bind texels to triangles by UV coverage at texel centers.

    tri_uv: (F, 3, 2) per-triangle UV corners in [0,1]^2. Ties go to the
    lowest triangle index. Returns (tri_index HxW int64 with -1 for empty,
    barycentric weights HxWx3).
    """
    tri_idx = np.full((tex_height, tex_width), -1, np.int64)
    bary = np.zeros((tex_height, tex_width, 3))
    for f in range(tri_uv.shape[0]):
        ax = tri_uv[f, 0, 0]
        ay = tri_uv[f, 0, 1]
        bx = tri_uv[f, 1, 0]
        by = tri_uv[f, 1, 1]
        cx = tri_uv[f, 2, 0]
        cy = tri_uv[f, 2, 1]
        den = (by - cy) * (ax - cx) + (cx - bx) * (ay - cy)
        if abs(den) < 1e-14:
            continue
        lox = min(ax, min(bx, cx))
        hix = max(ax, max(bx, cx))
        loy = min(ay, min(by, cy))
        hiy = max(ay, max(by, cy))
        x0 = max(0, int(np.floor(lox * tex_width - 0.5)))
        x1 = min(tex_width - 1, int(np.ceil(hix * tex_width - 0.5)))
        y0 = max(0, int(np.floor(loy * tex_height - 0.5)))
        y1 = min(tex_height - 1, int(np.ceil(hiy * tex_height - 0.5)))
        for y in range(y0, y1 + 1):
            v = (y + 0.5) / tex_height
            for x in range(x0, x1 + 1):
                if tri_idx[y, x] >= 0:
                    continue
                u = (x + 0.5) / tex_width
                w0 = ((by - cy) * (u - cx) + (cx - bx) * (v - cy)) / den
                w1 = ((cy - ay) * (u - cx) + (ax - cx) * (v - cy)) / den
                w2 = 1.0 - w0 - w1
                if w0 >= -1e-12 and w1 >= -1e-12 and w2 >= -1e-12:
                    tri_idx[y, x] = f
                    bary[y, x, 0] = w0
                    bary[y, x, 1] = w1
                    bary[y, x, 2] = w2
    return tri_idx, bary
