"""Compiled inner loops shared by the tile renderer, the brute-force oracle and
the exact intersection test, so all three see bit-identical splat densities."""

import math

import numpy as np
from numba import njit

ALPHA_CLAMP = 0.99


@njit(cache=True, nogil=True)
def splat_alpha(px, py, mx, my, ca, cb, cc, o, qcut):
    dx = px - mx
    dy = py - my
    q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
    # qcut sits just above 2 ln(o / tau): beyond it alpha < tau for sure.
    if q > qcut:
        return 0.0
    a = o * math.exp(-0.5 * q)
    if a > ALPHA_CLAMP:
        a = ALPHA_CLAMP
    return a


@njit(cache=True, nogil=True)
def blend_pixel(fx, fy, order, start, end, mu, conic, opac, qcut, color, depth,
                tau, t_stop, early_stop):
    T = 1.0
    r = 0.0
    g = 0.0
    b = 0.0
    acc_a = 0.0
    acc_d = 0.0
    dmax = 0.0
    nblend = 0
    stopped = False
    for j in range(start, end):
        k = order[j]
        a = splat_alpha(fx, fy, mu[k, 0], mu[k, 1], conic[k, 0], conic[k, 1],
                        conic[k, 2], opac[k], qcut[k])
        if a < tau:
            continue
        w = a * T
        r += color[k, 0] * w
        g += color[k, 1] * w
        b += color[k, 2] * w
        acc_a += w
        acc_d += depth[k] * w
        dmax = depth[k]
        nblend += 1
        T = T * (1.0 - a)
        if early_stop and T < t_stop:
            stopped = True
            break
    return r, g, b, T, acc_a, acc_d, dmax, nblend, stopped


@njit(cache=True, nogil=True)
def raster_tiles(tiles, offsets, order, mu, conic, opac, qcut, color, depth,
                 tiles_x, tile_size, bg, tau, t_stop, early_stop, pix_mask,
                 out_color, out_accd, out_acca, out_dmax, out_blends, out_stops):
    for i in range(tiles.shape[0]):
        t = tiles[i]
        tx = t % tiles_x
        ty = t // tiles_x
        start = offsets[t]
        end = offsets[t + 1]
        nb = 0
        ns = 0
        for py in range(tile_size):
            y = ty * tile_size + py
            for px in range(tile_size):
                x = tx * tile_size + px
                if not pix_mask[y, x]:
                    continue
                r, g, b, T, acc_a, acc_d, dmax, nblend, stopped = blend_pixel(
                    x + 0.5, y + 0.5, order, start, end, mu, conic, opac, qcut,
                    color, depth, tau, t_stop, early_stop)
                out_color[y, x, 0] = r + T * bg[0]
                out_color[y, x, 1] = g + T * bg[1]
                out_color[y, x, 2] = b + T * bg[2]
                out_acca[y, x] = acc_a
                out_accd[y, x] = acc_d
                out_dmax[y, x] = dmax
                nb += nblend
                if stopped:
                    ns += 1
        out_blends[t] = nb
        out_stops[t] = ns


@njit(cache=True, nogil=True)
def raster_rows(y0, y1, width, order, mu, conic, opac, qcut, color, depth, bg,
                tau, t_stop, early_stop, out_color, out_accd, out_acca, out_dmax):
    n = order.shape[0]
    for y in range(y0, y1):
        for x in range(width):
            r, g, b, T, acc_a, acc_d, dmax, nblend, stopped = blend_pixel(
                x + 0.5, y + 0.5, order, 0, n, mu, conic, opac, qcut, color,
                depth, tau, t_stop, early_stop)
            out_color[y, x, 0] = r + T * bg[0]
            out_color[y, x, 1] = g + T * bg[1]
            out_color[y, x, 2] = b + T * bg[2]
            out_acca[y, x] = acc_a
            out_accd[y, x] = acc_d
            out_dmax[y, x] = dmax


@njit(cache=True, nogil=True)
def exact_pair_mask(splat, tile, mu, conic, opac, qcut, tiles_x, tile_size, tau, keep):
    for i in range(splat.shape[0]):
        k = splat[i]
        t = tile[i]
        x0 = (t % tiles_x) * tile_size
        y0 = (t // tiles_x) * tile_size
        hit = False
        for py in range(tile_size):
            for px in range(tile_size):
                a = splat_alpha(x0 + px + 0.5, y0 + py + 0.5, mu[k, 0], mu[k, 1],
                                conic[k, 0], conic[k, 1], conic[k, 2], opac[k], qcut[k])
                if a >= tau:
                    hit = True
                    break
            if hit:
                break
        keep[i] = hit


def qcut_for(opacity: np.ndarray, tau: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        ratio = np.log(np.maximum(opacity, 0.0) / tau)
    return np.where(opacity > 0, 2.0 * ratio + 1e-6, -np.inf)
