"""Numba kernels for the tiled compositor.

Tiles are independent work units; the backward writes per-splat gradients
into per-tile slabs which the caller reduces in tile order, so results are
bit-identical for any worker count.
"""

from __future__ import annotations

import math
import os

# Allow up to 8 workers even on smaller hosts (results are worker-count
# independent by construction, so oversubscription is harmless).
os.environ.setdefault("NUMBA_NUM_THREADS", str(max(8, os.cpu_count() or 1)))

import numba
import numpy as np
from numba import njit, prange

ALPHA_SKIP = 1.0 / 255.0
ALPHA_MAX = 0.99
TRANSMITTANCE_STOP = 1e-4


def set_workers(n: int) -> None:
    limit = numba.config.NUMBA_NUM_THREADS
    numba.set_num_threads(min(max(1, int(n)), limit))


@njit(parallel=True, cache=True)
def forward_kernel(tile_starts, tile_splats, tiles_x, tile_size, height, width,
                   mean2d, conic, opacity, radius, payload, background,
                   out, out_transmit, out_count):
    n_tiles = tile_starts.shape[0] - 1
    n_chan = payload.shape[1]
    for t in prange(n_tiles):
        ty = t // tiles_x
        tx = t % tiles_x
        y0 = ty * tile_size
        x0 = tx * tile_size
        y1 = min(y0 + tile_size, height)
        x1 = min(x0 + tile_size, width)
        s0 = tile_starts[t]
        s1 = tile_starts[t + 1]
        for py in range(y0, y1):
            cy = py + 0.5
            for px in range(x0, x1):
                cx = px + 0.5
                transmit = 1.0
                visited = 0
                k = s0
                while k < s1:
                    if transmit < TRANSMITTANCE_STOP:
                        break
                    s = tile_splats[k]
                    k += 1
                    visited += 1
                    dx = cx - mean2d[s, 0]
                    dy = cy - mean2d[s, 1]
                    r = radius[s]
                    if abs(dx) > r or abs(dy) > r:
                        continue
                    power = -0.5 * (conic[s, 0] * dx * dx
                                    + 2.0 * conic[s, 1] * dx * dy
                                    + conic[s, 2] * dy * dy)
                    a_raw = opacity[s] * math.exp(power)
                    if a_raw < ALPHA_SKIP:
                        continue
                    a = min(a_raw, ALPHA_MAX)
                    w = a * transmit
                    for c in range(n_chan):
                        out[py, px, c] += w * payload[s, c]
                    transmit *= 1.0 - a
                for c in range(n_chan):
                    out[py, px, c] += transmit * background[c]
                out_transmit[py, px] = transmit
                out_count[py, px] = visited


@njit(parallel=True, cache=True)
def backward_kernel(tile_starts, tile_splats, tiles_x, tile_size, height, width,
                    mean2d, conic, opacity, radius, payload, background,
                    out_transmit, out_count, grad_out, grad_alpha,
                    g_mean2d, g_conic, g_opacity, g_payload):
    """Per-pixel back-walk re-deriving transmittances from the saved final value.

    Gradients match differentiating the clamped, early-exited forward
    expression exactly: entries past the exit point and alpha-clamped
    splats receive zero shape gradients.
    """
    n_tiles = tile_starts.shape[0] - 1
    n_chan = payload.shape[1]
    for t in prange(n_tiles):
        ty = t // tiles_x
        tx = t % tiles_x
        y0 = ty * tile_size
        x0 = tx * tile_size
        y1 = min(y0 + tile_size, height)
        x1 = min(x0 + tile_size, width)
        s0 = tile_starts[t]
        suffix = np.empty(n_chan, dtype=np.float64)
        for py in range(y0, y1):
            cy = py + 0.5
            for px in range(x0, x1):
                cx = px + 0.5
                t_final = out_transmit[py, px]
                n_visited = out_count[py, px]
                g_acc = grad_alpha[py, px]
                for c in range(n_chan):
                    suffix[c] = background[c] * t_final
                transmit = t_final
                for k in range(s0 + n_visited - 1, s0 - 1, -1):
                    s = tile_splats[k]
                    dx = cx - mean2d[s, 0]
                    dy = cy - mean2d[s, 1]
                    r = radius[s]
                    if abs(dx) > r or abs(dy) > r:
                        continue
                    power = -0.5 * (conic[s, 0] * dx * dx
                                    + 2.0 * conic[s, 1] * dx * dy
                                    + conic[s, 2] * dy * dy)
                    a_raw = opacity[s] * math.exp(power)
                    if a_raw < ALPHA_SKIP:
                        continue
                    a = min(a_raw, ALPHA_MAX)
                    one_minus = 1.0 - a
                    t_prev = transmit / one_minus
                    d_alpha = g_acc * t_final / one_minus
                    for c in range(n_chan):
                        g = grad_out[py, px, c]
                        d_alpha += g * (payload[s, c] * t_prev - suffix[c] / one_minus)
                        g_payload[t, s, c] += g * a * t_prev
                        suffix[c] += payload[s, c] * a * t_prev
                    if a_raw < ALPHA_MAX:
                        gauss = math.exp(power)
                        g_opacity[t, s] += d_alpha * gauss
                        d_power = d_alpha * opacity[s] * gauss
                        g_conic[t, s, 0] += d_power * (-0.5 * dx * dx)
                        g_conic[t, s, 1] += d_power * (-dx * dy)
                        g_conic[t, s, 2] += d_power * (-0.5 * dy * dy)
                        g_mean2d[t, s, 0] += d_power * (conic[s, 0] * dx + conic[s, 1] * dy)
                        g_mean2d[t, s, 1] += d_power * (conic[s, 1] * dx + conic[s, 2] * dy)
                    transmit = t_prev
