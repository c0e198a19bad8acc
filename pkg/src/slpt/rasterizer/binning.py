"""Tile binning for the compositor.

A splat contributes only inside its 3-sigma axis-aligned screen box; a
splat is listed in every tile containing at least one pixel center of that
box, exactly once, in (view depth, splat index) order.  Front-to-back
order and the per-pixel support test are therefore identical between the
tiled path and the reference compositor.
"""

from __future__ import annotations

import numpy as np

from ..diffcore import NumericalError

TILE_SIZE = 16
ALPHA_SKIP = 1.0 / 255.0
ALPHA_MAX = 0.99
TRANSMITTANCE_STOP = 1e-4


def depth_order(depth: np.ndarray) -> np.ndarray:
    """Ascending depth, ties broken by splat index ascending."""
    depth = np.asarray(depth).reshape(-1)
    return np.lexsort((np.arange(depth.shape[0]), depth))


def validate_conics(conic: np.ndarray) -> None:
    """Conics must be positive definite; name the first offending splat."""
    a, b, c = conic[:, 0], conic[:, 1], conic[:, 2]
    bad = np.flatnonzero((a <= 0) | (c <= 0) | (a * c - b * b <= 0))
    if bad.size:
        raise NumericalError(f"non-positive-definite conic for splat {int(bad[0])}")


def pixel_bounds(center: np.ndarray, radius: np.ndarray, limit: int):
    """Index range [lo, hi] of pixel centers within +-radius of center."""
    lo = np.ceil(center - radius - 0.5).astype(np.int64)
    hi = np.floor(center + radius - 0.5).astype(np.int64)
    return np.clip(lo, 0, limit - 1), np.clip(hi, 0, limit - 1), (lo <= hi) & (hi >= 0) & (lo <= limit - 1)


def bin_tiles(mean2d: np.ndarray, radius: np.ndarray, depth: np.ndarray,
              width: int, height: int, tile_size: int = TILE_SIZE):
    """CSR tile lists: (tile_starts (T+1,), splat_ids, tiles_x, tiles_y)."""
    s = mean2d.shape[0]
    tiles_x = (width + tile_size - 1) // tile_size
    tiles_y = (height + tile_size - 1) // tile_size
    n_tiles = tiles_x * tiles_y

    xlo, xhi, xok = pixel_bounds(mean2d[:, 0], radius, width)
    ylo, yhi, yok = pixel_bounds(mean2d[:, 1], radius, height)
    ok = xok & yok
    txlo, txhi = xlo // tile_size, xhi // tile_size
    tylo, tyhi = ylo // tile_size, yhi // tile_size
    spans = np.where(ok, (txhi - txlo + 1) * (tyhi - tylo + 1), 0)

    total = int(spans.sum())
    pair_tile = np.empty(total, dtype=np.int64)
    pair_splat = np.empty(total, dtype=np.int64)
    pos = 0
    for i in np.flatnonzero(ok):
        for ty in range(tylo[i], tyhi[i] + 1):
            base = ty * tiles_x
            for tx in range(txlo[i], txhi[i] + 1):
                pair_tile[pos] = base + tx
                pair_splat[pos] = i
                pos += 1

    d = np.asarray(depth).reshape(-1)
    order = np.lexsort((pair_splat, d[pair_splat], pair_tile))
    pair_tile = pair_tile[order]
    pair_splat = pair_splat[order]
    tile_starts = np.searchsorted(pair_tile, np.arange(n_tiles + 1)).astype(np.int64)
    return tile_starts, pair_splat.astype(np.int64), tiles_x, tiles_y
