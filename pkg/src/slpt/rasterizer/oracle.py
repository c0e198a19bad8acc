"""Reference compositor: per-pixel full loop over all splats, no tiling.

Used as the independent check for the tiled path and to render dataset
ground truth.  Same math as the tiled compositor: global (depth, index)
order, 3-sigma box support, alpha skip/clamp, transmittance stop.
"""

from __future__ import annotations

import numpy as np

from .binning import (
    ALPHA_MAX, ALPHA_SKIP, TRANSMITTANCE_STOP, depth_order, validate_conics,
)


def composite_reference(mean2d, conic, opacity, payload, depth, radius,
                        width: int, height: int, background=None):
    """Composite splats over every pixel; returns (maps (H,W,C), alpha (H,W)).

    All inputs are plain arrays; `opacity`, `depth` are (S,), `payload`
    (S,C).  Splats are walked front to back per pixel; pixels whose
    transmittance fell below the stop threshold take no further
    contributions.
    """
    mean2d = np.asarray(mean2d, dtype=np.float64).reshape(-1, 2)
    conic = np.asarray(conic, dtype=np.float64).reshape(-1, 3)
    opacity = np.asarray(opacity, dtype=np.float64).reshape(-1)
    payload = np.asarray(payload, dtype=np.float64)
    if payload.ndim == 1:
        payload = payload[:, None]
    radius = np.asarray(radius, dtype=np.float64).reshape(-1)
    n_chan = payload.shape[1]
    validate_conics(conic)

    bg = np.zeros(n_chan) if background is None else np.asarray(background, dtype=np.float64)
    xs = np.arange(width) + 0.5
    ys = np.arange(height) + 0.5
    out = np.zeros((height, width, n_chan))
    transmit = np.ones((height, width))

    for s in depth_order(depth):
        dx = xs[None, :] - mean2d[s, 0]
        dy = ys[:, None] - mean2d[s, 1]
        support = (np.abs(dx) <= radius[s]) & (np.abs(dy) <= radius[s])
        power = -0.5 * (conic[s, 0] * dx * dx
                        + 2.0 * conic[s, 1] * dx * dy
                        + conic[s, 2] * dy * dy)
        a_raw = opacity[s] * np.exp(power)
        alpha = np.where(support & (a_raw >= ALPHA_SKIP),
                         np.minimum(a_raw, ALPHA_MAX), 0.0)
        active = transmit >= TRANSMITTANCE_STOP
        weight = np.where(active, alpha * transmit, 0.0)
        out += weight[:, :, None] * payload[s]
        transmit = np.where(active, transmit * (1.0 - alpha), transmit)

    out += transmit[:, :, None] * bg
    return out, 1.0 - transmit
