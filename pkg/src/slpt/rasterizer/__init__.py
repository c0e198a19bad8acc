from .binning import (
    ALPHA_MAX,
    ALPHA_SKIP,
    TILE_SIZE,
    TRANSMITTANCE_STOP,
    bin_tiles,
    depth_order,
    validate_conics,
)
from .kernels import set_workers
from .oracle import composite_reference
from .render import RenderedMaps, rasterize

__all__ = [
    "ALPHA_MAX",
    "ALPHA_SKIP",
    "TILE_SIZE",
    "TRANSMITTANCE_STOP",
    "RenderedMaps",
    "bin_tiles",
    "composite_reference",
    "depth_order",
    "rasterize",
    "set_workers",
    "validate_conics",
]
