"""Pixel-level kernels with a compiled fast path.

``_core`` is a Cython extension built at install time. When the extension is
missing, or ``PHYSMASTER_PURE=1`` is set, the NumPy reference backend is used
instead. Both backends are bit-identical, so everything downstream is
backend-agnostic; ``BACKEND`` records which one was selected at import.
"""

import os

import numpy as np

from . import reference

if os.environ.get("PHYSMASTER_PURE", "") == "1":
    _impl = reference
    BACKEND = "reference"
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        _impl = reference
        BACKEND = "reference"


def nearest_dists(points: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Distance from each point (n,2) to the nearest of `targets` (m,2)."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    return _impl.nearest_dists(points, targets)


def rasterize_circle(height: int, width: int, cx: float, cy: float, r: float) -> np.ndarray:
    """Boolean (H,W) mask of pixel centers inside the circle (unit-square world, y up)."""
    return _impl.rasterize_circle(int(height), int(width), float(cx), float(cy), float(r))


def rasterize_box(height: int, width: int, cx: float, cy: float, half: float) -> np.ndarray:
    """Boolean (H,W) mask of pixel centers inside the axis-aligned square box."""
    return _impl.rasterize_box(int(height), int(width), float(cx), float(cy), float(half))
