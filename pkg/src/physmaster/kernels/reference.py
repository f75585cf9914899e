"""NumPy reference implementations of the pixel-level kernels.

These are the fallback backend when the compiled extension is unavailable.
Every function here must return bit-identical results to its counterpart in
``_core.pyx``: reductions that depend on summation order are left to the
caller, and per-element arithmetic uses the same expressions as the C code.
"""

import numpy as np


def nearest_dists(points: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Distance from each row of `points` (n,2) to its nearest row of `targets` (m,2).

    Returns an (n,) float64 array. m must be >= 1.
    """
    if targets.shape[0] == 0:
        raise ValueError("targets must be non-empty")
    # (n, m) squared distances; exact min, then one sqrt per point
    dx = points[:, 0:1] - targets[None, :, 0]
    dy = points[:, 1:2] - targets[None, :, 1]
    d2 = dx * dx + dy * dy
    return np.sqrt(d2.min(axis=1))


def rasterize_circle(height: int, width: int, cx: float, cy: float, r: float) -> np.ndarray:
    """Boolean mask of pixels whose centers fall inside the circle.

    Pixel (row, col) has its center at world (x, y) = ((col+0.5)/W, 1-(row+0.5)/H);
    the world is the unit square with y up.
    """
    xs = (np.arange(width, dtype=np.float64) + 0.5) / width
    ys = 1.0 - (np.arange(height, dtype=np.float64) + 0.5) / height
    dx = xs[None, :] - cx
    dy = ys[:, None] - cy
    return dx * dx + dy * dy <= r * r


def rasterize_box(height: int, width: int, cx: float, cy: float, half: float) -> np.ndarray:
    """Boolean mask of pixels whose centers fall inside the axis-aligned square box."""
    xs = (np.arange(width, dtype=np.float64) + 0.5) / width
    ys = 1.0 - (np.arange(height, dtype=np.float64) + 0.5) / height
    in_x = np.abs(xs[None, :] - cx) <= half
    in_y = np.abs(ys[:, None] - cy) <= half
    return in_x & in_y
