"""Object-mask extraction for generated clips.

Generated frames carry no ground-truth masks, so we recover per-object masks
deterministically: threshold foreground against the scene's background level,
label 4-connected components, and track object identity from the known
frame-0 object centroids by greedy nearest-centroid matching frame to frame.
An object with no matching component in some frame gets an empty mask there
(the metrics charge the bounded worst case for that).
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .sim import Scene, background_intensity

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

FOREGROUND_THRESHOLD = 0.1
MIN_COMPONENT_AREA = 4
MAX_MATCH_DIST = 0.75


def _component_centroids(labels: np.ndarray, n_labels: int, min_area: int):
    """World-coordinate centroid and pixel count per kept component."""
    h, w = labels.shape
    keep = []
    for comp in range(1, n_labels + 1):
        rows, cols = np.nonzero(labels == comp)
        if rows.size < min_area:
            continue
        x = (cols + 0.5).mean() / w
        y = 1.0 - (rows + 0.5).mean() / h
        keep.append((comp, (x, y), rows.size))
    return keep


def extract_masks(
    frames: np.ndarray,
    scene: Scene,
    init_positions: np.ndarray,
    threshold: float = FOREGROUND_THRESHOLD,
    min_area: int = MIN_COMPONENT_AREA,
    max_match_dist: float = MAX_MATCH_DIST,
) -> np.ndarray:
    """Per-object boolean masks (T, N, H, W) for a generated clip.

    `init_positions` are the (N, 2) world-coordinate object centers in the
    conditioning frame (ground-truth trajectories at t=0), which anchor the
    identity of each tracked object.
    """
    t_total, h, w = frames.shape[0], frames.shape[1], frames.shape[2]
    n_obj = len(init_positions)
    bg = background_intensity(scene.background_id)
    out = np.zeros((t_total, n_obj, h, w), dtype=bool)
    tracked = [tuple(map(float, p)) for p in init_positions]

    for t in range(t_total):
        fg = np.abs(frames[t, :, :, 0] - bg) > threshold
        labels, n_labels = ndimage.label(fg, structure=FOUR_CONNECTED)
        comps = _component_centroids(labels, n_labels, min_area)
        if not comps:
            continue
        # greedy nearest-centroid assignment, one component per object
        candidates = []
        for i, (tx, ty) in enumerate(tracked):
            for j, (comp, (cx, cy), _area) in enumerate(comps):
                d = float(np.hypot(cx - tx, cy - ty))
                if d <= max_match_dist:
                    candidates.append((d, i, j))
        candidates.sort()
        used_obj: set[int] = set()
        used_comp: set[int] = set()
        for d, i, j in candidates:
            if i in used_obj or j in used_comp:
                continue
            used_obj.add(i)
            used_comp.add(j)
            comp, centroid, _area = comps[j]
            out[t, i] = labels == comp
            tracked[i] = centroid
    return out
