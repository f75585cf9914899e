"""PCA visualization of encoder patch features.

Projects per-patch features onto their top-3 principal components, min-max
normalizes each component to a color channel, and upsamples the patch grid
to frame size with nearest neighbor. Degenerate directions (rank deficit or
constant features) render as 0.5 gray.
"""

from __future__ import annotations

import numpy as np

EIGENVALUE_TOL = 1e-12


def pca_components(features: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-3 principal directions of a (n_patches, dim) feature matrix.

    Returns (components (3, dim) rows orthonormal, scores (n_patches, 3),
    eigenvalues (3,) descending). Requires at least 3 patches.
    """
    flat = np.asarray(features, dtype=np.float64)
    if flat.ndim != 2:
        flat = flat.reshape(-1, flat.shape[-1])
    n, dim = flat.shape
    if n < 3:
        raise ValueError("need at least 3 patches for a 3-component PCA")
    centered = flat - flat.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / n
    eigvals, eigvecs = np.linalg.eigh(cov)  # ascending
    order = np.argsort(eigvals)[::-1][:3]
    components = eigvecs[:, order].T  # (3, dim)
    eigenvalues = eigvals[order]
    scores = centered @ components.T
    return components, scores, eigenvalues


def pca_visualize(
    features: np.ndarray, out_height: int, out_width: int
) -> np.ndarray:
    """RGB uint8 image (out_height, out_width, 3) of the top-3 PCA scores.

    `features` is the (grid_h, grid_w, dim) patch-feature map.
    """
    grid_h, grid_w, dim = features.shape
    components, scores, eigenvalues = pca_components(
        features.reshape(grid_h * grid_w, dim)
    )
    channels = np.full((grid_h * grid_w, 3), 0.5)
    scale = max(float(eigenvalues[0]), EIGENVALUE_TOL)
    for k in range(3):
        if eigenvalues[k] <= EIGENVALUE_TOL * scale:
            continue  # rank-deficient direction stays gray
        lo, hi = scores[:, k].min(), scores[:, k].max()
        if hi - lo <= 0:
            continue
        channels[:, k] = (scores[:, k] - lo) / (hi - lo)
    rgb = (channels.reshape(grid_h, grid_w, 3) * 255.0).round().astype(np.uint8)
    rgb = np.repeat(rgb, max(out_height // grid_h, 1), axis=0)
    rgb = np.repeat(rgb, max(out_width // grid_w, 1), axis=1)
    return rgb[:out_height, :out_width]
