"""Pure numpy implementations of the hot kernels.

These are the reference versions; the Cython module must match them
(bit-for-bit for im2col/col2im, to rounding for the matting blocks).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, k, stride, out_h, out_w):
    """Gather k x k patches of a padded (B, C, Hp, Wp) array.

    Returns a contiguous array of shape (B, C, k, k, out_h, out_w).
    """
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : stride * (out_h - 1) + 1 : stride, : stride * (out_w - 1) + 1 : stride]
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3))


def col2im(cols, hp, wp, stride):
    """Scatter-add (B, C, k, k, out_h, out_w) patches into a (B, C, hp, wp) array."""
    b, c, k, _, out_h, out_w = cols.shape
    out = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    span_h = stride * (out_h - 1) + 1
    span_w = stride * (out_w - 1) + 1
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki : ki + span_h : stride, kj : kj + span_w : stride] += cols[:, :, ki, kj]
    return out


def matting_blocks(image, eps, radius):
    """Per-window Laplacian blocks for every full (2r+1)^2 window.

    Parameters
    ----------
    image : ndarray, (H, W, 3) float64
    eps : float
    radius : int

    Returns
    -------
    win_idx : ndarray, (n_windows, n) int64
        Flat pixel indices of each window, row-major inside the window.
    blocks : ndarray, (n_windows, n, n) float64
        ``delta_ij - (1 + (x_i - mu)^T (Sigma + eps/n I)^-1 (x_j - mu)) / n``.
    """
    h, w, _ = image.shape
    size = 2 * radius + 1
    n = size * size
    idx = np.arange(h * w).reshape(h, w)
    win_idx = sliding_window_view(idx, (size, size)).reshape(-1, n)
    colors = image.reshape(h * w, 3)[win_idx]
    mu = colors.mean(axis=1, keepdims=True)
    centered = colors - mu
    cov = np.einsum("wni,wnj->wij", centered, centered) / n
    inv = np.linalg.inv(cov + (eps / n) * np.eye(3))
    quad = np.einsum("wai,wij,wbj->wab", centered, inv, centered)
    blocks = np.eye(n) - (1.0 + quad) / n
    return win_idx.astype(np.int64), blocks
