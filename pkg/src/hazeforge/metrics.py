"""Full-reference quality metrics: PSNR and SSIM on [0, 1] images.

Both are computed per channel without luma conversion or normalization,
then averaged.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    """Peak signal-to-noise ratio in dB for peak value 1; capped at 99 dB."""
    a, b = _pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    g /= g.sum()
    return g


def _filter_valid(x, g):
    k = g.size
    rows = sliding_window_view(x, k, axis=0) @ g
    return sliding_window_view(rows, k, axis=1) @ g


def ssim(a, b, data_range=1.0):
    """Mean structural similarity over an 11x11 Gaussian window (sigma 1.5).

    Only positions where the window fits entirely are used.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape[:2]}")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    g = gaussian_window()
    scores = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mx, my = _filter_valid(x, g), _filter_valid(y, g)
        sxx = _filter_valid(x * x, g) - mx * mx
        syy = _filter_valid(y * y, g) - my * my
        sxy = _filter_valid(x * y, g) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)

    def add(self, name, p, s):
        self.rows.append((name, p, s))

    @property
    def count(self):
        return len(self.rows)

    @property
    def mean_psnr(self):
        return float(np.mean([r[1] for r in self.rows])) if self.rows else float("nan")

    @property
    def mean_ssim(self):
        return float(np.mean([r[2] for r in self.rows])) if self.rows else float("nan")

    def to_tsv(self):
        lines = ["filename\tpsnr\tssim"]
        lines += [f"{n}\t{p:.6f}\t{s:.6f}" for n, p, s in self.rows]
        lines.append(f"MEAN(n={self.count})\t{self.mean_psnr:.6f}\t{self.mean_ssim:.6f}")
        return "\n".join(lines) + "\n"
