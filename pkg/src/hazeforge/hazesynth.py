"""Paired haze synthesis from depth with the atmospheric scattering model.

``I = J * t + A * (1 - t)`` with ``t = exp(-beta * d)``. Depth maps are
refined against the clean image with a soft-matting solve before use.
"""

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import matting
from .imaging import ImageIOError, read_depth, read_image, resize_bilinear, write_image

DEFAULT_A = 0.85
DEFAULT_BETA = 1.0
DEFAULT_BETA_JITTER = 0.3
DEFAULT_T_FLOOR = 0.01
DEPTH_SUFFIXES = (".pfm", ".pgm", ".png")


@dataclass(frozen=True)
class HazeParams:
    A: float = DEFAULT_A
    beta: float = DEFAULT_BETA
    beta_jitter: float = DEFAULT_BETA_JITTER
    refine: bool = True
    refine_lambda: float = matting.DEFAULT_LAMBDA

    def __post_init__(self):
        if not 0.0 < self.A <= 1.0:
            raise ValueError(f"atmospheric light A must be in (0, 1], got {self.A}")
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not 0.0 <= self.beta_jitter < 1.0:
            raise ValueError(f"beta_jitter must be in [0, 1), got {self.beta_jitter}")
        if self.refine_lambda <= 0:
            raise ValueError("refine_lambda must be positive")


def _check_depth(depth):
    d = np.asarray(depth, dtype=np.float64)
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise ValueError("depth must be finite and non-negative")
    return d


def transmission_from_depth(depth, beta):
    """Per-pixel transmission ``exp(-beta * d)``."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    return np.exp(-beta * _check_depth(depth))


def normalize_depth(depth):
    """Rescale depth to [0, 1]; a constant map becomes all zeros."""
    d = _check_depth(depth)
    lo, hi = d.min(), d.max()
    if hi - lo <= 0:
        return np.zeros_like(d)
    return (d - lo) / (hi - lo)


def refine_depth(
    depth,
    guide,
    lam=matting.DEFAULT_LAMBDA,
    eps=matting.DEFAULT_EPS,
    window_radius=matting.DEFAULT_RADIUS,
    tol=matting.DEFAULT_TOL,
    max_iter=matting.DEFAULT_MAX_ITER,
):
    """Align depth discontinuities with guide-image edges by soft matting."""
    d = _check_depth(depth)
    guide = np.asarray(guide, dtype=np.float64)
    if guide.shape[:2] != d.shape:
        raise ValueError(f"depth {d.shape} and guide {guide.shape[:2]} sizes differ")
    m = matting.build_matting_laplacian(guide, eps, window_radius)
    return matting.solve_soft_matting(m, d, lam, tol, max_iter)


def _expand(t, like):
    t = np.asarray(t, dtype=np.float64)
    if like.ndim == 3 and t.ndim == 2:
        t = t[:, :, None]
    if t.shape[:2] != like.shape[:2]:
        raise ValueError(f"transmission {t.shape[:2]} and image {like.shape[:2]} sizes differ")
    return t


def add_haze(clean, transmission, A=DEFAULT_A):
    """Degrade a clean image: ``J * t + A * (1 - t)``."""
    j = np.asarray(clean, dtype=np.float64)
    t = _expand(transmission, j)
    return j * t + A * (1.0 - t)


def invert_haze(hazy, transmission, A=DEFAULT_A, t_floor=DEFAULT_T_FLOOR):
    """Recover ``J = (I - A) / max(t, t_floor) + A``, clamped to [0, 1]."""
    if t_floor <= 0:
        raise ValueError("t_floor must be positive")
    i = np.asarray(hazy, dtype=np.float64)
    t = _expand(transmission, i)
    return np.clip((i - A) / np.maximum(t, t_floor) + A, 0.0, 1.0)


def file_seed(seed, name):
    """Per-file seed derived from the global seed and the file stem."""
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass
class ManifestEntry:
    name: str
    beta: float = float("nan")
    A: float = float("nan")
    seed: int = 0
    status: str = "ok"


@dataclass
class Manifest:
    entries: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def to_tsv(self):
        lines = ["name\tbeta\tA\tseed\tstatus"]
        for e in sorted(self.entries + self.errors, key=lambda e: e.name):
            if e.status == "ok":
                lines.append(f"{e.name}\t{e.beta:.6f}\t{e.A:.6f}\t{e.seed}\tok")
            else:
                lines.append(f"{e.name}\t\t\t{e.seed}\t{e.status}")
        return "\n".join(lines) + "\n"


def _find_depth(depth_dir, stem):
    for suffix in DEPTH_SUFFIXES:
        p = depth_dir / f"{stem}{suffix}"
        if p.exists():
            return p
    return None


def synthesize_one(clean, depth, params, rng):
    """Haze one image; returns (hazy, beta). ``clean`` and ``depth`` must share H x W."""
    d = normalize_depth(depth)
    if params.refine:
        d = np.clip(refine_depth(d, clean, params.refine_lambda), 0.0, None)
    beta = params.beta * rng.uniform(1.0 - params.beta_jitter, 1.0 + params.beta_jitter)
    t = transmission_from_depth(d, beta)
    return add_haze(clean, t, params.A), float(beta)


def generate_paired_set(source_dir, output_dir, params=None, seed=0, size=None):
    """Build ``paired/{hazy,clean}/<name>.png`` and ``manifest.tsv`` under ``output_dir``.

    Source layout is ``images/<name>.png`` with ``depth/<name>.pfm`` (or a
    16-bit ``.pgm``). Files whose depth is missing or unreadable get an
    error row in the manifest; the rest are still processed. ``size``
    resizes image and depth to ``size x size`` first.
    """
    params = params or HazeParams()
    source_dir, output_dir = Path(source_dir), Path(output_dir)
    hazy_dir = output_dir / "paired" / "hazy"
    clean_dir = output_dir / "paired" / "clean"
    hazy_dir.mkdir(parents=True, exist_ok=True)
    clean_dir.mkdir(parents=True, exist_ok=True)

    manifest = Manifest()
    image_dir = source_dir / "images"
    images = sorted(image_dir.glob("*.png")) if image_dir.is_dir() else []
    for img_path in images:
        name = img_path.stem
        fseed = file_seed(seed, name)
        depth_path = _find_depth(source_dir / "depth", name)
        if depth_path is None:
            manifest.errors.append(ManifestEntry(name, seed=fseed, status="error: missing depth"))
            continue
        try:
            clean = read_image(img_path)
            depth = read_depth(depth_path)
        except ImageIOError as exc:
            manifest.errors.append(ManifestEntry(name, seed=fseed, status=f"error: {exc}"))
            continue
        if clean.ndim == 2:
            clean = np.repeat(clean[:, :, None], 3, axis=2)
        if size is not None:
            clean = resize_bilinear(clean, size, size)
            depth = resize_bilinear(depth, size, size)
        elif depth.shape != clean.shape[:2]:
            depth = resize_bilinear(depth, clean.shape[1], clean.shape[0])
        # round-trip the clean image through 8 bits so hazy and clean share one source
        clean = np.round(np.clip(clean, 0, 1) * 255) / 255
        rng = np.random.default_rng(fseed)
        try:
            hazy, beta = synthesize_one(clean, depth, params, rng)
        except (ValueError, matting.NotConvergedError) as exc:
            manifest.errors.append(ManifestEntry(name, seed=fseed, status=f"error: {exc}"))
            continue
        write_image(hazy, hazy_dir / f"{name}.png")
        write_image(clean, clean_dir / f"{name}.png")
        manifest.entries.append(ManifestEntry(name, beta, params.A, fseed))

    (output_dir / "manifest.tsv").write_text(manifest.to_tsv())
    return manifest
