"""Matting Laplacian, the quadratic photorealism energy, and soft-matting solves.

Images here are float arrays in [0, 1] laid out (H, W, C). The Laplacian
for an H x W image is an (H*W) x (H*W) CSR matrix indexed by row-major
pixel position.
"""

import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .kernels import matting_blocks

DEFAULT_EPS = 1e-7
DEFAULT_RADIUS = 1
DEFAULT_LAMBDA = 1e-4
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 2000

CACHE_MAGIC = b"MLAP"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


class DimensionError(ValueError):
    """Image or vector sizes do not fit the Laplacian."""


class NotConvergedError(RuntimeError):
    """Conjugate gradient hit ``max_iter``; ``result`` holds the last iterate."""

    def __init__(self, result):
        super().__init__(
            f"conjugate gradient did not converge in {result.iterations} iterations "
            f"(relative residual {result.residual:.3e})"
        )
        self.result = result


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool


def build_matting_laplacian(image, eps=DEFAULT_EPS, window_radius=DEFAULT_RADIUS):
    """Sparse Matting Laplacian of an RGB image.

    Only windows lying fully inside the image contribute, so every row
    sums to zero.

    Parameters
    ----------
    image : array_like, (H, W, 3)
        Colors in [0, 1].
    eps : float
        Regularizer added as ``eps / |w|`` to each window covariance.
    window_radius : int
        Windows are ``(2r+1) x (2r+1)``.

    Returns
    -------
    scipy.sparse.csr_matrix
        Symmetric positive semidefinite, shape (H*W, H*W).
    """
    img = np.ascontiguousarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError(f"expected an (H, W, 3) image, got shape {img.shape}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    size = 2 * window_radius + 1
    h, w, _ = img.shape
    if window_radius < 0 or h < size or w < size:
        raise DimensionError(f"{h}x{w} image is smaller than one {size}x{size} window")

    win_idx, blocks = matting_blocks(img, float(eps), int(window_radius))
    blocks = 0.5 * (blocks + blocks.transpose(0, 2, 1))
    n = win_idx.shape[1]
    rows = np.repeat(win_idx, n, axis=1).ravel()
    cols = np.tile(win_idx, (1, n)).ravel()
    m = sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(h * w, h * w)).tocsr()
    m.sum_duplicates()
    m.sort_indices()
    return m


def _channels(m, v):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 2:
        v = v[:, :, None]
    if v.ndim != 3 or v.shape[0] * v.shape[1] != m.shape[0]:
        raise DimensionError(f"image of shape {v.shape} does not match a Laplacian of size {m.shape[0]}")
    return v.reshape(-1, v.shape[2])


def photorealism_energy(m, v):
    """Sum over channels of ``V_c^T M V_c``."""
    flat = _channels(m, v)
    return float(np.einsum("nc,nc->", flat, m @ flat))


def photorealism_gradient(m, v):
    """Gradient of :func:`photorealism_energy` w.r.t. ``v``: ``2 M V_c`` per channel."""
    v_arr = np.asarray(v)
    flat = _channels(m, v_arr)
    return (2.0 * (m @ flat)).reshape(v_arr.shape)


def conjugate_gradient(matvec, b, x0=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, callback=None):
    """Plain CG for a symmetric positive definite operator.

    Stops when ``||b - A x|| <= tol * ||b||``. ``callback(x)`` is called
    after every iteration.
    """
    b = np.asarray(b, dtype=np.float64)
    b_norm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    if b_norm == 0.0:
        return CGResult(np.zeros_like(b), 0, 0.0, True)
    r = b - matvec(x)
    p = r.copy()
    rr = r @ r
    it = 0
    rel = np.sqrt(rr) / b_norm
    while rel > tol and it < max_iter:
        ap = matvec(p)
        alpha = rr / (p @ ap)
        x += alpha * p
        r -= alpha * ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
        rel = np.sqrt(rr) / b_norm
        if callback is not None:
            callback(x)
    # recursive residual drifts; report the true one
    rel = float(np.linalg.norm(b - matvec(x)) / b_norm)
    return CGResult(x, it, rel, rel <= tol)


def solve_soft_matting(m, target, lam=DEFAULT_LAMBDA, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, callback=None):
    """Solve ``(M + lam I) d = lam * target`` by conjugate gradient.

    ``target`` may be a flat vector or an (H, W) field; the result has the
    same shape. Raises :class:`NotConvergedError` if ``max_iter`` is reached.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    t = np.asarray(target, dtype=np.float64)
    if t.size != m.shape[0]:
        raise DimensionError(f"target has {t.size} entries, Laplacian has {m.shape[0]} rows")
    flat = t.ravel()
    res = conjugate_gradient(
        lambda v: m @ v + lam * v, lam * flat, x0=flat, tol=tol, max_iter=max_iter, callback=callback
    )
    if not res.converged:
        raise NotConvergedError(res)
    return res.x.reshape(t.shape)


def save_laplacian(m, path):
    """Write ``m`` in the MLAP cache format (see docs/formats.md)."""
    m = sp.csr_matrix(m)
    n = m.shape[0]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, n, m.nnz))
        fh.write(m.indptr.astype("<u8").tobytes())
        fh.write(m.indices.astype("<u4").tobytes())
        fh.write(m.data.astype("<f8").tobytes())


def load_laplacian(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated MLAP header")
    magic, version, n, nnz = _HEADER.unpack_from(raw)
    if magic != CACHE_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise ValueError(f"{path}: unsupported MLAP version {version}")
    expected = _HEADER.size + 8 * (n + 1) + 4 * nnz + 8 * nnz
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    off = _HEADER.size
    indptr = np.frombuffer(raw, "<u8", n + 1, off).astype(np.int64)
    off += 8 * (n + 1)
    indices = np.frombuffer(raw, "<u4", nnz, off).astype(np.int32)
    off += 4 * nnz
    data = np.frombuffer(raw, "<f8", nnz, off).astype(np.float64)
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))


def default_cache_dir():
    env = os.environ.get("HAZEFORGE_CACHE")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "hazeforge" / "matting"


def laplacian_key(image, eps, window_radius):
    img = np.ascontiguousarray(image, dtype=np.float64)
    h = hashlib.sha256()
    h.update(repr((img.shape, float(eps), int(window_radius))).encode())
    h.update(img.tobytes())
    return h.hexdigest()


class LaplacianCache:
    """On-disk MLAP cache keyed by image content, with an in-memory layer."""

    def __init__(self, directory=None, eps=DEFAULT_EPS, window_radius=DEFAULT_RADIUS):
        self.directory = Path(directory) if directory else default_cache_dir()
        self.eps = eps
        self.window_radius = window_radius
        self._memory = {}

    def path_for(self, image):
        return self.directory / f"{laplacian_key(image, self.eps, self.window_radius)}.mlap"

    def get(self, image):
        key = laplacian_key(image, self.eps, self.window_radius)
        if key in self._memory:
            return self._memory[key]
        path = self.directory / f"{key}.mlap"
        if path.exists():
            m = load_laplacian(path)
        else:
            m = build_matting_laplacian(image, self.eps, self.window_radius)
            self.directory.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(f".tmp{os.getpid()}")
            save_laplacian(m, tmp)
            os.replace(tmp, path)
        self._memory[key] = m
        return m
