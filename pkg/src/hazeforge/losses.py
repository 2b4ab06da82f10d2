"""Adversarial, cycle, photorealism and paired L1 losses and their composites.

Expectations are means over batch, channels and pixels.
"""

from dataclasses import dataclass, field

import numpy as np

from . import matting
from . import tensor as T


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 10.0  # cycle
    lambda2: float = 2.0  # photorealism
    lambda3: float = 9.9  # paired adversarial
    lambda4: float = 0.1  # paired L1

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def _patch_map(t, what):
    if t.shape[1] != 1:
        raise T.ShapeError(f"{what} must be a (B, 1, h, w) patch map, got {t.shape}")


def lsgan_d_loss(d_real, d_fake):
    """``mean((D(real) - 1)^2) + mean(D(fake)^2)``; d_fake must come from a detached fake."""
    _patch_map(d_real, "d_real")
    _patch_map(d_fake, "d_fake")
    return T.add(T.mean(T.square(T.scalar_add(d_real, -1.0))), T.mean(T.square(d_fake)))


def lsgan_g_loss(d_fake):
    """``mean((D(G(x)) - 1)^2)``."""
    _patch_map(d_fake, "d_fake")
    return T.mean(T.square(T.scalar_add(d_fake, -1.0)))


def l1_mean(a, b):
    return T.mean(T.abs(T.sub(a, b)))


def cycle_loss(x, x_reconstructed):
    """Mean absolute difference between an input and its round trip."""
    return l1_mean(x_reconstructed, x)


def paired_l1_loss(fake, ground_truth):
    return l1_mean(fake, ground_truth)


def photorealism_loss(laplacians, fake_cycle_output):
    """Mean over the batch of ``sum_c V_c^T M V_c`` with V the output mapped to [0, 1].

    ``laplacians`` is one sparse matrix (batch of one) or a sequence with
    one matrix per sample, each built from that sample's original image.
    The backward pass feeds ``2 M V`` through the [-1, 1] -> [0, 1] map.
    """
    out = fake_cycle_output
    b, c, h, w = out.shape
    if not isinstance(laplacians, (list, tuple)):
        laplacians = [laplacians]
    if len(laplacians) != b:
        raise T.ShapeError(f"{len(laplacians)} Laplacians for a batch of {b}")
    for m in laplacians:
        if m.shape[0] != h * w:
            raise T.ShapeError(f"Laplacian of size {m.shape[0]} does not match {h}x{w} output")

    v = (out.data.astype(np.float64) + 1.0) * 0.5  # (B, C, H, W)
    images = v.transpose(0, 2, 3, 1)
    energy = sum(matting.photorealism_energy(m, img) for m, img in zip(laplacians, images)) / b

    def backward_fn(g):
        grads = np.stack([matting.photorealism_gradient(m, img) for m, img in zip(laplacians, images)])
        # d energy / d out = 0.5 * d energy / d V, averaged over the batch
        grad_out = grads.transpose(0, 3, 1, 2) * (0.5 / b) * float(g.reshape(()))
        return (grad_out.astype(out.dtype),)

    return T.record("photorealism", np.array(energy, dtype=out.dtype).reshape(1, 1, 1, 1), (out,), backward_fn)


def compose_unpaired(adv_g, cyc, photo, w):
    """``adv + lambda1 * cyc + lambda2 * photo``; works on floats or tensors."""
    if isinstance(adv_g, T.Tensor):
        return T.add(T.add(adv_g, T.scalar_mul(cyc, w.lambda1)), T.scalar_mul(photo, w.lambda2))
    return adv_g + w.lambda1 * cyc + w.lambda2 * photo


def compose_paired(adv_g, l1, w):
    """``lambda3 * adv + lambda4 * l1``; works on floats or tensors."""
    if isinstance(adv_g, T.Tensor):
        return T.add(T.scalar_mul(adv_g, w.lambda3), T.scalar_mul(l1, w.lambda4))
    return w.lambda3 * adv_g + w.lambda4 * l1


TERMS = ("adv_G", "adv_D", "cycle", "photorealism", "paired_L1", "total")
DIRECTIONS = ("fwd", "bwd")


@dataclass
class LossReport:
    """Scalar loss terms of one iteration, per cycle direction.

    ``fwd`` is the hazy -> clean direction (G_Y, D_Y), ``bwd`` the
    clean -> hazy one (G_X, D_X). ``total`` is the generator objective of
    that direction.
    """

    iteration: int
    phase: str
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        for d in DIRECTIONS:
            for t in TERMS:
                self.values.setdefault(f"{d}.{t}", 0.0)

    def __getitem__(self, key):
        return self.values[key]

    @staticmethod
    def columns():
        return [f"{d}.{t}" for d in DIRECTIONS for t in TERMS]

    @classmethod
    def tsv_header(cls):
        return "\t".join(["iteration", "phase"] + cls.columns())

    def to_tsv_row(self):
        vals = [repr(float(self.values[c])) for c in self.columns()]
        return "\t".join([str(self.iteration), self.phase] + vals)

    @classmethod
    def from_tsv_row(cls, line):
        parts = line.rstrip("\n").split("\t")
        values = dict(zip(cls.columns(), (float(p) for p in parts[2:])))
        return cls(int(parts[0]), parts[1], values)

    def is_finite(self):
        return all(np.isfinite(v) for v in self.values.values())
