"""Finite-difference checks of every differentiable op, run in float64.

Each case builds small random inputs, projects the op output onto a fixed
random direction ``R`` and compares the analytic gradient of
``sum(op(inputs) * R)`` with central differences.
"""

from dataclasses import dataclass

import numpy as np

from . import losses, matting
from . import tensor as T
from .networks import ArchConfig, build_generator

RTOL = 1e-3
ATOL = 1e-5
STEP = 1e-6


@dataclass
class CheckResult:
    name: str
    max_abs: float
    max_rel: float
    passed: bool

    def tsv_row(self):
        return f"{self.name}\t{self.max_abs:.3e}\t{self.max_rel:.3e}\t{'ok' if self.passed else 'FAIL'}"


def _away_from_zero(rng, shape, margin=0.1):
    """Values with |x| >= margin so kinked ops stay differentiable under the FD step."""
    x = rng.uniform(margin, 1.0, shape)
    return x * rng.choice([-1.0, 1.0], shape)


def check_op(name, fn, arrays, rng, step=STEP, rtol=RTOL, atol=ATOL):
    """Compare analytic and numeric gradients of ``fn`` at ``arrays``.

    An element passes if its absolute error is within ``atol`` or its
    relative error within ``rtol``.
    """
    tensors = [T.Tensor(a.astype(np.float64), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    proj = rng.standard_normal(out.shape)
    T.inject_gradient(out, proj)
    T.backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad for t in tensors]

    def objective(vals):
        with_grad = [T.Tensor(v, dtype=np.float64) for v in vals]
        return float(np.sum(fn(*with_grad).data * proj))

    worst_abs = worst_rel = 0.0
    passed = True
    for i, a in enumerate(arrays):
        base = [x.astype(np.float64).copy() for x in arrays]
        it = np.nditer(base[i], flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = base[i][idx]
            base[i][idx] = orig + step
            fp = objective(base)
            base[i][idx] = orig - step
            fm = objective(base)
            base[i][idx] = orig
            num = (fp - fm) / (2 * step)
            ana = analytic[i].reshape(base[i].shape)[idx]
            err = abs(ana - num)
            rel = err / max(abs(ana), abs(num), 1e-300)
            worst_abs = max(worst_abs, err)
            worst_rel = max(worst_rel, rel if err > atol else 0.0)
            if err > atol and rel > rtol:
                passed = False
    return CheckResult(name, worst_abs, worst_rel, passed)


def _conv(rng):
    x, w, b = rng.standard_normal((2, 3, 6, 6)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal((4,))
    return lambda x, w, b: T.conv2d(x, w, b, stride=2, padding=1), [x, w, b]


def _conv_valid(rng):
    x, w = rng.standard_normal((1, 2, 5, 5)), rng.standard_normal((3, 2, 3, 3))
    return lambda x, w: T.conv2d(x, w, None, stride=1, padding=0), [x, w]


def _deconv(rng):
    x, w, b = rng.standard_normal((2, 4, 3, 3)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal((3,))
    return lambda x, w, b: T.conv2d_transpose(x, w, b, stride=2, padding=1, output_padding=1), [x, w, b]


def _instance_norm(rng):
    return lambda x: T.instance_norm(x), [rng.standard_normal((2, 3, 4, 4))]


def _unary(op):
    def case(rng):
        return op, [_away_from_zero(rng, (2, 3, 3, 3))]

    return case


def _binary(op):
    def case(rng):
        return op, [rng.standard_normal((1, 2, 3, 3)), rng.standard_normal((1, 2, 3, 3))]

    return case


def _reduction(op):
    def case(rng):
        return op, [rng.standard_normal((2, 2, 3, 3))]

    return case


def _concat(rng):
    return lambda a, b: T.concat_batch([a, b]), [rng.standard_normal((1, 2, 3, 3)), rng.standard_normal((2, 2, 3, 3))]


def _lsgan_d(rng):
    return losses.lsgan_d_loss, [rng.standard_normal((2, 1, 3, 3)), rng.standard_normal((2, 1, 3, 3))]


def _lsgan_g(rng):
    return losses.lsgan_g_loss, [rng.standard_normal((2, 1, 3, 3))]


def _cycle(rng):
    return losses.cycle_loss, [rng.standard_normal((1, 3, 4, 4)), _away_from_zero(rng, (1, 3, 4, 4)) + 3.0]


def _photorealism(rng):
    guide = rng.uniform(0, 1, (6, 6, 3))
    m = matting.build_matting_laplacian(guide)
    return lambda x: losses.photorealism_loss(m, x), [rng.uniform(-1, 1, (1, 3, 6, 6))]


CASES = {
    "conv2d": _conv,
    "conv2d_valid_nobias": _conv_valid,
    "conv2d_transpose": _deconv,
    "instance_norm": _instance_norm,
    "relu": _unary(T.relu),
    "leaky_relu": _unary(lambda x: T.leaky_relu(x, 0.2)),
    "tanh": _unary(T.tanh),
    "abs": _unary(T.abs),
    "square": _unary(T.square),
    "scalar_mul": _unary(lambda x: T.scalar_mul(x, -1.7)),
    "scalar_add": _unary(lambda x: T.scalar_add(x, 0.3)),
    "add": _binary(T.add),
    "sub": _binary(T.sub),
    "sum": _reduction(T.sum),
    "mean": _reduction(T.mean),
    "concat_batch": _concat,
    "lsgan_d_loss": _lsgan_d,
    "lsgan_g_loss": _lsgan_g,
    "cycle_loss": _cycle,
    "photorealism_loss": _photorealism,
}


def conv_adjoint_error(rng, stride=2, padding=1, size=8, kernel=3):
    """Relative mismatch of ``<conv(x), y>`` and ``<x, conv_T(y)>`` for one weight."""
    w = rng.standard_normal((4, 3, kernel, kernel))
    x = rng.standard_normal((2, 3, size, size))
    fwd = T.conv2d(T.Tensor(x), T.Tensor(w), None, stride, padding).data
    y = rng.standard_normal(fwd.shape)
    # output_padding restores the rows a strided conv drops, so the adjoint lands on x's grid
    extra = size - ((fwd.shape[2] - 1) * stride - 2 * padding + kernel)
    back = T.conv2d_transpose(T.Tensor(y), T.Tensor(w), None, stride, padding, extra).data
    lhs, rhs = np.sum(fwd * y), np.sum(x * back)
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)


def photorealism_generator_check(rng, size=8, n_entries=12, step=1e-5):
    """Relative error of sampled generator-weight grads of the photorealism loss.

    Returns ``||analytic - numeric|| / ||numeric||`` over ``n_entries``
    weight entries spread across layers.
    """
    cfg = ArchConfig(base_channels=4, num_residual_blocks=1, image_size=size)
    g = build_generator(cfg, rng)
    for _, t in g:
        t.data = t.data.astype(np.float64)
        # larger weights give the deep stack a gradient well above FD noise
        t.data *= 10.0
    guide = rng.uniform(0, 1, (size, size, 3))
    m = matting.build_matting_laplacian(guide)
    x = T.Tensor(guide.transpose(2, 0, 1)[None] * 2 - 1, dtype=np.float64)

    loss = losses.photorealism_loss(m, g(x))
    T.backward(loss)
    weights = [name for name in g.names() if name.endswith(".weight")]
    picks = []
    for k in range(n_entries):
        name = weights[k % len(weights)]
        picks.append((name, tuple(int(rng.integers(0, s)) for s in g[name].shape)))
    ana = np.array([g[name].grad[idx] for name, idx in picks])
    num = []
    with g.frozen():
        for name, idx in picks:
            t = g[name]
            orig = t.data[idx]
            t.data[idx] = orig + step
            fp = losses.photorealism_loss(m, g(x)).item()
            t.data[idx] = orig - step
            fm = losses.photorealism_loss(m, g(x)).item()
            t.data[idx] = orig
            num.append((fp - fm) / (2 * step))
    num = np.array(num)
    return float(np.linalg.norm(ana - num) / np.linalg.norm(num))


def run_all(seed=0, cases=None):
    rng = np.random.default_rng(seed)
    results = []
    for name, make in (cases or CASES).items():
        fn, arrays = make(rng)
        results.append(check_op(name, fn, arrays, rng))
    err = conv_adjoint_error(rng)
    results.append(CheckResult("conv_adjoint", err, err, err <= 1e-4))
    err = photorealism_generator_check(rng)
    results.append(CheckResult("photorealism_generator", err, err, err <= 1e-2))
    return results
