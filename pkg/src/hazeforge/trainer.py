"""Adam, the learning-rate schedule, and the alternating unpaired/paired training loop.

Odd iterations (1, 3, ...) are unpaired steps, even ones paired steps.
Within each step every discriminator is updated before its generator.
"""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from . import tensor as T
from .imaging import list_images, read_image, resize_bilinear
from .losses import (
    LossReport,
    LossWeights,
    compose_paired,
    compose_unpaired,
    cycle_loss,
    lsgan_d_loss,
    lsgan_g_loss,
    paired_l1_loss,
    photorealism_loss,
)
from .matting import DEFAULT_EPS, DEFAULT_RADIUS, LaplacianCache
from .networks import ArchConfig, build_nets, image_to_tensor

log = logging.getLogger(__name__)

LOG_PREAMBLE = "# hazeforge train log: phase U=unpaired P=paired; each direction updates D then G"


class ConfigError(ValueError):
    """Training inputs or settings are invalid."""


class NonFiniteLossError(RuntimeError):
    def __init__(self, report, where):
        super().__init__(f"non-finite loss in {where} at iteration {report.iteration}: {report.values}")
        self.report = report


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs_constant: int = 50
    epochs_decay: int = 50
    seed: int = 0
    batch_size: int = 1
    weights: LossWeights = field(default_factory=LossWeights)
    photorealism_mode: str = "both"
    paired_backward: bool = True
    checkpoint_every: int = 0
    max_iterations: int = 0
    matting_eps: float = DEFAULT_EPS
    matting_radius: int = DEFAULT_RADIUS

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("Adam betas must be in [0, 1)")
        if self.adam_eps <= 0:
            raise ConfigError("adam_eps must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs_constant < 0 or self.epochs_decay < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.photorealism_mode not in ("both", "backward_only"):
            raise ConfigError(f"photorealism_mode must be 'both' or 'backward_only', got {self.photorealism_mode!r}")
        if self.checkpoint_every < 0 or self.max_iterations < 0:
            raise ConfigError("checkpoint_every and max_iterations must be >= 0")


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, beta1=0.9, beta2=0.999, eps=1e-8):
        m = {name: np.zeros_like(t.data) for name, t in params}
        v = {name: np.zeros_like(t.data) for name, t in params}
        return cls(m, v, 0, beta1, beta2, eps)


def adam_step(params, state, lr_now):
    """One bias-corrected Adam update of every parameter, then zero the grads."""
    missing = [name for name, t in params if t.grad is None]
    if missing:
        raise T.ContractError(f"adam_step: no gradient for {missing[:3]}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, t in params:
        g = t.grad
        m = state.m[name]
        v = state.v[name]
        m *= np.float32(b1)
        m += np.float32(1.0 - b1) * g
        v *= np.float32(b2)
        v += np.float32(1.0 - b2) * (g * g)
        update = (m / np.float32(c1)) / (np.sqrt(v / np.float32(c2)) + np.float32(state.eps))
        t.data -= np.float32(lr_now) * update
        t.grad = np.zeros_like(t.data)


def lr_schedule(config, epoch):
    """Constant ``lr`` for ``epochs_constant`` epochs, then linear decay to 0."""
    if epoch < config.epochs_constant:
        return config.lr
    if config.epochs_decay == 0:
        return 0.0
    frac = (epoch - config.epochs_constant) / config.epochs_decay
    return config.lr * max(0.0, 1.0 - frac)


def _finite(report, where):
    if not report.is_finite():
        raise NonFiniteLossError(report, where)


def _discriminator_update(d_net, opt, real, fake, lr_now):
    loss = lsgan_d_loss(d_net(real), d_net(fake.detach()))
    value = loss.item()
    if np.isfinite(value):
        T.backward(loss)
        adam_step(d_net, opt, lr_now)
    return value


def train_step_unpaired(batch_x, batch_y, M_x, M_y, nets, opt, w, lr_now, photorealism_mode="both", iteration=0):
    """One unpaired iteration over both cycle directions.

    ``batch_x`` are hazy images, ``batch_y`` clean ones, as [-1, 1] tensors;
    ``M_x``/``M_y`` are their Laplacians (one matrix or one per sample).
    """
    report = LossReport(iteration, "U")
    fake_y = nets.G_Y(batch_x)
    fake_x = nets.G_X(batch_y)

    report.values["fwd.adv_D"] = _discriminator_update(nets.D_Y, opt["D_Y"], batch_y, fake_y, lr_now)
    report.values["bwd.adv_D"] = _discriminator_update(nets.D_X, opt["D_X"], batch_x, fake_x, lr_now)
    _finite(report, "discriminator update")

    with nets.D_Y.frozen(), nets.D_X.frozen():
        rec_x = nets.G_X(fake_y)
        rec_y = nets.G_Y(fake_x)
        objective = None
        for d, d_net, fake, real, rec, lap, photo_on in (
            ("fwd", nets.D_Y, fake_y, batch_x, rec_x, M_x, photorealism_mode == "both"),
            ("bwd", nets.D_X, fake_x, batch_y, rec_y, M_y, True),
        ):
            adv = lsgan_g_loss(d_net(fake))
            cyc = cycle_loss(real, rec)
            # a direction with photorealism switched off reports 0 so totals stay consistent
            if photo_on:
                photo = photorealism_loss(lap, rec)
                photo_value = photo.item()
            else:
                photo, photo_value = None, 0.0
            if photo is None or w.lambda2 == 0:
                total = compose_unpaired(adv, cyc, T.Tensor(np.zeros((1, 1, 1, 1), np.float32)), w)
            else:
                total = compose_unpaired(adv, cyc, photo, w)
            report.values[f"{d}.adv_G"] = adv.item()
            report.values[f"{d}.cycle"] = cyc.item()
            report.values[f"{d}.photorealism"] = photo_value
            report.values[f"{d}.total"] = compose_unpaired(adv.item(), cyc.item(), photo_value, w)
            objective = total if objective is None else T.add(objective, total)
        _finite(report, "generator update")
        T.backward(objective)
    adam_step(nets.G_Y, opt["G_Y"], lr_now)
    adam_step(nets.G_X, opt["G_X"], lr_now)
    return report


def train_step_paired(batch_x, batch_y_gt, nets, opt, w, lr_now, paired_backward=True, iteration=0):
    """One paired iteration: hazy -> clean for G_Y/D_Y, and clean -> hazy for G_X/D_X."""
    report = LossReport(iteration, "P")
    directions = [("fwd", nets.G_Y, "G_Y", nets.D_Y, "D_Y", batch_x, batch_y_gt)]
    if paired_backward:
        directions.append(("bwd", nets.G_X, "G_X", nets.D_X, "D_X", batch_y_gt, batch_x))
    for d, g_net, g_name, d_net, d_name, source, target in directions:
        fake = g_net(source)
        report.values[f"{d}.adv_D"] = _discriminator_update(d_net, opt[d_name], target, fake, lr_now)
        _finite(report, f"{d_name} update")
        with d_net.frozen():
            adv = lsgan_g_loss(d_net(fake))
            l1 = paired_l1_loss(fake, target)
            total = compose_paired(adv, l1, w)
            report.values[f"{d}.adv_G"] = adv.item()
            report.values[f"{d}.paired_L1"] = l1.item()
            report.values[f"{d}.total"] = compose_paired(adv.item(), l1.item(), w)
            _finite(report, f"{g_name} update")
            T.backward(total)
        adam_step(g_net, opt[g_name], lr_now)
    return report


@dataclass
class DatasetLayout:
    """``unpaired/trainA`` (hazy), ``unpaired/trainB`` (clean), ``paired/{hazy,clean}``."""

    root: Path

    @property
    def unpaired_a(self):
        return self.root / "unpaired" / "trainA"

    @property
    def unpaired_b(self):
        return self.root / "unpaired" / "trainB"

    @property
    def paired_hazy(self):
        return self.root / "paired" / "hazy"

    @property
    def paired_clean(self):
        return self.root / "paired" / "clean"


def _load_dir(directory, size):
    if not directory.is_dir():
        raise ConfigError(f"missing dataset directory {directory}")
    out = []
    for p in list_images(directory):
        img = read_image(p)
        if img.ndim == 2:
            img = np.repeat(img[:, :, None], 3, axis=2)
        out.append((p.name, resize_bilinear(img, size, size)))
    if not out:
        raise ConfigError(f"dataset directory {directory} is empty")
    return out


@dataclass
class TrainingData:
    unpaired_x: list
    unpaired_y: list
    paired: list  # (name, hazy, clean)
    lap_x: list
    lap_y: list

    @classmethod
    def load(cls, layout, image_size, cache):
        ux = _load_dir(layout.unpaired_a, image_size)
        uy = _load_dir(layout.unpaired_b, image_size)
        hazy = _load_dir(layout.paired_hazy, image_size)
        clean = _load_dir(layout.paired_clean, image_size)
        if sorted(n for n, _ in hazy) != sorted(n for n, _ in clean):
            raise ConfigError("paired hazy/clean directories do not hold the same filenames")
        clean_by_name = dict(clean)
        paired = [(n, img, clean_by_name[n]) for n, img in hazy]
        lap_x = [cache.get(img) for _, img in ux]
        lap_y = [cache.get(img) for _, img in uy]
        return cls(ux, uy, paired, lap_x, lap_y)


def _stream_indices(seed, stream, n, start, count):
    """Sample positions ``start .. start+count-1`` of a reshuffled-per-pass stream."""
    out = []
    for k in range(start, start + count):
        epoch, pos = divmod(k, n)
        perm = np.random.default_rng([int(seed), stream, epoch]).permutation(n)
        out.append(int(perm[pos]))
    return out


def _batch(images, idx):
    return image_to_tensor(np.stack([images[i] for i in idx]))


def iterations_per_epoch(data, config):
    largest = max(len(data.unpaired_x), len(data.unpaired_y), len(data.paired))
    return 2 * -(-largest // config.batch_size)


def total_iterations(data, config):
    if config.max_iterations:
        return config.max_iterations
    return (config.epochs_constant + config.epochs_decay) * iterations_per_epoch(data, config)


def new_optimizers(nets, config):
    return {
        name: OptimizerState.for_params(net, config.adam_beta1, config.adam_beta2, config.adam_eps)
        for name, net in nets.items()
    }


def checkpoint_meta(arch, config):
    return {"arch": asdict(arch), "seed": int(config.seed), "format": "hazeforge-scgn-1"}


def _prepare_log(path, start_iteration):
    kept = []
    if start_iteration > 0 and path.exists():
        for line in path.read_text().splitlines()[2:]:
            if line and int(line.split("\t", 1)[0]) <= start_iteration:
                kept.append(line)
    with open(path, "w") as fh:
        fh.write(LOG_PREAMBLE + "\n" + LossReport.tsv_header() + "\n")
        for line in kept:
            fh.write(line + "\n")


def run_iteration(i, data, nets, opt, config, lr_now):
    """Run training iteration ``i`` (1-based) and return its report."""
    w = config.weights
    bs = config.batch_size
    step = (i - 1) // 2
    if i % 2 == 1:
        ix = _stream_indices(config.seed, 1, len(data.unpaired_x), step * bs, bs)
        iy = _stream_indices(config.seed, 2, len(data.unpaired_y), step * bs, bs)
        bx = _batch([img for _, img in data.unpaired_x], ix)
        by = _batch([img for _, img in data.unpaired_y], iy)
        mx = [data.lap_x[k] for k in ix]
        my = [data.lap_y[k] for k in iy]
        return train_step_unpaired(bx, by, mx, my, nets, opt, w, lr_now, config.photorealism_mode, i)
    ip = _stream_indices(config.seed, 3, len(data.paired), step * bs, bs)
    bx = _batch([h for _, h, _ in data.paired], ip)
    by = _batch([c for _, _, c in data.paired], ip)
    return train_step_paired(bx, by, nets, opt, w, lr_now, config.paired_backward, i)


def train(config, arch, data_dir, out_dir, resume=None, cache_dir=None, progress=None):
    """Alternate unpaired and paired iterations; write checkpoints and the loss log.

    Returns the path of the final checkpoint. On a non-finite loss a crash
    checkpoint is written and :class:`NonFiniteLossError` re-raised.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache = LaplacianCache(cache_dir, config.matting_eps, config.matting_radius)
    data = TrainingData.load(DatasetLayout(Path(data_dir)), arch.image_size, cache)

    if resume is not None:
        nets, opt, start, meta = checkpoint.load(resume)
        if ArchConfig(**meta["arch"]) != arch:
            raise ConfigError(f"checkpoint architecture {meta['arch']} differs from config {asdict(arch)}")
        for state in opt.values():
            state.beta1, state.beta2, state.eps = config.adam_beta1, config.adam_beta2, config.adam_eps
        missing = set(nets.NAMES) - set(opt)
        for name in missing:
            opt[name] = OptimizerState.for_params(getattr(nets, name), config.adam_beta1, config.adam_beta2, config.adam_eps)
    else:
        nets = build_nets(arch, config.seed)
        opt = new_optimizers(nets, config)
        start = 0
    for _, net in nets.items():
        net.zero_grad()

    meta = checkpoint_meta(arch, config)
    n_iter = total_iterations(data, config)
    per_epoch = iterations_per_epoch(data, config)
    log_path = out_dir / "train_log.tsv"
    _prepare_log(log_path, start)

    with open(log_path, "a") as log_fh:
        for i in range(start + 1, n_iter + 1):
            lr_now = lr_schedule(config, (i - 1) // per_epoch)
            try:
                report = run_iteration(i, data, nets, opt, config, lr_now)
            except NonFiniteLossError as exc:
                log_fh.write(exc.report.to_tsv_row() + "\n")
                log_fh.flush()
                crash = out_dir / f"crash_iter_{i:06d}.scgn"
                checkpoint.save(crash, nets, opt, i - 1, meta)
                log.error("non-finite loss at iteration %d; crash checkpoint %s", i, crash)
                raise
            log_fh.write(report.to_tsv_row() + "\n")
            if progress is not None:
                progress(report)
            if config.checkpoint_every and i % config.checkpoint_every == 0:
                log_fh.flush()
                checkpoint.save(out_dir / "checkpoints" / f"iter_{i:06d}.scgn", nets, opt, i, meta)

    final = out_dir / "final.scgn"
    checkpoint.save(final, nets, opt, max(n_iter, start), meta)
    return final


def read_log(path):
    lines = Path(path).read_text().splitlines()
    return [LossReport.from_tsv_row(line) for line in lines[2:] if line]
