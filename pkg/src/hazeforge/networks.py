"""Encoder-decoder generators and PatchGAN-style discriminators.

A network is a flat layer descriptor plus an ordered name -> Tensor map;
``NetworkParams.__call__`` interprets the descriptor.
"""

import hashlib
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import tensor as T

INIT_STD = 0.02
LEAKY_SLOPE = 0.2
IN_EPS = 1e-5


@dataclass(frozen=True)
class ArchConfig:
    base_channels: int = 16
    num_residual_blocks: int = 2
    image_size: int = 32

    def __post_init__(self):
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if self.num_residual_blocks < 0:
            raise ValueError("num_residual_blocks must be >= 0")
        if self.image_size < 4 or self.image_size % 4:
            raise ValueError(f"image_size must be a positive multiple of 4, got {self.image_size}")


@dataclass(frozen=True)
class Layer:
    """One entry of an architecture descriptor.

    kind is ``conv``, ``deconv`` or ``res`` (a residual block of two 3x3
    convs whose params are ``<name>.conv1`` / ``<name>.conv2``).
    """

    kind: str
    name: str
    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1
    padding: int = 0
    output_padding: int = 0
    norm: bool = False
    act: str = ""


class NetworkParams:
    """Ordered parameters of one network plus the descriptor that uses them."""

    def __init__(self, kind, layers, params):
        self.kind = kind
        self.layers = tuple(layers)
        self._params = dict(params)

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self):
        return len(self._params)

    def __getitem__(self, name):
        return self._params[name]

    def names(self):
        return list(self._params)

    def tensors(self):
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    @contextmanager
    def frozen(self):
        """Exclude these parameters from the tape for the duration of the block."""
        saved = [t.requires_grad for t in self._params.values()]
        for t in self._params.values():
            t.requires_grad = False
        try:
            yield self
        finally:
            for t, flag in zip(self._params.values(), saved):
                t.requires_grad = flag

    def digest(self):
        h = hashlib.sha256()
        for name, t in self._params.items():
            h.update(name.encode())
            h.update(t.data.tobytes())
        return h.hexdigest()

    def num_weights(self):
        return sum(t.size for t in self._params.values())

    def _conv(self, name, x, stride, padding):
        return T.conv2d(x, self._params[f"{name}.weight"], self._params[f"{name}.bias"], stride, padding)

    def __call__(self, x):
        for layer in self.layers:
            if layer.kind == "res":
                h = self._conv(f"{layer.name}.conv1", x, 1, layer.kernel // 2)
                h = T.relu(T.instance_norm(h, IN_EPS))
                h = self._conv(f"{layer.name}.conv2", h, 1, layer.kernel // 2)
                x = T.add(x, T.instance_norm(h, IN_EPS))
                continue
            if layer.kind == "conv":
                x = self._conv(layer.name, x, layer.stride, layer.padding)
            elif layer.kind == "deconv":
                w, b = self._params[f"{layer.name}.weight"], self._params[f"{layer.name}.bias"]
                x = T.conv2d_transpose(x, w, b, layer.stride, layer.padding, layer.output_padding)
            else:
                raise ValueError(f"unknown layer kind {layer.kind!r}")
            if layer.norm:
                x = T.instance_norm(x, IN_EPS)
            if layer.act == "relu":
                x = T.relu(x)
            elif layer.act == "leaky_relu":
                x = T.leaky_relu(x, LEAKY_SLOPE)
            elif layer.act == "tanh":
                x = T.tanh(x)
        return x


def generator_layers(cfg):
    c = cfg.base_channels
    layers = [
        Layer("conv", "enc1", 3, c, 7, 1, 3, norm=True, act="relu"),
        Layer("conv", "enc2", c, 2 * c, 3, 2, 1, norm=True, act="relu"),
        Layer("conv", "enc3", 2 * c, 4 * c, 3, 2, 1, norm=True, act="relu"),
    ]
    layers += [Layer("res", f"res{i}", 4 * c, 4 * c, 3) for i in range(cfg.num_residual_blocks)]
    layers += [
        Layer("deconv", "dec1", 4 * c, 2 * c, 3, 2, 1, 1, norm=True, act="relu"),
        Layer("deconv", "dec2", 2 * c, c, 3, 2, 1, 1, norm=True, act="relu"),
        Layer("conv", "out", c, 3, 7, 1, 3, act="tanh"),
    ]
    return layers


def discriminator_layers(cfg):
    c = cfg.base_channels
    return [
        Layer("conv", "conv1", 3, c, 3, 2, 1, act="leaky_relu"),
        Layer("conv", "conv2", c, 2 * c, 3, 2, 1, norm=True, act="leaky_relu"),
        Layer("conv", "conv3", 2 * c, 4 * c, 3, 2, 1, norm=True, act="leaky_relu"),
        Layer("conv", "conv4", 4 * c, 8 * c, 3, 1, 1, norm=True, act="leaky_relu"),
        Layer("conv", "conv5", 8 * c, 1, 3, 1, 1),
    ]


def _allocate(layers):
    params = {}
    for layer in layers:
        if layer.kind == "res":
            for sub in ("conv1", "conv2"):
                params[f"{layer.name}.{sub}.weight"] = (layer.out_ch, layer.in_ch, layer.kernel, layer.kernel)
                params[f"{layer.name}.{sub}.bias"] = (layer.out_ch,)
        elif layer.kind == "deconv":
            params[f"{layer.name}.weight"] = (layer.in_ch, layer.out_ch, layer.kernel, layer.kernel)
            params[f"{layer.name}.bias"] = (layer.out_ch,)
        else:
            params[f"{layer.name}.weight"] = (layer.out_ch, layer.in_ch, layer.kernel, layer.kernel)
            params[f"{layer.name}.bias"] = (layer.out_ch,)
    return {
        name: T.Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True) for name, shape in params.items()
    }


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def init_weights(params, rng, std=INIT_STD):
    """Weights ~ N(0, std^2) i.i.d., biases zero, drawn in parameter order."""
    rng = _rng(rng)
    for name, t in params:
        if name.endswith(".bias"):
            t.data[...] = 0.0
        else:
            t.data[...] = rng.normal(0.0, std, size=t.shape).astype(np.float32)


def build_generator(cfg, rng):
    layers = generator_layers(cfg)
    net = NetworkParams("generator", layers, _allocate(layers))
    init_weights(net, rng)
    return net


def build_discriminator(cfg, rng):
    layers = discriminator_layers(cfg)
    net = NetworkParams("discriminator", layers, _allocate(layers))
    init_weights(net, rng)
    return net


def receptive_field(layers):
    """Receptive field in input pixels of a stack of stride >= 1 convolutions."""
    rf, jump = 1, 1
    for layer in layers:
        if layer.kind == "deconv":
            raise ValueError("receptive_field handles convolution-only stacks")
        if layer.kind == "res":
            rf += 2 * (layer.kernel - 1) * jump
            continue
        rf += (layer.kernel - 1) * jump
        jump *= layer.stride
    return rf


def output_size(layers, size):
    for layer in layers:
        if layer.kind == "conv":
            size = (size + 2 * layer.padding - layer.kernel) // layer.stride + 1
        elif layer.kind == "deconv":
            size = (size - 1) * layer.stride - 2 * layer.padding + layer.kernel + layer.output_padding
    return size


@dataclass
class Nets:
    """The four networks of one training context."""

    G_Y: NetworkParams
    G_X: NetworkParams
    D_Y: NetworkParams
    D_X: NetworkParams

    NAMES = ("G_Y", "G_X", "D_Y", "D_X")

    def items(self):
        return [(n, getattr(self, n)) for n in self.NAMES]


def build_nets(cfg, seed):
    """Build G_Y (dehaze), G_X (add haze), D_Y, D_X from independent child seeds."""
    children = np.random.SeedSequence(int(seed)).spawn(4)
    return Nets(
        G_Y=build_generator(cfg, np.random.default_rng(children[0])),
        G_X=build_generator(cfg, np.random.default_rng(children[1])),
        D_Y=build_discriminator(cfg, np.random.default_rng(children[2])),
        D_X=build_discriminator(cfg, np.random.default_rng(children[3])),
    )


def image_to_tensor(image):
    """(H, W, 3) [0, 1] image(s) -> (B, 3, H, W) tensor in [-1, 1]."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    return T.Tensor(arr.transpose(0, 3, 1, 2) * 2.0 - 1.0)


def tensor_to_image(t):
    """(B, 3, H, W) tensor in [-1, 1] -> (B, H, W, 3) float64 in [0, 1]."""
    arr = t.data.astype(np.float64).transpose(0, 2, 3, 1)
    return np.clip((arr + 1.0) / 2.0, 0.0, 1.0)
