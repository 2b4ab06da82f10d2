"""SCGN checkpoint container: network tensors, Adam state, iteration counter.

Byte layout is documented in docs/formats.md. Everything is little-endian
and written in a fixed order, so identical state gives identical bytes.
"""

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .networks import ArchConfig, build_nets

MAGIC = b"SCGN"
FOOTER_MAGIC = b"OPTS"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _u32(v):
    return struct.pack("<I", v)


def _u64(v):
    return struct.pack("<Q", v)


def _tensor_record(name, arr):
    arr = np.asarray(arr, dtype="<f4")
    shape = arr.shape if arr.ndim == 4 else (1,) * (4 - arr.ndim) + arr.shape
    enc = name.encode("utf-8")
    return _u32(len(enc)) + enc + struct.pack("<4I", *shape) + arr.tobytes()


class _Reader:
    def __init__(self, raw, path):
        self.raw = raw
        self.off = 0
        self.path = path

    def take(self, n):
        if self.off + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated at byte offset {self.off}")
        out = self.raw[self.off : self.off + n]
        self.off += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]

    def name(self):
        return self.take(self.u32()).decode("utf-8")

    def tensor(self):
        name = self.name()
        shape = struct.unpack("<4I", self.take(16))
        count = int(np.prod(shape))
        arr = np.frombuffer(self.take(4 * count), "<f4").astype(np.float32).reshape(shape)
        return name, arr


def encode(nets, opt_states, iteration, meta):
    """Serialize to bytes. ``opt_states`` maps network name -> OptimizerState."""
    records = []
    for net_name, net in nets.items():
        for pname, t in net:
            records.append(_tensor_record(f"{net_name}/{pname}", t.data))
    out = [MAGIC, _u32(VERSION), _u32(len(records))] + records

    out += [FOOTER_MAGIC, _u64(iteration), _u32(len(opt_states))]
    moments = []
    for net_name in sorted(opt_states):
        state = opt_states[net_name]
        enc = net_name.encode()
        out += [_u32(len(enc)), enc, _u64(state.step)]
        for pname in sorted(state.m):
            moments.append(_tensor_record(f"{net_name}/m/{pname}", state.m[pname]))
            moments.append(_tensor_record(f"{net_name}/v/{pname}", state.v[pname]))
    out += [_u32(len(moments))] + moments
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    out += [_u32(len(meta_bytes)), meta_bytes]
    return b"".join(out)


def save(path, nets, opt_states, iteration, meta):
    raw = encode(nets, opt_states, iteration, meta)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(raw)
    tmp.replace(path)
    return hashlib.sha256(raw).hexdigest()


def read_raw(path):
    """Parse a checkpoint into plain data without building networks."""
    raw = Path(path).read_bytes()
    r = _Reader(raw, path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not an SCGN checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    tensors = dict(r.tensor() for _ in range(r.u32()))
    if r.take(4) != FOOTER_MAGIC:
        raise CheckpointError(f"{path}: missing optimizer footer at byte offset {r.off - 4}")
    iteration = r.u64()
    steps = {}
    for _ in range(r.u32()):
        name = r.name()
        steps[name] = r.u64()
    moments = dict(r.tensor() for _ in range(r.u32()))
    meta = json.loads(r.take(r.u32()).decode("utf-8"))
    if r.off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - r.off} trailing bytes")
    return {
        "tensors": tensors,
        "iteration": iteration,
        "steps": steps,
        "moments": moments,
        "meta": meta,
        "sha256": hashlib.sha256(raw).hexdigest(),
    }


def load(path):
    """Return ``(nets, opt_states, iteration, meta)``."""
    from .trainer import OptimizerState

    data = read_raw(path)
    meta = data["meta"]
    arch = ArchConfig(**meta["arch"])
    nets = build_nets(arch, 0)
    for net_name, net in nets.items():
        for pname, t in net:
            key = f"{net_name}/{pname}"
            if key not in data["tensors"]:
                raise CheckpointError(f"{path}: missing tensor {key}")
            arr = data["tensors"][key]
            if arr.size != t.size:
                raise CheckpointError(f"{path}: tensor {key} has {arr.size} values, expected {t.size}")
            t.data[...] = arr.reshape(t.shape)
    opt_states = {}
    for net_name, step in data["steps"].items():
        net = getattr(nets, net_name)
        state = OptimizerState.for_params(net)
        state.step = step
        for pname in state.m:
            state.m[pname][...] = data["moments"][f"{net_name}/m/{pname}"].reshape(state.m[pname].shape)
            state.v[pname][...] = data["moments"][f"{net_name}/v/{pname}"].reshape(state.v[pname].shape)
        opt_states[net_name] = state
    return nets, opt_states, data["iteration"], meta


def file_sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


__all__ = ["CheckpointError", "encode", "save", "load", "read_raw", "file_sha256"]
