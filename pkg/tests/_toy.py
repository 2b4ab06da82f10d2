"""Shared toy-run helpers for the smoke, ablation and determinism tests."""

import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from hazeforge import checkpoint, config
from hazeforge.imaging import list_images, read_image
from hazeforge.metrics import psnr
from hazeforge.networks import image_to_tensor, tensor_to_image
from hazeforge.trainer import read_log, train

DATA = Path(__file__).parent / "data"
TOY = DATA / "toy"
TOY_CFG = DATA / "toy.cfg"
BASELINE = DATA / "toy_baseline.json"
TAIL = 10  # rows per phase averaged for the "after" value


def toy_config(**overrides):
    return replace(config.load(TOY_CFG), **overrides)


def run_toy(out_dir, cache_dir, **overrides):
    cfg = toy_config(**overrides)
    start = time.perf_counter()
    final = train(cfg.train_config(), cfg.arch_config(), TOY, out_dir, cache_dir=cache_dir)
    elapsed = time.perf_counter() - start
    return final, read_log(Path(out_dir) / "train_log.tsv"), elapsed


def _pair_sum(row, term):
    return row[f"fwd.{term}"] + row[f"bwd.{term}"]


def loss_ratio(rows, phase, term):
    """Mean of the last TAIL rows of ``phase`` over the first one, both directions summed."""
    sel = [r for r in rows if r.phase == phase]
    first = _pair_sum(sel[0], term)
    last = np.mean([_pair_sum(r, term) for r in sel[-TAIL:]])
    return float(last / first)


def heldout_psnr(final):
    """Mean PSNR of hazy inputs and of G_Y outputs against the clean test images."""
    nets, _, _, _ = checkpoint.load(final)
    before, after = [], []
    for p in list_images(TOY / "test" / "hazy"):
        hazy = read_image(p)
        clean = read_image(TOY / "test" / "clean" / p.name)
        out = tensor_to_image(nets.G_Y(image_to_tensor(hazy)))[0]
        before.append(psnr(hazy, clean))
        after.append(psnr(out, clean))
    return float(np.mean(before)), float(np.mean(after))


def summarize(final, rows, elapsed):
    before, after = heldout_psnr(final)
    return {
        "iterations": len(rows),
        "cycle_ratio": loss_ratio(rows, "U", "cycle"),
        "paired_l1_ratio": loss_ratio(rows, "P", "paired_L1"),
        "psnr_hazy": before,
        "psnr_dehazed": after,
        "psnr_gain": after - before,
        "all_finite": all(r.is_finite() for r in rows),
        "seconds": elapsed,
        "checkpoint_sha256": checkpoint.file_sha256(final),
    }


def load_baseline():
    return json.loads(BASELINE.read_text())
