"""Deterministic synthetic outdoor scenes with depth, for smoke tests and demos.

A scene is a sky gradient over a ground plane with a few flat-colored
blocks standing on it. Depth grows toward the horizon; the sky is
farthest. ``build_toy_dataset`` turns scenes into the documented
dataset tree using the regular haze synthesis path.
"""

import shutil
import tempfile
from pathlib import Path

import numpy as np

from .hazesynth import HazeParams, generate_paired_set
from .imaging import write_image

SKY_DEPTH = 1.0


def make_scene(rng, size=32):
    """Return ``(image (H, W, 3) in [0, 1], depth (H, W) >= 0)``."""
    h = w = size
    horizon = int(rng.integers(size // 3, size // 2 + 1))
    rows = np.arange(h, dtype=np.float64)[:, None]

    sky_top = np.array([0.25, 0.45, 0.85]) + rng.uniform(-0.1, 0.1, 3)
    sky_low = np.array([0.7, 0.8, 0.95]) + rng.uniform(-0.05, 0.05, 3)
    frac = np.clip(rows / max(horizon, 1), 0, 1)[:, :, None]
    image = np.broadcast_to(sky_top * (1 - frac) + sky_low * frac, (h, w, 3)).copy()
    depth = np.full((h, w), SKY_DEPTH)

    ground = rng.uniform([0.2, 0.3, 0.1], [0.5, 0.6, 0.3])
    g = rows[horizon:] - horizon
    span = max(h - horizon - 1, 1)
    shade = (0.7 + 0.3 * g / span)[:, :, None]
    image[horizon:] = ground * shade
    depth[horizon:] = np.broadcast_to(0.9 - 0.85 * g / span, (h - horizon, w))

    for _ in range(int(rng.integers(2, 5))):
        bw = int(rng.integers(size // 8, size // 3))
        bh = int(rng.integers(size // 6, size // 2))
        x0 = int(rng.integers(0, w - bw))
        base = int(rng.integers(horizon + 1, h))
        top = max(base - bh, 0)
        color = rng.uniform(0.1, 0.9, 3)
        image[top:base, x0 : x0 + bw] = color
        depth[top:base, x0 : x0 + bw] = depth[base - 1, x0]

    image += rng.normal(0, 0.01, image.shape)
    return np.clip(image, 0, 1), depth


def write_source_tree(root, seeds, size=32, prefix="scene"):
    """Write ``images/<name>.png`` and ``depth/<name>.pfm`` for each seed."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "depth").mkdir(parents=True, exist_ok=True)
    names = []
    for s in seeds:
        image, depth = make_scene(np.random.default_rng([int(s), 7]), size)
        name = f"{prefix}{int(s):04d}"
        write_image(image, root / "images" / f"{name}.png")
        write_image(depth, root / "depth" / f"{name}.pfm")
        names.append(name)
    return names


def build_toy_dataset(out_dir, n_unpaired=16, n_paired=8, n_test=4, size=32, seed=0, params=None):
    """Create ``unpaired/{trainA,trainB}``, ``paired/{hazy,clean}`` and ``test/{hazy,clean}``.

    Every split uses disjoint scenes; trainA holds hazed versions of one
    scene pool and trainB clean images of another, so the unpaired set
    has no aligned pairs.
    """
    out_dir = Path(out_dir)
    params = params or HazeParams()
    base = 1000 * int(seed)
    splits = {
        "trainA": range(base, base + n_unpaired),
        "trainB": range(base + 100, base + 100 + n_unpaired),
        "paired": range(base + 200, base + 200 + n_paired),
        "test": range(base + 300, base + 300 + n_test),
    }
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        for split, seeds in splits.items():
            src = tmp / split / "src"
            write_source_tree(src, seeds, size)
            if split == "trainB":
                dest = out_dir / "unpaired" / "trainB"
                dest.mkdir(parents=True, exist_ok=True)
                for p in sorted((src / "images").iterdir()):
                    shutil.copyfile(p, dest / p.name)
                continue
            generate_paired_set(src, tmp / split / "out", params, seed=seed)
            made = tmp / split / "out" / "paired"
            if split == "trainA":
                targets = {"hazy": out_dir / "unpaired" / "trainA"}
            else:
                root = out_dir / ("paired" if split == "paired" else "test")
                targets = {"hazy": root / "hazy", "clean": root / "clean"}
            for kind, dest in targets.items():
                dest.mkdir(parents=True, exist_ok=True)
                for p in sorted((made / kind).iterdir()):
                    shutil.copyfile(p, dest / p.name)
    return out_dir
