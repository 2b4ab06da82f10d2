"""Time the compiled and numpy kernel backends on training-sized inputs.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Each backend runs in its own subprocess, since the backend is fixed at
import time by HAZEFORGE_PURE_PYTHON.
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, timeit
import numpy as np
from hazeforge import kernels, matting
from hazeforge import tensor as T
from hazeforge.networks import ArchConfig, build_generator

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
x = rng.standard_normal((1, 32, 34, 34)).astype(np.float32)
cols = kernels.im2col(x, 3, 1, 32, 32)
img = rng.uniform(0, 1, (32, 32, 3))
g = build_generator(ArchConfig(), rng)
inp = T.Tensor(rng.uniform(-1, 1, (1, 3, 32, 32)).astype(np.float32))

def gen_step():
    out = g(inp)
    T.backward(T.mean(T.square(out)))
    g.zero_grad()

cases = {
    "im2col 32x34x34 k3": lambda: kernels.im2col(x, 3, 1, 32, 32),
    "col2im 32x34x34 k3": lambda: kernels.col2im(cols, 34, 34, 1),
    "matting laplacian 32x32": lambda: matting.build_matting_laplacian(img),
    "generator fwd+bwd 32x32": gen_step,
}
res = {name: min(timeit.repeat(fn, number=1, repeat=repeat)) for name, fn in cases.items()}
print(json.dumps({"backend": kernels.BACKEND, "seconds": res}))
"""


def run(flag, repeat):
    env = dict(os.environ, HAZEFORGE_PURE_PYTHON=flag)
    out = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env, check=True, capture_output=True, text=True)
    return json.loads(out.stdout)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    fast, slow = run("0", args.repeat), run("1", args.repeat)
    if fast["backend"] != "cython":
        print("compiled extension not built; both columns use the numpy fallback", file=sys.stderr)
    print(f"{'kernel':28s}{fast['backend']:>12s}{slow['backend']:>12s}{'speedup':>10s}")
    for name, t_fast in fast["seconds"].items():
        t_slow = slow["seconds"][name]
        print(f"{name:28s}{t_fast * 1e3:10.2f}ms{t_slow * 1e3:10.2f}ms{t_slow / t_fast:9.1f}x")


if __name__ == "__main__":
    main()
