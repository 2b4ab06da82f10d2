"""Command-line entry point: ``hazeforge <command> [flags]``.

Exit status is 0 on success, 1 on invalid input (one-line diagnostic on
stderr) or a failed gradient check, 2 on a runtime failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, config, gradcheck, hazesynth, matting, metrics
from .imaging import ImageIOError, list_images, read_depth, read_image, resize_bilinear, write_image
from .networks import image_to_tensor, tensor_to_image
from .trainer import ConfigError, NonFiniteLossError, train


class UsageError(Exception):
    """Bad flags or inputs; reported with exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p):
    p.add_argument("--seed", type=int, default=None, help="global seed (default 0)")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--out", default=None, help="output path")


def _need_dir(path, what):
    if path is None:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{what} {p} is not a directory")
    return p


def _need_out(args):
    if not args.out:
        raise UsageError("--out is required")
    return Path(args.out)


def _rgb(img):
    return np.repeat(img[:, :, None], 3, axis=2) if img.ndim == 2 else img


def _write_tsv(text, out):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_synthesize(args, cfg):
    src = _need_dir(args.source, "--source")
    out = _need_out(args)
    manifest = hazesynth.generate_paired_set(src, out, cfg.haze_params(), cfg.seed, args.size)
    print(f"synthesized {len(manifest)} pairs, {len(manifest.errors)} errors -> {out / 'manifest.tsv'}")
    return 0


def cmd_refine_depth(args, cfg):
    out = _need_out(args)
    depth = read_depth(args.depth)
    guide = _rgb(read_image(args.guide))
    if depth.shape != guide.shape[:2]:
        depth = resize_bilinear(depth, guide.shape[1], guide.shape[0])
    refined = hazesynth.refine_depth(
        depth, guide, cfg.haze_refine_lambda, cfg.matting_eps, cfg.matting_radius
    )
    write_image(refined, out)
    return 0


def cmd_build_matting_cache(args, cfg):
    src = _need_dir(args.input, "--input")
    cache = matting.LaplacianCache(cfg.cache_dir or None, cfg.matting_eps, cfg.matting_radius)
    lines = ["filename\tkey\tnnz"]
    for p in list_images(src):
        img = resize_bilinear(_rgb(read_image(p)), cfg.image_size, cfg.image_size)
        m = cache.get(img)
        lines.append(f"{p.name}\t{matting.laplacian_key(img, cfg.matting_eps, cfg.matting_radius)}\t{m.nnz}")
    print(f"# cache {cache.directory}")
    print("\n".join(lines))
    return 0


def cmd_train(args, cfg):
    data = _need_dir(args.data or cfg.data_dir or None, "--data")
    if not cfg.out_dir:
        raise UsageError("--out is required")
    if args.resume and not Path(args.resume).is_file():
        raise UsageError(f"--resume {args.resume} does not exist")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.dump(cfg))
    final = train(cfg.train_config(), cfg.arch_config(), data, out, args.resume, cfg.cache_dir or None)
    print(f"final checkpoint {final} sha256 {checkpoint.file_sha256(final)}")
    return 0


def _load_nets(path):
    if path is None:
        raise UsageError("--checkpoint is required")
    if not Path(path).is_file():
        raise UsageError(f"--checkpoint {path} does not exist")
    nets, _, _, meta = checkpoint.load(path)
    return nets, meta["arch"]["image_size"]


def _apply(net, img, size):
    """Run ``net`` at its native size and resize the result back."""
    h, w = img.shape[:2]
    x = image_to_tensor(resize_bilinear(_rgb(img), size, size))
    return resize_bilinear(tensor_to_image(net(x))[0], w, h)


def _translate(args, which):
    nets, size = _load_nets(args.checkpoint)
    src = _need_dir(args.input, "--input")
    out = _need_out(args)
    out.mkdir(parents=True, exist_ok=True)
    net = getattr(nets, which)
    n = 0
    for p in list_images(src):
        write_image(_apply(net, read_image(p), size), out / p.name)
        n += 1
    print(f"wrote {n} images to {out}")
    return 0


def cmd_dehaze(args, cfg):
    return _translate(args, "G_Y")


def cmd_addhaze(args, cfg):
    return _translate(args, "G_X")


def _by_name(directory):
    return {p.name: p for p in list_images(directory)}


def cmd_evaluate(args, cfg):
    report = metrics.MetricReport()
    if args.cycle:
        # round trip hazy -> G_Y -> G_X and score the reconstruction against its input
        nets, size = _load_nets(args.checkpoint)
        src = _need_dir(args.input, "--input")
        for p in list_images(src):
            img = _rgb(read_image(p))
            rec = _apply(nets.G_X, _apply(nets.G_Y, img, size), size)
            report.add(p.name, metrics.psnr(rec, img), metrics.ssim(rec, img))
    else:
        results = _by_name(_need_dir(args.result, "--result"))
        truth = _by_name(_need_dir(args.gt, "--gt"))
        missing = sorted(set(results) ^ set(truth))
        if missing:
            raise UsageError(f"result and ground-truth filenames differ: {', '.join(missing[:5])}")
        for name in sorted(results):
            a, b = _rgb(read_image(results[name])), _rgb(read_image(truth[name]))
            if a.shape != b.shape:
                raise UsageError(f"{name}: result {a.shape} and ground truth {b.shape} sizes differ")
            report.add(name, metrics.psnr(a, b), metrics.ssim(a, b))
    if report.count == 0:
        raise UsageError("no images to evaluate")
    _write_tsv(report.to_tsv(), args.out)
    return 0


def cmd_gradcheck(args, cfg):
    results = gradcheck.run_all(cfg.seed)
    lines = ["check\tmax_abs\tmax_rel\tstatus"] + [r.tsv_row() for r in results]
    _write_tsv("\n".join(lines) + "\n", args.out)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"hazeforge: gradcheck failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_inspect_checkpoint(args, cfg):
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"{args.checkpoint} does not exist")
    raw = checkpoint.read_raw(args.checkpoint)
    lines = [
        f"sha256\t{raw['sha256']}",
        f"iteration\t{raw['iteration']}",
        f"meta\t{json.dumps(raw['meta'], sort_keys=True)}",
    ]
    nets = {}
    for key, arr in raw["tensors"].items():
        net = key.split("/", 1)[0]
        count, size = nets.get(net, (0, 0))
        nets[net] = (count + 1, size + arr.size)
    for net, (count, size) in nets.items():
        lines.append(f"net\t{net}\ttensors={count}\tweights={size}\tadam_step={raw['steps'].get(net, 0)}")
    _write_tsv("\n".join(lines) + "\n", args.out)
    return 0


def build_parser():
    parser = _Parser(prog="hazeforge", description="Unpaired + paired haze removal toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synthesize", help="build a paired hazy/clean set from images + depth")
    p.add_argument("--source", required=True, help="directory with images/ and depth/")
    p.add_argument("--size", type=int, default=None, help="resize to SIZE x SIZE first")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("refine-depth", help="soft-matting refinement of one depth map")
    p.add_argument("--depth", required=True)
    p.add_argument("--guide", required=True)
    p.set_defaults(func=cmd_refine_depth)

    p = sub.add_parser("build-matting-cache", help="precompute Laplacians for a directory")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_build_matting_cache)

    p = sub.add_parser("train", help="alternating unpaired/paired training")
    p.add_argument("--data", default=None, help="dataset root (unpaired/, paired/)")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("dehaze", cmd_dehaze, "run G_Y"), ("addhaze", cmd_addhaze, "run G_X")):
        p = sub.add_parser(name, help=f"{helptext} on every image of a directory")
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--input", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="PSNR/SSIM TSV of results vs ground truth")
    p.add_argument("--result", default=None)
    p.add_argument("--gt", default=None)
    p.add_argument("--cycle", action="store_true", help="score G_X(G_Y(x)) against x for --input")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--input", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference checks of all differentiable ops")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect-checkpoint", help="summarize a checkpoint")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect_checkpoint)

    for p in sub.choices.values():
        _common(p)
        config.add_arguments(p)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.INFO)
        cfg = config.from_args(args)
        return args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"hazeforge: error: {exc}".splitlines()[0], file=sys.stderr)
        return 1
    except (ImageIOError, OSError, matting.NotConvergedError, NonFiniteLossError, checkpoint.CheckpointError) as exc:
        print(f"hazeforge: failed: {exc}".splitlines()[0], file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
