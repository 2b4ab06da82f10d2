import hashlib
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from hazeforge import checkpoint, cli, gradcheck
from hazeforge.imaging import list_images, read_image, write_image
from hazeforge.toydata import write_source_tree
from _toy import TOY


def run(args, capsys=None):
    code = cli.main([str(a) for a in args])
    return code


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    code = cli.main(["train", "--data", str(TOY), "--out", str(out), "--max-iterations", "4",
                     "--cache-dir", str(out / "cache"), "--seed", "1"])
    assert code == 0
    return out / "final.scgn"


def test_synthesize_reproducible(tmp_path):
    write_source_tree(tmp_path / "src", range(3), 16)
    assert run(["synthesize", "--source", tmp_path / "src", "--out", tmp_path / "a", "--seed", "5"]) == 0
    assert run(["synthesize", "--source", tmp_path / "src", "--out", tmp_path / "b", "--seed", "5"]) == 0
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    assert len(list_images(tmp_path / "a" / "paired" / "hazy")) == 3
    manifest = (tmp_path / "a" / "manifest.tsv").read_text().splitlines()
    assert len(manifest) == 4
    assert run(["synthesize", "--source", tmp_path / "src", "--out", tmp_path / "c", "--seed", "6"]) == 0
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "c")


def test_refine_depth(tmp_path):
    write_source_tree(tmp_path / "src", [0], 16)
    out = tmp_path / "refined.pfm"
    assert run(["refine-depth", "--depth", tmp_path / "src/depth/scene0000.pfm",
                "--guide", tmp_path / "src/images/scene0000.png", "--out", out]) == 0
    d = read_image(out)
    assert d.shape == (16, 16) and np.all(np.isfinite(d))


def test_build_matting_cache(tmp_path, capsys):
    assert run(["build-matting-cache", "--input", TOY / "paired" / "hazy", "--cache-dir", tmp_path]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[1] == "filename\tkey\tnnz" and len(rows) == 2 + 8
    assert len(list(tmp_path.glob("*.mlap"))) == 8


def test_train_outputs(trained, capsys):
    out = trained.parent
    assert (out / "config.txt").read_text().count("max_iterations = 4") == 1
    assert len((out / "train_log.tsv").read_text().splitlines()) == 2 + 4
    assert run(["inspect-checkpoint", trained]) == 0
    text = capsys.readouterr().out
    assert "iteration\t4" in text and "net\tG_Y\ttensors=20" in text
    assert checkpoint.file_sha256(trained) in text


def test_train_reproducible(tmp_path, trained):
    args = ["train", "--data", TOY, "--max-iterations", "4", "--cache-dir", trained.parent / "cache", "--seed", "1"]
    assert run(args + ["--out", tmp_path / "again"]) == 0
    assert checkpoint.file_sha256(tmp_path / "again" / "final.scgn") == checkpoint.file_sha256(trained)
    assert (tmp_path / "again" / "train_log.tsv").read_bytes() == (trained.parent / "train_log.tsv").read_bytes()


@pytest.mark.parametrize("command", ["dehaze", "addhaze"])
def test_translate_directory(tmp_path, trained, command):
    src = tmp_path / "in"
    src.mkdir()
    rng = np.random.default_rng(0)
    for i, size in enumerate([(32, 32), (20, 40), (48, 24)]):
        write_image(rng.uniform(0, 1, size + (3,)), src / f"img{i}.png")
    assert run([command, "--checkpoint", trained, "--input", src, "--out", tmp_path / "a"]) == 0
    assert run([command, "--checkpoint", trained, "--input", src, "--out", tmp_path / "b"]) == 0
    names = sorted(p.name for p in list_images(tmp_path / "a"))
    assert names == ["img0.png", "img1.png", "img2.png"]
    for n in names:
        assert read_image(tmp_path / "a" / n).shape == read_image(src / n).shape
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")


def test_evaluate_identical(tmp_path, capsys):
    clean = TOY / "test" / "clean"
    assert run(["evaluate", "--result", clean, "--gt", clean, "--out", tmp_path / "m.tsv"]) == 0
    last = (tmp_path / "m.tsv").read_text().splitlines()[-1].split("\t")
    assert last[0] == "MEAN(n=4)" and float(last[1]) == 99.0 and float(last[2]) == 1.0


def test_evaluate_cycle(tmp_path, trained):
    out = tmp_path / "cycle.tsv"
    assert run(["evaluate", "--cycle", "--checkpoint", trained, "--input", TOY / "test" / "hazy", "--out", out]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "filename\tpsnr\tssim" and len(rows) == 6
    assert 0 < float(rows[-1].split("\t")[1]) < 99


def test_gradcheck_exit_codes(tmp_path, monkeypatch):
    assert run(["gradcheck", "--out", tmp_path / "g.tsv"]) == 0
    rows = (tmp_path / "g.tsv").read_text().splitlines()
    assert len(rows) == 1 + len(gradcheck.CASES) + 2 and all(r.endswith("ok") for r in rows[1:])

    def wrong_grad(rng):
        # analytic relu grad paired with a forward that is 2x relu
        from hazeforge import tensor as T

        def fn(x):
            y = T.relu(x)
            y.data = 2 * y.data
            return y

        return fn, [gradcheck._away_from_zero(rng, (1, 1, 3, 3))]

    monkeypatch.setitem(gradcheck.CASES, "broken", wrong_grad)
    assert run(["gradcheck", "--out", tmp_path / "g2.tsv"]) == 1
    assert "broken" in (tmp_path / "g2.tsv").read_text().split("FAIL")[0].splitlines()[-1]


def test_usage_errors_exit_1(tmp_path, capsys):
    cases = [
        ["frobnicate"],
        ["dehaze", "--input", tmp_path],
        ["train", "--data", tmp_path / "nope", "--out", tmp_path / "o"],
        ["train", "--data", TOY, "--out", tmp_path / "o", "--lr", "-1"],
        ["train", "--data", TOY, "--out", tmp_path / "o", "--lambda2", "abc"],
        ["evaluate", "--result", TOY / "test" / "clean", "--gt", TOY / "paired" / "clean"],
        ["inspect-checkpoint", tmp_path / "missing.scgn"],
    ]
    for args in cases:
        assert run(args) == 1, args
        err = capsys.readouterr().err
        assert err.startswith("hazeforge: error:") and err.count("\n") == 1, (args, err)


def test_runtime_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.scgn"
    bad.write_bytes(b"SCGN\x01\x00")
    assert run(["inspect-checkpoint", bad]) == 2
    assert "truncated at byte offset" in capsys.readouterr().err
    src = tmp_path / "imgs"
    src.mkdir()
    (src / "broken.png").write_bytes(b"\x89PNG\r\n\x1a\n\x00\x00")
    assert run(["evaluate", "--result", src, "--gt", src]) == 2


def test_console_script_entry():
    res = subprocess.run([sys.executable, "-m", "hazeforge.cli", "inspect-checkpoint"], capture_output=True, text=True)
    assert res.returncode == 1 and "hazeforge: error:" in res.stderr
