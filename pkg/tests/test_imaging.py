import numpy as np
import pytest

from hazeforge import imaging


def test_png_roundtrip_8bit(tmp_path, rng):
    img = rng.integers(0, 256, (5, 7, 3)) / 255.0
    imaging.write_image(img, tmp_path / "a.png")
    back = imaging.read_image(tmp_path / "a.png")
    assert np.array_equal(back, img)
    imaging.write_image(back, tmp_path / "b.png")
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


@pytest.mark.parametrize("suffix", [".ppm", ".pgm"])
def test_netpbm_roundtrip(tmp_path, rng, suffix):
    shape = (4, 6, 3) if suffix == ".ppm" else (4, 6)
    img = rng.integers(0, 256, shape) / 255.0
    imaging.write_image(img, tmp_path / f"a{suffix}")
    assert np.array_equal(imaging.read_image(tmp_path / f"a{suffix}"), img)


def test_pgm16_max_is_one(tmp_path):
    raw = b"P5\n2 1\n65535\n" + np.array([65535, 0], ">u2").tobytes()
    (tmp_path / "d.pgm").write_bytes(raw)
    assert imaging.read_image(tmp_path / "d.pgm").tolist() == [[1.0, 0.0]]


def test_pgm16_roundtrip(tmp_path, rng):
    img = rng.integers(0, 65536, (3, 5)) / 65535.0
    imaging.write_image(img, tmp_path / "d.pgm", bits=16)
    assert np.array_equal(imaging.read_image(tmp_path / "d.pgm"), img)


def test_netpbm_header_comments(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 2\n255\n\x00\xff\x80\x40")
    assert imaging.read_image(tmp_path / "c.pgm").shape == (2, 2)


def test_pfm_roundtrip_and_orientation(tmp_path):
    depth = np.arange(12, dtype=np.float64).reshape(3, 4) * 0.5
    imaging.write_image(depth, tmp_path / "d.pfm")
    raw = (tmp_path / "d.pfm").read_bytes()
    # bottom row first on disk
    payload = np.frombuffer(raw[-48:], "<f4")
    assert payload[:4].tolist() == depth[2].tolist()
    assert np.array_equal(imaging.read_depth(tmp_path / "d.pfm"), depth)


def test_truncated_png_names_file_and_offset(tmp_path, rng):
    imaging.write_image(rng.uniform(0, 1, (8, 8, 3)), tmp_path / "t.png")
    raw = (tmp_path / "t.png").read_bytes()
    (tmp_path / "t.png").write_bytes(raw[: len(raw) // 2])
    with pytest.raises(imaging.ImageIOError, match=r"t\.png.*byte offset \d+"):
        imaging.read_image(tmp_path / "t.png")


def test_other_errors(tmp_path):
    (tmp_path / "x.jpg").write_bytes(b"\xff\xd8")
    with pytest.raises(imaging.ImageIOError, match="unsupported"):
        imaging.read_image(tmp_path / "x.jpg")
    with pytest.raises(imaging.ImageIOError):
        imaging.read_image(tmp_path / "missing.png")
    (tmp_path / "short.ppm").write_bytes(b"P6\n4 4\n255\n\x00\x00")
    with pytest.raises(imaging.ImageIOError, match="short.ppm.*byte offset"):
        imaging.read_image(tmp_path / "short.ppm")
    (tmp_path / "bad.png").write_bytes(b"not a png at all")
    with pytest.raises(imaging.ImageIOError, match="signature"):
        imaging.read_image(tmp_path / "bad.png")
    (tmp_path / "nan.pfm").write_bytes(b"Pf\n1 1\n-1.0\n" + np.array([np.nan], "<f4").tobytes())
    with pytest.raises(imaging.ImageIOError, match="non-finite"):
        imaging.read_depth(tmp_path / "nan.pfm")


def test_resize_identity_is_exact(rng):
    img = rng.uniform(0, 1, (5, 6, 3))
    out = imaging.resize_bilinear(img, 6, 5)
    assert np.array_equal(out, img) and out is not img


def test_resize_uniform_down():
    assert imaging.resize_bilinear(np.full((2, 2, 3), 0.3), 1, 1).tolist() == [[[0.3, 0.3, 0.3]]]


def test_resize_ramp_upsample():
    # analytic bilinear oracle: sample the ramp at clamped half-pixel source positions
    w = 8
    ramp = np.tile(np.arange(w, dtype=float) / (w - 1), (3, 1))
    out = imaging.resize_bilinear(ramp, 2 * w, 3)
    pos = np.clip((np.arange(2 * w) + 0.5) / 2 - 0.5, 0, w - 1)
    assert np.max(np.abs(out - pos / (w - 1))) < 1e-6
    inner = out[0, 1:-1]
    steps = np.diff(inner)
    assert np.max(np.abs(steps - steps[0])) < 1e-6


def test_resize_bad_size():
    with pytest.raises(ValueError):
        imaging.resize_bilinear(np.zeros((2, 2)), 0, 2)


def test_list_images_sorted(tmp_path):
    for name in ("b.png", "a.ppm", "c.txt", "d.pfm"):
        (tmp_path / name).write_bytes(b"")
    assert [p.name for p in imaging.list_images(tmp_path)] == ["a.ppm", "b.png", "d.pfm"]
