"""Image and depth file IO plus bilinear resizing.

In-memory images are float64 arrays in [0, 1], shaped (H, W, 3) for color
and (H, W) for single-channel data. Depth maps are (H, W) float64 with
arbitrary non-negative units.
"""

import struct
import zlib
from pathlib import Path

import numpy as np
from PIL import Image

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
IMAGE_SUFFIXES = (".png", ".ppm", ".pgm", ".pfm")


class ImageIOError(OSError):
    """A file could not be decoded or encoded."""


def _check_png(path, raw):
    if not raw.startswith(PNG_SIGNATURE):
        raise ImageIOError(f"{path}: not a PNG file (bad signature at byte offset 0)")
    off = len(PNG_SIGNATURE)
    while True:
        if off + 8 > len(raw):
            raise ImageIOError(f"{path}: truncated PNG, chunk header expected at byte offset {off}")
        length, ctype = struct.unpack(">I4s", raw[off : off + 8])
        end = off + 8 + length + 4
        if end > len(raw):
            raise ImageIOError(
                f"{path}: truncated PNG, {ctype.decode('latin-1')} chunk at byte offset {off} "
                f"needs {end - off} bytes, file ends at {len(raw)}"
            )
        crc = struct.unpack(">I", raw[end - 4 : end])[0]
        if zlib.crc32(raw[off + 4 : end - 4]) & 0xFFFFFFFF != crc:
            raise ImageIOError(f"{path}: corrupt PNG, CRC mismatch in chunk at byte offset {off}")
        if ctype == b"IEND":
            return
        off = end


def _read_netpbm(path, raw):
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageIOError(f"{path}: truncated netpbm header at byte offset {pos}")
        tokens.append(raw[start:pos])
    pos += 1
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise ImageIOError(f"{path}: unsupported netpbm type {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ImageIOError(f"{path}: malformed netpbm header") from exc
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    need = pos + count * dtype.itemsize
    if len(raw) < need:
        raise ImageIOError(f"{path}: truncated netpbm data, expected {need} bytes, file ends at byte offset {len(raw)}")
    arr = np.frombuffer(raw, dtype, count, pos).astype(np.float64) / maxval
    shape = (height, width, 3) if channels == 3 else (height, width)
    return arr.reshape(shape)


def _read_pfm(path, raw):
    lines = []
    pos = 0
    for _ in range(3):
        nl = raw.find(b"\n", pos)
        if nl < 0:
            raise ImageIOError(f"{path}: truncated PFM header at byte offset {pos}")
        lines.append(raw[pos:nl].strip())
        pos = nl + 1
    if lines[0] not in (b"PF", b"Pf"):
        raise ImageIOError(f"{path}: bad PFM magic {lines[0]!r}")
    channels = 3 if lines[0] == b"PF" else 1
    try:
        width, height = (int(t) for t in lines[1].split())
        scale = float(lines[2])
    except ValueError as exc:
        raise ImageIOError(f"{path}: malformed PFM header") from exc
    dtype = "<f4" if scale < 0 else ">f4"
    count = width * height * channels
    if len(raw) < pos + 4 * count:
        raise ImageIOError(f"{path}: truncated PFM data, file ends at byte offset {len(raw)}")
    arr = np.frombuffer(raw, dtype, count, pos).astype(np.float64)
    shape = (height, width, 3) if channels == 3 else (height, width)
    # PFM rows run bottom to top
    return arr.reshape(shape)[::-1].copy()


def read_image(path):
    """Read PNG, PPM/PGM (8 or 16 bit) or PFM into a float64 array.

    Integer formats are scaled to [0, 1]; PFM values are returned raw.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc.strerror or exc}") from exc
    suffix = path.suffix.lower()
    if suffix == ".png":
        _check_png(path, raw)
        try:
            with Image.open(path) as im:
                im.load()
                if im.mode in ("I;16", "I;16B", "I"):
                    return np.asarray(im, dtype=np.float64) / 65535.0
                if im.mode in ("L", "1"):
                    return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
                return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        except (OSError, ValueError) as exc:
            raise ImageIOError(f"{path}: {exc}") from exc
    if suffix in (".ppm", ".pgm", ".pnm"):
        return _read_netpbm(path, raw)
    if suffix == ".pfm":
        return _read_pfm(path, raw)
    raise ImageIOError(f"{path}: unsupported image format {suffix!r}")


def to_uint8(image):
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(image, path, bits=8):
    """Write an image; PNG/PPM/PGM are quantized to ``bits`` per sample, PFM is float32."""
    path = Path(path)
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
        raise ImageIOError(f"{path}: cannot write array of shape {arr.shape}")
    suffix = path.suffix.lower()
    if suffix == ".pfm":
        magic = b"PF" if arr.ndim == 3 else b"Pf"
        h, w = arr.shape[:2]
        payload = np.ascontiguousarray(arr[::-1], dtype="<f4").tobytes()
        path.write_bytes(magic + b"\n" + f"{w} {h}\n-1.0\n".encode() + payload)
        return
    if bits == 16:
        q = np.round(np.clip(arr, 0.0, 1.0) * 65535.0).astype(np.uint16)
    elif bits == 8:
        q = to_uint8(arr)
    else:
        raise ValueError("bits must be 8 or 16")
    if suffix == ".png":
        if bits == 16:
            if q.ndim != 2:
                raise ImageIOError(f"{path}: 16-bit PNG output supports single channel only")
            Image.fromarray(q.astype(np.uint16)).save(path, format="PNG")
        else:
            Image.fromarray(q).save(path, format="PNG")
        return
    if suffix in (".ppm", ".pgm"):
        if (suffix == ".ppm") != (q.ndim == 3):
            raise ImageIOError(f"{path}: {suffix} does not match a {q.ndim}-dim array")
        h, w = q.shape[:2]
        magic = "P6" if q.ndim == 3 else "P5"
        maxval = 65535 if bits == 16 else 255
        data = q.astype(">u2").tobytes() if bits == 16 else q.tobytes()
        path.write_bytes(f"{magic}\n{w} {h}\n{maxval}\n".encode() + data)
        return
    raise ImageIOError(f"{path}: unsupported image format {suffix!r}")


def read_depth(path):
    """Read a depth map (PFM raw floats, PGM/PNG scaled by the max code) as (H, W)."""
    depth = read_image(path)
    if depth.ndim == 3:
        depth = depth[:, :, 0]
    if not np.all(np.isfinite(depth)):
        raise ImageIOError(f"{path}: depth contains non-finite values")
    return depth


def resize_bilinear(image, width, height):
    """Bilinear resize with half-pixel centers and edge clamping.

    Returns an unmodified copy when the size already matches.
    """
    if width < 1 or height < 1:
        raise ValueError("target size must be positive")
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    if (h, w) == (height, width):
        return img.copy()

    def axis(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis(h, height)
    x0, x1, fx = axis(w, width)
    if img.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def list_images(directory):
    """Sorted image files in ``directory`` with a supported suffix."""
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
