"""File interchange formats: 16-bit PGM rasters, plain-text kernels, atomic writes.

PGM files are binary ("P5") with maxval 65535 and big-endian samples; pixel
values map affinely from [0, peak] to [0, 65535] with clipping. Kernel files
are plain text: a first line "kh kw" followed by kh rows of kw reals.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np


def atomic_write_bytes(path, data: bytes):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("ascii"))


def write_pgm16(path, image, peak=1.0):
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ValueError("PGM output requires a 2-D image")
    if not np.all(np.isfinite(image)):
        raise ValueError("image must be finite")
    q = np.clip(np.rint(image / float(peak) * 65535.0), 0, 65535).astype(">u2")
    h, w = q.shape
    header = f"P5\n{w} {h}\n65535\n".encode("ascii")
    atomic_write_bytes(path, header + q.tobytes())


def read_pgm16(path, peak=1.0):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    idx = 0
    # header: magic, width, height, maxval; '#' comments allowed
    while len(tokens) < 4:
        while idx < len(data) and data[idx : idx + 1].isspace():
            idx += 1
        if idx < len(data) and data[idx : idx + 1] == b"#":
            while idx < len(data) and data[idx : idx + 1] != b"\n":
                idx += 1
            continue
        start = idx
        while idx < len(data) and not data[idx : idx + 1].isspace():
            idx += 1
        tokens.append(data[start:idx])
    idx += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise ValueError(f"not a binary PGM file: {path}")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval == 65535:
        raw = np.frombuffer(data, dtype=">u2", count=w * h, offset=idx)
    elif maxval == 255:
        raw = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=idx)
    else:
        raise ValueError(f"unsupported PGM maxval {maxval}")
    return raw.reshape(h, w).astype(float) / maxval * float(peak)


def read_image(path, peak=1.0):
    """Read a grayscale raster; PGM natively, PNG via Pillow."""
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        return read_pgm16(path, peak=peak)
    if ext == ".png":
        from PIL import Image

        img = Image.open(path)
        if img.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(img, dtype=float) / 65535.0
        else:
            arr = np.asarray(img.convert("L"), dtype=float) / 255.0
        return arr * float(peak)
    raise ValueError(f"unsupported raster format: {path}")


def write_kernel_txt(path, kernel):
    kernel = np.asarray(kernel, dtype=float)
    if kernel.ndim != 2:
        raise ValueError("kernel must be 2-D")
    kh, kw = kernel.shape
    lines = [f"{kh} {kw}"]
    for row in kernel:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_kernel_txt(path):
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"empty kernel file: {path}")
    kh, kw = (int(t) for t in lines[0].split())
    if len(lines) != 1 + kh:
        raise ValueError(f"kernel file {path} should have {kh} rows, found {len(lines) - 1}")
    rows = [np.array([float(t) for t in ln.split()], dtype=float) for ln in lines[1:]]
    kernel = np.vstack(rows)
    if kernel.shape != (kh, kw):
        raise ValueError(f"kernel rows do not match declared size {kh}x{kw}")
    return kernel
