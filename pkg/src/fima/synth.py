"""Seeded synthetic instances: procedural textures, blur kernels, observations.

All randomness flows through numpy's Philox generator (a 64-bit counter-based
bit stream), so a given seed reproduces the same instance bit-for-bit across
platforms. The texture, the kernel, and the noise each consume their own
sub-stream keyed by (seed, role), so they never share draws.
"""

from __future__ import annotations

import numpy as np

from .deconv import convolve_circular
from .prox import project_simplex

KERNEL_KINDS = ("gaussian", "motion-line", "delta")


def _rng(seed, role):
    return np.random.Generator(np.random.Philox([int(seed), int(role)]))


def _lowpass(field, sigma):
    h, w = field.shape
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    gain = np.exp(-2.0 * (np.pi * sigma) ** 2 * (fy**2 + fx**2))
    return np.real(np.fft.ifft2(np.fft.fft2(field) * gain))


def synthetic_image(size, seed):
    """Edge-rich procedural texture in [0.15, 0.85]: smoothed noise + shapes."""
    if size < 8:
        raise ValueError("size must be >= 8")
    rng = _rng(seed, 0)
    base = _lowpass(rng.standard_normal((size, size)), sigma=size / 24.0)
    lo, hi = base.min(), base.max()
    img = (base - lo) / (hi - lo) if hi > lo else np.full_like(base, 0.5)
    for _ in range(6):
        r0, c0 = rng.integers(0, size, size=2)
        rh = int(rng.integers(size // 8, size // 2))
        rw = int(rng.integers(size // 8, size // 2))
        val = rng.uniform(0.0, 1.0)
        img[r0 : min(size, r0 + rh), c0 : min(size, c0 + rw)] = val
    for _ in range(3):
        cy, cx = rng.uniform(0, size, size=2)
        rad = rng.uniform(size / 12, size / 5)
        val = rng.uniform(0.0, 1.0)
        yy, xx = np.mgrid[0:size, 0:size]
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= rad * rad] = val
    img = _lowpass(img, sigma=0.6)
    lo, hi = img.min(), img.max()
    img = (img - lo) / (hi - lo) if hi > lo else np.full_like(img, 0.5)
    return 0.15 + 0.7 * img


def gaussian_kernel(size, sigma=None):
    size = int(size)
    if size % 2 == 0 or size < 1:
        raise ValueError("kernel size must be odd and >= 1")
    if sigma is None:
        sigma = max(size / 5.0, 0.5)
    r = np.arange(size) - size // 2
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def motion_line_kernel(size, angle):
    """Anti-aliased line through the kernel center at the given angle."""
    size = int(size)
    if size % 2 == 0 or size < 3:
        raise ValueError("kernel size must be odd and >= 3")
    k = np.zeros((size, size))
    c = size // 2
    half_len = 0.5 * 0.85 * size
    ts = np.linspace(-half_len, half_len, 16 * size)
    dy, dx = np.sin(angle), np.cos(angle)
    for t in ts:
        ry, rx = c + t * dy, c + t * dx
        i0, j0 = int(np.floor(ry)), int(np.floor(rx))
        fy, fx = ry - i0, rx - j0
        for di, dj, wgt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                            (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
            ii, jj = i0 + di, j0 + dj
            if 0 <= ii < size and 0 <= jj < size:
                k[ii, jj] += wgt
    k = convolve_circular(k, gaussian_kernel(3, 0.5))
    k = np.maximum(k, 0.0)
    return project_simplex(k)


def delta_kernel(size):
    size = int(size)
    if size % 2 == 0 or size < 1:
        raise ValueError("kernel size must be odd and >= 1")
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return k


def synthetic_kernel(size, kind, seed=0):
    if kind == "gaussian":
        return gaussian_kernel(size)
    if kind == "motion-line":
        return motion_line_kernel(size, float(_rng(seed, 1).uniform(0.0, np.pi)))
    if kind == "delta":
        return delta_kernel(size)
    raise ValueError(f"unknown kernel kind {kind!r}; expected one of {KERNEL_KINDS}")


def synthetic_instance(seed, size, kernel_kind="gaussian", noise_level=0.01, kernel_size=9):
    """Ground truth, kernel, and corrupted observation (z, b, y).

    y = b (*) z + noise_level * N(0, 1), all periodic-boundary.
    """
    if size < 32:
        raise ValueError("size must be >= 32")
    if not 0.0 <= noise_level <= 0.1:
        raise ValueError("noise_level must lie in [0, 0.1]")
    z = synthetic_image(size, seed)
    b = synthetic_kernel(kernel_size, kernel_kind, seed)
    y = convolve_circular(z, b)
    if noise_level > 0:
        y = y + noise_level * _rng(seed, 2).standard_normal(y.shape)
    return z, b, y
