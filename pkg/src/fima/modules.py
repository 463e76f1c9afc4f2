"""Plug-in iteration modules: identity, prox-step, classical denoisers, and an
external-process hook standing in for learned denoisers."""

from __future__ import annotations

import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ModuleSkipped
from .fileformats import read_pgm16, write_pgm16


@dataclass
class ModulePair:
    """The operators A_f and A_g applied in composition each iteration.

    Both callables must map finite points to finite points of the same
    dimension; the solvers enforce this and raise on violation.
    """

    a_f: Callable
    a_g: Callable
    label: str = "modules"

    def compose(self, x):
        return self.a_g(self.a_f(x))


def module_identity() -> ModulePair:
    """Degenerate pair: both maps are the identity (used by reduction tests)."""
    return ModulePair(a_f=lambda x: x, a_g=lambda x: x, label="identity")


def module_pg_step(problem, gamma) -> ModulePair:
    """A_f = explicit gradient step, A_g = prox step, for the given problem."""
    gamma = float(gamma)
    if gamma <= 0:
        raise ValueError("gamma must be > 0")

    def a_f(x):
        return x - gamma * np.asarray(problem.smooth.gradient(x), dtype=float)

    def a_g(v):
        return problem.nonsmooth.prox(v, gamma)

    return ModulePair(a_f=a_f, a_g=a_g, label="pg-step")


def _require_image(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"{name} expects a 2-D image, got shape {x.shape}")
    return x


def module_tv_denoise(weight, inner_iters=20):
    """Total-variation denoiser via dual fixed-point projection.

    Approximately solves min_z weight*TV(z) + 0.5*||z - x||^2 with a fixed,
    deterministic number of dual iterations (default 20). Usable as A_g.
    """
    weight = float(weight)
    inner_iters = int(inner_iters)
    if weight <= 0 or inner_iters < 1:
        raise ValueError("weight must be > 0 and inner_iters >= 1")

    def denoise(x):
        x = _require_image(x, "tv denoiser")
        tau = 0.25
        p = np.zeros((2,) + x.shape)
        for _ in range(inner_iters):
            g = _grad_sym(_div_sym(p) - x / weight)
            denom = 1.0 + tau * np.sqrt(g[0] ** 2 + g[1] ** 2)
            p = (p + tau * g) / denom
        return x - weight * _div_sym(p)

    return denoise


def _grad_sym(img):
    g = np.zeros((2,) + img.shape)
    g[0, :-1, :] = img[1:, :] - img[:-1, :]
    g[1, :, :-1] = img[:, 1:] - img[:, :-1]
    return g


def _div_sym(p):
    out = np.zeros(p.shape[1:])
    out[:-1, :] += p[0, :-1, :]
    out[1:, :] -= p[0, :-1, :]
    out[:, :-1] += p[1, :, :-1]
    out[:, 1:] -= p[1, :, :-1]
    return out


def module_recursive_filter(sigma):
    """Separable exponential-decay recursive smoother (two passes per axis).

    A linear, deterministic operator with unit DC gain: constants are
    preserved and total mass is conserved up to boundary truncation.
    Usable as A_g.
    """
    sigma = float(sigma)
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    a = float(np.exp(-np.sqrt(2.0) / sigma))

    def smooth(x):
        x = _require_image(x, "recursive filter")
        out = x.copy()
        for axis in (0, 1):
            out = _recursive_axis(out, a, axis)
        return out

    return smooth


def _recursive_axis(x, a, axis):
    y = np.moveaxis(x, axis, 0).copy()
    n = y.shape[0]
    for i in range(1, n):
        y[i] = (1.0 - a) * y[i] + a * y[i - 1]
    for i in range(n - 2, -1, -1):
        y[i] = (1.0 - a) * y[i] + a * y[i + 1]
    return np.moveaxis(y, 0, axis)


def module_external_denoiser(command_template, timeout=30.0, peak=1.0):
    """External-process denoiser hook.

    The current iterate is written to a temporary 16-bit PGM file, the
    command (with ``{in}`` and ``{out}`` substituted textually) is run, and
    the result is read back. Any process, timeout, or file failure raises
    :class:`~fima.errors.ModuleSkipped`, which the solvers convert to
    fallback behaviour for that iteration.
    """
    if "{in}" not in command_template or "{out}" not in command_template:
        raise ValueError("command template must contain {in} and {out} placeholders")
    timeout = float(timeout)

    def denoise(x):
        x = _require_image(x, "external denoiser")
        with tempfile.TemporaryDirectory(prefix="fima-ext-") as tmp:
            path_in = os.path.join(tmp, "in.pgm")
            path_out = os.path.join(tmp, "out.pgm")
            try:
                write_pgm16(path_in, x, peak=peak)
                cmd = command_template.replace("{in}", path_in).replace("{out}", path_out)
                proc = subprocess.run(shlex.split(cmd), timeout=timeout,
                                      stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
                if proc.returncode != 0:
                    raise ModuleSkipped(f"external denoiser exited with status {proc.returncode}")
                result = read_pgm16(path_out, peak=peak)
            except ModuleSkipped:
                raise
            except (OSError, subprocess.SubprocessError, ValueError) as exc:
                raise ModuleSkipped(f"external denoiser failed: {exc}") from exc
        if result.shape != x.shape:
            raise ModuleSkipped(f"external denoiser changed the image shape: {result.shape} != {x.shape}")
        return result

    return denoise
