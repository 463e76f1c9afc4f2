"""Quality metrics (PSNR, SSIM, kernel similarity, error rate) and the
stopping-criterion evaluator."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import correlate2d


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    kernel_similarity: float | None = None
    error_rate: float | None = None

    def to_dict(self):
        out = {"psnr": self.psnr, "ssim": self.ssim}
        if self.kernel_similarity is not None:
            out["kernel_similarity"] = self.kernel_similarity
        if self.error_rate is not None:
            out["error_rate"] = self.error_rate
        return out


@dataclass
class StopDecision:
    stop: bool
    reason: str | None = None

    def __bool__(self):
        return self.stop


def _check_pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak=1.0) -> float:
    """10 * log10(peak^2 / MSE); capped at 99 dB for identical images."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return 99.0
    return 10.0 * math.log10(float(peak) ** 2 / mse)


def ssim(a, b, peak=1.0, window=8) -> float:
    """Mean local SSIM over all dense sliding windows (default 8x8).

    Stabilizers are the usual C1 = (0.01 * peak)^2 and C2 = (0.03 * peak)^2.
    """
    a, b = _check_pair(a, b)
    if a.ndim != 2 or min(a.shape) < window:
        raise ValueError(f"images must be 2-D and at least {window}x{window}")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    wa = np.lib.stride_tricks.sliding_window_view(a, (window, window))
    wb = np.lib.stride_tricks.sliding_window_view(b, (window, window))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    var_a = (wa * wa).mean(axis=(-2, -1)) - mu_a * mu_a
    var_b = (wb * wb).mean(axis=(-2, -1)) - mu_b * mu_b
    cov = (wa * wb).mean(axis=(-2, -1)) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def _center_pad(k, shape):
    out = np.zeros(shape)
    oy = (shape[0] - k.shape[0]) // 2
    ox = (shape[1] - k.shape[1]) // 2
    out[oy : oy + k.shape[0], ox : ox + k.shape[1]] = k
    return out


def _shift_band_max(a, b):
    # max correlation over shifts up to half the common window in each axis
    h, w = a.shape
    full = correlate2d(a, b, mode="full")
    ch, cw = (h - 1) // 2, (w - 1) // 2
    return full[h - 1 - ch : h - 1 + ch + 1, w - 1 - cw : w - 1 + cw + 1].max()


def kernel_similarity(b_est, b_true) -> float:
    """Maximum normalized cross-correlation over integer shifts.

    Kernels are zero-padded to a common window and the shift search covers
    every offset up to half that window in each axis, which makes the metric
    invariant to the translation ambiguity of kernel estimates while letting
    kernels with genuinely disjoint supports score 0. The normalization uses
    each kernel's own peak autocorrelation (its squared norm), so identical
    kernels score exactly 1.0.
    """
    b_est = np.asarray(b_est, dtype=float)
    b_true = np.asarray(b_true, dtype=float)
    if b_est.ndim != 2 or b_true.ndim != 2:
        raise ValueError("kernels must be 2-D")
    shape = (max(b_est.shape[0], b_true.shape[0]), max(b_est.shape[1], b_true.shape[1]))
    pe, pt = _center_pad(b_est, shape), _center_pad(b_true, shape)
    auto_e = _shift_band_max(pe, pe)
    auto_t = _shift_band_max(pt, pt)
    if auto_e <= 0 or auto_t <= 0:
        raise ValueError("kernel similarity undefined for zero-norm kernels")
    cross = _shift_band_max(pe, pt)
    return float(np.clip(cross / math.sqrt(auto_e * auto_t), 0.0, 1.0))


def error_rate(z_est, z_true, y, kernel_true, solver=None) -> float:
    """Squared-error ratio against a known-kernel deconvolution of the same data.

    Returns ||z_est - z_true||^2 / ||z_kt - z_true||^2 where z_kt is the
    non-blind solve of y with the true kernel; values near 1 mean near-oracle
    recovery. ``solver`` is a callable (y, kernel) -> image and defaults to
    the standard non-blind pipeline.
    """
    z_est, z_true = _check_pair(z_est, z_true)
    if solver is None:
        from .deconv import reference_nonblind_solver

        solver = reference_nonblind_solver
    z_kt = np.asarray(solver(y, kernel_true), dtype=float)
    num = float(np.sum((z_est - z_true) ** 2))
    den = float(np.sum((z_kt - z_true) ** 2))
    if den == 0.0:
        return math.inf if num > 0 else 1.0
    return num / den


def stopping(records, cfg) -> StopDecision:
    """Evaluate the stopping rule on the tail of a trace.

    True iff the last relative iterate change is within ``cfg.iter_error_tol``
    or the iteration budget ``cfg.max_iters`` is exhausted; the decision
    records which condition fired.
    """
    if not records:
        raise ValueError("stopping requires at least one completed iteration")
    last = records[-1]
    if last.iter_error <= cfg.iter_error_tol:
        return StopDecision(True, "tol")
    if last.k >= cfg.max_iters:
        return StopDecision(True, "max_iters")
    return StopDecision(False, None)
