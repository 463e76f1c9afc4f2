"""Proximal operators, projections, and the smooth-term quadratic model.

All prox operators use the convention

    prox(v, theta) = argmin_x  h(x) + ||x - v||^2 / (2 * theta),

so ``theta`` already includes any solver step size times penalty weight.
Every function here is a pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PENALTY_KINDS = ("l1", "l0", "lp_half", "simplex", "zero")

_SIMPLEX_SUM_TOL = 1e-12


@dataclass(frozen=True)
class ScalarPenalty:
    """Separable penalty choice with a nonnegative weight.

    ``weight`` is ignored for the "simplex" and "zero" kinds.
    """

    kind: str
    weight: float = 0.0

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ValueError(f"unknown penalty kind {self.kind!r}; expected one of {PENALTY_KINDS}")
        if not np.isfinite(self.weight) or self.weight < 0:
            raise ValueError("penalty weight must be finite and >= 0")
        if self.kind in ("simplex", "zero"):
            object.__setattr__(self, "weight", 0.0)


@dataclass(frozen=True)
class SimplexSet:
    """The probability simplex {b : b_i >= 0, sum b_i = 1} in a given dimension."""

    dimension: int

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("simplex dimension must be >= 1")


def _as_finite_array(v, name="input"):
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite")
    return v


def _check_theta(theta):
    theta = float(theta)
    if not np.isfinite(theta) or theta <= 0:
        raise ValueError("theta must be finite and > 0")
    return theta


def prox_l1(v, theta):
    """Soft-thresholding: exact prox of theta * |x|, componentwise."""
    v = _as_finite_array(v)
    theta = _check_theta(theta)
    return np.sign(v) * np.maximum(np.abs(v) - theta, 0.0)


def prox_l0(v, theta):
    """Hard-thresholding: exact prox of theta * 1{x != 0}, componentwise.

    Ties v_i^2 == 2*theta are resolved to 0 (the sparser global minimizer).
    """
    v = _as_finite_array(v)
    theta = _check_theta(theta)
    return np.where(v * v > 2.0 * theta, v, 0.0)


def prox_lp_half(v, theta):
    """Half-thresholding: exact prox of theta * |x|^(1/2), componentwise.

    For |v| large enough the stationary equation s^3 - |v| s + theta/2 = 0
    (s = sqrt(|x|)) has a positive root given in trigonometric closed form;
    the output is that root squared when it beats the origin, else 0.
    Ties resolve to 0.
    """
    v = _as_finite_array(v)
    theta = _check_theta(theta)
    a = np.abs(v)
    out = np.zeros_like(v)
    # below this magnitude the cubic has no positive root, so 0 is optimal
    mask = a ** 3 >= 27.0 * theta * theta / 16.0
    if np.any(mask):
        am = a[mask]
        arg = np.clip(-(3.0 * math.sqrt(3.0) * theta) / (4.0 * am ** 1.5), -1.0, 1.0)
        s = 2.0 * np.sqrt(am / 3.0) * np.cos(np.arccos(arg) / 3.0)
        x = s * s
        interior = theta * np.sqrt(x) + 0.5 * (x - am) ** 2
        better = interior < 0.5 * am * am
        out[mask] = np.where(better, np.sign(v[mask]) * x, 0.0)
    return out


def project_simplex(v):
    """Euclidean projection onto the probability simplex.

    Sort-and-shift algorithm, followed by an exact nonnegativity clamp and a
    sum-defect repair so the output satisfies b_i >= 0 exactly and
    |sum b_i - 1| <= 1e-12. Feasible inputs are returned unchanged, which
    makes the projection bitwise idempotent.
    """
    v = _as_finite_array(v)
    flat = v.ravel()
    if np.all(flat >= 0.0) and abs(flat.sum() - 1.0) <= _SIMPLEX_SUM_TOL:
        return v.copy()
    u = np.sort(flat)[::-1]
    cssv = np.cumsum(u) - 1.0
    ind = np.arange(1, flat.size + 1)
    rho = ind[u - cssv / ind > 0][-1]
    tau = cssv[rho - 1] / rho
    w = np.maximum(flat - tau, 0.0)
    for _ in range(8):
        defect = 1.0 - w.sum()
        if abs(defect) <= _SIMPLEX_SUM_TOL:
            break
        w[np.argmax(w)] += defect
    return w.reshape(v.shape)


def quadratic_model(f, v, x, gamma):
    """Quadratic surrogate of a smooth term around v, evaluated at x.

    Returns f(v) + <grad f(v), x - v> + ||x - v||^2 / (2 * gamma).
    ``f`` is any object with ``value`` and ``gradient`` callables.
    """
    gamma = _check_theta(gamma)
    v = _as_finite_array(v, "v")
    x = _as_finite_array(x, "x")
    d = x - v
    g = np.asarray(f.gradient(v), dtype=float)
    return float(f.value(v)) + float(np.vdot(g, d)) + float(np.vdot(d, d)) / (2.0 * gamma)


def penalty_value(penalty: ScalarPenalty, x) -> float:
    """Evaluate a scalar penalty; indicator kinds return inf outside their set."""
    x = np.asarray(x, dtype=float)
    if penalty.kind == "l1":
        return penalty.weight * float(np.sum(np.abs(x)))
    if penalty.kind == "l0":
        return penalty.weight * float(np.count_nonzero(x))
    if penalty.kind == "lp_half":
        return penalty.weight * float(np.sum(np.sqrt(np.abs(x))))
    if penalty.kind == "simplex":
        flat = x.ravel()
        on_set = np.all(flat >= -1e-12) and abs(flat.sum() - 1.0) <= 1e-9
        return 0.0 if on_set else math.inf
    return 0.0


def penalty_prox(penalty: ScalarPenalty, v, gamma):
    """Prox of gamma * penalty at v."""
    gamma = _check_theta(gamma)
    if penalty.kind == "l1":
        return prox_l1(v, gamma * penalty.weight) if penalty.weight > 0 else _as_finite_array(v).copy()
    if penalty.kind == "l0":
        return prox_l0(v, gamma * penalty.weight) if penalty.weight > 0 else _as_finite_array(v).copy()
    if penalty.kind == "lp_half":
        return prox_lp_half(v, gamma * penalty.weight) if penalty.weight > 0 else _as_finite_array(v).copy()
    if penalty.kind == "simplex":
        return project_simplex(v)
    return _as_finite_array(v).copy()
