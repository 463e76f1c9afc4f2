"""Composite objectives: smooth + nonsmooth terms, Lipschitz estimation, and
the first-order error certificate used by the error-control policy.

A composite problem is the pair (f, g): a differentiable fidelity term f with
a known or estimated gradient-Lipschitz constant, and a proximable (possibly
indicator-valued) term g. Indicator violations surface as an infinite
objective value, which the solvers treat as "reject" in their policies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import EstimationError
from .prox import ScalarPenalty, penalty_prox, penalty_value, project_simplex

_POWER_MAX_STEPS = 10_000
_POWER_REL_TOL = 1e-6
_FD_SAFETY = 1.5
_FD_PROBE_PAIRS = 100


@dataclass
class LinearOperator:
    """Matrix-free D and its adjoint, for quadratic fidelities ||y - D x||^2."""

    apply: Callable
    apply_t: Callable


@dataclass
class SmoothTerm:
    """Differentiable term: value, gradient, and (optional) Lipschitz modulus.

    ``operator`` is set for quadratic fidelities so the Lipschitz constant can
    be computed by power iteration instead of finite-difference probing.
    """

    value: Callable
    gradient: Callable
    lipschitz: float | None = None
    operator: LinearOperator | None = None


@dataclass
class NonsmoothTerm:
    """Proximable term: value (may be +inf) and prox (point, gamma) -> point."""

    value: Callable
    prox: Callable


@dataclass
class CompositeProblem:
    smooth: SmoothTerm
    nonsmooth: NonsmoothTerm


@dataclass
class ErrorCertificate:
    """Sub-gradient estimate at a proximally corrected point and its test.

    ``accepted`` holds iff ||d|| <= rhs, with rhs = C * ||u_tilde - x_prev||.
    """

    d: np.ndarray
    norm_d: float
    rhs: float
    accepted: bool


def objective(problem: CompositeProblem, x) -> float:
    """f(x) + g(x); +inf is permitted when x violates an indicator constraint."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    fx = float(problem.smooth.value(x))
    gx = float(problem.nonsmooth.value(x))
    return fx + gx


def prox_gradient_step(problem: CompositeProblem, v, gamma):
    """One forward-backward step: prox_{gamma g}(v - gamma * grad f(v))."""
    gamma = float(gamma)
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    v = np.asarray(v, dtype=float)
    return problem.nonsmooth.prox(v - gamma * np.asarray(problem.smooth.gradient(v), dtype=float), gamma)


def subdiff_error(smooth: SmoothTerm, u, u_tilde, x_prev, mu, gamma, C, grad_u=None) -> ErrorCertificate:
    """First-order optimality residual of the proximal correction step.

    d = (mu - 1/gamma) * (u_tilde - u) - (grad f(u) - grad f(u_tilde)).

    Valid only when ``u_tilde`` was produced by the error-control prox step
    from ``u``; behaviour for other inputs is undefined.
    """
    mu, gamma, C = float(mu), float(gamma), float(C)
    if mu <= 0 or gamma <= 0 or C <= 0:
        raise ValueError("mu, gamma, C must all be > 0")
    u = np.asarray(u, dtype=float)
    u_tilde = np.asarray(u_tilde, dtype=float)
    x_prev = np.asarray(x_prev, dtype=float)
    if grad_u is None:
        grad_u = smooth.gradient(u)
    grad_u = np.asarray(grad_u, dtype=float)
    grad_ut = np.asarray(smooth.gradient(u_tilde), dtype=float)
    d = (mu - 1.0 / gamma) * (u_tilde - u) - (grad_u - grad_ut)
    norm_d = float(np.linalg.norm(d.ravel()))
    rhs = C * float(np.linalg.norm((u_tilde - x_prev).ravel()))
    return ErrorCertificate(d=d, norm_d=norm_d, rhs=rhs, accepted=norm_d <= rhs)


def estimate_lipschitz(smooth: SmoothTerm, domain_probe) -> float:
    """Gradient-Lipschitz estimate for a smooth term.

    Quadratic fidelities (``operator`` set) use power iteration on D^T D to
    relative tolerance 1e-6, giving L = 2 * sigma_max(D)^2. General terms use
    finite-difference probing over 100 random pairs around ``domain_probe``,
    inflated by a safety factor of 1.5. The probing RNG is fixed-seeded so the
    estimate is deterministic.
    """
    probe = np.asarray(domain_probe, dtype=float)
    if smooth.operator is not None:
        return 2.0 * _power_iteration_sq(smooth.operator, probe.shape)
    rng = np.random.Generator(np.random.Philox(0))
    scale = 1.0 + float(np.linalg.norm(probe.ravel()))
    best = 0.0
    for _ in range(_FD_PROBE_PAIRS):
        a = probe + scale * rng.standard_normal(probe.shape)
        b = probe + scale * rng.standard_normal(probe.shape)
        dist = float(np.linalg.norm((a - b).ravel()))
        if dist == 0.0:
            continue
        ga = np.asarray(smooth.gradient(a), dtype=float)
        gb = np.asarray(smooth.gradient(b), dtype=float)
        best = max(best, float(np.linalg.norm((ga - gb).ravel())) / dist)
    return _FD_SAFETY * max(best, 1e-12)


def _power_iteration_sq(op: LinearOperator, shape) -> float:
    """Largest eigenvalue of D^T D by power iteration with a fixed start vector."""
    n = int(np.prod(shape))
    v = (1.0 + np.arange(n, dtype=float) / n).reshape(shape)
    v /= np.linalg.norm(v.ravel())
    lam_prev = math.inf
    for _ in range(_POWER_MAX_STEPS):
        w = np.asarray(op.apply_t(op.apply(v)), dtype=float)
        lam = float(np.vdot(v.ravel(), w.ravel()))
        norm_w = float(np.linalg.norm(w.ravel()))
        if norm_w == 0.0:
            raise EstimationError("operator annihilates the probe space; no positive Lipschitz estimate")
        if abs(lam - lam_prev) <= _POWER_REL_TOL * max(abs(lam), 1e-300):
            return lam
        lam_prev = lam
        v = w / norm_w
    raise EstimationError(f"power iteration did not converge within {_POWER_MAX_STEPS} steps")


def ensure_lipschitz(problem: CompositeProblem, domain_probe) -> float:
    """Return the smooth term's Lipschitz modulus, estimating and caching it once."""
    if problem.smooth.lipschitz is None:
        problem.smooth.lipschitz = estimate_lipschitz(problem.smooth, domain_probe)
    return float(problem.smooth.lipschitz)


def validate_gradient(smooth: SmoothTerm, probe, rel_tol=1e-5, directions=5, seed=0):
    """Check the gradient against central finite differences of the value.

    Raises ValueError on mismatch; intended as a construction-time gate in
    test builds for every smooth term handed to the solvers.
    """
    probe = np.asarray(probe, dtype=float)
    rng = np.random.Generator(np.random.Philox(seed))
    g = np.asarray(smooth.gradient(probe), dtype=float)
    scale = 1.0 + float(np.linalg.norm(probe.ravel()))
    eps = 1e-6 * scale
    for _ in range(directions):
        d = rng.standard_normal(probe.shape)
        d /= np.linalg.norm(d.ravel())
        fd = (float(smooth.value(probe + eps * d)) - float(smooth.value(probe - eps * d))) / (2.0 * eps)
        an = float(np.vdot(g.ravel(), d.ravel()))
        if abs(fd - an) > rel_tol * max(1.0, abs(fd), abs(an)):
            raise ValueError(f"gradient mismatch: directional derivative {an} vs finite difference {fd}")


def least_squares_term(apply_op, apply_op_t, data, lipschitz=None) -> SmoothTerm:
    """Quadratic fidelity f(x) = ||data - D x||^2 from a matrix-free operator."""
    data = np.asarray(data, dtype=float)

    def value(x):
        r = np.asarray(apply_op(x), dtype=float) - data
        return float(np.vdot(r.ravel(), r.ravel()))

    def gradient(x):
        r = np.asarray(apply_op(x), dtype=float) - data
        return 2.0 * np.asarray(apply_op_t(r), dtype=float)

    return SmoothTerm(value=value, gradient=gradient, lipschitz=lipschitz,
                      operator=LinearOperator(apply=apply_op, apply_t=apply_op_t))


def penalty_term(penalty: ScalarPenalty) -> NonsmoothTerm:
    """Nonsmooth term backed by a scalar penalty's value and prox."""
    return NonsmoothTerm(value=lambda x: penalty_value(penalty, x),
                         prox=lambda v, gamma: penalty_prox(penalty, v, gamma))


def zero_term() -> NonsmoothTerm:
    return NonsmoothTerm(value=lambda x: 0.0,
                         prox=lambda v, gamma: np.asarray(v, dtype=float).copy())


def simplex_term() -> NonsmoothTerm:
    """Indicator of the probability simplex; prox is the Euclidean projection."""
    return NonsmoothTerm(value=lambda x: penalty_value(ScalarPenalty("simplex"), x),
                         prox=lambda v, gamma: project_simplex(v))
