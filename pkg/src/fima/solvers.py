"""Convergence-guarded modular iteration schemes and classical baselines.

Three guarded schemes are provided. All of them run user-specified modules
(an arbitrary pair A_f, A_g applied in composition) through a per-iteration
scheduling policy, then adjust the monitored point with an exact
forward-backward refinement, so the produced objective sequence is
non-increasing no matter what the modules do:

* ``solve_efima`` -- explicit momentum policy: the module output is kept only
  when it does not increase the objective.
* ``solve_ifima`` -- implicit momentum / error control: the module output is
  proximally corrected and kept only when its first-order optimality
  residual is small relative to the step taken.
* ``solve_mfima`` -- Gauss-Seidel multi-block extension of the error-control
  policy for objectives with several unknown blocks.

``solve_baseline`` provides the unguarded classical schemes (proximal
gradient, its Nesterov-accelerated and monotone variants, and an inexact
variant with injectable perturbations) used for comparisons and reduction
tests. Every solver returns the final point together with an
:class:`~fima.trace.IterateTrace`.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from types import SimpleNamespace
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ModuleError, ModuleSkipped
from .metrics import stopping
from .problem import CompositeProblem, NonsmoothTerm, ensure_lipschitz, objective, prox_gradient_step, subdiff_error
from .trace import POLICY_ACCEPT, POLICY_FALLBACK, IterateRecord, IterateTrace

BASELINE_VARIANTS = ("pg", "apg", "monotone", "inexact")


@dataclass
class SolverConfig:
    """Iteration budget, stopping tolerance and parameter schedules.

    ``gamma_schedule`` (step sizes), ``mu_schedule`` (proximal penalties) and
    ``C_schedule`` (error tolerances) each accept a scalar, a sequence (last
    entry persists), or a callable k -> value. A ``gamma_schedule`` of None
    selects the constant near-maximal step 0.99 / L from the problem's
    (estimated) Lipschitz modulus. Validity constraints, checked at solve
    time: 0 < gamma^k < 1/L and 0 < 2 C^k < mu^k < inf.
    """

    max_iters: int = 80
    iter_error_tol: float = 1e-4
    gamma_schedule: float | Sequence | Callable | None = None
    mu_schedule: float | Sequence | Callable = 1.0
    C_schedule: float | Sequence | Callable = 0.4
    nesterov: bool = False
    keep_iterates: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.iter_error_tol < 0:
            raise ConfigError("iter_error_tol must be >= 0")


@dataclass
class BlockState:
    """Ordered tuple of unknown blocks for the multi-block scheme."""

    blocks: list

    def copy(self):
        return BlockState([np.array(b, dtype=float, copy=True) for b in self.blocks])


@dataclass
class MultiBlockProblem:
    """Joint smooth term over N blocks plus one nonsmooth term per block.

    ``grad_block(blocks, n)`` is the partial gradient in block n with the
    others held fixed. ``lipschitz_block(blocks, n)`` returns the partial
    gradient's Lipschitz modulus at the current other blocks; it is
    re-evaluated every time a block is about to be updated, since it may
    depend on the remaining blocks. A list of constants is also accepted.
    """

    f_value: Callable
    grad_block: Callable
    nonsmooth: list
    lipschitz_block: Callable | Sequence
    labels: Sequence | None = None

    def block_lipschitz(self, blocks, n) -> float:
        if callable(self.lipschitz_block):
            return float(self.lipschitz_block(blocks, n))
        return float(self.lipschitz_block[n])

    def value(self, blocks) -> float:
        total = float(self.f_value(blocks))
        for term, x in zip(self.nonsmooth, blocks):
            total += float(term.value(x))
        return total


@dataclass
class MultiBlockModules:
    """Module set for the multi-block scheme.

    ``a_f`` maps the full block tuple to an updated tuple; ``a_g[n]``
    consumes the n-th component of that tuple.
    """

    a_f: Callable
    a_g: list
    label: str = "modules"


def _schedule(spec, default=None):
    if spec is None:
        spec = default
    if callable(spec):
        return spec
    if np.isscalar(spec):
        val = float(spec)
        return lambda k: val
    seq = [float(v) for v in spec]
    if not seq:
        raise ConfigError("empty schedule")
    return lambda k: seq[min(k, len(seq) - 1)]


def _gamma_for(cfg_gamma, k, L):
    if cfg_gamma is None:
        gamma = 0.99 / L
    else:
        gamma = cfg_gamma(k)
    if not (0.0 < gamma < 1.0 / L):
        raise ConfigError(f"gamma={gamma} at iteration {k} violates 0 < gamma < 1/L with L={L}")
    return gamma


def _mu_C_for(mu_sched, C_sched, k):
    mu = mu_sched(k)
    C = C_sched(k)
    if not (0.0 < 2.0 * C < mu < math.inf):
        raise ConfigError(f"(mu={mu}, C={C}) at iteration {k} violates 0 < 2C < mu < inf")
    return mu, C


def _rel_change(x_new, x_old):
    num = float(np.linalg.norm((x_new - x_old).ravel()))
    den = float(np.linalg.norm(x_old.ravel()))
    return num / den if den > 0.0 else num


def _require_finite(arr, label, stage, k, shape=None):
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ModuleError(f"module '{label}' ({stage}) returned non-finite output at iteration {k}")
    if shape is not None and arr.shape != shape:
        raise ModuleError(f"module '{label}' ({stage}) changed the point shape at iteration {k}: "
                          f"{arr.shape} != {shape}")
    return arr


def _apply_modules(modules, x, k):
    mid = _require_finite(modules.a_f(x), modules.label, "a_f", k, x.shape)
    return _require_finite(modules.a_g(mid), modules.label, "a_g", k, x.shape)


def _finite_and_not_greater(candidate, reference):
    # indicator violations give +inf, which never wins, even against +inf
    return math.isfinite(candidate) and candidate <= reference


def solve_efima(problem: CompositeProblem, modules, x0, cfg: SolverConfig):
    """Run the explicit-momentum guarded scheme.

    Per iteration: u = A_g(A_f(x)); the monitor v is u when the objective did
    not increase (ties accept) and x otherwise; the next iterate is the
    forward-backward refinement of v. A recoverable module failure falls back
    to v = x for that iteration.

    Returns ``(x, trace)``; the trace marks each iteration's policy outcome.
    """
    x = np.asarray(x0, dtype=float).copy()
    L = ensure_lipschitz(problem, x)
    gamma_sched = cfg.gamma_schedule if cfg.gamma_schedule is None else _schedule(cfg.gamma_schedule)
    trace = IterateTrace()
    psi_x = objective(problem, x)
    for k in range(cfg.max_iters):
        t0 = time.perf_counter()
        gamma = _gamma_for(gamma_sched, k, L)
        try:
            u = _apply_modules(modules, x, k)
            psi_u = objective(problem, u)
        except ModuleSkipped:
            u, psi_u = None, math.inf
        accept = _finite_and_not_greater(psi_u, psi_x)
        v = u if accept else x
        psi_v = psi_u if accept else psi_x
        x_new = prox_gradient_step(problem, v, gamma)
        psi_new = objective(problem, x_new)
        err = _rel_change(x_new, x)
        wall_ms = (time.perf_counter() - t0) * 1e3
        trace.append(
            IterateRecord(k=k + 1, objective=psi_new, iter_error=err, recon_error=err * err,
                          policy=POLICY_ACCEPT if accept else POLICY_FALLBACK, wall_ms=wall_ms),
            psi_x=psi_x, psi_v=psi_v, psi_u=psi_u,
            step_sq=float(np.vdot((x_new - v).ravel(), (x_new - v).ravel())),
            gamma=gamma, L=L)
        if cfg.keep_iterates:
            trace.diag.setdefault("x", []).append(x_new.copy())
        x, psi_x = x_new, psi_new
        decision = stopping(trace.records, cfg)
        if decision:
            trace.stop_reason = decision.reason
            break
    return x, trace


def solve_ifima(problem: CompositeProblem, modules, x0, cfg: SolverConfig):
    """Run the error-controlled (implicit momentum) guarded scheme.

    Per iteration: u = A_g(A_f(x)) is proximally corrected against the
    penalty-anchored surrogate of the objective at x, giving u~; u~ is kept
    as the monitor only when its first-order residual certificate passes
    ||d|| <= C ||u~ - x||, else the scheme falls back to x. The next iterate
    is the forward-backward refinement of the monitor.

    Returns ``(x, trace)``; certificate norms and thresholds are stored in
    the trace diagnostics.
    """
    x = np.asarray(x0, dtype=float).copy()
    L = ensure_lipschitz(problem, x)
    gamma_sched = cfg.gamma_schedule if cfg.gamma_schedule is None else _schedule(cfg.gamma_schedule)
    mu_sched = _schedule(cfg.mu_schedule)
    C_sched = _schedule(cfg.C_schedule)
    trace = IterateTrace()
    psi_x = objective(problem, x)
    for k in range(cfg.max_iters):
        t0 = time.perf_counter()
        gamma = _gamma_for(gamma_sched, k, L)
        mu, C = _mu_C_for(mu_sched, C_sched, k)
        cert_norm = cert_rhs = psi_ut = ux_sq = math.nan
        try:
            u = _apply_modules(modules, x, k)
        except ModuleSkipped:
            u = None
        if u is not None:
            grad_u = np.asarray(problem.smooth.gradient(u), dtype=float)
            u_tilde = problem.nonsmooth.prox(u - gamma * (grad_u + mu * (u - x)), gamma)
            cert = subdiff_error(problem.smooth, u, u_tilde, x, mu, gamma, C, grad_u=grad_u)
            cert_norm, cert_rhs = cert.norm_d, cert.rhs
            psi_ut = objective(problem, u_tilde)
            ux_sq = float(np.vdot((u_tilde - x).ravel(), (u_tilde - x).ravel()))
            accept = cert.accepted
        else:
            accept = False
        v = u_tilde if accept else x
        psi_v = psi_ut if accept else psi_x
        x_new = prox_gradient_step(problem, v, gamma)
        psi_new = objective(problem, x_new)
        err = _rel_change(x_new, x)
        wall_ms = (time.perf_counter() - t0) * 1e3
        trace.append(
            IterateRecord(k=k + 1, objective=psi_new, iter_error=err, recon_error=err * err,
                          policy=POLICY_ACCEPT if accept else POLICY_FALLBACK, wall_ms=wall_ms),
            psi_x=psi_x, psi_v=psi_v, psi_utilde=psi_ut, ux_sq=ux_sq,
            cert_norm_d=cert_norm, cert_rhs=cert_rhs, mu=mu, C=C,
            step_sq=float(np.vdot((x_new - v).ravel(), (x_new - v).ravel())),
            gamma=gamma, L=L)
        if cfg.keep_iterates:
            trace.diag.setdefault("x", []).append(x_new.copy())
        x, psi_x = x_new, psi_new
        decision = stopping(trace.records, cfg)
        if decision:
            trace.stop_reason = decision.reason
            break
    return x, trace


def solve_baseline(problem: CompositeProblem, x0, cfg: SolverConfig, variant="pg",
                   grad_error=None, prox_error=None):
    """Classical first-order baselines sharing the solvers' trace format.

    variant:
        "pg"        plain forward-backward iteration
        "apg"       Nesterov acceleration with the standard FISTA t-sequence
        "monotone"  accelerated, but momentum points that increase the
                    objective are rejected in favour of the current iterate
        "inexact"   injects perturbations: ``grad_error(k)`` is added to the
                    gradient's argument and ``prox_error(k)`` to the prox
                    output (both default to exact, i.e. no perturbation);
                    ``cfg.nesterov`` selects the accelerated variant
    """
    if variant not in BASELINE_VARIANTS:
        raise ConfigError(f"unknown baseline variant {variant!r}; expected one of {BASELINE_VARIANTS}")
    x = np.asarray(x0, dtype=float).copy()
    L = ensure_lipschitz(problem, x)
    gamma_sched = cfg.gamma_schedule if cfg.gamma_schedule is None else _schedule(cfg.gamma_schedule)
    accelerated = variant in ("apg", "monotone") or (variant == "inexact" and cfg.nesterov)
    monotone = variant == "monotone"
    trace = IterateTrace()
    x_prev = x
    t_prev = 1.0
    psi_x = objective(problem, x) if monotone else math.nan
    for k in range(cfg.max_iters):
        t0 = time.perf_counter()
        gamma = _gamma_for(gamma_sched, k, L)
        accept = True
        if accelerated:
            t = (1.0 + math.sqrt(1.0 + 4.0 * t_prev * t_prev)) / 2.0
            beta = (t_prev - 1.0) / t
            v = x + beta * (x - x_prev)
            t_prev = t
            if monotone:
                psi_v = objective(problem, v)
                if not _finite_and_not_greater(psi_v, psi_x):
                    v = x
                    accept = False
        else:
            v = x
        if variant == "inexact":
            e_k = grad_error(k) if grad_error is not None else None
            point = v + e_k if e_k is not None else v
            step = v - gamma * np.asarray(problem.smooth.gradient(point), dtype=float)
            x_new = problem.nonsmooth.prox(step, gamma)
            eps_k = prox_error(k) if prox_error is not None else None
            if eps_k is not None:
                x_new = x_new + eps_k
        else:
            x_new = prox_gradient_step(problem, v, gamma)
        psi_new = objective(problem, x_new)
        err = _rel_change(x_new, x)
        wall_ms = (time.perf_counter() - t0) * 1e3
        trace.append(
            IterateRecord(k=k + 1, objective=psi_new, iter_error=err, recon_error=err * err,
                          policy=POLICY_ACCEPT if accept else POLICY_FALLBACK, wall_ms=wall_ms),
            psi_x=psi_x,
            step_sq=float(np.vdot((x_new - v).ravel(), (x_new - v).ravel())),
            gamma=gamma, L=L)
        if cfg.keep_iterates:
            trace.diag.setdefault("x", []).append(x_new.copy())
        x_prev, x = x, x_new
        if monotone:
            psi_x = psi_new
        decision = stopping(trace.records, cfg)
        if decision:
            trace.stop_reason = decision.reason
            break
    return x, trace


def _block_schedule(spec, n_blocks, default=None):
    # a list with one entry per block gives per-block schedules; anything
    # else is shared by all blocks
    if isinstance(spec, (list, tuple)) and len(spec) == n_blocks:
        return [_schedule(s, default) for s in spec]
    if spec is None and default is None:
        return [None] * n_blocks
    return [_schedule(spec, default)] * n_blocks


def solve_mfima(problem: MultiBlockProblem, modules: MultiBlockModules, state0, cfg: SolverConfig,
                block_callback=None):
    """Run the multi-block guarded scheme (Gauss-Seidel over blocks).

    Each sweep updates the blocks in index order; every block update runs the
    error-control pattern of :func:`solve_ifima` using the partial gradient
    with the other blocks held at their latest values, and the per-block
    Lipschitz modulus is re-evaluated at those values. One trace record is
    emitted per block update, carrying the joint objective and the block's
    label; ``block_callback(k, n, value)`` is invoked after each update.

    Returns ``(BlockState, trace)``.
    """
    blocks = state0.blocks if isinstance(state0, BlockState) else state0
    X = [np.asarray(b, dtype=float).copy() for b in blocks]
    N = len(X)
    if N < 2:
        raise ConfigError("the multi-block scheme needs at least 2 blocks")
    if len(problem.nonsmooth) != N or len(modules.a_g) != N:
        raise ConfigError("per-block terms/modules do not match the number of blocks")
    labels = list(problem.labels) if problem.labels is not None else [str(n) for n in range(N)]
    gamma_scheds = _block_schedule(cfg.gamma_schedule, N)
    mu_scheds = _block_schedule(cfg.mu_schedule, N, 1.0)
    C_scheds = _block_schedule(cfg.C_schedule, N, 0.4)
    trace = IterateTrace()
    for k in range(cfg.max_iters):
        X_sweep = [b.copy() for b in X]
        for n in range(N):
            t0 = time.perf_counter()
            L_n = problem.block_lipschitz(X, n)
            gamma = _gamma_for(gamma_scheds[n], k, L_n)
            mu, C = _mu_C_for(mu_scheds[n], C_scheds[n], k)
            x_n = X[n]
            smooth_n = SimpleNamespace(gradient=lambda p, n=n: _partial_grad(problem, X, n, p))
            cert_norm = cert_rhs = math.nan
            try:
                tuple_out = modules.a_f(tuple(X))
                u_n = _require_finite(tuple_out[n], modules.label, f"a_f[{labels[n]}]", k, x_n.shape)
                u_n = _require_finite(modules.a_g[n](u_n), modules.label, f"a_g[{labels[n]}]", k, x_n.shape)
            except ModuleSkipped:
                u_n = None
            if u_n is not None:
                grad_u = np.asarray(smooth_n.gradient(u_n), dtype=float)
                u_tilde = problem.nonsmooth[n].prox(u_n - gamma * (grad_u + mu * (u_n - x_n)), gamma)
                cert = subdiff_error(smooth_n, u_n, u_tilde, x_n, mu, gamma, C, grad_u=grad_u)
                cert_norm, cert_rhs = cert.norm_d, cert.rhs
                accept = cert.accepted
            else:
                accept = False
            v_n = u_tilde if accept else x_n
            x_n_new = problem.nonsmooth[n].prox(v_n - gamma * np.asarray(smooth_n.gradient(v_n), dtype=float),
                                                gamma)
            X[n] = x_n_new
            psi_joint = problem.value(X)
            err = _rel_change(x_n_new, x_n)
            wall_ms = (time.perf_counter() - t0) * 1e3
            trace.append(
                IterateRecord(k=k + 1, objective=psi_joint, iter_error=err, recon_error=err * err,
                              policy=POLICY_ACCEPT if accept else POLICY_FALLBACK,
                              block=labels[n], wall_ms=wall_ms),
                cert_norm_d=cert_norm, cert_rhs=cert_rhs, gamma=gamma, mu=mu, C=C, L=L_n)
            if block_callback is not None:
                block_callback(k, n, x_n_new)
        sweep_num = math.sqrt(sum(float(np.vdot((a - b).ravel(), (a - b).ravel()))
                                  for a, b in zip(X, X_sweep)))
        sweep_den = math.sqrt(sum(float(np.vdot(b.ravel(), b.ravel())) for b in X_sweep))
        sweep_err = sweep_num / sweep_den if sweep_den > 0 else sweep_num
        if sweep_err <= cfg.iter_error_tol:
            trace.stop_reason = "tol"
            break
        if k + 1 >= cfg.max_iters:
            trace.stop_reason = "max_iters"
    return BlockState(X), trace


def _partial_grad(problem: MultiBlockProblem, X, n, point):
    tmp = list(X)
    tmp[n] = point
    return problem.grad_block(tmp, n)


def composite_from_terms(smooth, nonsmooth: NonsmoothTerm | None = None) -> CompositeProblem:
    """Convenience constructor; a missing nonsmooth term means g = 0."""
    from .problem import zero_term

    return CompositeProblem(smooth=smooth, nonsmooth=nonsmooth if nonsmooth is not None else zero_term())
