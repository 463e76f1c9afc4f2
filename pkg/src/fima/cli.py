"""Experiment command line: solve-nonblind, solve-blind, bench, make-synthetic.

Configuration is a flat key=value space with precedence
command line (--set key=value) > config file (--config PATH) > defaults.
Artifacts are written atomically. With ``deterministic=true`` (the default)
all timing fields in artifacts are zeroed so reruns with the same seed and
config are byte-identical.

Exit codes: 0 ok, 2 input error (E_INPUT), 3 solver error (E_SOLVER),
4 module error (E_MODULE); failures print one machine-readable line on
stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import deconv, synth
from .errors import ConfigError, ModuleError, SolverError
from .fileformats import (atomic_write_text, read_image, read_kernel_txt,
                          write_kernel_txt, write_pgm16)
from .metrics import MetricReport, kernel_similarity, psnr, ssim
from .prox import ScalarPenalty
from .solvers import SolverConfig
from .trace import write_trace_csv, write_trace_json

DEFAULTS = {
    # shared
    "scheme": "ifima",
    "module": "tv",
    "external_command": "",
    "penalty": "l0",
    "lambda": 5e-4,
    "tau": 0.2,
    "tv_weight": 1e-3,
    "tv_iters": 20,
    "rf_sigma": 1.5,
    "levels": -1,
    "gamma": "auto",
    "mu": 0.4,
    "C": 0.196,
    "tol": 1e-4,
    "max_iters": 80,
    "seed": 0,
    "peak": 1.0,
    "deterministic": True,
    "input": "",
    "kernel": "",
    "truth": "",
    "true_kernel": "",
    "outdir": ".",
    # blind
    "kernel_size": 11,
    "scales": 3,
    "lambda_x": 4e-3,
    "lambda_b": 2.0,
    "tau_x": 1e-3,
    "tau_b": 1.0,
    # make-synthetic
    "size": 64,
    "kernel_kind": "gaussian",
    "noise_level": 0.01,
    "name": "inst",
    # bench
    "schemes": "pg,ifima",
    "modules": "identity,tv",
    "instances": "synthetic:3",
}

_INT_KEYS = {"max_iters", "seed", "size", "kernel_size", "scales", "levels", "tv_iters"}
_FLOAT_KEYS = {"lambda", "tau", "tol", "mu", "C", "tv_weight", "rf_sigma", "peak",
               "noise_level", "lambda_x", "lambda_b", "tau_x", "tau_b"}
_BOOL_KEYS = {"deterministic"}

BENCH_HEADER = "scheme,module,instances,psnr,ssim,iterations,time_s,objective,status"


def _coerce(key, raw):
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in _BOOL_KEYS:
        if isinstance(raw, bool):
            return raw
        val = str(raw).strip().lower()
        if val in ("1", "true", "yes", "on"):
            return True
        if val in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean config value {raw!r} for {key!r}")
    return raw if not isinstance(raw, str) else raw.strip()


def _parse_config_file(path):
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def load_config(config_path=None, overrides=()):
    cfg = dict(DEFAULTS)
    pending = {}
    if config_path:
        pending.update(_parse_config_file(config_path))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        pending[key.strip()] = value.strip()
    for key, raw in pending.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = _coerce(key, raw)
    return cfg


def _solver_config(cfg):
    gamma = cfg["gamma"]
    if isinstance(gamma, str):
        gamma = None if gamma.strip().lower() == "auto" else float(gamma)
    return SolverConfig(max_iters=cfg["max_iters"], iter_error_tol=cfg["tol"],
                        gamma_schedule=gamma, mu_schedule=cfg["mu"], C_schedule=cfg["C"])


def _validate_solver_config(solver_cfg: SolverConfig, L=None):
    mu, C = float(solver_cfg.mu_schedule), float(solver_cfg.C_schedule)
    if not (0.0 < 2.0 * C < mu < math.inf):
        raise ConfigError(f"(mu={mu}, C={C}) violates 0 < 2C < mu < inf")
    if solver_cfg.gamma_schedule is not None and L is not None:
        gamma = float(solver_cfg.gamma_schedule)
        if not (0.0 < gamma < 1.0 / L):
            raise ConfigError(f"gamma={gamma} violates 0 < gamma < 1/L with estimated L={L}")


def _require_file(path, what):
    if not path:
        raise ConfigError(f"missing required config key: {what}")
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{what} file not found: {path}")
    return path


def _denoiser_from_config(cfg):
    return deconv.make_image_denoiser(
        cfg["module"], tv_weight=cfg["tv_weight"], tv_iters=cfg["tv_iters"],
        rf_sigma=cfg["rf_sigma"], external=cfg["external_command"] or None)


def _write_metrics(path, payload):
    atomic_write_text(path, json.dumps(payload, indent=1, sort_keys=True) + "\n")


def cmd_make_synthetic(cfg) -> int:
    z, b, y = synth.synthetic_instance(cfg["seed"], cfg["size"], cfg["kernel_kind"],
                                       cfg["noise_level"], cfg["kernel_size"])
    outdir = cfg["outdir"]
    os.makedirs(outdir, exist_ok=True)
    name = cfg["name"]
    write_pgm16(os.path.join(outdir, f"{name}_truth.pgm"), z, peak=cfg["peak"])
    write_kernel_txt(os.path.join(outdir, f"{name}_kernel.txt"), b)
    write_pgm16(os.path.join(outdir, f"{name}_blurred.pgm"), y, peak=cfg["peak"])
    return 0


def _run_nonblind(cfg, y, kernel):
    penalty = ScalarPenalty(cfg["penalty"], cfg["lambda"])
    levels = None if cfg["levels"] < 0 else cfg["levels"]
    solver_cfg = _solver_config(cfg)
    problem, _ = deconv.nonblind_problem(y, kernel, penalty, levels=levels)
    _validate_solver_config(solver_cfg, L=problem.smooth.lipschitz)
    scheme = cfg["scheme"]
    if scheme not in ("pg", "apg", "efima", "ifima"):
        raise ConfigError(f"unknown scheme {scheme!r}")
    module = None
    if scheme in ("efima", "ifima"):
        if cfg["module"] in ("identity", "pg"):
            module = cfg["module"]
        elif cfg["module"] == "af":
            module = None
        else:
            module = _denoiser_from_config(cfg)
    return deconv.solve_nonblind(y, kernel, penalty, scheme, solver_cfg,
                                 tau=cfg["tau"], levels=levels, module=module)


def cmd_solve_nonblind(cfg) -> int:
    y = read_image(_require_file(cfg["input"], "input"), peak=cfg["peak"])
    kernel = read_kernel_txt(_require_file(cfg["kernel"], "kernel"))
    z, trace = _run_nonblind(cfg, y, kernel)
    outdir = cfg["outdir"]
    os.makedirs(outdir, exist_ok=True)
    timing = not cfg["deterministic"]
    write_pgm16(os.path.join(outdir, "restored.pgm"), z, peak=cfg["peak"])
    write_trace_csv(trace, os.path.join(outdir, "trace.csv"), timing=timing)
    write_trace_json(trace, os.path.join(outdir, "trace.json"), timing=timing)
    report = {"iterations": len(trace), "stop_reason": trace.stop_reason,
              "final_objective": trace.records[-1].objective if trace.records else None}
    if cfg["truth"]:
        z_true = read_image(_require_file(cfg["truth"], "truth"), peak=cfg["peak"])
        quality = MetricReport(psnr=psnr(z, z_true, peak=cfg["peak"]),
                               ssim=ssim(z, z_true, peak=cfg["peak"]))
        report.update(quality.to_dict())
        report["psnr_input"] = psnr(y, z_true, peak=cfg["peak"])
    _write_metrics(os.path.join(outdir, "metrics.json"), report)
    return 0


def cmd_solve_blind(cfg) -> int:
    y = read_image(_require_file(cfg["input"], "input"), peak=cfg["peak"])
    solver_cfg = _solver_config(cfg)
    _validate_solver_config(solver_cfg)
    identity = cfg["module"] == "identity"
    denoiser = None if identity else _denoiser_from_config(cfg)
    x, b, trace = deconv.solve_blind(
        y, cfg["kernel_size"], solver_cfg, scales=cfg["scales"],
        lambda_x=cfg["lambda_x"], lambda_b=cfg["lambda_b"],
        tau_x=cfg["tau_x"], tau_b=cfg["tau_b"], gradient_denoiser=denoiser,
        identity_modules=identity)
    outdir = cfg["outdir"]
    os.makedirs(outdir, exist_ok=True)
    timing = not cfg["deterministic"]
    write_kernel_txt(os.path.join(outdir, "kernel.txt"), b)
    report = {"iterations": len(trace), "stop_reason": trace.stop_reason,
              "kernel_sum": float(b.sum()), "kernel_min": float(b.min()),
              "final_objective": trace.records[-1].objective if trace.records else None}
    for idx, tag in enumerate(("grad_v", "grad_h")):
        lo, hi = float(x[idx].min()), float(x[idx].max())
        span = hi - lo if hi > lo else 1.0
        write_pgm16(os.path.join(outdir, f"{tag}.pgm"), (x[idx] - lo) / span)
        report[f"{tag}_range"] = [lo, hi]
    write_trace_csv(trace, os.path.join(outdir, "trace.csv"), timing=timing)
    write_trace_json(trace, os.path.join(outdir, "trace.json"), timing=timing)
    if cfg["true_kernel"]:
        b_true = read_kernel_txt(_require_file(cfg["true_kernel"], "true_kernel"))
        report["kernel_similarity"] = kernel_similarity(b, b_true)
    _write_metrics(os.path.join(outdir, "metrics.json"), report)
    return 0


def _bench_instances(cfg):
    spec = cfg["instances"]
    if spec.startswith("synthetic:"):
        count = int(spec.split(":", 1)[1])
        out = []
        for i in range(count):
            z, b, y = synth.synthetic_instance(cfg["seed"] + i, cfg["size"], cfg["kernel_kind"],
                                               cfg["noise_level"], cfg["kernel_size"])
            out.append((z, b, y))
        return out
    if not os.path.isdir(spec):
        raise FileNotFoundError(f"instances directory not found: {spec}")
    out = []
    for fname in sorted(os.listdir(spec)):
        if not fname.endswith("_blurred.pgm"):
            continue
        stem = fname[: -len("_blurred.pgm")]
        z = read_image(os.path.join(spec, f"{stem}_truth.pgm"), peak=cfg["peak"])
        b = read_kernel_txt(os.path.join(spec, f"{stem}_kernel.txt"))
        y = read_image(os.path.join(spec, fname), peak=cfg["peak"])
        out.append((z, b, y))
    return out


def cmd_bench(cfg) -> int:
    schemes = [s for s in cfg["schemes"].split(",") if s.strip()]
    modules = [m for m in cfg["modules"].split(",") if m.strip()]
    outdir = cfg["outdir"]
    os.makedirs(outdir, exist_ok=True)
    rows = [BENCH_HEADER]
    instances = _bench_instances(cfg) if schemes and modules else []
    for scheme in schemes:
        for module in modules:
            cell = dict(cfg)
            cell["scheme"] = scheme.strip()
            cell["module"] = module.strip()
            try:
                psnrs, ssims, iters, secs, objs = [], [], [], [], []
                for z_true, kernel, y in instances:
                    t0 = time.perf_counter()
                    z, trace = _run_nonblind(cell, y, kernel)
                    secs.append(time.perf_counter() - t0)
                    psnrs.append(psnr(z, z_true, peak=cfg["peak"]))
                    ssims.append(ssim(z, z_true, peak=cfg["peak"]))
                    iters.append(len(trace))
                    objs.append(trace.records[-1].objective)
                time_s = 0.0 if cfg["deterministic"] else float(np.mean(secs))
                rows.append(",".join([
                    cell["scheme"], cell["module"], str(len(instances)),
                    f"{np.mean(psnrs):.17g}", f"{np.mean(ssims):.17g}",
                    f"{np.mean(iters):.17g}", f"{time_s:.17g}",
                    f"{np.mean(objs):.17g}", "ok"]))
            except (ConfigError, ValueError, OSError, ModuleError, SolverError):
                rows.append(",".join([cell["scheme"], cell["module"], str(len(instances)),
                                      "nan", "nan", "nan", "nan", "nan", "failed"]))
    atomic_write_text(os.path.join(outdir, "bench.csv"), "\n".join(rows) + "\n")
    return 0


COMMANDS = {
    "make-synthetic": cmd_make_synthetic,
    "solve-nonblind": cmd_solve_nonblind,
    "solve-blind": cmd_solve_blind,
    "bench": cmd_bench,
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="fima",
        description="Guarded modular first-order solvers: deconvolution experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("solve-nonblind", "restore an image blurred with a known kernel"),
        ("solve-blind", "estimate the blur kernel from a single blurry image"),
        ("bench", "run a scheme x module comparison matrix"),
        ("make-synthetic", "generate a seeded (truth, kernel, observation) triple"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable; highest precedence)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        return COMMANDS[args.command](cfg)
    except ModuleError as exc:
        print(f"E_MODULE {exc}", file=sys.stderr)
        return 4
    except SolverError as exc:
        print(f"E_SOLVER {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError, OSError) as exc:
        print(f"E_INPUT {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
