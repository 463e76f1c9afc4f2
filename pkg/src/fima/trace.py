"""Per-iteration solver traces and their CSV / JSON serialization.

The on-disk schema is fixed:

    k,objective,iter_error,recon_error,policy,block,wall_ms

with floats rendered to 17 significant digits (lossless for doubles),
``policy`` in {accept, fallback} and ``block`` empty for uni-block runs.
The JSON mirror carries the same field names. Writers can zero the wall_ms
column so artifacts are byte-identical across reruns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .fileformats import atomic_write_text

TRACE_FIELDS = ("k", "objective", "iter_error", "recon_error", "policy", "block", "wall_ms")
TRACE_HEADER = ",".join(TRACE_FIELDS)

POLICY_ACCEPT = "accept"
POLICY_FALLBACK = "fallback"


@dataclass
class IterateRecord:
    k: int
    objective: float
    iter_error: float
    recon_error: float
    policy: str
    block: str = ""
    wall_ms: float = 0.0


@dataclass
class IterateTrace:
    """Ordered per-iteration records plus non-serialized solver diagnostics.

    ``diag`` holds aligned lists of scalar diagnostics (objective at the
    monitor, certificate norms, step lengths, ...) that the convergence
    checks consume; it is not part of the file format. Equality compares
    records only.
    """

    records: list = field(default_factory=list)
    diag: dict = field(default_factory=dict, compare=False)
    stop_reason: str = field(default="", compare=False)

    def append(self, record: IterateRecord, **diagnostics):
        self.records.append(record)
        for key, value in diagnostics.items():
            self.diag.setdefault(key, []).append(value)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def __len__(self):
        return len(self.records)


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def trace_to_csv(trace: IterateTrace, timing=True) -> str:
    lines = [TRACE_HEADER]
    for r in trace.records:
        wall = r.wall_ms if timing else 0.0
        lines.append(f"{r.k},{_fmt(r.objective)},{_fmt(r.iter_error)},"
                     f"{_fmt(r.recon_error)},{r.policy},{r.block},{_fmt(wall)}")
    return "\n".join(lines) + "\n"


def write_trace_csv(trace: IterateTrace, path, timing=True):
    atomic_write_text(path, trace_to_csv(trace, timing=timing))


def read_trace_csv(path) -> IterateTrace:
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    if not lines or lines[0] != TRACE_HEADER:
        raise ValueError(f"bad trace header in {path}")
    trace = IterateTrace()
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(TRACE_FIELDS):
            raise ValueError(f"malformed trace row: {ln!r}")
        trace.records.append(IterateRecord(
            k=int(parts[0]), objective=float(parts[1]), iter_error=float(parts[2]),
            recon_error=float(parts[3]), policy=parts[4], block=parts[5],
            wall_ms=float(parts[6])))
    return trace


def write_trace_json(trace: IterateTrace, path, timing=True):
    rows = []
    for r in trace.records:
        rows.append({"k": r.k, "objective": r.objective, "iter_error": r.iter_error,
                     "recon_error": r.recon_error, "policy": r.policy, "block": r.block,
                     "wall_ms": r.wall_ms if timing else 0.0})
    atomic_write_text(path, json.dumps({"records": rows}, indent=1) + "\n")


def read_trace_json(path) -> IterateTrace:
    with open(path, "r", encoding="ascii") as fh:
        payload = json.load(fh)
    trace = IterateTrace()
    for row in payload["records"]:
        trace.records.append(IterateRecord(**{k: row[k] for k in TRACE_FIELDS}))
    return trace
