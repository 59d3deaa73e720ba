"""Structured verification results and data export."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__

RUN_DIR_ENV = "HAMPLUG_RUN_DIR"


def _clean(v):
    # JSON-safe, deterministic representation of residuals and parameters
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        f = float(v)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    return v


@dataclass
class VerificationReport:
    suite: str
    passed: bool
    residuals: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    expected_fail: bool = False
    wall_clock: float = 0.0
    version: str = __version__

    def to_json(self, timestamps: bool = True) -> dict:
        out = {
            "suite": self.suite,
            "passed": bool(self.passed),
            "expected_fail": bool(self.expected_fail),
            "residuals": _clean(self.residuals),
            "params": _clean(self.params),
            "details": _clean(self.details),
            "version": self.version,
        }
        if timestamps:
            out["wall_clock"] = float(self.wall_clock)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "VerificationReport":
        return cls(obj["suite"], obj["passed"], obj.get("residuals", {}), obj.get("params", {}),
                   obj.get("details", {}), obj.get("expected_fail", False),
                   obj.get("wall_clock", 0.0), obj.get("version", __version__))

    @property
    def ok(self) -> bool:
        """Pass, or an expected failure that did fail."""
        return self.passed != self.expected_fail

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        if self.expected_fail:
            tag += " (expected fail)"
        main = ", ".join(f"{k}={_fmt(v)}" for k, v in self.residuals.items() if np.isscalar(v))
        return f"[{tag}] {self.suite}: {main}"


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.3e}"
    return str(v)


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def dumps_reports(reports, timestamps: bool = False) -> str:
    return json.dumps([r.to_json(timestamps) for r in reports], sort_keys=True, indent=1)


def run_dir(default: str | os.PathLike = "runs") -> Path:
    p = Path(os.environ.get(RUN_DIR_ENV, default))
    p.mkdir(parents=True, exist_ok=True)
    return p


def append_reports(path: str | os.PathLike, reports, timestamps: bool = True) -> None:
    """Append one JSON line per report; run directories are append-only."""
    with open(path, "a", encoding="utf-8") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_json(timestamps), sort_keys=True) + "\n")


def read_reports(path) -> list[VerificationReport]:
    with open(path, encoding="utf-8") as fh:
        return [VerificationReport.from_json(json.loads(line)) for line in fh if line.strip()]


def _header(dim: int, extra: str | None) -> list[str]:
    m = (dim - 1) // 2 if extra is None else (dim - 2) // 2
    cols = ["t"]
    for j in range(1, m + 1):
        cols += [f"x{j}", f"y{j}"]
    cols.append("z")
    if extra:
        cols.append(extra)
    return cols


def trajectory_csv(t, y, extra: str | None = None) -> str:
    """CSV text with header t,x1,y1,...,z[,extra]; floats in repr form (round-trip exact)."""
    y = np.asarray(y, dtype=np.float64)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_header(y.shape[1], extra))
    for ti, yi in zip(np.asarray(t, dtype=np.float64), y):
        w.writerow([repr(float(ti))] + [repr(float(v)) for v in yi])
    return buf.getvalue()


def export_trajectory(traj, path, extra: str | None = None) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(trajectory_csv(traj.t, traj.y, extra))
    return path


def import_trajectory(path):
    from .integrate import Trajectory

    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64).reshape(-1, len(rows[0]))
    return Trajectory(data[:, 0].copy(), data[:, 1:].copy())


def export_records(records, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(_clean(r.to_json()), sort_keys=True) + "\n")
    return path


def import_records(path):
    from .integrate import TraverseRecord

    with open(path, encoding="utf-8") as fh:
        return [TraverseRecord.from_json(json.loads(line)) for line in fh if line.strip()]
