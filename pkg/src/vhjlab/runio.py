"""Artifact serialization: CSV exports, structured-text manifests, run index.

Formats are the stable external interface:

* trajectory CSV with header ``t,trace,N,supgrad,saturation``;
* snapshot CSVs with header ``x,u``, one file per stored time;
* classification tables ``t,type,N_before,N_after`` (transitions) and
  ``t_lo,t_hi,label`` (intervals);
* flat ``key = value`` manifests with ``[section]`` headers, every tolerance
  materialized (no silent defaults);
* a run-summary index listing every artifact the run wrote.

Floats are written with repr so identical runs produce byte-identical files.
"""

from __future__ import annotations

import os
from dataclasses import asdict
from typing import Iterable, Optional

import numpy as np

from .analysis import ClassificationReport
from .calibration import CalibrationConstants
from .solver import SolveConfig, Trajectory

__all__ = [
    "write_trajectory_csv",
    "write_snapshots",
    "write_classification",
    "write_manifest",
    "read_manifest",
    "write_calibration",
    "read_calibration",
    "write_plan",
    "RunWriter",
]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (tuple, list, np.ndarray)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


class RunWriter:
    """Collects artifacts under one output directory and writes the index."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.artifacts: list = []

    def path(self, rel: str) -> str:
        full = os.path.join(self.out_dir, rel)
        os.makedirs(os.path.dirname(full) or self.out_dir, exist_ok=True)
        self.artifacts.append(rel)
        return full

    def finalize(self) -> str:
        index = os.path.join(self.out_dir, "run_index.txt")
        with open(index, "w") as f:
            for rel in self.artifacts:
                f.write(rel + "\n")
        return index


def write_trajectory_csv(traj: Trajectory, path: str):
    with open(path, "w") as f:
        f.write("t,trace,N,supgrad,saturation\n")
        for i in range(traj.times.size):
            f.write(
                f"{traj.times[i]!r},{traj.trace[i]!r},{int(traj.N[i])},"
                f"{traj.supgrad[i]!r},{traj.saturation[i]!r}\n"
            )


def write_snapshots(traj: Trajectory, writer: RunWriter, max_snapshots: int = 40):
    idx = traj.snapshot_index
    stride = max(1, idx.size // max_snapshots)
    chosen = list(range(0, idx.size, stride))
    if chosen[-1] != idx.size - 1:
        chosen.append(idx.size - 1)
    written = []
    for j in chosen:
        i = int(idx[j])
        rel = f"snapshots/snap_{j:04d}.csv"
        with open(writer.path(rel), "w") as f:
            f.write(f"# t = {traj.times[i]!r}\n")
            f.write("x,u\n")
            for xv, uv in zip(traj.grid.nodes, traj.fields[j]):
                f.write(f"{xv!r},{uv!r}\n")
        written.append(rel)
    return written


def write_classification(report: ClassificationReport, writer: RunWriter):
    with open(writer.path("transitions.csv"), "w") as f:
        f.write("t,type,N_before,N_after\n")
        for tr in report.transitions:
            f.write(f"{tr.t!r},{tr.kind},{tr.N_before},{tr.N_after}\n")
    with open(writer.path("intervals.csv"), "w") as f:
        f.write("t_lo,t_hi,label\n")
        for lo, hi, lab in report.intervals:
            f.write(f"{lo!r},{hi!r},{lab}\n")


def write_manifest(sections: dict, path: str):
    """sections: {section_name: {key: value}}; values via _fmt."""
    with open(path, "w") as f:
        for name in sections:
            f.write(f"[{name}]\n")
            for k, v in sections[name].items():
                f.write(f"{k} = {_fmt(v)}\n")
            f.write("\n")


def read_manifest(path: str) -> dict:
    sections: dict = {}
    current = None
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1]
                sections[current] = {}
                continue
            if "=" in line and current is not None:
                k, v = line.split("=", 1)
                sections[current][k.strip()] = v.strip()
    return sections


def config_sections(config: SolveConfig) -> dict:
    d = asdict(config)
    d["variant"] = config.variant.value
    d["mono_tol"] = config.monotonicity_tol
    d["extra_diag_times"] = f"<{len(config.extra_diag_times)} values>"
    return {"solver": d}


def write_calibration(cal: CalibrationConstants, path: str):
    write_manifest({"calibration": cal.as_dict()}, path)


def read_calibration(path: str) -> CalibrationConstants:
    sec = read_manifest(path)
    return CalibrationConstants.from_dict(sec["calibration"])


def write_plan(plan, writer: RunWriter, calibration: Optional[CalibrationConstants] = None):
    sections = {
        "plan": {
            "sigma_bar": plan.sigma_bar,
            "kappa": plan.kappa,
            "xi": plan.xi,
            "m": plan.m,
            "q": plan.q,
            "deformed": plan.deformed,
            "epsilons": plan.epsilons,
            "gammas": plan.gammas,
        },
        "time_marks": {
            "s_minus": plan.s_marks[:, 0],
            "s": plan.s_marks[:, 1],
            "s_plus": plan.s_marks[:, 2],
            "shat_minus": plan.shat_marks[:, 0],
            "shat": plan.shat_marks[:, 1],
            "shat_plus": plan.shat_marks[:, 2],
        },
        "verification": plan.verification,
        "calibration": (calibration or plan.calibration).as_dict(),
    }
    write_manifest(sections, writer.path("plan.txt"))
