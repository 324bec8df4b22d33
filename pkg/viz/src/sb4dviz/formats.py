"""Readers for the documented sb4d run-directory formats.

This package is a pure consumer: it parses the binary trajectory, the CSV
exports and the resolved config copy, and never imports the simulator.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

TRAJ_MAGIC = b"SB4DTRJ1"


class RunFormatError(Exception):
    """A run-directory file is missing or does not match its documented format."""


@dataclass
class FrameData:
    step: int
    x: np.ndarray
    v: np.ndarray
    det_f: np.ndarray
    u: np.ndarray


def read_trajectory(run_dir: str | Path):
    run_dir = Path(run_dir)
    bin_path = run_dir / "trajectory.bin"
    json_path = run_dir / "trajectory.json"
    if not bin_path.exists() or not json_path.exists():
        raise RunFormatError(f"{run_dir}: trajectory.bin/trajectory.json missing")
    meta = json.loads(json_path.read_text())
    raw = bin_path.read_bytes()
    if raw[:8] != TRAJ_MAGIC:
        raise RunFormatError(f"{bin_path}: bad magic {raw[:8]!r}")
    off = 8
    d, = struct.unpack_from("<i", raw, off); off += 4
    n, n_frames, stride = struct.unpack_from("<qqq", raw, off); off += 24
    dt, = struct.unpack_from("<d", raw, off); off += 8
    expected = off + n_frames * (8 + 8 * n * (2 * d + 2))
    if len(raw) != expected:
        raise RunFormatError(f"{bin_path}: truncated ({len(raw)} bytes, expected {expected})")
    frames = []
    for _ in range(n_frames):
        step, = struct.unpack_from("<q", raw, off); off += 8
        x = np.frombuffer(raw, "<f8", n * d, off).reshape(n, d); off += 8 * n * d
        v = np.frombuffer(raw, "<f8", n * d, off).reshape(n, d); off += 8 * n * d
        det_f = np.frombuffer(raw, "<f8", n, off); off += 8 * n
        u = np.frombuffer(raw, "<f8", n, off); off += 8 * n
        frames.append(FrameData(step=step, x=x, v=v, det_f=det_f, u=u))
    meta.setdefault("dt", dt)
    return meta, frames


def read_layout(run_dir: str | Path):
    """layout.csv -> (positions, gamma, actuator_argmax, xi)."""
    path = Path(run_dir) / "layout.csv"
    if not path.exists():
        raise RunFormatError(f"{path}: missing")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if "gamma" not in header:
        raise RunFormatError(f"{path}: no 'gamma' column in {header}")
    data = np.array([[float(c) for c in row] for row in rows[1:]])
    d = 3 if "pz" in header else 2
    g = header.index("gamma")
    xi_cols = [i for i, h in enumerate(header) if h.startswith("xi_")]
    return data[:, :d], data[:, g], data[:, header.index("actuator_argmax")], data[:, xi_cols].T


def read_convergence(run_dir: str | Path):
    path = Path(run_dir) / "convergence.csv"
    if not path.exists():
        raise RunFormatError(f"{path}: missing")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise RunFormatError(f"{path}: empty file")
    header = rows[0]
    required = ["iter", "L_task", "C_mat", "C_act", "C_pul_sgn", "C_pul_abs"]
    required += [f"kappa_{m}" for m in range(1, 5)] + [f"tau_{m}" for m in range(1, 5)]
    for col in required:
        if col not in header:
            raise RunFormatError(f"{path}: missing column {col!r}")
    data = np.array([[float(c) for c in row] for row in rows[1:]])
    if data.size == 0:
        raise RunFormatError(f"{path}: no data rows")
    return {col: data[:, header.index(col)] for col in required}


def read_force_series(path: str | Path):
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "t":
        raise RunFormatError(f"{path}: expected a t,fx,fy[,fz] header")
    data = np.array([[float(c) for c in row] for row in rows[1:]])
    return data[:, 0], data[:, 1:]


def read_run_config(run_dir: str | Path) -> dict:
    """The resolved config copy (domain extent and boundary geometry for overlays)."""
    path = Path(run_dir) / "config.toml"
    if not path.exists():
        raise RunFormatError(f"{path}: missing")
    return tomllib.loads(path.read_text())
