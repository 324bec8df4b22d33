"""On-disk artifacts: binary trajectory, CSV exports, run-directory layout.

Trajectory binary format (little endian), sidecar ``trajectory.json``:

    bytes 0..7   magic b"SB4DTRJ1"
    int32        dim
    int64        n_particles, n_frames, stride
    float64      dt
    per frame:   int64 step, then float64 arrays x (N*d), v (N*d),
                 det F (N), u (N)

CSV files use '.' decimals, ',' separators and a header row.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .sim.forward import Frame, Trajectory

TRAJ_MAGIC = b"SB4DTRJ1"


def write_trajectory(run_dir: str | Path, traj: Trajectory, dx: float, total_time: float):
    run_dir = Path(run_dir)
    frames = traj.frames
    n = frames[0].x.shape[0] if frames else 0
    d = traj.dim
    with open(run_dir / "trajectory.bin", "wb") as fh:
        fh.write(TRAJ_MAGIC)
        fh.write(struct.pack("<i", d))
        fh.write(struct.pack("<qqq", n, len(frames), traj.frame_stride))
        fh.write(struct.pack("<d", traj.dt))
        for fr in frames:
            fh.write(struct.pack("<q", fr.step))
            fh.write(fr.x.astype("<f8").tobytes())
            fh.write(fr.v.astype("<f8").tobytes())
            fh.write(fr.det_f.astype("<f8").tobytes())
            fh.write(fr.u.astype("<f8").tobytes())
    meta = {
        "format_version": 1,
        "dim": d,
        "n_particles": n,
        "n_frames": len(frames),
        "stride": traj.frame_stride,
        "dt": traj.dt,
        "dx": dx,
        "total_time": total_time,
        "frame_steps": [fr.step for fr in frames],
        "fields": ["x", "v", "det_f", "u"],
    }
    (run_dir / "trajectory.json").write_text(json.dumps(meta, indent=2))


def read_trajectory(run_dir: str | Path):
    """Read back the binary trajectory; returns (meta, list of Frame)."""
    run_dir = Path(run_dir)
    meta = json.loads((run_dir / "trajectory.json").read_text())
    raw = (run_dir / "trajectory.bin").read_bytes()
    if raw[:8] != TRAJ_MAGIC:
        raise ConfigError("trajectory.bin: bad magic")
    off = 8
    d, = struct.unpack_from("<i", raw, off); off += 4
    n, n_frames, stride = struct.unpack_from("<qqq", raw, off); off += 24
    dt, = struct.unpack_from("<d", raw, off); off += 8
    frames = []
    for _ in range(n_frames):
        step, = struct.unpack_from("<q", raw, off); off += 8
        x = np.frombuffer(raw, "<f8", n * d, off).reshape(n, d); off += 8 * n * d
        v = np.frombuffer(raw, "<f8", n * d, off).reshape(n, d); off += 8 * n * d
        det_f = np.frombuffer(raw, "<f8", n, off); off += 8 * n
        u = np.frombuffer(raw, "<f8", n, off); off += 8 * n
        frames.append(Frame(step=step, x=x, v=v, det_f=det_f, u=u))
    assert dt == meta["dt"] and stride == meta["stride"]
    return meta, frames


def write_layout_csv(path: str | Path, positions: np.ndarray, gamma: np.ndarray,
                     xi: np.ndarray):
    d = positions.shape[1]
    k = xi.shape[0]
    header = ["px", "py"] + (["pz"] if d == 3 else []) + ["gamma", "actuator_argmax"]
    header += [f"xi_{j}" for j in range(k)]
    argmax = xi.argmax(axis=0)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for i in range(positions.shape[0]):
            row = [repr(float(c)) for c in positions[i]]
            row += [repr(float(gamma[i])), int(argmax[i])]
            row += [repr(float(xi[j, i])) for j in range(k)]
            wr.writerow(row)


def write_signals_csv(path: str | Path, dt: float, u_hat: np.ndarray):
    """Actuator signals after A_act scaling; one row per simulation step."""
    n_act = u_hat.shape[0] - 1  # last channel is the silent one
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t"] + [f"u_{j + 1}" for j in range(n_act)])
        for n in range(u_hat.shape[1]):
            wr.writerow([repr(n * dt)] + [repr(float(u_hat[j, n])) for j in range(n_act)])


def read_signals_csv(path: str | Path):
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if not header or header[0] != "t":
            raise ConfigError(f"{path}: expected header starting with 't'")
        rows = [[float(c) for c in row] for row in rd if row]
    data = np.asarray(rows)
    return data[:, 0], data[:, 1:].T  # times, (n_act, n_times)


def write_convergence_csv(path: str | Path, log_rows: list[tuple]):
    header = ["iter", "L_task", "C_mat", "C_act", "C_pul_sgn", "C_pul_abs"]
    header += [f"kappa_{m}" for m in range(1, 5)] + [f"tau_{m}" for m in range(1, 5)]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in log_rows:
            wr.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


def write_force_csv(path: str | Path, times: np.ndarray, forces: np.ndarray):
    """Contact-force (or COM) history: header t,fx,fy[,fz]."""
    d = forces.shape[1]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "fx", "fy"] + (["fz"] if d == 3 else []))
        for t, f in zip(times, forces):
            wr.writerow([repr(float(t))] + [repr(float(c)) for c in f])


def write_com_csv(path: str | Path, times: np.ndarray, xg: np.ndarray):
    d = xg.shape[1]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "x", "y"] + (["z"] if d == 3 else []))
        for t, c in zip(times, xg):
            wr.writerow([repr(float(t))] + [repr(float(v)) for v in c])


def write_gradcheck_csv(path: str | Path, rows: list[dict]):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["var", "index", "analytic", "fd", "rel_err", "branch_flag"])
        for r in rows:
            wr.writerow([r["var"], "/".join(str(i) for i in r["index"]),
                         repr(r["analytic"]), repr(r["fd"]), repr(r["rel_err"]),
                         int(r["branch_flag"])])


def export_trajectory_csv(path: str | Path, meta: dict, frames):
    d = meta["dim"]
    cols = ["frame", "t", "particle", "px", "py"] + (["pz"] if d == 3 else [])
    cols += ["vx", "vy"] + (["vz"] if d == 3 else []) + ["det_f", "u"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for k, fr in enumerate(frames):
            t = fr.step * meta["dt"]
            for i in range(fr.x.shape[0]):
                row = [k, repr(float(t)), i]
                row += [repr(float(c)) for c in fr.x[i]]
                row += [repr(float(c)) for c in fr.v[i]]
                row += [repr(float(fr.det_f[i])), repr(float(fr.u[i]))]
                wr.writerow(row)
