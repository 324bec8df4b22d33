"""Frame rendering: particle scatters with actuation coloring and force arrows."""

from __future__ import annotations

import shutil
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .formats import read_force_series, read_layout, read_run_config, read_trajectory

ACTUATOR_COLORS = ["tab:blue", "tab:red", "tab:green", "tab:orange", "tab:purple",
                   "tab:brown", "tab:pink", "tab:olive"]


@dataclass
class RenderSpec:
    run_dir: str
    out_dir: str
    frame_stride: int = 1              # render every k-th stored frame
    gamma_threshold: float = 0.01      # particles below are hidden
    color_mode: str = "actuation"      # "actuation" (red/blue by sign) or "actuator"
    draw_contact: bool = True
    make_mp4: bool = False
    dpi: int = 110
    point_size: float = 12.0
    encoder: str = "ffmpeg"
    _extent: tuple = field(default=None, repr=False)


def _domain_extent(config: dict) -> tuple[float, float]:
    dx = float(config["sim"]["dx"])
    nodes = config["sim"]["grid_nodes"]
    return (int(nodes[0]) - 1) * dx, (int(nodes[1]) - 1) * dx


def _boundary_patches(config: dict):
    """(x, y, w, h) rectangles of the 2D boundary regions, world coordinates."""
    dx = float(config["sim"]["dx"])
    out = []
    for b in config.get("boundary", []):
        lo = b["node_lo"]
        hi = b["node_hi"]
        out.append((b["name"], lo[0] * dx, lo[1] * dx,
                    (hi[0] - lo[0]) * dx, (hi[1] - lo[1]) * dx))
    return out


def _colors(frame, layout_arg, spec: RenderSpec, u_scale: float):
    if spec.color_mode == "actuator":
        return [ACTUATOR_COLORS[int(a) % len(ACTUATOR_COLORS)] for a in layout_arg]
    # signed actuation: red for expansion (u > 0), blue for contraction
    t = np.clip(frame.u / u_scale, -1.0, 1.0) if u_scale > 0 else np.zeros(len(frame.u))
    return plt.get_cmap("coolwarm")(0.5 * (t + 1.0))


def render_frames(spec: RenderSpec) -> list[Path]:
    """One PNG per retained frame; returns the written paths."""
    run = Path(spec.run_dir)
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta, frames = read_trajectory(run)
    positions, gamma, layout_arg, _ = read_layout(run)
    if positions.shape[0] != meta["n_particles"]:
        raise ValueError("layout.csv and trajectory.bin disagree on the particle count")
    config = read_run_config(run)
    visible = gamma >= spec.gamma_threshold
    u_scale = max((np.abs(f.u).max() for f in frames), default=0.0)

    contact = []
    if spec.draw_contact:
        for name, *rect in _boundary_patches(config):
            path = run / f"contact_{name}.csv"
            if path.exists():
                _, forces = read_force_series(path)
                contact.append((rect, forces))
    fmax = max((np.abs(f).max() for _, f in contact), default=0.0)

    lx, ly = _domain_extent(config)
    written = []
    for k, frame in enumerate(frames):
        if k % spec.frame_stride:
            continue
        fig, ax = plt.subplots(figsize=(6, 6), dpi=spec.dpi)
        for name, bx, by, bw, bh in _boundary_patches(config):
            ax.add_patch(plt.Rectangle((bx, by), bw, bh, color="0.85", zorder=0))
        if visible.any():
            x = frame.x[visible]
            xy = x[:, :2] if meta["dim"] == 2 else x[:, [0, 1]]  # orthographic side view
            c = _colors(frame, layout_arg, spec, u_scale)
            c = c[visible] if isinstance(c, np.ndarray) else [ci for ci, vi in zip(c, visible) if vi]
            ax.scatter(xy[:, 0], xy[:, 1], s=spec.point_size, c=c, linewidths=0, zorder=2)
        for (bx, by, bw, bh), forces in contact:
            if frame.step < len(forces) and fmax > 0:
                f = forces[frame.step][:2]
                mid = (bx + bw / 2.0, by + bh)
                scale = 0.15 * max(lx, ly) / fmax
                ax.annotate("", xy=(mid[0] + f[0] * scale, mid[1] + f[1] * scale),
                            xytext=mid, arrowprops=dict(arrowstyle="->", color="black"),
                            zorder=3)
        ax.set_xlim(0, lx)
        ax.set_ylim(0, ly)
        ax.set_aspect("equal")
        ax.set_title(f"t = {frame.step * meta['dt']:.4f} s")
        path = out / f"frame_{k:05d}.png"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)

    if spec.make_mp4 and written:
        encode_mp4(out, spec.encoder)
    return written


def encode_mp4(frame_dir: Path, encoder: str = "ffmpeg") -> Path | None:
    """Mux frames to movie.mp4 when an external encoder is available."""
    if shutil.which(encoder) is None:
        return None
    target = frame_dir / "movie.mp4"
    subprocess.run([encoder, "-y", "-loglevel", "error", "-framerate", "20",
                    "-pattern_type", "glob", "-i", str(frame_dir / "frame_*.png"),
                    "-pix_fmt", "yuv420p", str(target)], check=True)
    return target
