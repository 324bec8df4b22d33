"""Convergence plots: objective + constraints, multipliers + penalty coefficients."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .formats import read_convergence

CONSTRAINT_COLS = ["C_mat", "C_act", "C_pul_sgn", "C_pul_abs"]


def plot_convergence(run_dir: str | Path, out_path: str | Path | None = None) -> Path:
    """Two stacked panels: (a) objective and constraints, (b) kappa and tau."""
    run = Path(run_dir)
    data = read_convergence(run)
    out_path = Path(out_path) if out_path else run / "convergence.png"
    it = data["iter"]
    marker = "o" if len(it) == 1 else None

    fig, (ax_top, ax_bot) = plt.subplots(2, 1, figsize=(7, 8), dpi=110, sharex=True)
    ax_top.plot(it, data["L_task"], color="black", marker=marker, label="objective")
    ax_top.set_ylabel("objective")
    ax_c = ax_top.twinx()
    for col in CONSTRAINT_COLS:
        ax_c.plot(it, data[col], marker=marker, alpha=0.8, label=col)
    ax_c.set_ylabel("constraints")
    lines = ax_top.get_lines() + ax_c.get_lines()
    ax_top.legend(lines, [ln.get_label() for ln in lines], fontsize=8, loc="upper right")

    for m in range(1, 5):
        ax_bot.plot(it, data[f"kappa_{m}"], marker=marker, label=f"kappa_{m}")
        ax_bot.plot(it, data[f"tau_{m}"], marker=marker, linestyle="--", label=f"tau_{m}")
    ax_bot.set_xlabel("iteration")
    ax_bot.set_ylabel("multipliers / penalty coefficients")
    ax_bot.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path
