"""Offline visualization for sb4d run directories (a pure file consumer)."""

from .formats import RunFormatError, read_convergence, read_layout, read_trajectory
from .plots import plot_convergence
from .render import RenderSpec, render_frames

__all__ = ["RunFormatError", "read_convergence", "read_layout", "read_trajectory",
           "plot_convergence", "RenderSpec", "render_frames"]

__version__ = "0.1.0"
