"""Simulation parameters, material constants and rigid-boundary specs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError

# BoundarySpec.mode encoding shared with the numba kernels
MODE_COULOMB = 0
MODE_NO_SLIP = 1
MODE_STICKY_ALWAYS = 2

_MODE_NAMES = {"coulomb": MODE_COULOMB, "no_slip": MODE_NO_SLIP, "sticky_always": MODE_STICKY_ALWAYS}


def lame_from_elastic(E: float, nu: float) -> tuple[float, float]:
    """Lame constants (lambda, mu) from Young's modulus and Poisson ratio."""
    if E <= 0:
        raise ConfigError(f"Young's modulus must be positive, got {E}")
    if not (-1.0 < nu < 0.5):
        raise ConfigError(f"Poisson ratio must lie in (-1, 0.5), got {nu}")
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return lam, mu


@dataclass(frozen=True)
class MaterialConstants:
    """Solid-phase material constants plus the interpolation floor eps."""

    rho0: float = 1000.0
    E0: float = 1e5
    nu0: float = 0.4
    eps: float = 1e-5

    def __post_init__(self):
        if self.rho0 <= 0:
            raise ConfigError("rho0 must be positive")
        if not (0.0 < self.eps < 1.0):
            raise ConfigError("eps must lie in (0, 1)")
        lame_from_elastic(self.E0, self.nu0)  # validates E0, nu0

    @property
    def lambda0(self) -> float:
        return lame_from_elastic(self.E0, self.nu0)[0]

    @property
    def mu0(self) -> float:
        return lame_from_elastic(self.E0, self.nu0)[1]

    def wave_speed(self) -> float:
        return math.sqrt((self.lambda0 + 2.0 * self.mu0) / self.rho0)


@dataclass(frozen=True)
class SimParams:
    """Grid geometry and time discretization.

    Node i sits at position i * dx along each axis; ``grid_nodes`` counts the
    nodes per axis, so the domain side length is (n - 1) * dx.
    """

    dim: int
    dx: float
    dt: float
    total_time: float
    grid_nodes: tuple[int, ...]
    gravity: tuple[float, ...]

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigError(f"dim must be 2 or 3, got {self.dim}")
        if len(self.grid_nodes) != self.dim or len(self.gravity) != self.dim:
            raise ConfigError("grid_nodes and gravity must have `dim` entries")
        if self.dx <= 0 or self.dt <= 0 or self.total_time < 0:
            raise ConfigError("dx, dt must be positive and total_time non-negative")
        if any(n < 4 for n in self.grid_nodes):
            raise ConfigError("need at least 4 grid nodes per axis")

    @property
    def n_steps(self) -> int:
        return int(round(self.total_time / self.dt))

    @property
    def extent(self) -> tuple[float, ...]:
        return tuple((n - 1) * self.dx for n in self.grid_nodes)

    def validate_against(self, mat: MaterialConstants):
        """CFL bound: dt may not exceed dx over the elastic wave speed."""
        max_dt = cfl_max_dt(self, mat)
        if self.dt > max_dt * (1.0 + 1e-12):
            raise ConfigError(f"dt={self.dt} violates the CFL bound {max_dt:.3e}")
        if self.n_steps < 1 and self.total_time > 0:
            raise ConfigError("total_time shorter than one step")


def cfl_max_dt(params: SimParams, mat: MaterialConstants) -> float:
    """Largest stable explicit time step: dx over the elastic wave speed."""
    return params.dx / mat.wave_speed()


@dataclass
class BoundarySpec:
    """Axis-aligned rigid region given as inclusive node-index bounds.

    ``velocity`` is either the string "zero" or a dict
    {"kind": "oscillate", "axis": int, "pos_amp": float, "omega": float}
    describing a prescribed position pos_amp*sin(omega*t) along one axis, i.e.
    a boundary velocity pos_amp*omega*cos(omega*t).
    """

    name: str
    mode: str
    normal: tuple[float, ...]
    node_lo: tuple[int, ...]
    node_hi: tuple[int, ...]
    mu_f: float = 0.0
    velocity: object = "zero"

    def __post_init__(self):
        if self.mode not in _MODE_NAMES:
            raise ConfigError(f"unknown boundary mode {self.mode!r}")
        n = np.asarray(self.normal, dtype=float)
        if not math.isclose(float(np.linalg.norm(n)), 1.0, rel_tol=1e-9):
            raise ConfigError(f"boundary normal must be a unit vector, got {self.normal}")
        if self.mu_f < 0:
            raise ConfigError("mu_f must be non-negative")
        if any(lo > hi for lo, hi in zip(self.node_lo, self.node_hi)):
            raise ConfigError(f"empty boundary region {self.name!r}")

    @property
    def mode_code(self) -> int:
        return _MODE_NAMES[self.mode]

    def velocity_at(self, t: float) -> np.ndarray:
        d = len(self.normal)
        v = np.zeros(d)
        if self.velocity == "zero":
            return v
        spec = self.velocity
        if spec.get("kind") != "oscillate":
            raise ConfigError(f"unknown boundary velocity spec {spec!r}")
        v[int(spec["axis"])] = float(spec["pos_amp"]) * float(spec["omega"]) * math.cos(float(spec["omega"]) * t)
        return v


@dataclass
class BoundaryArrays:
    """Boundary list flattened to plain arrays for the numba kernels."""

    lo: np.ndarray       # (n_b, dim) int64, inclusive
    hi: np.ndarray       # (n_b, dim) int64, inclusive
    normal: np.ndarray   # (n_b, dim) float64
    mode: np.ndarray     # (n_b,) int64
    mu_f: np.ndarray     # (n_b,) float64
    vr_table: np.ndarray = field(default=None)  # (n_steps + 1, n_b, dim) float64

    @classmethod
    def from_specs(cls, specs: list[BoundarySpec], params: SimParams) -> "BoundaryArrays":
        n_b = len(specs)
        d = params.dim
        lo = np.zeros((n_b, d), dtype=np.int64)
        hi = np.zeros((n_b, d), dtype=np.int64)
        normal = np.zeros((n_b, d))
        mode = np.zeros(n_b, dtype=np.int64)
        mu_f = np.zeros(n_b)
        for b, spec in enumerate(specs):
            lo[b] = spec.node_lo
            hi[b] = spec.node_hi
            normal[b] = spec.normal
            mode[b] = spec.mode_code
            mu_f[b] = spec.mu_f
            for a in range(d):
                if lo[b, a] < 0 or hi[b, a] >= params.grid_nodes[a]:
                    raise ConfigError(f"boundary {spec.name!r} leaves the grid")
        n_steps = params.n_steps
        vr = np.zeros((n_steps + 1, n_b, d))
        for b, spec in enumerate(specs):
            if spec.velocity == "zero":
                continue
            for n in range(n_steps + 1):
                vr[n, b] = spec.velocity_at(n * params.dt)
        return cls(lo=lo, hi=hi, normal=normal, mode=mode, mu_f=mu_f, vr_table=vr)
