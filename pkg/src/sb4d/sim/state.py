"""Particle and grid state containers (SoA numpy arrays)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import SimParams


@dataclass
class ParticleState:
    """State carried on the Lagrangian particles.

    ``design_index`` maps each particle to its slot in the design fields; it
    is the identity for freshly seeded bodies and a subset after body-fitted
    post-processing.
    """

    x: np.ndarray     # (N, d) positions
    v: np.ndarray     # (N, d) velocities
    F: np.ndarray     # (N, d, d) deformation gradients
    C: np.ndarray     # (N, d, d) affine velocity matrices
    mass: np.ndarray  # (N,)
    vol0: np.ndarray  # (N,)
    design_index: np.ndarray  # (N,) int64

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @classmethod
    def rest(cls, positions: np.ndarray, vol0: float) -> "ParticleState":
        """Particles at rest with F = I; masses are filled in from the design."""
        positions = np.ascontiguousarray(positions, dtype=np.float64)
        n, d = positions.shape
        F = np.zeros((n, d, d))
        F[:, range(d), range(d)] = 1.0
        return cls(
            x=positions.copy(),
            v=np.zeros((n, d)),
            F=F,
            C=np.zeros((n, d, d)),
            mass=np.zeros(n),
            vol0=np.full(n, vol0),
            design_index=np.arange(n, dtype=np.int64),
        )

    def copy(self) -> "ParticleState":
        return ParticleState(
            x=self.x.copy(), v=self.v.copy(), F=self.F.copy(), C=self.C.copy(),
            mass=self.mass.copy(), vol0=self.vol0.copy(),
            design_index=self.design_index.copy(),
        )


@dataclass
class GridField:
    """Flattened background grid; nodes with zero mass carry zero velocity."""

    nn: np.ndarray        # (d,) node counts per axis
    mass: np.ndarray      # (n_nodes,)
    mom: np.ndarray       # (n_nodes, d) momentum scattered by p2g
    vel_pre: np.ndarray   # (n_nodes, d) velocity after gravity, before BCs
    vel_post: np.ndarray  # (n_nodes, d) velocity after all boundary stages

    @classmethod
    def alloc(cls, params: SimParams) -> "GridField":
        nn = np.asarray(params.grid_nodes, dtype=np.int64)
        n_nodes = int(np.prod(nn))
        d = params.dim
        return cls(
            nn=nn,
            mass=np.zeros(n_nodes),
            mom=np.zeros((n_nodes, d)),
            vel_pre=np.zeros((n_nodes, d)),
            vel_post=np.zeros((n_nodes, d)),
        )

    def node_positions(self, dx: float) -> np.ndarray:
        axes = [np.arange(n) * dx for n in self.nn]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)
