"""Forward simulation driver: stepping, trajectory recording, contact forces."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InstabilityError, OutOfDomainError
from . import kernels
from .params import BoundaryArrays, MaterialConstants, SimParams
from .state import GridField, ParticleState


def neo_hookean_kirchhoff(F: np.ndarray, lam: float, mu: float) -> np.ndarray:
    """Kirchhoff-type stress of the neo-Hookean model: mu(FF^T - I) + lam log(J) I."""
    F = np.asarray(F, dtype=float)
    d = F.shape[0]
    J = np.linalg.det(F)
    if J <= 0:
        raise ValueError(f"singular deformation gradient, det(F) = {J}")
    return mu * (F @ F.T - np.eye(d)) + lam * np.log(J) * np.eye(d)


def actuation_kirchhoff(F: np.ndarray, u: float) -> np.ndarray:
    """Actuation stress offset -u F S F^T with S the identity."""
    F = np.asarray(F, dtype=float)
    return -u * (F @ F.T)


def neo_hookean_kirchhoff_vjp(cot: np.ndarray, F: np.ndarray, lam: float, mu: float):
    """Adjoint of the elastic stress: cotangent -> (Fbar, lambar, mubar)."""
    F = np.asarray(F, dtype=float)
    d = F.shape[0]
    J = np.linalg.det(F)
    fbar = mu * (cot + cot.T) @ F + lam * np.trace(cot) * np.linalg.inv(F).T
    mubar = float((cot * (F @ F.T - np.eye(d))).sum())
    lambar = float(np.trace(cot) * np.log(J))
    return fbar, lambar, mubar


def actuation_kirchhoff_vjp(cot: np.ndarray, F: np.ndarray, u: float):
    """Adjoint of the actuation stress: cotangent -> (Fbar, ubar)."""
    F = np.asarray(F, dtype=float)
    fbar = -u * (cot + cot.T) @ F
    ubar = float(-(cot * (F @ F.T)).sum())
    return fbar, ubar


@dataclass
class SimContext:
    """Everything a time step needs besides the particle state."""

    params: SimParams
    mat: MaterialConstants
    boundaries: BoundaryArrays
    deterministic: bool = True
    blowup_factor: float = 100.0
    _tbuf_mass: np.ndarray = field(default=None, repr=False)
    _tbuf_mom: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.gravity = np.asarray(self.params.gravity, dtype=float)
        self.inv_dx = 1.0 / self.params.dx
        self.blowup_speed = self.blowup_factor * max(self.params.extent) / max(self.params.total_time, 1e-30)

    def thread_buffers(self, grid: GridField):
        import numba

        nt = numba.get_num_threads()
        n_nodes = grid.mass.shape[0]
        d = grid.mom.shape[1]
        if self._tbuf_mass is None or self._tbuf_mass.shape != (nt, n_nodes):
            self._tbuf_mass = np.zeros((nt, n_nodes))
            self._tbuf_mom = np.zeros((nt, n_nodes, d))
        return self._tbuf_mass, self._tbuf_mom


def step(ctx: SimContext, state: ParticleState, grid: GridField, u_col: np.ndarray,
         step_index: int, branch_count: np.ndarray, lam: np.ndarray, mu: np.ndarray):
    """One symplectic-Euler MPM step: p2g -> grid update (with BCs) -> g2p."""
    p = ctx.params
    b = ctx.boundaries
    err = np.zeros(2, dtype=np.int64)
    vr_row = b.vr_table[step_index]
    if ctx.deterministic:
        kernels.p2g(state.x, state.v, state.F, state.C, state.mass, lam, mu, u_col,
                    state.vol0, p.dt, ctx.inv_dx, grid.nn, grid.mass, grid.mom, err)
    else:
        tm, tmom = ctx.thread_buffers(grid)
        kernels.p2g_par(state.x, state.v, state.F, state.C, state.mass, lam, mu, u_col,
                        state.vol0, p.dt, ctx.inv_dx, grid.nn, tm, tmom,
                        grid.mass, grid.mom, err)
    if err[0] == kernels.ERR_OUT_OF_DOMAIN:
        raise OutOfDomainError(int(err[1]), step_index)
    if err[0] == kernels.ERR_SINGULAR_F:
        raise InstabilityError(step_index, f"det(F) <= 0 at particle {int(err[1])}")

    gu = kernels.grid_update if ctx.deterministic else kernels.grid_update_par
    gu(grid.mass, grid.mom, ctx.gravity, p.dt, grid.nn, b.lo, b.hi, b.normal,
       b.mode, b.mu_f, vr_row, grid.vel_pre, grid.vel_post, branch_count)

    stats = np.array([0.0, np.inf])
    gp = kernels.g2p if ctx.deterministic else kernels.g2p_par
    gp(state.x, state.v, state.F, state.C, grid.vel_post, p.dt, ctx.inv_dx, grid.nn, stats)
    if stats[1] <= 0.0:
        raise InstabilityError(step_index, f"det(F) <= 0 after update (min {stats[1]:.3e})")
    if stats[0] > ctx.blowup_speed ** 2:
        raise InstabilityError(step_index, f"particle speed {np.sqrt(stats[0]):.3e} m/s "
                                           f"above threshold {ctx.blowup_speed:.3e}")


def boundary_region_mask(b: BoundaryArrays, index: int, params: SimParams) -> np.ndarray:
    """Boolean mask over flattened grid nodes lying inside one boundary region."""
    nn = params.grid_nodes
    axes = [np.arange(n) for n in nn]
    mesh = np.meshgrid(*axes, indexing="ij")
    mask = np.ones(mesh[0].shape, dtype=bool)
    for a in range(params.dim):
        mask &= (mesh[a] >= b.lo[index, a]) & (mesh[a] <= b.hi[index, a])
    return mask.ravel()


def contact_force(grid: GridField, region_mask: np.ndarray, dt: float) -> np.ndarray:
    """Reaction imparted by one boundary this step: momentum change rate of its nodes."""
    dmom = grid.mass[region_mask, None] * (grid.vel_post[region_mask] - grid.vel_pre[region_mask])
    return dmom.sum(axis=0) / dt


@dataclass
class Frame:
    step: int
    x: np.ndarray
    v: np.ndarray
    det_f: np.ndarray
    u: np.ndarray


@dataclass
class Trajectory:
    """Per-step reductions (index n is the state after n steps) plus optional frames."""

    dt: float
    dim: int
    times: np.ndarray            # (n_steps + 1,)
    vg: np.ndarray               # (n_steps + 1, d) mass-averaged velocity
    xg: np.ndarray               # (n_steps + 1, d) center of gravity
    tip: np.ndarray | None       # (n_steps + 1, d) tip centroid (balancer)
    rot: np.ndarray | None       # (n_steps + 1,) angular-velocity ratio (rotator)
    contact: np.ndarray | None   # (n_steps + 1, n_b, d)
    frames: list[Frame]
    frame_stride: int
    total_mass: float

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1


def _record(series, n, state, M, tip_mask, want_rot):
    series["vg"][n] = state.mass @ state.v / M
    series["xg"][n] = state.mass @ state.x / M
    if tip_mask is not None:
        series["tip"][n] = state.x[tip_mask].mean(axis=0)
    if want_rot:
        r = state.x - series["xg"][n]
        w = state.v - series["vg"][n]
        num = state.mass @ np.cross(r, w)[:, 1]
        den = state.mass @ (r * r).sum(axis=1)
        series["rot"][n] = num / den


def run_engine(ctx: SimContext, state: ParticleState, lam: np.ndarray, mu: np.ndarray,
               u_at_step, frame_stride: int = 0, record_contact: bool = False,
               tip_mask: np.ndarray | None = None, want_rot: bool = False,
               snapshot_steps=None, branch_count: np.ndarray | None = None):
    """Advance n_steps steps recording per-step reductions.

    ``u_at_step(n)`` must return the per-particle actuation at step n.
    Returns (Trajectory, snapshots) where snapshots maps step -> state copy.
    """
    p = ctx.params
    n_steps = p.n_steps
    d = p.dim
    grid = GridField.alloc(p)
    if branch_count is None:
        branch_count = np.zeros(1, dtype=np.int64)
    M = float(state.mass.sum())
    series = {
        "vg": np.zeros((n_steps + 1, d)),
        "xg": np.zeros((n_steps + 1, d)),
        "tip": np.zeros((n_steps + 1, d)) if tip_mask is not None else None,
        "rot": np.zeros(n_steps + 1) if want_rot else None,
    }
    n_b = ctx.boundaries.mode.shape[0]
    contact = np.zeros((n_steps + 1, n_b, d)) if record_contact else None
    masks = [boundary_region_mask(ctx.boundaries, b, p) for b in range(n_b)] if record_contact else None

    frames: list[Frame] = []

    def grab_frame(n):
        frames.append(Frame(step=n, x=state.x.copy(), v=state.v.copy(),
                            det_f=np.linalg.det(state.F), u=u_at_step(min(n, n_steps)).copy()))

    snapshots = {}
    _record(series, 0, state, M, tip_mask, want_rot)
    if frame_stride > 0:
        grab_frame(0)
    for n in range(n_steps):
        if snapshot_steps is not None and n in snapshot_steps:
            snapshots[n] = state.copy()
        u_col = u_at_step(n)
        step(ctx, state, grid, u_col, n, branch_count, lam, mu)
        _record(series, n + 1, state, M, tip_mask, want_rot)
        if record_contact:
            for b in range(n_b):
                contact[n + 1, b] = contact_force(grid, masks[b], p.dt)
        if frame_stride > 0 and (n + 1) % frame_stride == 0:
            grab_frame(n + 1)
    traj = Trajectory(
        dt=p.dt, dim=d, times=np.arange(n_steps + 1) * p.dt,
        vg=series["vg"], xg=series["xg"], tip=series["tip"], rot=series["rot"],
        contact=contact, frames=frames, frame_stride=frame_stride, total_mass=M,
    )
    return traj, snapshots
