"""Reverse-mode gradient of the augmented Lagrangian via adjoint sweeps.

The forward run stores particle-state snapshots at segment starts only; the
backward sweep walks the segments in reverse, re-runs the forward inside each
segment to restore every intermediate particle state, reconstructs the grid
quantities step by step, and applies the hand-derived kernel adjoints. Because
the recompute replays the exact same floating-point operations, the gradient
is independent of the segment length down to the last bit (in deterministic
mode).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .design import (
    DesignCotangents,
    DesignVariables,
    FilterSpec,
    PulseParams,
    derive_design,
    design_vjp,
)
from .errors import NonFiniteAdjointError
from .losses import (
    LossSeeder,
    TaskSpec,
    augmented_lagrangian,
    c_act_vjp,
    c_mat_vjp,
    c_pul_vjp,
    constraint_values,
    penalty,
    task_loss,
)
from .sim import kernels
from .sim.forward import SimContext, run_engine, step
from .sim.params import MaterialConstants
from .sim.state import GridField, ParticleState


@dataclass
class CheckpointPlan:
    """Segmented-recompute plan; memory scales with S_t + N_t / S_t states."""

    n_steps: int
    segment_len: int = 0
    peak_snapshots: int = field(default=0, init=False)

    def __post_init__(self):
        if self.segment_len <= 0:
            self.segment_len = max(1, int(round(math.sqrt(max(self.n_steps, 1)))))
        self.segment_len = min(self.segment_len, max(self.n_steps, 1))

    @property
    def n_segments(self) -> int:
        return max(1, -(-self.n_steps // self.segment_len))

    def segment_starts(self):
        return range(0, max(self.n_steps, 1), self.segment_len)


@dataclass
class GradientResult:
    d_phi: np.ndarray
    d_Z: np.ndarray
    d_A_sgn: np.ndarray
    d_A_abs: np.ndarray
    loss: float                     # augmented Lagrangian value
    task_loss: float
    constraint_values: np.ndarray   # (4,) C values (not penalties)
    penalties: np.ndarray           # (4,) hinge violations

    def blocks(self) -> dict[str, np.ndarray]:
        return {"phi": self.d_phi, "Z": self.d_Z, "A_sgn": self.d_A_sgn, "A_abs": self.d_A_abs}


@dataclass
class SimProblem:
    """A scenario prepared for differentiation: geometry, design maps, task."""

    ctx: SimContext
    positions0: np.ndarray          # (N, d) reference lattice
    filter: FilterSpec
    pulse: PulseParams
    task: TaskSpec
    mat: MaterialConstants
    beta_sig: float
    beta_soft: float
    vol0: float
    tip_mask: np.ndarray | None = None

    @property
    def n_par(self) -> int:
        return self.positions0.shape[0]

    def derive(self, vars: DesignVariables):
        return derive_design(vars, self.filter, self.pulse, self.ctx.params,
                             self.mat, self.beta_sig, self.beta_soft, self.vol0)

    def fresh_state(self, derived) -> ParticleState:
        st = ParticleState.rest(self.positions0, self.vol0)
        st.mass[:] = derived.mass
        return st

    def forward(self, vars: DesignVariables, snapshot_steps=None,
                frame_stride: int = 0, record_contact: bool = False,
                derived=None, branch_count=None):
        derived = derived if derived is not None else self.derive(vars)
        state = self.fresh_state(derived)
        want_rot = self.task.kind == "rotator_y"
        traj, snaps = run_engine(
            self.ctx, state, derived.lam, derived.mu, derived.particle_actuation_at,
            frame_stride=frame_stride, record_contact=record_contact,
            tip_mask=self.tip_mask if self.task.kind == "balancer_tip" else None,
            want_rot=want_rot, snapshot_steps=snapshot_steps, branch_count=branch_count,
        )
        return derived, traj, snaps

    def evaluate(self, vars: DesignVariables, kappa, tau, branch_count=None):
        """Forward-only augmented-Lagrangian value (used by the FD oracle)."""
        derived, traj, _ = self.forward(vars, branch_count=branch_count)
        l_task = task_loss(traj, self.task, self.ctx.params.total_time)
        c = constraint_values(derived.gamma, derived.xi, vars.A_sgn, vars.A_abs)
        p = penalty(c, self.task.tolerances())
        return augmented_lagrangian(l_task, p, kappa, tau), l_task, c


def gradient(problem: SimProblem, vars: DesignVariables, kappa, tau,
             plan: CheckpointPlan | None = None) -> GradientResult:
    """d(augmented Lagrangian)/d(all design variables), checkpointed."""
    ctx = problem.ctx
    params = ctx.params
    n_steps = params.n_steps
    if plan is None:
        plan = CheckpointPlan(n_steps=n_steps)
    kappa = np.asarray(kappa, dtype=float)
    tau = np.asarray(tau, dtype=float)

    derived = problem.derive(vars)
    snapshot_steps = set(plan.segment_starts()) if n_steps > 0 else set()
    derived, traj, snaps = problem.forward(vars, snapshot_steps=snapshot_steps, derived=derived)
    plan.peak_snapshots = len(snaps) + 1

    l_task = task_loss(traj, problem.task, params.total_time)
    c_star = problem.task.tolerances()
    c = constraint_values(derived.gamma, derived.xi, vars.A_sgn, vars.A_abs)
    pen = penalty(c, c_star)
    al = augmented_lagrangian(l_task, pen, kappa, tau)

    n = problem.n_par
    d = params.dim
    xbar = np.zeros((n, d))
    vbar = np.zeros((n, d))
    Cbar = np.zeros((n, d, d))
    Fbar = np.zeros((n, d, d))
    mbar = np.zeros(n)
    lambar = np.zeros(n)
    mubar = np.zeros(n)
    ubar = np.zeros(n)

    cot = DesignCotangents.zeros(derived, problem.pulse.n_pul)
    tip_mask = problem.tip_mask if problem.task.kind == "balancer_tip" else None
    seeder = LossSeeder(
        task=problem.task, dt=params.dt, total_time=params.total_time, dim=d,
        mass=derived.mass, tip_mask=tip_mask,
        tip0=problem.positions0[tip_mask].mean(axis=0) if tip_mask is not None else None,
    )

    grid = GridField.alloc(params)
    gbar_vel = np.zeros_like(grid.vel_post)
    gbar_mass = np.zeros_like(grid.mass)
    gbar_mom = np.zeros_like(grid.mom)
    err = np.zeros(2, dtype=np.int64)
    bcount = np.zeros(1, dtype=np.int64)
    b = ctx.boundaries

    starts = sorted(snapshot_steps, reverse=True)
    for start in starts:
        end = min(start + plan.segment_len, n_steps)
        states = [snaps[start]]
        work = snaps[start].copy()
        for nstep in range(start, end):
            step(ctx, work, grid, derived.particle_actuation_at(nstep), nstep,
                 bcount, derived.lam, derived.mu)
            states.append(work.copy())
        for nstep in range(end - 1, start - 1, -1):
            s_n = states[nstep - start]
            s_np1 = states[nstep - start + 1]
            u_col = derived.particle_actuation_at(nstep)
            vr_row = b.vr_table[nstep]
            kernels.p2g(s_n.x, s_n.v, s_n.F, s_n.C, s_n.mass, derived.lam, derived.mu,
                        u_col, s_n.vol0, params.dt, ctx.inv_dx, grid.nn,
                        grid.mass, grid.mom, err)
            kernels.grid_update(grid.mass, grid.mom, ctx.gravity, params.dt, grid.nn,
                                b.lo, b.hi, b.normal, b.mode, b.mu_f, vr_row,
                                grid.vel_pre, grid.vel_post, bcount)
            seeder.seed(s_np1.x, s_np1.v, xbar, vbar)
            gbar_vel[:] = 0.0
            kernels.g2p_backward(s_n.x, s_n.F, s_np1.C, grid.vel_post, params.dt,
                                 ctx.inv_dx, grid.nn, xbar, vbar, Cbar, Fbar, gbar_vel)
            kernels.grid_backward(grid.mass, grid.mom, ctx.gravity, params.dt, grid.nn,
                                  b.lo, b.hi, b.normal, b.mode, b.mu_f, vr_row,
                                  gbar_vel, gbar_mass, gbar_mom)
            kernels.p2g_backward(s_n.x, s_n.v, s_n.F, s_n.C, s_n.mass, derived.lam,
                                 derived.mu, u_col, s_n.vol0, params.dt, ctx.inv_dx,
                                 grid.nn, gbar_mass, gbar_mom, xbar, vbar, Cbar, Fbar,
                                 mbar, lambar, mubar, ubar)
            cot.add_particle_actuation(derived, nstep, ubar)
        del snaps[start]
        if not (np.isfinite(xbar).all() and np.isfinite(vbar).all()
                and np.isfinite(Fbar).all() and np.isfinite(mbar).all()):
            raise NonFiniteAdjointError(start)

    cot.add_material(derived, problem.mat, problem.vol0,
                     mbar + seeder.mbar_const, lambar, mubar)

    # penalty terms: dAL/dC_m = (-kappa_m + tau_m P_m) on the violated side
    coef = np.where(c > c_star, -kappa + tau * pen, 0.0)
    cot.d_gamma += c_mat_vjp(coef[0], derived.gamma)
    cot.d_xi += c_act_vjp(coef[1], derived.xi)
    cot.d_A_sgn += c_pul_vjp(coef[2], vars.A_sgn)
    cot.d_A_abs += c_pul_vjp(coef[3], vars.A_abs)

    grads = design_vjp(cot, vars, derived, problem.filter, problem.pulse,
                       problem.beta_sig, problem.beta_soft)
    for g in grads.values():
        if not np.isfinite(g).all():
            raise NonFiniteAdjointError(0)
    return GradientResult(
        d_phi=grads["phi"], d_Z=grads["Z"], d_A_sgn=grads["A_sgn"], d_A_abs=grads["A_abs"],
        loss=al, task_loss=l_task, constraint_values=c, penalties=pen,
    )


@dataclass
class FDSample:
    block: str
    index: tuple
    fd: float
    branch_crossing: bool
    one_sided: tuple[float, float] | None = None


def finite_diff_gradient(problem: SimProblem, vars: DesignVariables, kappa, tau,
                         samples: list[tuple[str, tuple]], h: float = 1e-5) -> list[FDSample]:
    """Central differences of the full pipeline at selected variable entries.

    Runs in whatever mode the problem context is in; gradcheck uses a
    deterministic context. A sample is flagged as branch-crossing when the two
    perturbed runs take a different number of constrained boundary branches,
    in which case both one-sided differences are reported too.
    """
    base_val, _, _ = problem.evaluate(vars, kappa, tau)
    out = []
    for block, index in samples:
        pert = vars.copy()
        arr = pert.blocks()[block]
        arr[index] += h
        bc1 = np.zeros(1, dtype=np.int64)
        f1, _, _ = problem.evaluate(pert, kappa, tau, branch_count=bc1)
        arr[index] -= 2.0 * h
        bc2 = np.zeros(1, dtype=np.int64)
        f2, _, _ = problem.evaluate(pert, kappa, tau, branch_count=bc2)
        crossing = int(bc1[0]) != int(bc2[0])
        one_sided = ((f1 - base_val) / h, (base_val - f2) / h) if crossing else None
        out.append(FDSample(block=block, index=index, fd=(f1 - f2) / (2.0 * h),
                            branch_crossing=crossing, one_sided=one_sided))
    return out


def relative_error(a: float, b: float, floor: float = 1e-12) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)
