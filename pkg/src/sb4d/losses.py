"""Task objectives, binarization constraints and the augmented Lagrangian.

Time integrals use the rectangle rule at step resolution: the value of a
per-step quantity at the state *after* step n contributes with weight dt, so
the locomotion objective telescopes exactly to the negated center-of-mass
displacement when the particle masses are constant in time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sim.forward import Trajectory

TASK_KINDS = ("walker_x", "climber_y", "balancer_tip", "rotator_y")


@dataclass
class TaskSpec:
    kind: str
    n_act: int
    c_star_mat: float = None
    c_star_act: float = None
    c_star_pul_sgn: float = 0.01
    c_star_pul_abs: float = 0.01

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        # defaults: 5% of each constraint's maximum, 1% for the pulse ones
        if self.c_star_mat is None:
            self.c_star_mat = 0.05 * 0.25
        if self.c_star_act is None:
            self.c_star_act = 0.05 * self.n_act / (self.n_act + 1)
        for t in (self.c_star_mat, self.c_star_act, self.c_star_pul_sgn, self.c_star_pul_abs):
            if t <= 0:
                raise ValueError("constraint tolerances must be positive")

    @property
    def axis_index(self) -> int:
        return {"walker_x": 0, "climber_y": 1}.get(self.kind, 0)

    def tolerances(self) -> np.ndarray:
        return np.array([self.c_star_mat, self.c_star_act, self.c_star_pul_sgn, self.c_star_pul_abs])


# ---------------------------------------------------------------------------
# frame reductions
# ---------------------------------------------------------------------------


def mass_avg_velocity(v: np.ndarray, mass: np.ndarray) -> np.ndarray:
    M = mass.sum()
    if M <= 0:
        raise ValueError("zero total mass")
    return mass @ v / M


def center_of_gravity(x: np.ndarray, mass: np.ndarray) -> np.ndarray:
    M = mass.sum()
    if M <= 0:
        raise ValueError("zero total mass")
    return mass @ x / M


# ---------------------------------------------------------------------------
# task objectives over a trajectory
# ---------------------------------------------------------------------------


def loss_locomotion(traj: Trajectory, axis: np.ndarray) -> float:
    """Negative travel along ``axis``: -sum_n (v_g . axis) dt over steps 1..N."""
    return float(-(traj.vg[1:] @ axis).sum() * traj.dt)


def loss_balancer(traj: Trajectory, total_time: float) -> float:
    """Time-averaged tip deviation from its initial position."""
    if traj.tip is None:
        raise ValueError("trajectory carries no tip centroid series")
    dev = np.linalg.norm(traj.tip[1:] - traj.tip[0], axis=1)
    return float(dev.sum() * traj.dt / total_time)


def loss_rotator(traj: Trajectory) -> float:
    """Accumulated angular-velocity ratio about +y (counterclockwise positive)."""
    if traj.rot is None:
        raise ValueError("trajectory carries no angular series")
    return float(traj.rot[1:].sum() * traj.dt)


def task_loss(traj: Trajectory, task: TaskSpec, total_time: float) -> float:
    if task.kind == "walker_x":
        axis = np.zeros(traj.dim)
        axis[0] = 1.0
        return loss_locomotion(traj, axis)
    if task.kind == "climber_y":
        axis = np.zeros(traj.dim)
        axis[1] = 1.0
        return loss_locomotion(traj, axis)
    if task.kind == "balancer_tip":
        return loss_balancer(traj, total_time)
    return loss_rotator(traj)


# ---------------------------------------------------------------------------
# binarization constraints
# ---------------------------------------------------------------------------


def c_mat(gamma: np.ndarray) -> float:
    """Mean of gamma (1 - gamma); 0 on binary fields, maximum 0.25 at 0.5."""
    g = np.asarray(gamma, dtype=float)
    return float(np.mean(g * (1.0 - g)))


def c_mat_vjp(cotangent: float, gamma: np.ndarray) -> np.ndarray:
    g = np.asarray(gamma, dtype=float)
    return cotangent * (1.0 - 2.0 * g) / g.size


def c_act(xi: np.ndarray) -> float:
    """Mean over particles of 1 - |xi|_2^2; 0 exactly on one-hot columns."""
    return float(np.mean(1.0 - (xi ** 2).sum(axis=0)))


def c_act_vjp(cotangent: float, xi: np.ndarray) -> np.ndarray:
    return cotangent * (-2.0 * xi) / xi.shape[1]


def c_pul(a: np.ndarray) -> float:
    """Mean of (1 + a)(1 - a) over all pulse slots; 0 on fully binary input."""
    a = np.asarray(a, dtype=float)
    return float(np.mean((1.0 + a) * (1.0 - a)))


def c_pul_vjp(cotangent: float, a: np.ndarray) -> np.ndarray:
    return cotangent * (-2.0 * a) / a.size


def constraint_values(gamma, xi, a_sgn, a_abs) -> np.ndarray:
    return np.array([c_mat(gamma), c_act(xi), c_pul(a_sgn), c_pul(a_abs)])


def penalty(c_value, c_star):
    """Hinge violation max(0, C - C*)."""
    return np.maximum(0.0, np.asarray(c_value, dtype=float) - np.asarray(c_star, dtype=float))


def augmented_lagrangian(l_task: float, penalties: np.ndarray, kappa: np.ndarray,
                         tau: np.ndarray) -> float:
    """L_task + sum_m (-kappa_m P_m + tau_m P_m^2 / 2)."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("penalty coefficients tau must be positive")
    p = np.asarray(penalties, dtype=float)
    return float(l_task + np.sum(-np.asarray(kappa, dtype=float) * p + 0.5 * tau * p * p))


# ---------------------------------------------------------------------------
# adjoint seeds: d(task loss)/d(state after step n)
# ---------------------------------------------------------------------------


@dataclass
class LossSeeder:
    """Adds the per-step loss cotangents to the backward sweep accumulators.

    Each method seeds the contribution of the state reached after a step;
    ``mbar_const`` collects the mass dependence of the reductions, which is
    chained into gamma once at the end of the sweep.
    """

    task: TaskSpec
    dt: float
    total_time: float
    dim: int
    mass: np.ndarray
    tip_mask: np.ndarray | None = None
    tip0: np.ndarray | None = None
    mbar_const: np.ndarray = field(default=None)

    def __post_init__(self):
        self.M = float(self.mass.sum())
        self.mbar_const = np.zeros_like(self.mass)
        self.axis = np.zeros(self.dim)
        if self.task.kind in ("walker_x", "climber_y"):
            self.axis[self.task.axis_index] = 1.0
        self.ey = np.zeros(3)
        self.ey[1] = 1.0

    def seed(self, x: np.ndarray, v: np.ndarray, xbar: np.ndarray, vbar: np.ndarray):
        kind = self.task.kind
        if kind in ("walker_x", "climber_y"):
            vbar += (-self.dt / self.M) * self.mass[:, None] * self.axis[None, :]
            self.mbar_const += (-self.dt / self.M) * ((v - mass_avg_velocity(v, self.mass)) @ self.axis)
        elif kind == "balancer_tip":
            c = x[self.tip_mask].mean(axis=0)
            delta = c - self.tip0
            norm = np.linalg.norm(delta)
            if norm > 1e-30:
                xbar[self.tip_mask] += (self.dt / self.total_time) * delta / (norm * self.tip_mask.sum())
        else:  # rotator_y
            xg = center_of_gravity(x, self.mass)
            vg = mass_avg_velocity(v, self.mass)
            r = x - xg
            w = v - vg
            num = self.mass @ np.cross(r, w)[:, 1]
            den = self.mass @ (r * r).sum(axis=1)
            lbar = self.dt
            num_bar = lbar / den
            den_bar = -lbar * num / (den * den)
            # num = sum m r . (w x e); den = sum m |r|^2
            w_cross_e = np.cross(w, np.broadcast_to(self.ey, w.shape))
            e_cross_r = np.cross(np.broadcast_to(self.ey, r.shape), r)
            rbar = num_bar * self.mass[:, None] * w_cross_e + den_bar * 2.0 * self.mass[:, None] * r
            wbar = num_bar * self.mass[:, None] * e_cross_r
            xbar += rbar - (self.mass[:, None] / self.M) * rbar.sum(axis=0)
            vbar += wbar - (self.mass[:, None] / self.M) * wbar.sum(axis=0)
            self.mbar_const += (
                num_bar * np.cross(r, w)[:, 1] + den_bar * (r * r).sum(axis=1)
                - (rbar.sum(axis=0) @ r.T) / self.M - (wbar.sum(axis=0) @ w.T) / self.M
            )
