import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sb4d.losses import (
    LossSeeder,
    TaskSpec,
    augmented_lagrangian,
    c_act,
    c_mat,
    c_pul,
    center_of_gravity,
    loss_balancer,
    loss_locomotion,
    loss_rotator,
    mass_avg_velocity,
    penalty,
)
from sb4d.sim.forward import Trajectory


def make_traj(dt, vg=None, tip=None, rot=None, xg=None, dim=2, mass=1.0):
    n = (len(vg) if vg is not None else len(tip) if tip is not None else len(rot)) - 1
    return Trajectory(dt=dt, dim=dim, times=np.arange(n + 1) * dt,
                      vg=np.zeros((n + 1, dim)) if vg is None else np.asarray(vg, dtype=float),
                      xg=np.zeros((n + 1, dim)) if xg is None else np.asarray(xg, dtype=float),
                      tip=None if tip is None else np.asarray(tip, dtype=float),
                      rot=None if rot is None else np.asarray(rot, dtype=float),
                      contact=None, frames=[], frame_stride=0, total_mass=mass)


class TestReductions:
    def test_mass_avg_velocity(self):
        v = np.array([[4.0, 0.0], [0.0, 0.0]])
        m = np.array([1.0, 3.0])
        np.testing.assert_allclose(mass_avg_velocity(v, m), [1.0, 0.0])
        np.testing.assert_allclose(mass_avg_velocity(np.full((5, 2), 2.5), np.ones(5)), 2.5)
        opp = np.array([[1.0, 0.0], [-1.0, 0.0]])
        np.testing.assert_allclose(mass_avg_velocity(opp, np.ones(2)), 0.0, atol=1e-15)

    def test_center_of_gravity(self):
        x = np.array([[0.0, 0.0], [1.0, 0.0]])
        np.testing.assert_allclose(center_of_gravity(x, np.ones(2)), [0.5, 0.0])
        np.testing.assert_allclose(center_of_gravity(x[:1], np.ones(1)), x[0])

    def test_zero_mass_rejected(self):
        with pytest.raises(ValueError):
            mass_avg_velocity(np.zeros((2, 2)), np.zeros(2))
        with pytest.raises(ValueError):
            center_of_gravity(np.zeros((2, 2)), np.zeros(2))


class TestTaskLosses:
    def test_locomotion_constant_velocity(self):
        n = 500
        dt = 1e-3
        vg = np.zeros((n + 1, 2)); vg[:, 0] = 1.0
        traj = make_traj(dt, vg=vg)
        assert loss_locomotion(traj, np.array([1.0, 0.0])) == pytest.approx(-0.5, rel=1e-12)
        # orthogonal motion contributes nothing
        assert loss_locomotion(traj, np.array([0.0, 1.0])) == 0.0

    def test_balancer_values(self):
        n, dt = 100, 1e-3
        tip = np.zeros((n + 1, 2))
        traj = make_traj(dt, tip=tip)
        assert loss_balancer(traj, total_time=n * dt) == 0.0
        tip = np.zeros((n + 1, 2))
        tip[1:, 0] = 0.3; tip[1:, 1] = 0.4  # constant offset 0.5 after t=0
        traj = make_traj(dt, tip=tip)
        assert loss_balancer(traj, total_time=n * dt) == pytest.approx(0.5, rel=1e-12)

    def test_rotator_rest_and_rigid(self):
        n, dt = 200, 1e-3
        traj = make_traj(dt, rot=np.zeros(n + 1), dim=3)
        assert loss_rotator(traj) == 0.0

        # oracle: rigid rotation of a y-flat body about +y at omega -> omega*T
        omega = 3.0
        rng = np.random.default_rng(4)
        pts = rng.normal(0, 1, (40, 3)); pts[:, 1] = 0.0
        mass = rng.uniform(0.5, 2.0, 40)
        rot = np.zeros(n + 1)
        for k in range(1, n + 1):
            a = omega * k * dt
            R = np.array([[np.cos(a), 0, np.sin(a)], [0, 1, 0], [-np.sin(a), 0, np.cos(a)]])
            x = pts @ R.T
            v = np.cross(np.array([0.0, omega, 0.0]), x)
            xg = mass @ x / mass.sum()
            vgv = mass @ v / mass.sum()
            num = mass @ np.cross(x - xg, v - vgv)[:, 1]
            den = mass @ ((x - xg) ** 2).sum(axis=1)
            rot[k] = num / den
        traj = make_traj(dt, rot=rot, dim=3)
        assert loss_rotator(traj) == pytest.approx(omega * n * dt, rel=1e-12)


class TestConstraints:
    def test_paper_extremes(self):
        assert c_mat(np.full(100, 0.5)) == 0.25
        assert c_mat(np.concatenate([np.zeros(40), np.ones(60)])) == 0.0
        assert c_act(np.full((5, 33), 0.2)) == pytest.approx(0.8, rel=1e-14)
        onehot = np.zeros((5, 10)); onehot[2] = 1.0
        assert c_act(onehot) == 0.0
        assert c_pul(np.zeros((7, 4))) == 1.0
        assert c_pul(np.sign(np.random.default_rng(0).normal(size=(7, 4)))) == 0.0

    def test_hand_values(self):
        assert c_mat(np.array([0.25, 0.75])) == pytest.approx(0.1875)
        col = np.zeros((5, 1)); col[0, 0] = 0.5; col[1, 0] = 0.5
        assert c_act(col) == pytest.approx(0.5)
        assert c_pul(np.array([[0.5]])) == pytest.approx(0.75)

    @given(arrays(np.float64, 30, elements=st.floats(0, 1)))
    @settings(max_examples=50, deadline=None)
    def test_c_mat_bounds(self, g):
        assert 0.0 <= c_mat(g) <= 0.25 + 1e-15

    @given(arrays(np.float64, (5, 8), elements=st.floats(0.001, 10)))
    @settings(max_examples=50, deadline=None)
    def test_c_act_bounds_on_simplex(self, raw):
        xi = raw / raw.sum(axis=0, keepdims=True)
        n_act = xi.shape[0] - 1
        assert -1e-12 <= c_act(xi) <= n_act / (n_act + 1) + 1e-12

    @given(arrays(np.float64, (6, 3), elements=st.floats(-1, 1)))
    @settings(max_examples=50, deadline=None)
    def test_c_pul_bounds(self, a):
        assert -1e-15 <= c_pul(a) <= 1.0 + 1e-15

    def test_strictly_positive_off_binary(self):
        assert c_mat(np.array([0.0, 1.0, 0.999])) > 0
        assert c_pul(np.array([[1.0, -1.0, 0.998]])) > 0


class TestPenaltyAndAL:
    def test_penalty_branches(self):
        assert penalty(0.2, 0.25) == 0.0
        assert penalty(0.3, 0.25) == pytest.approx(0.05)
        assert penalty(0.25, 0.25) == 0.0

    def test_al_values(self):
        assert augmented_lagrangian(1.5, np.zeros(3), np.zeros(3), np.ones(3)) == 1.5
        assert augmented_lagrangian(0.0, np.array([0.1]), np.array([0.0]),
                                    np.array([2.0])) == pytest.approx(0.01)
        assert augmented_lagrangian(0.0, np.array([0.1]), np.array([1.0]),
                                    np.array([0.001])) == pytest.approx(-0.099995)
        with pytest.raises(ValueError):
            augmented_lagrangian(0.0, np.array([0.1]), np.array([0.0]), np.array([0.0]))

    def test_al_derivative_in_penalty(self):
        # d(AL)/dP = -kappa + tau P, checked by central differences
        kappa, tau, p0 = np.array([0.7]), np.array([3.0]), 0.2
        h = 1e-6
        fd = (augmented_lagrangian(0, np.array([p0 + h]), kappa, tau)
              - augmented_lagrangian(0, np.array([p0 - h]), kappa, tau)) / (2 * h)
        assert fd == pytest.approx(-kappa[0] + tau[0] * p0, rel=1e-8)


class TestLossSeeder:
    """Seeds must be the exact gradients of the per-step loss terms."""

    def _fd_check(self, kind, dim, use_tip=False):
        rng = np.random.default_rng(11)
        n = 12
        mass = rng.uniform(0.5, 2.0, n)
        x = rng.normal(0, 1, (n, dim))
        v = rng.normal(0, 1, (n, dim))
        dt, total_time = 1e-3, 0.1
        tip_mask = np.zeros(n, dtype=bool)
        tip_mask[:4] = True
        tip0 = rng.normal(0, 1, dim)
        task = TaskSpec(kind=kind, n_act=2)
        seeder = LossSeeder(task=task, dt=dt, total_time=total_time, dim=dim, mass=mass,
                            tip_mask=tip_mask if use_tip else None,
                            tip0=tip0 if use_tip else None)
        xbar = np.zeros_like(x); vbar = np.zeros_like(v)
        seeder.seed(x, v, xbar, vbar)

        def term(xx, vv, mm):
            if kind in ("walker_x", "climber_y"):
                axis = np.zeros(dim); axis[task.axis_index] = 1.0
                return -dt * (mm @ vv @ axis) / mm.sum()
            if kind == "balancer_tip":
                return dt / total_time * np.linalg.norm(xx[tip_mask].mean(axis=0) - tip0)
            xg = mm @ xx / mm.sum(); vgv = mm @ vv / mm.sum()
            num = mm @ np.cross(xx - xg, vv - vgv)[:, 1]
            den = mm @ ((xx - xg) ** 2).sum(axis=1)
            return dt * num / den

        h = 1e-6
        for arr, bar in ((x, xbar), (v, vbar)):
            for (i, a) in [(0, 0), (3, dim - 1), (7, 0)]:
                arr[i, a] += h; f1 = term(x, v, mass)
                arr[i, a] -= 2 * h; f2 = term(x, v, mass)
                arr[i, a] += h
                assert bar[i, a] == pytest.approx((f1 - f2) / (2 * h), rel=2e-5, abs=1e-12)
        for i in (0, 5):
            m2 = mass.copy(); m2[i] += h; f1 = term(x, v, m2)
            m2[i] -= 2 * h; f2 = term(x, v, m2)
            assert seeder.mbar_const[i] == pytest.approx((f1 - f2) / (2 * h), rel=2e-5, abs=1e-12)

    def test_walker_seed(self):
        self._fd_check("walker_x", 2)

    def test_climber_seed(self):
        self._fd_check("climber_y", 2)

    def test_balancer_seed(self):
        self._fd_check("balancer_tip", 2, use_tip=True)

    def test_rotator_seed(self):
        self._fd_check("rotator_y", 3)


def test_task_spec_default_tolerances():
    t = TaskSpec(kind="walker_x", n_act=4)
    np.testing.assert_allclose(t.tolerances(), [0.0125, 0.04, 0.01, 0.01])
    t2 = TaskSpec(kind="walker_x", n_act=2)
    assert t2.c_star_act == pytest.approx(0.05 * 2 / 3)
