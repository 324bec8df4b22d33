import numpy as np
import pytest

from sb4d.design import DesignVariables, PulseParams, build_filter
from sb4d.losses import TaskSpec
from sb4d.adjoint import SimProblem
from sb4d.sim import (
    BoundaryArrays,
    BoundarySpec,
    MaterialConstants,
    SimContext,
    SimParams,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_problem(dim=2, n_side=4, n_steps=30, n_act=2, n_pul=5, task="walker_x",
                 boundary_mode="no_slip", mu_f=0.5, grid_n=32, dx=0.01, seed=0):
    """Small hand-rolled scenario used across gradient/adjoint tests."""
    mat = MaterialConstants()
    dt = 1e-4
    params = SimParams(dim=dim, dx=dx, dt=dt, total_time=n_steps * dt,
                       grid_nodes=(grid_n,) * dim,
                       gravity=(0.0, -9.8) if dim == 2 else (0.0, -9.8, 0.0))
    floor = BoundarySpec(name="floor", mode=boundary_mode,
                         normal=(0.0, 1.0) if dim == 2 else (0.0, 1.0, 0.0),
                         node_lo=(0,) * dim,
                         node_hi=(grid_n - 1, 3) if dim == 2 else (grid_n - 1, 3, grid_n - 1),
                         mu_f=mu_f)
    barr = BoundaryArrays.from_specs([floor], params)
    ctx = SimContext(params=params, mat=mat, boundaries=barr)
    h = 0.5 * dx
    origin = [0.1, 0.04] if dim == 2 else [0.1, 0.04, 0.1]
    axes = [origin[a] + (np.arange(n_side) + 0.5) * h for a in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pos = np.stack([m.ravel() for m in mesh], axis=1)
    filt = build_filter(pos, radius=1.5 * dx, power=2.0)
    sigma = 0.0005
    pulse = PulseParams(a_pul=0.2, sigma_pul=sigma, dt_pul=params.total_time / n_pul,
                        n_pul=n_pul, a_act=1e4)
    ymax = pos[:, 1].max()
    tip_mask = pos[:, 1] > ymax - 0.25 * h
    return SimProblem(ctx=ctx, positions0=pos, filter=filt, pulse=pulse,
                      task=TaskSpec(kind=task, n_act=n_act), mat=mat,
                      beta_sig=4.0, beta_soft=4.0, vol0=h ** dim, tip_mask=tip_mask)


def random_variables(problem, rng, scale=0.3) -> DesignVariables:
    n_par = problem.n_par
    n_act = problem.task.n_act
    n_pul = problem.pulse.n_pul
    v = DesignVariables.initial(n_par, n_act, n_pul, rng)
    v.phi[:] = rng.normal(0.0, scale, n_par).clip(-1, 1)
    v.Z[:] = rng.normal(0.0, scale, v.Z.shape)
    return v
