"""Acceptance suite: one test per release criterion, at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one line per
criterion. The desk-scale walker optimization (and the post-processing check
that reuses its result) is marked slow; everything else completes in seconds.
"""

import json
import time

import numpy as np
import pytest

import test_adjoint_dot as dot
from conftest import make_problem, random_variables
from sb4d.adjoint import CheckpointPlan, finite_diff_gradient, gradient, relative_error
from sb4d.cli import run_cli
from sb4d.losses import c_act, c_mat, c_pul
from sb4d.optimizer import OptimizerOptions, al_minimize, fresh_state, load_checkpoint
from sb4d.scenario import build_problem, initial_variables, load_config
from sb4d.sim import (
    BoundaryArrays,
    BoundarySpec,
    MaterialConstants,
    ParticleState,
    SimContext,
    SimParams,
    cfl_max_dt,
    run_engine,
)


def report(name: str, ok: bool, detail: str):
    print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


def test_cfl_reproduction():
    mat = MaterialConstants(rho0=1000.0, E0=1e5, nu0=0.4)
    params = SimParams(dim=2, dx=0.01, dt=1e-4, total_time=0.01,
                       grid_nodes=(32, 32), gravity=(0.0, -9.8))
    got = cfl_max_dt(params, mat)
    ok = abs(got - 6.8e-4) / 6.8e-4 < 0.02
    report("cfl-reproduction", ok, f"max dt {got:.4e} s vs 6.8e-4 s")


def test_constraint_extremes():
    v_mat = c_mat(np.full(640, 0.5))
    v_act = c_act(np.full((5, 123), 0.2))  # uniform with n_act = 4
    v_pul = c_pul(np.zeros((25, 4)))
    ok = v_mat == 0.25 and v_act == pytest.approx(0.8, abs=1e-15) and v_pul == 1.0
    report("constraint-extremes", ok, f"c_mat {v_mat}, c_act {v_act}, c_pul {v_pul}")


def test_kernel_adjoint_dot_products():
    t0 = time.time()
    for dim in (2, 3):
        dot.test_p2g_dot_product(dim)
        dot.test_g2p_dot_product(dim)
        dot.test_stress_model_dot_products(dim)
        for mode in (0, 1, 2):
            dot.test_grid_update_dot_product(dim, mode)
    dot.test_design_map_dot_products(np.random.default_rng(2024))
    elapsed = time.time() - t0
    report("kernel-adjoint-dot-products", elapsed < 60.0,
           f"100 pairs per kernel, rel err < 1e-10, {elapsed:.1f} s")


def test_end_to_end_gradient_check():
    t0 = time.time()
    config = load_config("tiny2d")  # 8x8 particles, 32^2 grid, 50 steps, 2 actuators
    problem = build_problem(config, deterministic=True)
    rng = np.random.default_rng(0)
    vars = initial_variables(config, problem.n_par, rng)
    kappa = np.zeros(4)
    tau = np.full(4, config.optimizer.tau0)
    res = gradient(problem, vars, kappa, tau)

    blocks = vars.blocks()
    names = sorted(blocks)
    samples = []
    for k in range(50):
        name = names[k % len(names)]
        flat = rng.integers(0, blocks[name].size)
        samples.append((name, np.unravel_index(flat, blocks[name].shape)))
    fds = finite_diff_gradient(problem, vars, kappa, tau, samples, h=1e-5)
    crossings = sum(s.branch_crossing for s in fds)
    worst = 0.0
    for s in fds:
        if s.branch_crossing:
            continue
        worst = max(worst, relative_error(float(res.blocks()[s.block][s.index]), s.fd))
    elapsed = time.time() - t0
    ok = worst < 1e-3 and elapsed < 300.0
    report("end-to-end-gradient-check", ok,
           f"50 entries, worst smooth rel err {worst:.2e}, "
           f"{crossings} branch-crossing excluded, {elapsed:.0f} s")


def test_checkpoint_equivalence():
    t0 = time.time()
    config = load_config("tiny2d")
    problem = build_problem(config, deterministic=True)
    rng = np.random.default_rng(0)
    vars = initial_variables(config, problem.n_par, rng)
    vars.phi[:] = rng.normal(0, 0.3, problem.n_par).clip(-1, 1)
    kappa, tau = np.zeros(4), np.full(4, 0.001)
    n = config.sim.n_steps
    grads = [gradient(problem, vars, kappa, tau, CheckpointPlan(n_steps=n, segment_len=s))
             for s in (1, 7, n)]
    identical = all(
        np.array_equal(grads[0].blocks()[b], g.blocks()[b])
        for g in grads[1:] for b in ("phi", "Z", "A_sgn", "A_abs"))
    elapsed = time.time() - t0
    report("checkpoint-equivalence", identical and elapsed < 300.0,
           f"S_t in (1, 7, {n}) bit-identical, {elapsed:.0f} s")


def test_physics_sanity():
    t0 = time.time()
    # free fall: COM velocity matches n dt g to 1e-10
    params = SimParams(dim=2, dx=0.02, dt=2e-4, total_time=0.02,
                       grid_nodes=(51, 51), gravity=(0.0, -9.8))
    ctx = SimContext(params=params, mat=MaterialConstants(),
                     boundaries=BoundaryArrays.from_specs([], params))
    h = 0.5 * params.dx
    axes = [0.4 + (np.arange(10) + 0.5) * h, 0.5 + (np.arange(10) + 0.5) * h]
    mesh = np.meshgrid(*axes, indexing="ij")
    st = ParticleState.rest(np.stack([m.ravel() for m in mesh], axis=1), vol0=h ** 2)
    st.mass[:] = 1000.0 * h ** 2
    lam = np.full(st.n, ctx.mat.lambda0)
    mu = np.full(st.n, ctx.mat.mu0)
    uz = np.zeros(st.n)
    traj, _ = run_engine(ctx, st, lam, mu, lambda k: uz)
    n = params.n_steps
    fall_err = abs(traj.vg[-1][1] - (-9.8 * n * params.dt))

    # resting block on a no-slip floor: lateral drift and weight balance
    params2 = SimParams(dim=2, dx=0.02, dt=2e-4, total_time=0.5,
                        grid_nodes=(51, 51), gravity=(0.0, -9.8))
    floor = BoundarySpec(name="floor", mode="no_slip", normal=(0.0, 1.0),
                         node_lo=(0, 0), node_hi=(50, 2))
    ctx2 = SimContext(params=params2, mat=MaterialConstants(),
                      boundaries=BoundaryArrays.from_specs([floor], params2))
    axes = [0.4 + (np.arange(20) + 0.5) * h, 0.04 + (np.arange(20) + 0.5) * h]
    mesh = np.meshgrid(*axes, indexing="ij")
    st2 = ParticleState.rest(np.stack([m.ravel() for m in mesh], axis=1), vol0=h ** 2)
    st2.mass[:] = 1000.0 * h ** 2
    lam2 = np.full(st2.n, ctx2.mat.lambda0)
    mu2 = np.full(st2.n, ctx2.mat.mu0)
    uz2 = np.zeros(st2.n)
    traj2, _ = run_engine(ctx2, st2, lam2, mu2, lambda k: uz2, record_contact=True)
    drift = abs(traj2.xg[-1][0] - traj2.xg[0][0])
    weight = 9.8 * st2.mass.sum()
    fy = traj2.contact[1:, 0, 1].mean()
    force_err = abs(fy - weight) / weight

    elapsed = time.time() - t0
    ok = fall_err < 1e-10 and drift < 1e-4 and force_err < 0.02 and elapsed < 120.0
    report("physics-sanity", ok,
           f"free-fall err {fall_err:.1e}, drift {drift:.1e} m, "
           f"contact-force err {force_err:.2%}, {elapsed:.0f} s")


def test_toy_constrained_optimization():
    t0 = time.time()
    opts = OptimizerOptions(tau0=0.001, c_update=0.25, a_multiplier=10.0,
                            step_size=0.01, s_max=5000)
    tol = np.array([0.05])

    def evaluate(blocks, kappa, tau):
        p = blocks["phi"][0]
        c = p * (1 - p)
        pen = max(0.0, c - tol[0])
        al = p * p - kappa[0] * pen + 0.5 * tau[0] * pen ** 2
        g = 2 * p + ((-kappa[0] + tau[0] * pen) * (1 - 2 * p) if c > tol[0] else 0.0)
        return al, {"phi": np.array([g])}, (p * p, c)

    def violations(blocks):
        p = blocks["phi"][0]
        return np.maximum(0.0, np.array([p * (1 - p)]) - tol)

    state = fresh_state({"phi": np.array([0.5])}, m_count=1, opts=opts)
    res = al_minimize(evaluate, violations, state, opts)
    p = float(res.blocks["phi"][0])
    pen = float(violations(res.blocks)[0])
    elapsed = time.time() - t0
    ok = res.feasible and pen == 0.0 and abs(p) <= 0.06 and elapsed < 60.0
    report("toy-constrained-optimization", ok,
           f"p* = {p:.4g}, penalty {pen}, {res.iterations} iterations, {elapsed:.1f} s")


@pytest.fixture(scope="module")
def mini_walker_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance") / "mini_walker"
    t0 = time.time()
    rc = run_cli(["optimize", "--config", "mini_walker2d", "--out", str(out),
                  "--iters", "300", "--deterministic"])
    return out, rc, time.time() - t0


@pytest.mark.slow
def test_desk_scale_mini_walker(mini_walker_run):
    from sb4d.design import DesignVariables
    from sb4d.losses import constraint_values, task_loss

    out, rc, elapsed = mini_walker_run
    state, _ = load_checkpoint(out / "checkpoint.sb4d")
    config = load_config("mini_walker2d")
    problem = build_problem(config, deterministic=True)
    tol = problem.task.tolerances()
    # evaluate objective and constraints at the returned (final) variables
    final = DesignVariables(**state.blocks)
    derived, traj, _ = problem.forward(final)
    l_task = task_loss(traj, problem.task, config.sim.total_time)
    c_values = constraint_values(derived.gamma, derived.xi, final.A_sgn, final.A_abs)
    ok = (l_task <= -0.02 and np.all(c_values <= tol + 1e-12)
          and rc == 0 and elapsed < 3600.0)
    report("desk-scale-mini-walker", ok,
           f"objective {l_task:.4f} m (<= -0.02), {state.s} iterations, "
           f"constraints {np.round(c_values, 4).tolist()} vs tolerances {tol.tolist()}, "
           f"exit {rc}, {elapsed / 60:.1f} min")


@pytest.mark.slow
def test_postprocess_fidelity(mini_walker_run):
    out, _, _ = mini_walker_run
    rc = run_cli(["postprocess", "--run", str(out), "--deterministic"])
    assert rc == 0
    rep = json.loads((out / "postprocess" / "objective.json").read_text())
    l_opt = rep["task_loss_optimized"]
    l_bin = rep["task_loss_binarized"]
    ok = abs(l_bin) >= 0.5 * abs(l_opt) and np.sign(l_bin) == np.sign(l_opt)
    report("postprocess-fidelity", ok,
           f"binarized {l_bin:.4f} vs optimized {l_opt:.4f} "
           f"({abs(l_bin) / max(abs(l_opt), 1e-30):.0%} retained), "
           f"constraints {rep['constraints_binarized']}")
