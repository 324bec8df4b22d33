"""Command-line interface: simulate / optimize / gradcheck / export / postprocess.

Exit codes: 0 success, 1 usage error, 2 config error, 3 numerical
instability, 4 optimization hit the iteration cap with violated constraints.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io as sbio
from .adjoint import CheckpointPlan, SimProblem, finite_diff_gradient, gradient, relative_error
from .design import DesignVariables, binarize_postprocess, pulse_binary_decomposition
from .errors import ConfigError, SimulationError, UsageError
from .losses import constraint_values, penalty, task_loss
from .optimizer import al_minimize, fresh_state, load_checkpoint, save_checkpoint
from .scenario import (
    ScenarioConfig,
    build_problem,
    initial_variables,
    load_config,
    make_hooks,
    save_config,
)
from .sim.forward import run_engine
from .sim.state import ParticleState


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads inside kernels")
    p.add_argument("--deterministic", action="store_true",
                   help="ordered scatter reduction (bit-reproducible runs)")
    p.add_argument("--segment-len", type=int, default=0,
                   help="checkpoint segment length (default: round(sqrt(n_steps)))")
    return p


def build_parser() -> _Parser:
    parser = _Parser(prog="sb4d", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    par = _parent()

    p = sub.add_parser("simulate", parents=[par], help="forward simulation only")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--signals", default=None, help="CSV overriding the actuation signals")
    p.add_argument("--checkpoint", default=None, help="take design variables from a checkpoint")

    p = sub.add_parser("optimize", parents=[par], help="run the constrained optimization")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None)
    p.add_argument("--iters", type=int, default=None, help="override the iteration cap")

    p = sub.add_parser("gradcheck", parents=[par], help="adjoint vs finite differences")
    p.add_argument("--config", required=True)
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--out", default=".")

    p = sub.add_parser("export", parents=[par], help="re-emit artifacts from a run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--what", required=True,
                   choices=["layout", "signals", "trajectory", "convergence"])

    p = sub.add_parser("postprocess", parents=[par], help="binarize a run and re-simulate")
    p.add_argument("--run", required=True)
    return parser


def _apply_globals(args):
    import numba

    n = max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)


def _load(args) -> ScenarioConfig:
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    return config


def _variables(config, problem, checkpoint_path=None) -> DesignVariables:
    if checkpoint_path:
        state, _ = load_checkpoint(checkpoint_path)
        return DesignVariables(**{k: v.copy() for k, v in state.blocks.items()})
    rng = np.random.default_rng(config.seed)
    return initial_variables(config, problem.n_par, rng)


def _write_run_artifacts(out: Path, config: ScenarioConfig, problem: SimProblem,
                         derived, traj, positions):
    out.mkdir(parents=True, exist_ok=True)
    save_config(config, out / "config.toml")
    sbio.write_layout_csv(out / "layout.csv", positions, derived.gamma, derived.xi)
    sbio.write_signals_csv(out / "signals.csv", config.sim.dt, derived.u_hat)
    sbio.write_trajectory(out, traj, config.sim.dx, config.sim.total_time)
    sbio.write_com_csv(out / "com.csv", traj.times, traj.xg)
    if traj.contact is not None:
        for b, spec in enumerate(config.boundaries):
            sbio.write_force_csv(out / f"contact_{spec.name}.csv",
                                 traj.times, traj.contact[:, b, :])


def cmd_simulate(args) -> int:
    config = _load(args)
    problem = build_problem(config, deterministic=args.deterministic)
    vars = _variables(config, problem, args.checkpoint)
    derived = problem.derive(vars)
    signals = args.signals or config.signal_override
    if signals:
        times, table = sbio.read_signals_csv(signals)
        steps = np.arange(config.sim.n_steps + 1) * config.sim.dt
        n_act = derived.u_hat.shape[0] - 1
        if table.shape[0] != n_act:
            raise ConfigError(f"signal override has {table.shape[0]} actuators, expected {n_act}")
        for j in range(n_act):
            derived.u_hat[j] = np.interp(steps, times, table[j])
    derived, traj, _ = problem.forward(vars, frame_stride=config.frame_stride,
                                       record_contact=True, derived=derived)
    out = Path(args.out)
    _write_run_artifacts(out, config, problem, derived, traj, problem.positions0)
    l_task = task_loss(traj, problem.task, config.sim.total_time)
    print(f"simulate: {config.name}: task loss {l_task:.6g}, "
          f"{len(traj.frames)} frames -> {out}")
    return 0


def cmd_optimize(args) -> int:
    config = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = build_problem(config, deterministic=args.deterministic)
    hooks = make_hooks(config, problem.ctx)
    plan = CheckpointPlan(n_steps=config.sim.n_steps, segment_len=args.segment_len)
    opts = config.optimizer
    tol = problem.task.tolerances()

    if args.resume:
        state, _ = load_checkpoint(args.resume)
    else:
        rng = np.random.default_rng(config.seed)
        vars0 = initial_variables(config, problem.n_par, rng)
        state = fresh_state(vars0.blocks(), m_count=4, opts=opts,
                            rng_state=rng.bit_generator.state)

    def evaluate(blocks, kappa, tau):
        v = DesignVariables(**blocks)
        res = gradient(problem, v, kappa, tau, plan)
        return res.loss, res.blocks(), (res.task_loss, *res.constraint_values)

    def violations(blocks):
        v = DesignVariables(**blocks)
        derived = problem.derive(v)
        return penalty(constraint_values(derived.gamma, derived.xi, v.A_sgn, v.A_abs), tol)

    def pre_iteration(s):
        for h in hooks:
            h(s)

    def post_iteration(s):
        save_checkpoint(out / "checkpoint.sb4d", state, extra={"config_name": config.name})

    result = al_minimize(evaluate, violations, state, opts,
                         pre_iteration=pre_iteration, post_iteration=post_iteration,
                         s_max=args.iters)
    sbio.write_convergence_csv(out / "convergence.csv", result.log)
    save_checkpoint(out / "checkpoint.sb4d", result.state, extra={"config_name": config.name})

    final = DesignVariables(**result.blocks)
    for h in hooks:  # final forward uses the fully ramped schedule
        h(max(result.iterations, 1))
    derived, traj, _ = problem.forward(final, frame_stride=config.frame_stride,
                                       record_contact=True)
    _write_run_artifacts(out, config, problem, derived, traj, problem.positions0)
    l_task = task_loss(traj, problem.task, config.sim.total_time)
    print(f"optimize: {config.name}: {result.iterations} iterations, "
          f"task loss {l_task:.6g}, feasible={result.feasible} -> {out}")
    return 0 if result.feasible else 4


def cmd_gradcheck(args) -> int:
    config = _load(args)
    problem = build_problem(config, deterministic=True)
    rng = np.random.default_rng(config.seed)
    vars = initial_variables(config, problem.n_par, rng)
    kappa = np.zeros(4)
    tau = np.full(4, config.optimizer.tau0)
    plan = CheckpointPlan(n_steps=config.sim.n_steps, segment_len=args.segment_len)
    res = gradient(problem, vars, kappa, tau, plan)

    blocks = vars.blocks()
    names = sorted(blocks)
    samples = []
    for k in range(args.samples):
        name = names[k % len(names)]
        flat = rng.integers(0, blocks[name].size)
        samples.append((name, np.unravel_index(flat, blocks[name].shape)))
    fds = finite_diff_gradient(problem, vars, kappa, tau, samples, h=args.h)

    rows = []
    ok = True
    for s in fds:
        analytic = float(res.blocks()[s.block][s.index])
        rel = relative_error(analytic, s.fd)
        if not s.branch_crossing and rel >= 1e-3:
            ok = False
        rows.append({"var": s.block, "index": tuple(int(i) for i in s.index),
                     "analytic": analytic, "fd": s.fd, "rel_err": rel,
                     "branch_flag": s.branch_crossing})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sbio.write_gradcheck_csv(out / "gradcheck.csv", rows)
    n_cross = sum(r["branch_flag"] for r in rows)
    worst = max((r["rel_err"] for r in rows if not r["branch_flag"]), default=0.0)
    print(f"gradcheck: {len(rows)} samples, {n_cross} branch-crossing, "
          f"worst smooth rel err {worst:.3e} -> {out / 'gradcheck.csv'}")
    return 0 if ok else 3


def cmd_export(args) -> int:
    run = Path(args.run)
    config = load_config(run / "config.toml")
    if args.what == "trajectory":
        meta, frames = sbio.read_trajectory(run)
        sbio.export_trajectory_csv(run / "trajectory_export.csv", meta, frames)
        print(f"export: wrote {run / 'trajectory_export.csv'}")
        return 0
    state, _ = load_checkpoint(run / "checkpoint.sb4d")
    if args.what == "convergence":
        sbio.write_convergence_csv(run / "convergence.csv", state.log)
        print(f"export: wrote {run / 'convergence.csv'}")
        return 0
    problem = build_problem(config, deterministic=True)
    vars = DesignVariables(**state.blocks)
    derived = problem.derive(vars)
    if args.what == "layout":
        sbio.write_layout_csv(run / "layout.csv", problem.positions0, derived.gamma, derived.xi)
        print(f"export: wrote {run / 'layout.csv'}")
    else:
        sbio.write_signals_csv(run / "signals.csv", config.sim.dt, derived.u_hat)
        print(f"export: wrote {run / 'signals.csv'}")
    return 0


def cmd_postprocess(args) -> int:
    run = Path(args.run)
    config = load_config(run / "config.toml")
    problem = build_problem(config, deterministic=args.deterministic)
    state, _ = load_checkpoint(run / "checkpoint.sb4d")
    vars = DesignVariables(**state.blocks)

    derived = problem.derive(vars)
    _, traj_opt, _ = problem.forward(vars, derived=derived)
    loss_opt = task_loss(traj_opt, problem.task, config.sim.total_time)

    derived_bin, keep = binarize_postprocess(derived, vars, problem.pulse,
                                             config.sim, config.mat, problem.vol0)
    positions = problem.positions0[keep]
    state_bin = ParticleState.rest(positions, problem.vol0)
    state_bin.mass[:] = derived_bin.mass
    tip_mask = None
    if problem.task.kind == "balancer_tip":
        ymax = positions[:, 1].max()
        tip_mask = positions[:, 1] > ymax - 0.25 * 0.5 * config.sim.dx
    traj_bin, _ = run_engine(problem.ctx, state_bin, derived_bin.lam, derived_bin.mu,
                             derived_bin.particle_actuation_at,
                             frame_stride=config.frame_stride, record_contact=True,
                             tip_mask=tip_mask,
                             want_rot=problem.task.kind == "rotator_y")
    loss_bin = task_loss(traj_bin, problem.task, config.sim.total_time)

    out = run / "postprocess"
    out.mkdir(parents=True, exist_ok=True)
    save_config(config, out / "config.toml")
    sbio.write_layout_csv(out / "layout.csv", positions, derived_bin.gamma, derived_bin.xi)
    sbio.write_signals_csv(out / "signals.csv", config.sim.dt, derived_bin.u_hat)
    sbio.write_trajectory(out, traj_bin, config.sim.dx, config.sim.total_time)
    sbio.write_com_csv(out / "com.csv", traj_bin.times, traj_bin.xg)
    if traj_bin.contact is not None:
        for b, spec in enumerate(config.boundaries):
            sbio.write_force_csv(out / f"contact_{spec.name}.csv",
                                 traj_bin.times, traj_bin.contact[:, b, :])
    a_sgn_bin, a_abs_bin = pulse_binary_decomposition(derived_bin.alpha, vars.A_sgn)
    report = {
        "task_loss_optimized": loss_opt,
        "task_loss_binarized": loss_bin,
        "particles_kept": int(keep.sum()),
        "particles_total": int(keep.size),
        "constraints_binarized": list(constraint_values(
            derived_bin.gamma, derived_bin.xi, a_sgn_bin, a_abs_bin)),
    }
    (out / "objective.json").write_text(json.dumps(report, indent=2))
    print(f"postprocess: optimized {loss_opt:.6g} vs binarized {loss_bin:.6g} -> {out}")
    return 0


def run_cli(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_globals(args)
        cmd = {
            "simulate": cmd_simulate,
            "optimize": cmd_optimize,
            "gradcheck": cmd_gradcheck,
            "export": cmd_export,
            "postprocess": cmd_postprocess,
        }[args.command]
        return cmd(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return 3


def main():
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
