import csv
import math

import numpy as np
import pytest

from sb4d.cli import run_cli
from sb4d.design import DesignVariables
from sb4d.errors import ConfigError
from sb4d.io import read_signals_csv, read_trajectory
from sb4d.losses import c_act, c_mat, c_pul
from sb4d.optimizer import load_checkpoint
from sb4d.scenario import (
    PRESET_NAMES,
    build_problem,
    config_from_dict,
    config_to_toml,
    load_config,
    seed_particles,
)

try:
    import tomllib
except ImportError:
    import tomli as tomllib


class TestPresets:
    @pytest.mark.parametrize("name", PRESET_NAMES)
    def test_loads_and_roundtrips(self, name):
        config = load_config(name)
        text = config_to_toml(config)
        again = config_from_dict(tomllib.loads(text))
        assert again == config

    def test_walker2d_constants(self):
        c = load_config("walker2d")
        assert c.sim.total_time == 0.5
        assert c.pulse.a_act == 1e4
        assert c.filter_radius_factor == 1.5 and c.filter_power == 2.0
        assert c.beta_sig == 4.0 and c.beta_soft == 4.0
        assert c.n_act == 4
        assert c.sim.dx == 0.01 and c.sim.dt == 1e-4

    def test_balancer_floor_motion(self):
        c = load_config("balancer2d")
        floor = c.boundaries[0]
        assert floor.mode == "sticky_always"
        # prescribed position 0.03 sin(40 t) means velocity 1.2 cos(40 t)
        v = floor.velocity_at(0.1)
        assert v[0] == pytest.approx(0.03 * 40 * math.cos(4.0))
        assert v[1] == 0.0

    def test_unknown_preset_rejected(self):
        with pytest.raises(ConfigError):
            load_config("not_a_preset")


class TestSeeding:
    def test_walker2d_particle_count(self):
        pos, _ = seed_particles(load_config("walker2d"))
        assert pos.shape == (1600, 2)

    def test_walker3d_particle_count(self):
        pos, _ = seed_particles(load_config("walker3d"))
        assert pos.shape == (8000, 3)

    def test_single_cell_domain(self):
        c = load_config("tiny2d")
        raw = tomllib.loads(config_to_toml(c))
        raw["design_domain"]["size"] = [0.01, 0.01]
        pos, _ = seed_particles(config_from_dict(raw))
        assert pos.shape == (4, 2)

    def test_lattice_spacing_and_margin(self):
        c = load_config("tiny2d")
        pos, tip = seed_particles(c)
        h = 0.5 * c.sim.dx
        diffs = np.unique(np.round(np.diff(np.unique(pos[:, 0])), 12))
        assert diffs == pytest.approx(h)
        assert tip.sum() == 8  # one row of the 8x8 lattice

    def test_border_domain_rejected(self):
        c = load_config("tiny2d")
        raw = tomllib.loads(config_to_toml(c))
        raw["design_domain"]["origin"] = [0.0, 0.04]
        with pytest.raises(ConfigError):
            config_from_dict(raw)


class TestPresetForwardSmoke:
    """A few forward steps of every preset: geometry wiring, not physics."""

    @pytest.mark.parametrize("name,n_steps", [
        ("walker2d", 50), ("climber2d", 50), ("balancer2d", 50),
        ("walker3d", 5), ("rotator3d", 5), ("mini_walker2d", 50),
    ])
    def test_short_forward(self, name, n_steps):
        c = load_config(name)
        raw = tomllib.loads(config_to_toml(c))
        total = n_steps * c.sim.dt
        raw["sim"]["total_time"] = total
        raw["actuation"]["n_pul"] = 2
        raw["actuation"]["dt_pul"] = total / 2
        config = config_from_dict(raw)
        problem = build_problem(config, deterministic=True)
        rng = np.random.default_rng(0)
        vars = DesignVariables.initial(problem.n_par, config.n_act,
                                       config.pulse.n_pul, rng)
        derived, traj, _ = problem.forward(vars)
        assert traj.n_steps == n_steps
        assert np.isfinite(traj.vg).all() and np.isfinite(traj.xg).all()


class TestCli:
    def test_usage_error_exit_1(self, capsys):
        assert run_cli(["simulate"]) == 1

    def test_config_error_exit_2(self, capsys):
        assert run_cli(["simulate", "--config", "/nonexistent.toml", "--out", "/tmp/x"]) == 2

    def test_simulate_writes_artifacts(self, tmp_path):
        out = tmp_path / "sim"
        rc = run_cli(["simulate", "--config", "tiny2d", "--out", str(out), "--deterministic"])
        assert rc == 0
        for f in ("config.toml", "layout.csv", "signals.csv", "trajectory.bin",
                  "trajectory.json", "com.csv", "contact_floor.csv"):
            assert (out / f).exists(), f
        meta, frames = read_trajectory(out)
        assert meta["n_frames"] == len(frames) == 6  # 50 steps, stride 10
        with open(out / "contact_floor.csv") as fh:
            assert fh.readline().strip() == "t,fx,fy"

    def test_simulate_with_signal_override(self, tmp_path):
        base = tmp_path / "base"
        assert run_cli(["simulate", "--config", "tiny2d", "--out", str(base),
                        "--deterministic"]) == 0
        override = tmp_path / "override.csv"
        with open(override, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "u_1", "u_2"])
            for t in np.arange(51) * 1e-4:  # one row per simulation step
                wr.writerow([repr(float(t)), repr(5e3 * math.sin(400 * t)), "0.0"])
        out = tmp_path / "ovr"
        assert run_cli(["simulate", "--config", "tiny2d", "--out", str(out),
                        "--signals", str(override), "--deterministic"]) == 0
        _, table = read_signals_csv(out / "signals.csv")
        t7 = 7 * 1e-4
        assert table[0, 7] == pytest.approx(5e3 * math.sin(400 * t7), rel=1e-6)

    def test_optimize_logs_and_resumes(self, tmp_path):
        full = tmp_path / "full"
        rc = run_cli(["optimize", "--config", "tiny2d", "--out", str(full),
                      "--iters", "8", "--deterministic"])
        assert rc == 4  # iteration cap hit with violations left
        with open(full / "convergence.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["iter", "L_task", "C_mat", "C_act", "C_pul_sgn", "C_pul_abs",
                           "kappa_1", "kappa_2", "kappa_3", "kappa_4",
                           "tau_1", "tau_2", "tau_3", "tau_4"]
        assert len(rows) == 9  # header + 8 iterations

        part = tmp_path / "part"
        run_cli(["optimize", "--config", "tiny2d", "--out", str(part),
                 "--iters", "3", "--deterministic"])
        res = tmp_path / "res"
        run_cli(["optimize", "--config", "tiny2d", "--out", str(res),
                 "--resume", str(part / "checkpoint.sb4d"), "--iters", "8",
                 "--deterministic"])
        a, _ = load_checkpoint(full / "checkpoint.sb4d")
        b, _ = load_checkpoint(res / "checkpoint.sb4d")
        for k in a.blocks:
            np.testing.assert_array_equal(a.blocks[k], b.blocks[k])
        assert a.log == b.log

    def test_gradcheck_report(self, tmp_path):
        out = tmp_path / "gc"
        rc = run_cli(["gradcheck", "--config", "tiny2d", "--samples", "8",
                      "--h", "1e-5", "--out", str(out), "--deterministic"])
        assert rc == 0
        with open(out / "gradcheck.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["var", "index", "analytic", "fd", "rel_err", "branch_flag"]
        assert len(rows) == 9
        smooth = [float(r[4]) for r in rows[1:] if r[5] == "0"]
        assert smooth and max(smooth) < 1e-3

    def test_export_commands(self, tmp_path):
        out = tmp_path / "run"
        run_cli(["optimize", "--config", "tiny2d", "--out", str(out),
                 "--iters", "3", "--deterministic"])
        (out / "layout.csv").unlink()
        assert run_cli(["export", "--run", str(out), "--what", "layout"]) == 0
        assert (out / "layout.csv").exists()
        assert run_cli(["export", "--run", str(out), "--what", "signals"]) == 0
        assert run_cli(["export", "--run", str(out), "--what", "convergence"]) == 0
        assert run_cli(["export", "--run", str(out), "--what", "trajectory"]) == 0
        assert (out / "trajectory_export.csv").exists()

    def test_postprocess_binarizes(self, tmp_path):
        out = tmp_path / "run"
        run_cli(["optimize", "--config", "tiny2d", "--out", str(out),
                 "--iters", "3", "--deterministic"])
        assert run_cli(["postprocess", "--run", str(out), "--deterministic"]) == 0
        pp = out / "postprocess"
        assert (pp / "objective.json").exists()
        config = load_config(pp / "config.toml")
        state, _ = load_checkpoint(out / "checkpoint.sb4d")
        problem = build_problem(config)
        vars = DesignVariables(**state.blocks)
        from sb4d.design import binarize_postprocess, pulse_binary_decomposition
        derived = problem.derive(vars)
        dbin, keep = binarize_postprocess(derived, vars, problem.pulse, config.sim,
                                          config.mat, problem.vol0)
        assert c_mat(dbin.gamma) == 0.0
        assert c_act(dbin.xi) == 0.0
        a_sgn_bin, a_abs_bin = pulse_binary_decomposition(dbin.alpha, vars.A_sgn)
        assert c_pul(a_sgn_bin) == 0.0 and c_pul(a_abs_bin) == 0.0
        import json
        report = json.loads((pp / "objective.json").read_text())
        assert report["constraints_binarized"] == [0.0, 0.0, 0.0, 0.0]

    def test_round_trip_of_written_config(self, tmp_path):
        # every preset round-trips through a file on disk
        for name in PRESET_NAMES:
            c = load_config(name)
            path = tmp_path / f"{name}.toml"
            path.write_text(config_to_toml(c))
            assert load_config(path) == c
