"""Scenario configuration: TOML schema, presets, seeding, problem assembly."""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

from .adjoint import SimProblem
from .design import DesignVariables, PulseParams, build_filter
from .errors import ConfigError
from .losses import TaskSpec
from .optimizer import OptimizerOptions
from .sim.forward import SimContext
from .sim.params import BoundaryArrays, BoundarySpec, MaterialConstants, SimParams

PRESET_NAMES = ("walker2d", "climber2d", "balancer2d", "walker3d", "rotator3d",
                "tiny2d", "mini_walker2d")


@dataclass
class ScenarioConfig:
    name: str
    seed: int
    sim: SimParams
    mat: MaterialConstants
    design_origin: tuple[float, ...]
    design_size: tuple[float, ...]
    boundaries: list[BoundarySpec]
    task_kind: str
    n_act: int
    pulse: PulseParams
    filter_radius_factor: float
    filter_power: float
    beta_sig: float
    beta_soft: float
    optimizer: OptimizerOptions
    frame_stride: int = 50
    hooks: list[dict] = field(default_factory=list)
    c_star_mat: float | None = None
    c_star_act: float | None = None
    c_star_pul_sgn: float = 0.01
    c_star_pul_abs: float = 0.01
    signal_override: str | None = None  # CSV path with columns t,u_1..u_N

    def __post_init__(self):
        d = self.sim.dim
        if len(self.design_origin) != d or len(self.design_size) != d:
            raise ConfigError("design domain must match the spatial dimension")
        self.sim.validate_against(self.mat)
        self.pulse.validate_against(self.sim)
        spacing = 0.5 * self.sim.dx
        for a in range(d):
            lo = self.design_origin[a]
            hi = lo + self.design_size[a]
            if lo < 2 * self.sim.dx or hi > self.sim.extent[a] - 2 * self.sim.dx:
                raise ConfigError(
                    f"design domain axis {a} [{lo}, {hi}] too close to the grid border")
            if self.design_size[a] < spacing:
                raise ConfigError(f"design domain axis {a} shorter than one particle spacing")
        for b in self.boundaries:
            if len(b.normal) != d:
                raise ConfigError(f"boundary {b.name!r} dimension mismatch")

    @property
    def spacing(self) -> float:
        return 0.5 * self.sim.dx

    @property
    def vol0(self) -> float:
        return self.spacing ** self.sim.dim

    def task_spec(self) -> TaskSpec:
        return TaskSpec(kind=self.task_kind, n_act=self.n_act,
                        c_star_mat=self.c_star_mat, c_star_act=self.c_star_act,
                        c_star_pul_sgn=self.c_star_pul_sgn, c_star_pul_abs=self.c_star_pul_abs)


def seed_particles(config: ScenarioConfig):
    """Regular lattice at 0.5 dx spacing filling the design domain.

    Returns (positions, tip_mask); tip_mask marks the top-most particle row
    (used as the controlled tip by the posture task).
    """
    h = config.spacing
    d = config.sim.dim
    counts = [max(1, int(round(config.design_size[a] / h))) for a in range(d)]
    axes = [config.design_origin[a] + (np.arange(counts[a]) + 0.5) * h for a in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pos = np.stack([m.ravel() for m in mesh], axis=1)
    ymax = pos[:, 1].max()
    tip_mask = pos[:, 1] > ymax - 0.25 * h
    return pos, tip_mask


def build_problem(config: ScenarioConfig, deterministic: bool = True) -> SimProblem:
    positions, tip_mask = seed_particles(config)
    barr = BoundaryArrays.from_specs(config.boundaries, config.sim)
    ctx = SimContext(params=config.sim, mat=config.mat, boundaries=barr,
                     deterministic=deterministic)
    filt = build_filter(positions, radius=config.filter_radius_factor * config.sim.dx,
                        power=config.filter_power)
    return SimProblem(
        ctx=ctx, positions0=positions, filter=filt, pulse=config.pulse,
        task=config.task_spec(), mat=config.mat, beta_sig=config.beta_sig,
        beta_soft=config.beta_soft, vol0=config.vol0, tip_mask=tip_mask,
    )


def initial_variables(config: ScenarioConfig, n_par: int, rng: np.random.Generator) -> DesignVariables:
    return DesignVariables.initial(n_par, config.n_act, config.pulse.n_pul, rng)


def make_hooks(config: ScenarioConfig, ctx: SimContext):
    """Per-iteration schedule hooks; each is a pure function of the iteration."""
    hooks = []
    base = np.asarray(config.sim.gravity, dtype=float)
    for spec in config.hooks:
        if spec.get("name") != "gravity_ramp":
            raise ConfigError(f"unknown hook {spec!r}")
        delta = float(spec["delta"])
        every = int(spec["every"])
        target = float(spec["target"])
        norm = np.linalg.norm(base)
        direction = base / norm if norm > 0 else base

        def ramp(s, direction=direction, delta=delta, every=every, target=target):
            ctx.gravity[:] = direction * min(target, delta * ((s - 1) // every))

        hooks.append(ramp)
    return hooks


# ---------------------------------------------------------------------------
# TOML serialization
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    if isinstance(value, dict):
        return "{" + ", ".join(f"{k} = {_fmt(v)}" for k, v in value.items()) + "}"
    raise ConfigError(f"cannot serialize {value!r}")


def config_to_toml(config: ScenarioConfig) -> str:
    lines = [f"name = {_fmt(config.name)}", f"seed = {_fmt(config.seed)}", ""]
    lines += ["[sim]"]
    lines += [f"dim = {_fmt(config.sim.dim)}",
              f"dx = {_fmt(config.sim.dx)}",
              f"dt = {_fmt(config.sim.dt)}",
              f"total_time = {_fmt(config.sim.total_time)}",
              f"grid_nodes = {_fmt(list(config.sim.grid_nodes))}",
              f"gravity = {_fmt(list(config.sim.gravity))}", ""]
    lines += ["[material]",
              f"rho0 = {_fmt(config.mat.rho0)}",
              f"E0 = {_fmt(config.mat.E0)}",
              f"nu0 = {_fmt(config.mat.nu0)}",
              f"eps = {_fmt(config.mat.eps)}", ""]
    lines += ["[design_domain]",
              f"origin = {_fmt(list(config.design_origin))}",
              f"size = {_fmt(list(config.design_size))}", ""]
    lines += ["[task]", f"kind = {_fmt(config.task_kind)}"]
    if config.c_star_mat is not None:
        lines.append(f"c_star_mat = {_fmt(config.c_star_mat)}")
    if config.c_star_act is not None:
        lines.append(f"c_star_act = {_fmt(config.c_star_act)}")
    lines += [f"c_star_pul_sgn = {_fmt(config.c_star_pul_sgn)}",
              f"c_star_pul_abs = {_fmt(config.c_star_pul_abs)}", ""]
    lines += ["[actuation]",
              f"n_act = {_fmt(config.n_act)}",
              f"a_act = {_fmt(config.pulse.a_act)}",
              f"a_pul = {_fmt(config.pulse.a_pul)}",
              f"sigma_pul = {_fmt(config.pulse.sigma_pul)}",
              f"dt_pul = {_fmt(config.pulse.dt_pul)}",
              f"n_pul = {_fmt(config.pulse.n_pul)}", ""]
    lines += ["[filter]",
              f"radius_factor = {_fmt(config.filter_radius_factor)}",
              f"power = {_fmt(config.filter_power)}", ""]
    lines += ["[projection]",
              f"beta_sig = {_fmt(config.beta_sig)}",
              f"beta_soft = {_fmt(config.beta_soft)}", ""]
    o = config.optimizer
    lines += ["[optimizer]",
              f"step_size = {_fmt(o.step_size)}",
              f"beta1 = {_fmt(o.beta1)}",
              f"beta2 = {_fmt(o.beta2)}",
              f"eps_adam = {_fmt(o.eps_adam)}",
              f"tau0 = {_fmt(o.tau0)}",
              f"c_update = {_fmt(o.c_update)}",
              f"a_multiplier = {_fmt(o.a_multiplier)}",
              f"s_max = {_fmt(o.s_max)}", ""]
    lines += ["[output]", f"frame_stride = {_fmt(config.frame_stride)}", ""]
    if config.signal_override is not None:
        lines += ["[signal_override]", f"path = {_fmt(config.signal_override)}", ""]
    for b in config.boundaries:
        lines += ["[[boundary]]",
                  f"name = {_fmt(b.name)}",
                  f"mode = {_fmt(b.mode)}",
                  f"normal = {_fmt(list(b.normal))}",
                  f"node_lo = {_fmt(list(b.node_lo))}",
                  f"node_hi = {_fmt(list(b.node_hi))}",
                  f"mu_f = {_fmt(b.mu_f)}"]
        if b.velocity == "zero":
            lines.append('velocity = "zero"')
        else:
            lines.append(f"velocity = {_fmt(b.velocity)}")
        lines.append("")
    for h in config.hooks:
        lines += ["[[hook]]"] + [f"{k} = {_fmt(v)}" for k, v in h.items()] + [""]
    return "\n".join(lines)


def config_from_dict(raw: dict) -> ScenarioConfig:
    try:
        sim = SimParams(
            dim=int(raw["sim"]["dim"]),
            dx=float(raw["sim"]["dx"]),
            dt=float(raw["sim"]["dt"]),
            total_time=float(raw["sim"]["total_time"]),
            grid_nodes=tuple(int(v) for v in raw["sim"]["grid_nodes"]),
            gravity=tuple(float(v) for v in raw["sim"]["gravity"]),
        )
        mat = MaterialConstants(
            rho0=float(raw["material"]["rho0"]), E0=float(raw["material"]["E0"]),
            nu0=float(raw["material"]["nu0"]), eps=float(raw["material"]["eps"]),
        )
        act = raw["actuation"]
        pulse = PulseParams(
            a_pul=float(act["a_pul"]), sigma_pul=float(act["sigma_pul"]),
            dt_pul=float(act["dt_pul"]),
            n_pul=int(act.get("n_pul") or round(sim.total_time / float(act["dt_pul"]))),
            a_act=float(act["a_act"]),
        )
        boundaries = []
        for b in raw.get("boundary", []):
            vel = b.get("velocity", "zero")
            boundaries.append(BoundarySpec(
                name=str(b["name"]), mode=str(b["mode"]),
                normal=tuple(float(v) for v in b["normal"]),
                node_lo=tuple(int(v) for v in b["node_lo"]),
                node_hi=tuple(int(v) for v in b["node_hi"]),
                mu_f=float(b.get("mu_f", 0.0)),
                velocity=vel if vel == "zero" else dict(vel),
            ))
        opt_raw = raw.get("optimizer", {})
        opt = OptimizerOptions(
            step_size=float(opt_raw.get("step_size", 0.01)),
            beta1=float(opt_raw.get("beta1", 0.9)),
            beta2=float(opt_raw.get("beta2", 0.999)),
            eps_adam=float(opt_raw.get("eps_adam", 1e-8)),
            tau0=float(opt_raw.get("tau0", 0.001)),
            c_update=float(opt_raw.get("c_update", 0.25)),
            a_multiplier=float(opt_raw.get("a_multiplier", 10.0)),
            s_max=int(opt_raw.get("s_max", 5000)),
        )
        task = raw["task"]
        return ScenarioConfig(
            name=str(raw["name"]), seed=int(raw.get("seed", 0)), sim=sim, mat=mat,
            design_origin=tuple(float(v) for v in raw["design_domain"]["origin"]),
            design_size=tuple(float(v) for v in raw["design_domain"]["size"]),
            boundaries=boundaries, task_kind=str(task["kind"]),
            n_act=int(act["n_act"]), pulse=pulse,
            filter_radius_factor=float(raw["filter"]["radius_factor"]),
            filter_power=float(raw["filter"]["power"]),
            beta_sig=float(raw["projection"]["beta_sig"]),
            beta_soft=float(raw["projection"]["beta_soft"]),
            optimizer=opt,
            frame_stride=int(raw.get("output", {}).get("frame_stride", 50)),
            hooks=[dict(h) for h in raw.get("hook", [])],
            c_star_mat=float(task["c_star_mat"]) if "c_star_mat" in task else None,
            c_star_act=float(task["c_star_act"]) if "c_star_act" in task else None,
            c_star_pul_sgn=float(task.get("c_star_pul_sgn", 0.01)),
            c_star_pul_abs=float(task.get("c_star_pul_abs", 0.01)),
            signal_override=raw.get("signal_override", {}).get("path"),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario config: {exc!r}") from exc


def load_config(path_or_preset: str | Path) -> ScenarioConfig:
    """Load a scenario from a TOML file or one of the named presets."""
    name = str(path_or_preset)
    if name in PRESET_NAMES:
        text = importlib.resources.files("sb4d.presets").joinpath(f"{name}.toml").read_text()
        source = f"preset {name}"
    else:
        p = Path(path_or_preset)
        if not p.exists():
            raise ConfigError(f"no such config file or preset: {name}")
        text = p.read_text()
        source = str(p)
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: parse error: {exc}") from exc
    return config_from_dict(raw)


def save_config(config: ScenarioConfig, path: str | Path):
    Path(path).write_text(config_to_toml(config))
