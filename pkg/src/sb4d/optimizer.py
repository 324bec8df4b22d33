"""Adam inside an augmented-Lagrangian outer loop, with checkpoint/resume.

The loop is a state machine over a single global iteration counter s: the
inner phase runs Adam steps until the trailing-window convergence test fires,
then one outer update adjusts the multipliers kappa (when the violation
dropped enough) or the penalty coefficients tau (otherwise) and the inner
phase restarts with fresh Adam moments. Every quantity that influences
control flow lives in ALRunState, so an interrupted run can be resumed
bit-exactly from its checkpoint.
"""

from __future__ import annotations

import io
import pickle
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

CKPT_MAGIC = b"SB4D"
CKPT_VERSION = 2


@dataclass
class OptimizerOptions:
    step_size: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    tau0: float = 0.001
    c_update: float = 0.25
    a_multiplier: float = 10.0
    s_max: int = 5000


@dataclass
class AdamState:
    """First/second moment accumulators, zeroed before every inner loop."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step_count: int = 0

    @classmethod
    def zeros_like(cls, blocks: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(a) for k, a in blocks.items()},
                   v={k: np.zeros_like(a) for k, a in blocks.items()})

    def reset(self):
        for k in self.m:
            self.m[k][:] = 0.0
            self.v[k][:] = 0.0
        self.step_count = 0


def adam_step(state: AdamState, blocks: dict[str, np.ndarray],
              grads: dict[str, np.ndarray], opts: OptimizerOptions):
    """Standard bias-corrected Adam update, in place."""
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient passed to Adam")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - opts.beta1 ** t
    bc2 = 1.0 - opts.beta2 ** t
    for k, p in blocks.items():
        g = grads[k]
        state.m[k] = opts.beta1 * state.m[k] + (1.0 - opts.beta1) * g
        state.v[k] = opts.beta2 * state.v[k] + (1.0 - opts.beta2) * g * g
        mhat = state.m[k] / bc1
        vhat = state.v[k] / bc2
        p -= opts.step_size * mhat / (np.sqrt(vhat) + opts.eps_adam)


BOUNDED_BLOCKS = ("phi", "A_sgn", "A_abs")


def clamp_side(blocks: dict[str, np.ndarray], bounded=BOUNDED_BLOCKS):
    """Clip the box-constrained blocks to [-1, 1]; Z stays unbounded."""
    for k in bounded:
        if k in blocks:
            np.clip(blocks[k], -1.0, 1.0, out=blocks[k])
    return blocks


def inner_converged(history) -> bool:
    """Trailing-window test: mean of last 10 vs previous 10 moved < 0.1%."""
    if len(history) < 20:
        return False
    cur = float(np.mean(history[-10:]))
    prev = float(np.mean(history[-20:-10]))
    if abs(prev) < 1e-30:
        return True  # flat at numerical zero
    return abs(cur - prev) / abs(prev) < 0.001


@dataclass
class ALRunState:
    """Everything the loop needs to continue after an interruption."""

    blocks: dict[str, np.ndarray]
    adam: AdamState
    kappa: np.ndarray
    tau: np.ndarray
    v_prev: np.ndarray
    history: list[float]
    s: int = 0
    log: list[tuple] = field(default_factory=list)
    rng_state: object = None


@dataclass
class ALResult:
    blocks: dict[str, np.ndarray]
    kappa: np.ndarray
    tau: np.ndarray
    log: list[tuple]
    feasible: bool
    iterations: int
    state: ALRunState


def al_minimize(evaluate, constraint_violations, state: ALRunState,
                opts: OptimizerOptions, bounded=BOUNDED_BLOCKS,
                pre_iteration=None, post_iteration=None, s_max=None) -> ALResult:
    """Algorithm: outer loop on (kappa, tau), inner Adam loop on the variables.

    ``evaluate(blocks, kappa, tau)`` returns (al_value, grads, log_extras);
    ``constraint_violations(blocks)`` returns the current hinge violations
    (an empty array for unconstrained problems, which then reduce to one
    plain Adam run until the window test fires).
    """
    cap = opts.s_max if s_max is None else s_max
    m_count = len(state.kappa)
    feasible = False

    if state.s == 0:
        v0 = constraint_violations(state.blocks)
        state.v_prev = np.asarray(v0, dtype=float).copy()
        if m_count > 0 and v0.max() <= 0.0:
            return ALResult(state.blocks, state.kappa, state.tau, state.log, True, 0, state)

    while state.s < cap:
        if inner_converged(state.history):
            v = constraint_violations(state.blocks)
            for m in range(m_count):
                if v[m] > 0.0:
                    if v[m] < opts.c_update * state.v_prev[m]:
                        state.kappa[m] -= state.tau[m] * v[m]
                        state.v_prev[m] = v[m]
                    else:
                        state.tau[m] *= opts.a_multiplier
            if m_count == 0 or v.max() <= 0.0:
                feasible = True
                break
            state.adam.reset()
            state.history.clear()
        state.s += 1
        if pre_iteration is not None:
            pre_iteration(state.s)
        al_value, grads, extras = evaluate(state.blocks, state.kappa, state.tau)
        adam_step(state.adam, state.blocks, grads, opts)
        clamp_side(state.blocks, bounded)
        state.history.append(al_value)
        state.log.append((state.s, *extras, *state.kappa, *state.tau))
        if post_iteration is not None:
            post_iteration(state.s)

    if not feasible:
        v = constraint_violations(state.blocks)
        feasible = m_count == 0 or v.max() <= 0.0
    return ALResult(state.blocks, state.kappa, state.tau, state.log,
                    feasible, state.s, state)


def fresh_state(blocks: dict[str, np.ndarray], m_count: int,
                opts: OptimizerOptions, rng_state=None) -> ALRunState:
    return ALRunState(
        blocks=blocks,
        adam=AdamState.zeros_like(blocks),
        kappa=np.zeros(m_count),
        tau=np.full(m_count, opts.tau0),
        v_prev=np.zeros(m_count),
        history=[],
        rng_state=rng_state,
    )


# ---------------------------------------------------------------------------
# checkpoint file (magic header SB4D, versioned, pickled payload)
# ---------------------------------------------------------------------------


def save_checkpoint(path, state: ALRunState, extra: dict | None = None):
    payload = {
        "blocks": state.blocks,
        "adam_m": state.adam.m,
        "adam_v": state.adam.v,
        "adam_t": state.adam.step_count,
        "kappa": state.kappa,
        "tau": state.tau,
        "v_prev": state.v_prev,
        "history": list(state.history),
        "s": state.s,
        "log": list(state.log),
        "rng_state": state.rng_state,
        "extra": extra or {},
    }
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(CKPT_VERSION.to_bytes(4, "little"))
    pickle.dump(payload, buf, protocol=4)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> tuple[ALRunState, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CKPT_MAGIC:
        raise ConfigError(f"{path}: not a checkpoint file (bad magic)")
    version = int.from_bytes(raw[4:8], "little")
    if version != CKPT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    payload = pickle.loads(raw[8:])
    adam = AdamState(m=payload["adam_m"], v=payload["adam_v"], step_count=payload["adam_t"])
    state = ALRunState(
        blocks=payload["blocks"], adam=adam, kappa=payload["kappa"], tau=payload["tau"],
        v_prev=payload["v_prev"], history=list(payload["history"]), s=payload["s"],
        log=list(payload["log"]), rng_state=payload["rng_state"],
    )
    return state, payload["extra"]
