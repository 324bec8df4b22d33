"""Design-variable pipeline: raw variables -> physical fields.

The chain is

    phi  --filter--> phi_tilde --normalized sigmoid--> gamma
    Z    --filter--> Z_tilde   --softmax-->             Xi
    (A_sgn, A_abs) --combine--> alpha --gaussian comb + tanh--> u_hat_j(t)

and per particle the interpolated properties

    rho/lambda/mu = ((1-eps) gamma + eps) * solid value
    u_i(t) = ((1-eps) gamma^3 + eps) * Xi_i . u_hat(t)

Filtering always uses the initial (reference) particle positions, so the
neighbor table is built once and the whole map stays time-independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ConfigError
from .sim.params import MaterialConstants, SimParams


# ---------------------------------------------------------------------------
# neighbor table / filter
# ---------------------------------------------------------------------------


@dataclass
class FilterSpec:
    """Precomputed particle-wise convolution filter (CSR layout).

    ``weights`` are already row-normalized, so applying the filter is a plain
    sparse matrix-vector product and the adjoint is the transpose product.
    """

    radius: float
    power: float
    indptr: np.ndarray   # (N + 1,) int64
    indices: np.ndarray  # (nnz,) int64
    weights: np.ndarray  # (nnz,) float64, rows sum to 1

    @property
    def n(self) -> int:
        return len(self.indptr) - 1


def filter_weight(r, radius: float, power: float):
    """Decay kernel w_f(r) = (1 - min(r, R)/R)^p; equals 1 at r = 0, 0 beyond R."""
    r = np.asarray(r, dtype=float)
    return (1.0 - np.minimum(r, radius) / radius) ** power


def build_filter(positions: np.ndarray, radius: float, power: float,
                 chunk: int = 1024) -> FilterSpec:
    """Neighbor table over reference positions, chunked to bound memory."""
    if radius <= 0 or power <= 0:
        raise ConfigError("filter radius and power must be positive")
    pos = np.asarray(positions, dtype=float)
    n = pos.shape[0]
    indptr = np.zeros(n + 1, dtype=np.int64)
    idx_parts = []
    w_parts = []
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d2 = ((pos[start:stop, None, :] - pos[None, :, :]) ** 2).sum(axis=2)
        within = d2 < radius * radius
        for i in range(start, stop):
            cols = np.nonzero(within[i - start])[0]
            w = filter_weight(np.sqrt(d2[i - start, cols]), radius, power)
            w /= w.sum()
            idx_parts.append(cols.astype(np.int64))
            w_parts.append(w)
            indptr[i + 1] = indptr[i] + len(cols)
    return FilterSpec(radius=radius, power=power, indptr=indptr,
                      indices=np.concatenate(idx_parts), weights=np.concatenate(w_parts))


@njit(cache=True)
def _csr_apply(indptr, indices, weights, values, out):
    for i in range(len(indptr) - 1):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += weights[k] * values[indices[k]]
        out[i] = acc


@njit(cache=True)
def _csr_apply_t(indptr, indices, weights, values, out):
    for i in range(len(indptr) - 1):
        vi = values[i]
        for k in range(indptr[i], indptr[i + 1]):
            out[indices[k]] += weights[k] * vi


def filter_field(values: np.ndarray, spec: FilterSpec) -> np.ndarray:
    """Row-normalized weighted average over the reference-position neighborhood."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        out = np.empty_like(values)
        _csr_apply(spec.indptr, spec.indices, spec.weights, values, out)
        return out
    out = np.empty_like(values)
    for row in range(values.shape[0]):
        _csr_apply(spec.indptr, spec.indices, spec.weights,
                   np.ascontiguousarray(values[row]), out[row])
    return out


def filter_field_vjp(cotangent: np.ndarray, spec: FilterSpec) -> np.ndarray:
    cotangent = np.asarray(cotangent, dtype=float)
    out = np.zeros_like(cotangent)
    if cotangent.ndim == 1:
        _csr_apply_t(spec.indptr, spec.indices, spec.weights, cotangent, out)
        return out
    for row in range(cotangent.shape[0]):
        _csr_apply_t(spec.indptr, spec.indices, spec.weights,
                     np.ascontiguousarray(cotangent[row]), out[row])
    return out


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------


def sigmoid_project(phi_tilde, beta_sig: float):
    """Normalized sigmoid: [-1, 1] -> [0, 1] hitting 0, 1/2, 1 at -1, 0, 1."""
    if beta_sig <= 0:
        raise ConfigError("beta_sig must be positive")
    return 0.5 * (np.tanh(beta_sig * np.asarray(phi_tilde, dtype=float)) / np.tanh(beta_sig) + 1.0)


def sigmoid_project_vjp(cotangent, phi_tilde, beta_sig: float):
    t = np.tanh(beta_sig * np.asarray(phi_tilde, dtype=float))
    return cotangent * 0.5 * beta_sig * (1.0 - t * t) / np.tanh(beta_sig)


def softmax_project(zeta_tilde: np.ndarray, beta_soft: float) -> np.ndarray:
    """Temperature-scaled softmax along axis 0, max-subtracted for safety."""
    if beta_soft <= 0:
        raise ConfigError("beta_soft must be positive")
    z = beta_soft * np.asarray(zeta_tilde, dtype=float)
    z = z - z.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def softmax_project_vjp(cotangent: np.ndarray, xi: np.ndarray, beta_soft: float) -> np.ndarray:
    inner = (cotangent * xi).sum(axis=0, keepdims=True)
    return beta_soft * xi * (cotangent - inner)


def combine_pulse(a_sgn, a_abs):
    """alpha = a_sgn * (a_abs + 1) / 2, mapping the [-1,1]^2 square onto [-1,1]."""
    return np.asarray(a_sgn, dtype=float) * (np.asarray(a_abs, dtype=float) + 1.0) / 2.0


def combine_pulse_vjp(cotangent, a_sgn, a_abs):
    return cotangent * (np.asarray(a_abs, dtype=float) + 1.0) / 2.0, cotangent * np.asarray(a_sgn, dtype=float) / 2.0


# ---------------------------------------------------------------------------
# temporal pulses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PulseParams:
    """Gaussian-pulse comb parameters; slot k sits at t_k = k * dt_pul."""

    a_pul: float = 0.2
    sigma_pul: float = 0.01
    dt_pul: float = 0.002
    n_pul: int = 0
    a_act: float = 1e4

    def __post_init__(self):
        if min(self.a_pul, self.sigma_pul, self.dt_pul, self.a_act) <= 0 or self.n_pul <= 0:
            raise ConfigError("pulse parameters must be positive")

    def validate_against(self, params: SimParams):
        if self.n_pul * self.dt_pul > params.total_time + 1e-12:
            raise ConfigError("pulse slots extend past the simulation time")


def pulse_basis(pulse: PulseParams, times: np.ndarray) -> np.ndarray:
    """(n_pul, n_times) matrix of A_pul * exp(-(t_k - t)^2 / (2 sigma^2)).

    Entries beyond 6 sigma are exact zeros (relative signal error < 1e-7).
    """
    tk = np.arange(pulse.n_pul) * pulse.dt_pul
    dtm = tk[:, None] - times[None, :]
    basis = pulse.a_pul * np.exp(-(dtm ** 2) / (2.0 * pulse.sigma_pul ** 2))
    basis[np.abs(dtm) > 6.0 * pulse.sigma_pul] = 0.0
    return basis


def actuation_signal(alpha_j: np.ndarray, t, pulse: PulseParams):
    """Continuous signal of one actuator: A_act tanh(sum_k alpha_k A_pul G(t_k - t))."""
    times = np.atleast_1d(np.asarray(t, dtype=float))
    basis = pulse_basis(pulse, times)
    out = pulse.a_act * np.tanh(alpha_j @ basis)
    return out if np.ndim(t) else float(out[0])


def actuation_signal_vjp(cotangent: np.ndarray, alpha_j: np.ndarray, t,
                         pulse: PulseParams) -> np.ndarray:
    """Adjoint of one actuator's sampled signal: d(signal)/d(alpha_j)."""
    times = np.atleast_1d(np.asarray(t, dtype=float))
    basis = pulse_basis(pulse, times)
    s = alpha_j @ basis
    d_s = np.atleast_1d(cotangent) * pulse.a_act * (1.0 - np.tanh(s) ** 2)
    return basis @ d_s


# ---------------------------------------------------------------------------
# interpolation to particles
# ---------------------------------------------------------------------------


def material_interpolation(gamma, mat: MaterialConstants):
    """(rho, lambda, mu) per particle: ((1 - eps) gamma + eps) * solid value."""
    f = (1.0 - mat.eps) * np.asarray(gamma, dtype=float) + mat.eps
    return f * mat.rho0, f * mat.lambda0, f * mat.mu0


def actuation_prefactor(gamma, eps: float):
    """Cubic penalization ((1 - eps) gamma^3 + eps) used for particle actuation."""
    g = np.asarray(gamma, dtype=float)
    return (1.0 - eps) * g ** 3 + eps


def particle_actuation(gamma_i, xi_i, u_hat_at_t, eps: float = 1e-5):
    """Actuation of one particle: penalized gamma times Xi-weighted signal mix."""
    return actuation_prefactor(gamma_i, eps) * float(np.dot(xi_i, u_hat_at_t))


def material_interpolation_vjp(cot_rho, cot_lam, cot_mu, mat: MaterialConstants):
    """Adjoint of the property interpolation: cotangents -> d(gamma)."""
    k = 1.0 - mat.eps
    return k * (np.asarray(cot_rho) * mat.rho0 + np.asarray(cot_lam) * mat.lambda0
                + np.asarray(cot_mu) * mat.mu0)


def particle_actuation_vjp(cot_u, gamma_i, xi_i, u_hat_at_t, eps: float = 1e-5):
    """Adjoint of one particle's actuation: -> (d gamma, d xi, d u_hat)."""
    mix = float(np.dot(xi_i, u_hat_at_t))
    pref = actuation_prefactor(gamma_i, eps)
    d_gamma = cot_u * mix * 3.0 * (1.0 - eps) * gamma_i ** 2
    d_xi = cot_u * pref * np.asarray(u_hat_at_t, dtype=float)
    d_uhat = cot_u * pref * np.asarray(xi_i, dtype=float)
    return d_gamma, d_xi, d_uhat


# ---------------------------------------------------------------------------
# variables and the derived bundle
# ---------------------------------------------------------------------------


@dataclass
class DesignVariables:
    """The optimized unknowns. phi, A_sgn, A_abs live in [-1, 1]; Z is free."""

    phi: np.ndarray     # (N,)
    Z: np.ndarray       # (n_act + 1, N)
    A_sgn: np.ndarray   # (n_pul, n_act)
    A_abs: np.ndarray   # (n_pul, n_act)

    @classmethod
    def initial(cls, n_par: int, n_act: int, n_pul: int, rng: np.random.Generator,
                pulse_std: float = 0.1) -> "DesignVariables":
        """phi = 0, Z = 0, pulse variables ~ N(0, pulse_std), clipped to bounds."""
        return cls(
            phi=np.zeros(n_par),
            Z=np.zeros((n_act + 1, n_par)),
            A_sgn=np.clip(rng.normal(0.0, pulse_std, size=(n_pul, n_act)), -1.0, 1.0),
            A_abs=np.clip(rng.normal(0.0, pulse_std, size=(n_pul, n_act)), -1.0, 1.0),
        )

    def copy(self) -> "DesignVariables":
        return DesignVariables(self.phi.copy(), self.Z.copy(), self.A_sgn.copy(), self.A_abs.copy())

    def blocks(self) -> dict[str, np.ndarray]:
        return {"phi": self.phi, "Z": self.Z, "A_sgn": self.A_sgn, "A_abs": self.A_abs}


@dataclass
class DerivedDesign:
    """Physical fields produced from DesignVariables; all arrays are per run."""

    gamma: np.ndarray       # (N,)
    xi: np.ndarray          # (n_act + 1, N), columns sum to 1, last row = no actuator
    alpha: np.ndarray       # (n_pul, n_act)
    u_hat: np.ndarray       # (n_act + 1, n_steps + 1), last row identically 0
    rho: np.ndarray         # (N,)
    lam: np.ndarray         # (N,)
    mu: np.ndarray          # (N,)
    mass: np.ndarray        # (N,) rho * vol0
    eps: float
    # intermediates kept for the backward pass
    phi_tilde: np.ndarray = field(default=None, repr=False)
    s_pre: np.ndarray = field(default=None, repr=False)      # (n_act, n_steps + 1) pre-tanh
    basis: np.ndarray = field(default=None, repr=False)      # (n_pul, n_steps + 1)
    prefactor: np.ndarray = field(default=None, repr=False)  # (N,)

    @property
    def n_act(self) -> int:
        return self.xi.shape[0] - 1

    def particle_actuation_at(self, step: int) -> np.ndarray:
        """Per-particle actuation stress magnitude at one simulation step."""
        return self.prefactor * (self.xi.T @ self.u_hat[:, step])


def derive_design(vars: DesignVariables, spec: FilterSpec, pulse: PulseParams,
                  params: SimParams, mat: MaterialConstants, beta_sig: float,
                  beta_soft: float, vol0: float) -> DerivedDesign:
    """Full map from raw variables to the fields the simulator consumes."""
    n_par = spec.n
    n_act = vars.Z.shape[0] - 1
    if vars.phi.shape != (n_par,):
        raise ConfigError(f"phi has shape {vars.phi.shape}, expected ({n_par},)")
    if vars.Z.shape != (n_act + 1, n_par):
        raise ConfigError(f"Z has shape {vars.Z.shape}, expected ({n_act + 1}, {n_par})")
    if vars.A_sgn.shape != (pulse.n_pul, n_act) or vars.A_abs.shape != (pulse.n_pul, n_act):
        raise ConfigError("pulse design variables have inconsistent shapes")

    phi_tilde = filter_field(vars.phi, spec)
    gamma = sigmoid_project(phi_tilde, beta_sig)
    zeta_tilde = filter_field(vars.Z, spec)
    xi = softmax_project(zeta_tilde, beta_soft)
    alpha = combine_pulse(vars.A_sgn, vars.A_abs)

    times = np.arange(params.n_steps + 1) * params.dt
    basis = pulse_basis(pulse, times)
    s_pre = alpha.T @ basis                      # (n_act, n_times)
    u_hat = np.zeros((n_act + 1, len(times)))
    u_hat[:n_act] = pulse.a_act * np.tanh(s_pre)

    rho, lam, mu = material_interpolation(gamma, mat)
    return DerivedDesign(
        gamma=gamma, xi=xi, alpha=alpha, u_hat=u_hat, rho=rho, lam=lam, mu=mu,
        mass=rho * vol0, eps=mat.eps, phi_tilde=phi_tilde, s_pre=s_pre, basis=basis,
        prefactor=actuation_prefactor(gamma, mat.eps),
    )


@dataclass
class DesignCotangents:
    """Accumulators for d(loss)/d(derived fields), chained back to variables."""

    d_gamma: np.ndarray   # (N,)
    d_xi: np.ndarray      # (n_act + 1, N)
    d_uhat: np.ndarray    # (n_act + 1, n_steps + 1)
    d_A_sgn: np.ndarray   # direct contributions (constraints)
    d_A_abs: np.ndarray

    @classmethod
    def zeros(cls, derived: DerivedDesign, n_pul: int) -> "DesignCotangents":
        return cls(
            d_gamma=np.zeros_like(derived.gamma),
            d_xi=np.zeros_like(derived.xi),
            d_uhat=np.zeros_like(derived.u_hat),
            d_A_sgn=np.zeros((n_pul, derived.n_act)),
            d_A_abs=np.zeros((n_pul, derived.n_act)),
        )

    def add_particle_actuation(self, derived: DerivedDesign, step: int, ubar: np.ndarray):
        """Chain one step's per-particle actuation cotangent into the fields."""
        mix = derived.xi.T @ derived.u_hat[:, step]
        d_pref = ubar * mix
        d_mix = ubar * derived.prefactor
        self.d_gamma += d_pref * 3.0 * (1.0 - derived.eps) * derived.gamma ** 2
        self.d_xi += derived.u_hat[:, step][:, None] * d_mix[None, :]
        self.d_uhat[:, step] += derived.xi @ d_mix

    def add_material(self, derived: DerivedDesign, mat: MaterialConstants, vol0: float,
                     mbar: np.ndarray, lambar: np.ndarray, mubar: np.ndarray):
        """Chain the (time-constant) per-particle property cotangents into gamma."""
        k = 1.0 - mat.eps
        self.d_gamma += k * (mbar * mat.rho0 * vol0 + lambar * mat.lambda0 + mubar * mat.mu0)


def design_vjp(cot: DesignCotangents, vars: DesignVariables, derived: DerivedDesign,
               spec: FilterSpec, pulse: PulseParams, beta_sig: float,
               beta_soft: float) -> dict[str, np.ndarray]:
    """Backward through filter/projection/pulse chain; returns per-block grads."""
    d_phi_tilde = sigmoid_project_vjp(cot.d_gamma, derived.phi_tilde, beta_sig)
    d_phi = filter_field_vjp(d_phi_tilde, spec)

    d_zeta_tilde = softmax_project_vjp(cot.d_xi, derived.xi, beta_soft)
    d_Z = filter_field_vjp(d_zeta_tilde, spec)

    n_act = derived.n_act
    d_s = cot.d_uhat[:n_act] * pulse.a_act * (1.0 - np.tanh(derived.s_pre) ** 2)
    d_alpha = (derived.basis @ d_s.T)            # (n_pul, n_act)
    da_sgn, da_abs = combine_pulse_vjp(d_alpha, vars.A_sgn, vars.A_abs)
    return {
        "phi": d_phi,
        "Z": d_Z,
        "A_sgn": da_sgn + cot.d_A_sgn,
        "A_abs": da_abs + cot.d_A_abs,
    }


# ---------------------------------------------------------------------------
# post-processing
# ---------------------------------------------------------------------------


def pulse_binary_decomposition(alpha: np.ndarray, a_sgn_ref: np.ndarray):
    """Binary (A_sgn, A_abs) pair reproducing a {-1, 0, 1} pulse density.

    Zero slots keep the sign of the reference variable so the decomposition
    stays closest to the optimized one; both outputs are exactly binary.
    """
    a_abs = np.where(alpha == 0.0, -1.0, 1.0)
    a_sgn = np.where(alpha > 0, 1.0, np.where(alpha < 0, -1.0,
                                              np.where(np.asarray(a_sgn_ref) >= 0, 1.0, -1.0)))
    return a_sgn, a_abs


def binarize_postprocess(derived: DerivedDesign, vars: DesignVariables,
                         pulse: PulseParams, params: SimParams,
                         mat: MaterialConstants, vol0: float):
    """Fully binarized, body-fitted version of a converged design.

    gamma is thresholded at 0.5, Xi snapped to its argmax channel, alpha
    rounded to the nearest of {-1, 0, 1}; void particles are dropped from the
    simulated set. Returns (derived_subset, keep_mask).
    """
    keep = derived.gamma > 0.5
    gamma = np.ones(int(keep.sum()))
    xi_arg = derived.xi[:, keep].argmax(axis=0)
    xi = np.zeros((derived.xi.shape[0], len(gamma)))
    xi[xi_arg, np.arange(len(gamma))] = 1.0
    alpha = np.round(derived.alpha).clip(-1.0, 1.0)

    times = np.arange(params.n_steps + 1) * params.dt
    basis = pulse_basis(pulse, times)
    s_pre = alpha.T @ basis
    n_act = derived.n_act
    u_hat = np.zeros((n_act + 1, len(times)))
    u_hat[:n_act] = pulse.a_act * np.tanh(s_pre)

    rho, lam, mu = material_interpolation(gamma, mat)
    out = DerivedDesign(
        gamma=gamma, xi=xi, alpha=alpha, u_hat=u_hat, rho=rho, lam=lam, mu=mu,
        mass=rho * vol0, eps=mat.eps, phi_tilde=None, s_pre=s_pre, basis=basis,
        prefactor=actuation_prefactor(gamma, mat.eps),
    )
    return out, keep
