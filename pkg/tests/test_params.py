import math

import numpy as np
import pytest

from sb4d.errors import ConfigError
from sb4d.sim import BoundaryArrays, BoundarySpec, MaterialConstants, SimParams, cfl_max_dt, lame_from_elastic


@pytest.mark.parametrize("E,nu,lam,mu", [
    (1e5, 0.4, 142857.142857, 35714.285714),
    (123.0, 0.0, 0.0, 61.5),
    (2.8e5, 0.4, 4e5, 1e5),
])
def test_lame_from_elastic(E, nu, lam, mu):
    got_lam, got_mu = lame_from_elastic(E, nu)
    assert got_lam == pytest.approx(lam, rel=1e-9)
    assert got_mu == pytest.approx(mu, rel=1e-9)


def test_lame_rejects_incompressible_limit():
    with pytest.raises(ConfigError):
        lame_from_elastic(1e5, 0.5)
    with pytest.raises(ConfigError):
        lame_from_elastic(-1.0, 0.3)


def _params(dx=0.01, dt=1e-4, dim=2, n=64):
    return SimParams(dim=dim, dx=dx, dt=dt, total_time=0.01,
                     grid_nodes=(n,) * dim, gravity=(0.0, -9.8) if dim == 2 else (0, -9.8, 0))


def test_cfl_reproduces_reference_value():
    # dx = 0.01, rho = 1000, E = 1e5, nu = 0.4 gives about 6.8e-4 s
    mat = MaterialConstants(rho0=1000.0, E0=1e5, nu0=0.4)
    assert cfl_max_dt(_params(), mat) == pytest.approx(6.8e-4, rel=0.02)


def test_cfl_scalings():
    mat = MaterialConstants()
    base = cfl_max_dt(_params(dx=0.01), mat)
    assert cfl_max_dt(_params(dx=0.02), mat) == pytest.approx(2 * base, rel=1e-12)
    # quadrupling (lambda + 2 mu) at fixed rho halves the bound
    lam, mu = mat.lambda0, mat.mu0
    stiff = MaterialConstants(E0=4 * mat.E0)
    assert stiff.lambda0 == pytest.approx(4 * lam) and stiff.mu0 == pytest.approx(4 * mu)
    assert cfl_max_dt(_params(), stiff) == pytest.approx(base / 2, rel=1e-12)


def test_cfl_violation_rejected():
    mat = MaterialConstants()
    with pytest.raises(ConfigError):
        _params(dt=1e-3).validate_against(mat)
    _params(dt=1e-4).validate_against(mat)  # fine


def test_boundary_spec_validation():
    with pytest.raises(ConfigError):
        BoundarySpec(name="f", mode="no_slip", normal=(0.0, 2.0), node_lo=(0, 0), node_hi=(3, 3))
    with pytest.raises(ConfigError):
        BoundarySpec(name="f", mode="bouncy", normal=(0.0, 1.0), node_lo=(0, 0), node_hi=(3, 3))
    with pytest.raises(ConfigError):
        BoundarySpec(name="f", mode="coulomb", normal=(0.0, 1.0), node_lo=(0, 0),
                     node_hi=(3, 3), mu_f=-1.0)


def test_boundary_oscillation_velocity_table():
    params = _params()
    spec = BoundarySpec(name="floor", mode="sticky_always", normal=(0.0, 1.0),
                        node_lo=(0, 0), node_hi=(63, 4),
                        velocity={"kind": "oscillate", "axis": 0, "pos_amp": 0.03, "omega": 40.0})
    barr = BoundaryArrays.from_specs([spec], params)
    # d/dt of 0.03 sin(40 t) is 1.2 cos(40 t)
    t = 7 * params.dt
    assert barr.vr_table[7, 0, 0] == pytest.approx(0.03 * 40.0 * math.cos(40.0 * t))
    assert barr.vr_table[7, 0, 1] == 0.0


def test_boundary_outside_grid_rejected():
    params = _params(n=16)
    spec = BoundarySpec(name="f", mode="no_slip", normal=(0.0, 1.0),
                        node_lo=(0, 0), node_hi=(63, 4))
    with pytest.raises(ConfigError):
        BoundaryArrays.from_specs([spec], params)


def test_material_invariants():
    mat = MaterialConstants(E0=1e5, nu0=0.4)
    lam, mu = lame_from_elastic(mat.E0, mat.nu0)
    assert mat.lambda0 == lam and mat.mu0 == mu
    assert 0 < mat.eps < 1
    with pytest.raises(ConfigError):
        MaterialConstants(eps=0.0)
    with pytest.raises(ConfigError):
        MaterialConstants(rho0=-5)


def test_n_steps_rounding():
    p = SimParams(dim=2, dx=0.01, dt=1e-4, total_time=0.0101,
                  grid_nodes=(32, 32), gravity=(0.0, -9.8))
    assert p.n_steps == 101
    assert p.extent == (0.31, 0.31)
