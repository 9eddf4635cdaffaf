import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shellfsi.diagnostics import (COLUMN_NAMES, accel_energy, base_energy, coupling_residual, divergence_residual,
                                  forcing_H, gronwall_check, guard, piola_residual)
from shellfsi.dynamics import ShellTrajectory, initial_coefficients, run_decoupled
from shellfsi.errors import InsufficientHistory
from shellfsi.forcing import Forcing
from shellfsi.geometry import DEFAULT_DOMAIN
from shellfsi.mesh import build_onion_mesh
from shellfsi.spectral import SpectralField, uniform_grid

TWO_PI = 2 * np.pi


def sine(a=1.0, K=4):
    return SpectralField.from_modes([("sin", 1, a)], K)


# --- base energy ----------------------------------------------------------------


def test_base_energy_zero_state():
    z = SpectralField.zeros(4)
    e = base_energy(z, z)
    assert (e.shell_kinetic, e.shell_elastic, e.fluid_l2, e.dissipation_rate, e.total) == (0, 0, 0, 0, 0)


def test_base_energy_elastic_of_sine():
    e = base_energy(sine(), SpectralField.zeros(4))
    assert e.shell_elastic == pytest.approx(TWO_PI**4 / 2, rel=1e-12)
    assert e.shell_elastic == pytest.approx(779.27, abs=0.01)


def test_base_energy_spectral_and_grid_agree(rng):
    a = SpectralField.from_real(rng.normal(size=13))
    b = SpectralField.from_real(rng.normal(size=13))
    s = base_energy(a, b, method="spectral")
    g = base_energy(a, b, method="grid")
    assert abs(s.shell_kinetic - g.shell_kinetic) < 1e-10 * max(1, s.shell_kinetic)
    assert abs(s.shell_elastic - g.shell_elastic) < 1e-10 * max(1, s.shell_elastic)
    with pytest.raises(ValueError):
        base_energy(a, b, method="other")


def test_base_energy_fluid_terms(mesh):
    v = np.tile([1.0, 2.0], (mesh.n_quad, 1))
    gv = np.zeros((mesh.n_quad, 2, 2))
    gv[:, 0, 0] = 1.0
    e = base_energy(SpectralField.zeros(2), SpectralField.zeros(2), v, gv, mesh.weights)
    area = mesh.areas.sum()
    assert e.fluid_l2 == pytest.approx(5 * area) and e.dissipation_rate == pytest.approx(area)


# --- acceleration energy ------------------------------------------------------


def test_accel_energy_requires_three_states():
    with pytest.raises(InsufficientHistory):
        accel_energy([0.0, 0.1], np.zeros((2, 9)), None, None, None)


def test_accel_energy_steady_state_is_zero():
    E = accel_energy(np.linspace(0, 1, 5), np.zeros((5, 9)), None, None, None)
    assert np.array_equal(E, np.zeros(5))


def test_accel_energy_closed_form_trajectory():
    omega, m = 3.0, 17
    y = uniform_grid(m)
    errs = []
    for N in (41, 81):
        t = np.linspace(0, 1, N)
        rates = omega * np.cos(omega * t)[:, None] * np.sin(TWO_PI * y)[None, :]
        E = accel_energy(t, rates, None, None, None)
        exact = omega**4 * np.sin(omega * t) ** 2 / 2 + omega**2 * TWO_PI**4 * np.cos(omega * t) ** 2 / 2
        errs.append(np.abs(E - exact).max() / exact.max())
    assert errs[1] < 1e-3
    assert np.log2(errs[0] / errs[1]) > 1.8


def test_accel_energy_fluid_part(mesh):
    t = np.linspace(0, 1, 5)
    fluid = t[:, None, None] * np.ones((5, mesh.n_quad, 2))
    E = accel_energy(t, np.zeros((5, 9)), fluid, mesh.weights, np.full(5, 0.5))
    assert np.allclose(E, 2 * mesh.areas.sum() + 0.5)


# --- forcing functional, residuals, guard -------------------------------------------


def test_forcing_H_is_one_without_forcing():
    assert forcing_H(Forcing.zero(), 0.0, None, None, None, uniform_grid(9)) == 1.0


def test_forcing_H_shell_part():
    fc = Forcing.from_expressions(g="t*sin(2*pi*y)")
    y = uniform_grid(33)
    H = forcing_H(fc, 2.0, None, None, None, y)
    # |g|^2 = 2, |g_y|^2 = 4 (2 pi)^2 / 2, |g_t|^2 = 1/2
    assert H == pytest.approx(1 + 2 + 2 * TWO_PI**2 + 0.5, rel=1e-12)


@given(st.floats(-5, 5), st.floats(-5, 5))
@settings(max_examples=20, deadline=None)
def test_forcing_H_at_least_one(a, b):
    mesh = _small_mesh()
    fc = Forcing.from_expressions(f"{a}*x1", f"{b}*t", f"{a}*cos(2*pi*y)")
    F = np.broadcast_to(np.eye(2), (mesh.n_quad, 2, 2))
    assert forcing_H(fc, 0.5, mesh.quad_points, F, mesh.weights, uniform_grid(9)) >= 1.0


_MESH = {}


def _small_mesh():
    if "m" not in _MESH:
        _MESH["m"] = build_onion_mesh(2, 8)
    return _MESH["m"]


def test_divergence_residual_detects_compressible_field(mesh):
    B = np.broadcast_to(np.eye(2), (mesh.n_quad, 2, 2))
    rot = np.zeros((mesh.n_quad, 2, 2))
    rot[:, 0, 1], rot[:, 1, 0] = -1.0, 1.0
    assert divergence_residual(B, rot, mesh.weights) == 0.0
    grad = np.broadcast_to(np.eye(2), (mesh.n_quad, 2, 2))
    assert divergence_residual(B, grad, mesh.weights) == pytest.approx(2 * np.sqrt(mesh.areas.sum()))


def test_coupling_residual_zero_and_exact():
    y = uniform_grid(9)
    n = np.stack([np.cos(TWO_PI * y), np.sin(TWO_PI * y)], axis=1)
    assert coupling_residual(np.zeros((9, 2)), np.zeros(9)) == 0.0
    rate = np.sin(TWO_PI * y)
    assert coupling_residual(rate[:, None] * n, rate) < 1e-15
    assert coupling_residual(rate[:, None] * n + 0.1, rate) == pytest.approx(0.1)


def test_ansatz_states_satisfy_coupling(system):
    zeta = SpectralField.from_modes([("sin", 1, 0.04)], 16)
    traj = ShellTrajectory.constant(zeta, 0.02)
    alpha0 = initial_coefficients(system, zeta, SpectralField.from_modes([("cos", 1, 0.3)], 16))
    res = run_decoupled(system, traj, zeta, alpha0, 0.02, 0.01)
    assert max(r["coupling_residual"] for r in res.rows) < 1e-12
    assert list(res.rows[0]) == list(COLUMN_NAMES)


def test_guard_examples():
    a = DEFAULT_DOMAIN.alpha
    assert guard(a, SpectralField.zeros(3)) == a
    assert guard(a, SpectralField.from_modes([("const", 0, a)], 3)) == pytest.approx(0.0, abs=1e-15)
    assert guard(a, sine(1.1 * a)) < 0


def test_piola_residual_converges():
    eta = SpectralField.from_modes([("sin", 1, 0.05)], 4)
    r = [piola_residual(build_onion_mesh(R, 4 * R), DEFAULT_DOMAIN, eta) for R in (4, 8, 16)]
    assert r[0] > r[1] > r[2]
    assert piola_residual(build_onion_mesh(4, 16), DEFAULT_DOMAIN, SpectralField.zeros(4)) < 1e-12


# --- Gronwall comparison ---------------------------------------------------------


def test_gronwall_exponential_fails_at_ln2():
    t = np.linspace(0, 1, 2001)
    r = gronwall_check(t, np.exp(t), 0.0, 1.0, 1.0, 1.0)
    assert abs(r.T_tilde - np.log(2)) < 1e-6
    assert r.passed  # holds up to the comparison time
    assert abs(r.violation_time - np.log(2)) < 1e-4
    short = t <= 0.6
    assert gronwall_check(t[short], np.exp(t[short]), 0.0, 1.0, 1.0, 1.0).violation_time is None


def test_gronwall_constant_passes():
    t = np.linspace(0, 1, 101)
    r = gronwall_check(t, np.ones_like(t), 0.0, 1.0, 1.0, 1.0)
    assert r.passed and r.violation_time is None and r.margin == pytest.approx(1.0)


def test_gronwall_blowup_time():
    r = gronwall_check(np.linspace(0, 0.5, 11), np.ones(11), 0.0, 1.0, 1.0, 4.0)
    # g' = g^4, g(0) = 1 blows up at 1/3
    assert r.blowup and abs(r.blowup_time - 1 / 3) < 1e-6
    assert r.T_tilde <= r.blowup_time


def test_gronwall_bit_stable():
    t = np.linspace(0, 1, 201)
    a = gronwall_check(t, np.exp(t), 0.0, 1.0, 1.0, 1.0)
    b = gronwall_check(t, np.exp(t), 0.0, 1.0, 1.0, 1.0)
    assert a == b


def test_gronwall_rejects_bad_input():
    t = np.linspace(0, 1, 5)
    with pytest.raises(ValueError):
        gronwall_check(t, -np.ones(5), 0.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        gronwall_check(t, np.ones(5), 0.0, 1.0, 1.0, 0.5)


@given(st.floats(0.1, 3.0), st.floats(0.0, 2.0), st.floats(1.0, 3.0))
@settings(max_examples=25, deadline=None)
def test_gronwall_monotone_in_c1(c1, extra, p):
    t = np.linspace(0, 1, 51)
    a = gronwall_check(t, np.ones_like(t), 0.1, 1.0, c1, p)
    b = gronwall_check(t, np.ones_like(t), 0.1, 1.0, c1 + extra, p)
    assert b.T_tilde <= a.T_tilde + 1e-9
