import numpy as np
import pytest
from scipy.linalg import expm

from shellfsi.basis import QuadField, build_basis
from shellfsi.dynamics import (GalerkinSystem, Physics, ShellTrajectory, initial_coefficients, mollify_geometry,
                               regularize_initial_data, run_coupled, run_decoupled, shell_distance, step)
from shellfsi.errors import IncompatibleData, NoContraction
from shellfsi.forcing import Forcing
from shellfsi.geometry import DEFAULT_DOMAIN
from shellfsi.spectral import SpectralField

K = 16
TWO_PI = 2 * np.pi


def modes(*triples):
    return SpectralField.from_modes(list(triples), K)


def zero():
    return SpectralField.zeros(K)


def raw_gram(basis):
    """Mass matrix at the reference geometry from the assembled FE mass matrix."""
    X = basis.modes
    fluid = X @ (basis.mesh.vector_mass @ X.T)
    shell = np.array([[np.mean(basis.shell_function(i).to_samples(64) * basis.shell_function(j).to_samples(64))
                       for j in range(1, basis.n + 1)] for i in range(1, basis.n + 1)])
    return fluid + shell


# --- mass matrix ----------------------------------------------------------------


def test_mass_matches_raw_gram_at_reference(system, basis):
    geo = system.geometry(0.0, zero(), zero(), rates=False)
    assert np.abs(geo.mass - raw_gram(basis)).max() < 1e-10


def test_mass_symmetric_positive_definite(system):
    for zeta in (modes(("sin", 1, 0.05)), modes(("cos", 3, 0.08), ("sin", 2, 0.01)), modes(("const", 0, -0.09))):
        A = system.geometry(0.0, zeta, zero(), rates=False).mass
        assert np.abs(A - A.T).max() < 1e-12
        assert np.linalg.eigvalsh(A).min() > 0


def test_mass_is_linear_in_densities(basis):
    z = modes(("sin", 1, 0.04))
    A1 = GalerkinSystem(basis, DEFAULT_DOMAIN, Physics(1.0, 1.0)).geometry(0.0, z, zero(), rates=False).mass
    A2 = GalerkinSystem(basis, DEFAULT_DOMAIN, Physics(2.0, 3.0)).geometry(0.0, z, zero(), rates=False).mass
    fluid, shell = 3 * A1 - A2, A2 - 2 * A1
    assert np.linalg.eigvalsh(fluid).min() > 0
    # the shell block only sees the coupled modes
    assert np.abs(shell[:, ~basis.is_shell]).max() < 1e-12
    assert np.linalg.matrix_rank(shell, tol=1e-10) == basis.n_shell


# --- right-hand side pieces ---------------------------------------------------


def test_zero_state_has_zero_rhs(system):
    geo = system.geometry(0.0, zero(), zero())
    assert np.array_equal(system.rhs(geo, np.zeros(system.n), zero(), 0.0), np.zeros(system.n))


def test_bilaplacian_closed_form(system):
    geo = system.geometry(0.0, zero(), zero())
    a = 0.01
    b = system.bilaplacian(geo, modes(("cos", 1, a)))
    expected = np.zeros(system.n)
    expected[0] = TWO_PI**4 * a * np.sqrt(2) / 2  # shell mode 1 is sqrt(2) cos
    assert np.allclose(b, expected, atol=1e-9)


def test_convection_is_skew(system, rng):
    geo = system.geometry(0.0, modes(("sin", 1, 0.06), ("cos", 2, 0.02)), modes(("cos", 1, 0.4)))
    for _ in range(3):
        z = rng.normal(size=system.n)
        assert abs(z @ system.convection(geo, z)) < 1e-12 * np.abs(z).max() ** 3 * 1e3


def test_convection_jacobian_matches_finite_differences(system, rng):
    geo = system.geometry(0.0, modes(("sin", 1, 0.06)), modes(("cos", 1, 0.4)))
    z = rng.normal(size=system.n)
    _, dC = system.convection(geo, z, jacobian=True)
    h = 1e-6
    fd = np.array([(system.convection(geo, z + h * e) - system.convection(geo, z - h * e)) / (2 * h)
                   for e in np.eye(system.n)]).T
    assert np.abs(dC - fd).max() < 1e-6 * max(1.0, np.abs(fd).max())


def test_viscous_block_positive_semidefinite(system):
    geo = system.geometry(0.0, modes(("sin", 1, 0.06)), zero())
    assert np.linalg.eigvalsh(0.5 * (geo.parts["Vis"] + geo.parts["Vis"].T)).min() > 0


# --- a single coupled mode is a damped oscillator ------------------------------


def test_single_mode_matches_damped_oscillator(mesh):
    basis = build_basis(mesh, 1, K)
    system = GalerkinSystem(basis, DEFAULT_DOMAIN, Physics(1.0, 1.0, 1.0, 1.0))
    X = basis.modes[0]
    m = X @ (mesh.vector_mass @ X) + 1.0
    c = X @ (mesh.vector_stiffness @ X)
    k = TWO_PI**4
    # state (shell amplitude on sqrt(2) cos, rate); eta = a * sqrt(2) cos
    G = np.array([[0.0, 1.0], [-k / m, -c / m]])
    a0, T = 0.01, 0.2
    exact = expm(G * T) @ np.array([a0, 0.0])
    errs = []
    for dt in (2e-3, 1e-3):
        traj = ShellTrajectory.constant(zero(), T)
        res = run_decoupled(system, traj, modes(("cos", 1, a0 * np.sqrt(2))), np.zeros(1), T, dt)
        a = res.final_eta.to_real()[1] / np.sqrt(2)
        errs.append(abs(a - exact[0]) + abs(res.final_alpha[0] - exact[1]) / 10)
    assert errs[1] < 2e-3 * a0 * 10
    assert np.log2(errs[0] / errs[1]) > 1.8


# --- steps and runs -----------------------------------------------------------


def test_step_energy_balance_defect(system):
    traj = ShellTrajectory.from_function(lambda t, y: 0.03 * np.sin(TWO_PI * y) * np.cos(3 * t),
                                         lambda t, y: -0.09 * np.sin(TWO_PI * y) * np.sin(3 * t),
                                         np.linspace(0, 0.1, 11), K)
    alpha = np.linspace(0.1, -0.1, system.n)
    st = step(system, traj, 0.0, 0.01, alpha, modes(("sin", 1, 0.03)))
    assert abs(st.defect) < 1e-10
    assert st.work["viscous"] > 0 and st.iterations >= 1


def test_step_rejects_bad_dt(system):
    with pytest.raises(ValueError):
        step(system, ShellTrajectory.constant(zero(), 1.0), 0.0, 0.0, np.zeros(system.n), zero())


def test_zero_data_stays_zero(system):
    res = run_decoupled(system, ShellTrajectory.constant(zero(), 0.05), zero(), np.zeros(system.n), 0.05, 0.01)
    assert res.reason is None and len(res.times) == 6
    for row in res.rows:
        for key in ("shell_kinetic", "shell_elastic", "fluid_l2", "energy", "viscous_dissipation",
                    "accel_energy", "balance_defect"):
            assert row[key] == 0.0
        assert row["forcing_H"] == 1.0 and row["min_J"] == 1.0


def test_decoupled_run_dissipates_at_reference_geometry(system):
    eta0 = modes(("cos", 1, 0.01))
    alpha0 = initial_coefficients(system, zero(), modes(("sin", 2, 0.05)))
    res = run_decoupled(system, ShellTrajectory.constant(zero(), 0.05), eta0, alpha0, 0.05, 0.005)
    E = np.array([r["energy"] for r in res.rows])
    assert np.all(np.diff(E) <= 1e-14)
    assert max(abs(r["balance_defect"]) for r in res.rows) < 1e-10
    # energy drop equals accumulated viscous work
    assert E[0] - E[-1] == pytest.approx(res.rows[-1]["viscous_dissipation"], rel=1e-8)


def test_horizon_must_be_multiple_of_dt(system):
    with pytest.raises(ValueError):
        run_decoupled(system, ShellTrajectory.constant(zero(), 1.0), zero(), np.zeros(system.n), 0.05, 0.03)


def test_self_intersection_returns_partial_result(basis):
    forcing = Forcing.from_expressions(g="2000*cos(2*pi*y)")
    system = GalerkinSystem(basis, DEFAULT_DOMAIN, Physics(), forcing)
    res = run_decoupled(system, ShellTrajectory.constant(zero(), 0.5), zero(), np.zeros(system.n), 0.5, 0.01)
    assert res.reason == "SelfIntersection"
    assert res.rejected is not None and res.rejected.margin < 0
    assert 0 < len(res.times) < 51
    assert res.stop_time == res.times[-1]
    assert all(r["guard_margin"] >= 0 and r["min_J"] > 0 for r in res.rows)


def test_initial_amplitude_violation_stops_immediately(system):
    res = run_decoupled(system, ShellTrajectory.constant(zero(), 0.1), modes(("const", 0, 0.2)),
                        np.zeros(system.n), 0.1, 0.01)
    assert res.reason == "SelfIntersection" and res.times == [] and res.stop_time == 0.0


# --- trajectories and smoothing ---------------------------------------------


def test_hermite_interpolation_exact_for_cubics():
    fn = lambda t, y: (t**3 - 2 * t) * np.cos(TWO_PI * y)  # noqa: E731
    fn_t = lambda t, y: (3 * t**2 - 2) * np.cos(TWO_PI * y)  # noqa: E731
    traj = ShellTrajectory.from_function(fn, fn_t, np.array([0.0, 0.5, 1.0]), 2)
    val, rate = traj.at(0.3)
    assert val.to_real()[1] == pytest.approx(0.3**3 - 0.6, abs=1e-13)
    assert rate.to_real()[1] == pytest.approx(3 * 0.09 - 2, abs=1e-12)


def test_mollify_geometry_zero_radius_and_smoothing():
    traj = ShellTrajectory.from_function(lambda t, y: 0.01 * np.cos(8 * TWO_PI * y) + 0 * t,
                                         lambda t, y: 0 * y, np.linspace(0, 0.1, 11), K)
    assert mollify_geometry(traj, 0.0) is traj
    sm = mollify_geometry(traj, 0.02)
    expected = 0.01 * np.exp(-0.5 * 0.02**2 * (8 * TWO_PI) ** 2)
    # constant in time: temporal smoothing keeps it, spatial smoothing damps mode 8
    assert np.allclose(np.abs(sm.coeffs[:, K + 8]) * 2, expected, rtol=1e-12)


def test_shell_distance_properties():
    a = ShellTrajectory.constant(modes(("cos", 1, 0.01)), 1.0)
    b = ShellTrajectory.constant(zero(), 1.0)
    assert shell_distance(a, a) == 0.0
    assert shell_distance(a, b) == pytest.approx(TWO_PI**2 * 0.01 / np.sqrt(2), rel=1e-12)


# --- initial data -------------------------------------------------------------


def test_initial_coefficients_reproduce_shell_mode(system):
    c = initial_coefficients(system, zero(), modes(("cos", 1, 0.3 * np.sqrt(2))))
    e = np.zeros(system.n)
    e[0] = 0.3
    assert np.abs(c - e).max() < 1e-12


def test_regularize_without_smoothing_is_identity(system):
    e0, es = modes(("sin", 1, 0.01)), modes(("cos", 2, 0.1))
    out = regularize_initial_data(system, e0, es)
    assert out[0] is e0 and out[1] is es and out[2] is None


def test_regularize_restores_compatibility(system):
    e0, es = modes(("sin", 1, 0.02)), modes(("cos", 2, 0.1), ("sin", 5, 0.05))
    r0, rs, v = regularize_initial_data(system, e0, es, eps=0.02)
    assert r0.sup_norm() < e0.sup_norm() + 1e-15
    n = system.normal
    gap = np.abs(v.trace - rs.evaluate(system.y)[:, None] * n).max()
    assert gap < 1e-8


def test_incompatible_velocity_rejected(system):
    P = system.mesh.n_quad
    bad = QuadField(np.zeros((P, 2)), np.zeros((P, 2, 2)), np.ones((system.m, 2)))
    with pytest.raises(IncompatibleData):
        regularize_initial_data(system, zero(), zero(), bad)


# --- fixed-point coupling -------------------------------------------------------


def test_coupled_zero_data_converges_immediately(system):
    rep = run_coupled(system, zero(), zero(), 0.02, 0.01)
    assert rep.converged and rep.iterations == 1 and rep.distances == [0.0]


def test_coupled_reports_no_contraction_when_budget_exhausted(system):
    rep = run_coupled(system, modes(("sin", 1, 0.01)), zero(), 0.02, 0.01, max_outer=1)
    assert not rep.converged and rep.reason == "NoContraction"
    with pytest.raises(NoContraction):
        run_coupled(system, modes(("sin", 1, 0.01)), zero(), 0.02, 0.01, max_outer=1, raise_on_failure=True)


def test_coupled_run_conserves_enclosed_area(system):
    rep = run_coupled(system, modes(("sin", 1, 0.01)), modes(("cos", 1, 0.2)), 0.05, 0.005, tol=1e-10)
    assert rep.converged
    # area of the deformed disk: pi + 2 pi mean(eta) + pi mean(eta^2)
    areas = [np.pi * (1 + 2 * e.mean() + np.mean(e.to_samples(65) ** 2)) for e in rep.result.etas]
    assert np.ptp(areas) < 1e-6
