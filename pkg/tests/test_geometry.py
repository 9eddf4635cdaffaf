import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from shellfsi.errors import AmplitudeExceeded, NonInvertible, OutOfTube
from shellfsi.geometry import (DEFAULT_DOMAIN, SMOOTHSTEP_SLOPE, FourierCurve, ReferenceDomain, boundary_fields,
                               default_alpha, hanzawa, hanzawa_inverse, normal_invariance_check,
                               transform_fields_chart,
                               transform_fields, tubular_coords)
from shellfsi.spectral import SpectralField

DOM = DEFAULT_DOMAIN


def const(c, K=2):
    return SpectralField.from_modes([("const", 0, c)], K)


def sin1(a=0.05, K=2):
    return SpectralField.from_modes([("sin", 1, a)], K)


def blend_oracle():
    """Normalised antiderivative of t^3 (1 - t)^3, built symbolically."""
    t, u = sympy.symbols("t u")
    prim = sympy.integrate(u**3 * (1 - u) ** 3, (u, 0, t))
    return sympy.lambdify(t, prim / prim.subs(t, 1))


def disk_points(rng, n, rmin=0.0):
    r = np.sqrt(rng.uniform(rmin**2, 1, n))
    th = rng.uniform(0, 2 * np.pi, n)
    return np.stack([r * np.cos(th), r * np.sin(th)], axis=1)


# --- blend -----------------------------------------------------------------


def test_blend_matches_symbolic_polynomial():
    f = blend_oracle()
    s = np.linspace(-0.5, 0, 41)
    t = np.clip((s + DOM.L) / DOM.ramp, 0, 1)
    assert np.allclose(DOM.blend(s)[0], f(t), atol=1e-14)


def test_blend_endpoints_and_slope_bound():
    b, db, ddb = DOM.blend(np.array([-DOM.L, 0.0, -0.05]))
    assert b.tolist() == [0.0, 1.0, 1.0]
    assert np.allclose(db, 0) and np.allclose(ddb, 0)
    s = np.linspace(-DOM.L, 0, 20001)
    assert DOM.blend(s)[1].max() == pytest.approx(SMOOTHSTEP_SLOPE / DOM.ramp, rel=1e-6)
    assert DOM.alpha * DOM.blend_slope_max <= 0.9


def test_blend_derivatives_match_finite_differences():
    s = np.linspace(-0.49, -0.06, 30)
    h = 1e-6
    b, db, ddb = DOM.blend(s)
    assert np.allclose(db, (DOM.blend(s + h)[0] - DOM.blend(s - h)[0]) / (2 * h), atol=1e-7)
    assert np.allclose(ddb, (DOM.blend(s + h)[1] - DOM.blend(s - h)[1]) / (2 * h), atol=1e-5)


def test_domain_rejects_bad_alpha():
    with pytest.raises(ValueError):
        ReferenceDomain(alpha=0.6)
    with pytest.raises(ValueError):
        ReferenceDomain(alpha=0.3)  # slope margin violated
    assert default_alpha(0.5) * SMOOTHSTEP_SLOPE / (0.9 * 0.5) == pytest.approx(0.45)


# --- tubular coordinates ------------------------------------------------------


def test_tubular_coords_boundary_point():
    tc = tubular_coords(DOM, [1.0, 0.0])
    assert tc.y == 0.0 and tc.s == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(tc.p, [1, 0])


def test_tubular_coords_interior_point():
    tc = tubular_coords(DOM, [0.9, 0.0])
    assert tc.y == 0.0 and tc.s == pytest.approx(-0.1, abs=1e-14)
    assert np.allclose(tc.p, [1, 0], atol=1e-15)


def test_tubular_coords_out_of_tube():
    with pytest.raises(OutOfTube):
        tubular_coords(DOM, [0.3, 0.0])


def test_tubular_coords_general_curve_reconstructs():
    dom = ReferenceDomain(curve=FourierCurve.ellipse(1.2, 1.0), L=0.3, alpha=0.05)
    x = np.array([1.0, 0.3])
    tc = tubular_coords(dom, x)
    n = dom.curve.normal(np.array([tc.y]))[0]
    assert np.allclose(tc.p + tc.s * n, x, atol=1e-12)
    assert tc.s < 0


# --- Hanzawa map --------------------------------------------------------------


def test_identity_for_zero_shell(rng):
    x = disk_points(rng, 100)
    zero = SpectralField.zeros(3)
    assert np.array_equal(hanzawa(DOM, zero, x), x)
    assert np.allclose(hanzawa_inverse(DOM, zero, x), x, atol=1e-15)


def test_constant_shell_boundary_point():
    assert np.allclose(hanzawa(DOM, const(0.05), [1.0, 0.0]), [1.05, 0.0], atol=1e-15)
    assert np.allclose(hanzawa_inverse(DOM, const(0.05), [1.05, 0.0]), [1.0, 0.0], atol=1e-14)


def test_constant_shell_interior_point_uses_blend():
    beta = blend_oracle()((-0.1 + 0.5) / 0.45)
    out = hanzawa(DOM, const(0.05), [0.9, 0.0])
    assert np.allclose(out, [0.9 + 0.05 * beta, 0.0], atol=1e-15)


def test_amplitude_guard():
    with pytest.raises(AmplitudeExceeded):
        hanzawa(DOM, const(0.2), [0.0, 0.0])


def test_points_outside_tube_are_fixed(rng):
    x = disk_points(rng, 50) * 0.5
    assert np.array_equal(hanzawa(DOM, sin1(), x), x)


@given(st.lists(st.floats(-1, 1), min_size=5, max_size=5), st.integers(0, 2**31))
@settings(max_examples=25, deadline=None)
def test_round_trip_random_shells(c, seed):
    c = np.array(c)
    eta = SpectralField.from_real(c)
    if eta.sup_norm() < 1e-9:
        return
    eta = (0.95 * DOM.alpha / eta.sup_norm()) * eta
    x = disk_points(np.random.default_rng(seed), 50, rmin=0.4)
    back = hanzawa_inverse(DOM, eta, hanzawa(DOM, eta, x))
    assert np.abs(back - x).max() < 1e-10


def test_round_trip_general_curve(rng):
    dom = ReferenceDomain(curve=FourierCurve.ellipse(1.2, 1.0), L=0.3, alpha=0.05)
    eta = SpectralField.from_modes([("cos", 2, 0.04)], 3)
    y = rng.uniform(0, 1, 20)
    s = rng.uniform(-0.29, 0, 20)
    p, _, n, _, _ = dom.curve.frame(y)
    x = p + s[:, None] * n
    assert np.abs(hanzawa_inverse(dom, eta, hanzawa(dom, eta, x)) - x).max() < 1e-10


# --- transform fields ---------------------------------------------------------


def test_identity_fields_for_zero_shell(rng):
    x = disk_points(rng, 60)
    tf = transform_fields(DOM, SpectralField.zeros(3), x, SpectralField.zeros(3))
    eye = np.broadcast_to(np.eye(2), tf.A.shape)
    assert np.array_equal(tf.J, np.ones(60))
    assert np.allclose(tf.A, eye, atol=1e-15) and np.allclose(tf.B, eye, atol=1e-15)
    assert np.array_equal(tf.W, np.zeros((60, 2)))


def test_gradient_matches_finite_differences(rng):
    eta = SpectralField.from_modes([("sin", 1, 0.05), ("cos", 3, 0.02)], 4)
    x = disk_points(rng, 40, rmin=0.55)
    tf = transform_fields(DOM, eta, x)
    h = 1e-6
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (hanzawa(DOM, eta, x + e) - hanzawa(DOM, eta, x - e)) / (2 * h)
        assert np.allclose(tf.F[:, :, j], fd, atol=1e-8)


def test_second_derivatives_match_finite_differences(rng):
    eta = SpectralField.from_modes([("sin", 2, 0.05)], 3)
    x = disk_points(rng, 30, rmin=0.55)
    tf = transform_fields(DOM, eta, x)
    h = 1e-5
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (transform_fields(DOM, eta, x + e).F - transform_fields(DOM, eta, x - e).F) / (2 * h)
        assert np.allclose(tf.dF[..., j], fd, atol=1e-7)
        fdJ = (transform_fields(DOM, eta, x + e).J - transform_fields(DOM, eta, x - e).J) / (2 * h)
        assert np.allclose(tf.dJ[:, j], fdJ, atol=1e-7)


def test_domain_velocity_matches_time_difference(rng):
    eta = SpectralField.from_modes([("sin", 1, 0.04)], 2)
    eta_t = SpectralField.from_modes([("cos", 2, 0.3)], 2)
    x = disk_points(rng, 30, rmin=0.6)
    tf = transform_fields(DOM, eta, x, eta_t)
    h = 1e-6
    # Psi_{eta + h eta_t}(x) - Psi_{eta - h eta_t}(x), pulled back by F^{-1}
    dPsi = (hanzawa(DOM, eta + h * eta_t, x) - hanzawa(DOM, eta - h * eta_t, x)) / (2 * h)
    W = -np.einsum("pij,pj->pi", tf.Finv, dPsi)
    assert np.allclose(tf.W, W, atol=1e-8)
    Jp = transform_fields(DOM, eta + h * eta_t, x).J
    Jm = transform_fields(DOM, eta - h * eta_t, x).J
    assert np.allclose(tf.dtJ, (Jp - Jm) / (2 * h), atol=1e-8)


def test_A_symmetric_positive_definite_and_J_positive(rng):
    eta = SpectralField.from_modes([("sin", 1, 0.09), ("cos", 4, 0.009)], 5)
    tf = transform_fields(DOM, eta, disk_points(rng, 500))
    assert tf.J.min() > 0
    assert np.allclose(tf.A, np.transpose(tf.A, (0, 2, 1)), atol=1e-14)
    assert np.linalg.eigvalsh(tf.A).min() > 0


def test_nonpositive_jacobian_detected():
    # beyond the amplitude cap the radial stretch 1 + eta beta' turns negative
    y = np.full(5, 0.25)
    s = np.full(5, -0.3)
    with pytest.raises(NonInvertible):
        transform_fields_chart(DOM, const(-0.4), y, s, check=False)


def test_boundary_determinant_constant_shell():
    y = np.arange(33) / 33
    for c in (0.05, -0.08, 0.1):
        tf = boundary_fields(DOM, const(c), y)
        assert np.abs(tf.J - (1 + c)).max() < 1e-10


def test_boundary_determinant_structure():
    y = np.arange(40) / 40
    shape = SpectralField.from_modes([("const", 0, 1.0)], 2)
    r1 = boundary_fields(DOM, 0.03 * shape, y).J / 1.03
    r2 = boundary_fields(DOM, -0.07 * shape, y).J / 0.93
    assert np.abs(r1 - r2).max() < 1e-10


@pytest.mark.parametrize("eta", [SpectralField.zeros(2), const(0.05), sin1()])
def test_normal_invariance(eta):
    assert normal_invariance_check(DOM, eta) < 1e-8
