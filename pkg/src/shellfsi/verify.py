"""Quick property suites runnable from the command line."""

from __future__ import annotations

import numpy as np

from .spectral import SpectralField, uniform_grid

SEED = 20240101


def _geometry():
    from .geometry import (DEFAULT_DOMAIN, boundary_fields, hanzawa, hanzawa_inverse,
                           normal_invariance_check)

    rng = np.random.default_rng(SEED)
    dom = DEFAULT_DOMAIN
    worst = 0.0
    for _ in range(20):
        c = rng.normal(size=4) * np.array([1, 1, 0.5, 0.5])
        eta = SpectralField.from_modes([("const", 0, c[0]), ("cos", 1, c[1]), ("sin", 2, c[2]),
                                        ("cos", 3, c[3])], 4)
        eta = (0.9 * dom.alpha / max(eta.sup_norm(), 1e-12)) * eta
        r = np.sqrt(rng.uniform(0, 1, 50))
        th = rng.uniform(0, 2 * np.pi, 50)
        x = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
        worst = max(worst, float(np.abs(hanzawa_inverse(dom, eta, hanzawa(dom, eta, x)) - x).max()))
    const = SpectralField.from_modes([("const", 0, 0.05)], 2)
    jdef = float(np.abs(boundary_fields(dom, const, uniform_grid(33)).J - 1.05).max())
    nrm = normal_invariance_check(dom, SpectralField.from_modes([("sin", 1, 0.05)], 2))
    return [("hanzawa round trip < 1e-10", worst < 1e-10, worst),
            ("boundary determinant 1 + c", jdef < 1e-10, jdef),
            ("normal invariance < 1e-8", nrm < 1e-8, nrm)]


def _basis():
    from .basis import build_basis
    from .mesh import build_onion_mesh

    mesh = build_onion_mesh(6, 24)
    b = build_basis(mesh, 10, 16)
    G = b.stokes @ mesh.vector_stiffness @ b.stokes.T
    gram = float(np.abs(G - np.eye(G.shape[0])).max())
    mono = bool(np.all(np.diff(b.lam) >= 0) and b.lam[0] > 0)
    return [("Stokes gradient Gram defect < 1e-10", gram < 1e-10, gram),
            ("eigenvalues positive and nondecreasing", mono, float(b.lam[0]))]


def _correction():
    from .correction import CorrectionContext, corrector
    from .mesh import build_onion_mesh

    val = corrector(SpectralField.from_modes([("sin", 1, 1.0)], 2), SpectralField.from_modes([("sin", 1, 0.1)], 2))
    mesh = build_onion_mesh(6, 24)
    ctx = CorrectionContext(mesh)
    v = mesh.vertices
    res = ctx.bogovskij(np.exp(-20 * ((v[:, 0] - 0.3) ** 2 + v[:, 1] ** 2))).residual
    U, _ = ctx.solenoidal_extend(SpectralField.from_modes([("cos", 1, 1.0)], 2), SpectralField.zeros(2))
    flux = abs(ctx.discrete_flux(U))
    return [("corrector closed form 0.05", abs(val - 0.05) < 1e-10, val),
            ("Bogovskij divergence residual < 1e-8", res < 1e-8, res),
            ("extension flux < 1e-8", flux < 1e-8, flux)]


def _gronwall():
    from .diagnostics import gronwall_check

    t = np.linspace(0, 1, 2001)
    r1 = gronwall_check(t, np.exp(t), 0.0, 1.0, 1.0, 1.0)
    r2 = gronwall_check(t, np.ones_like(t), 0.0, 1.0, 1.0, 1.0)
    r3 = gronwall_check(np.linspace(0, 0.5, 11), np.ones(11), 0.0, 1.0, 1.0, 4.0)
    exact = 1.0 / 3.0
    err = abs(r3.blowup_time - exact) if r3.blowup else np.inf
    return [("e^t fails at ln 2", abs(r1.violation_time - np.log(2)) < 1e-4, r1.violation_time),
            ("constant f passes", r2.passed, r2.margin),
            ("p = 4 blow-up time", err < 1e-6, err)]


SUITES = {"geometry": _geometry, "basis": _basis, "correction": _correction, "gronwall": _gronwall}


def run_suite(name: str):
    """Return ``[(check, passed, value)]`` for one suite or ``all``."""
    if name == "all":
        out = []
        for key in SUITES:
            out += [(f"{key}: {c}", ok, v) for c, ok, v in SUITES[key]()]
        return out
    if name not in SUITES:
        raise KeyError(name)
    return SUITES[name]()
