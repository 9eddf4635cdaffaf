"""Run orchestration: build the discretisation from a config, integrate, write artifacts."""

from __future__ import annotations

import hashlib
import logging
from pathlib import Path

import numpy as np

from . import __version__
from .basis import GalerkinBasis, QuadField, build_basis
from .config import RunConfig, parse_modes
from .dynamics import (GalerkinSystem, Physics, ShellTrajectory, initial_coefficients, mollify_geometry,
                       regularize_initial_data, run_coupled, run_decoupled)
from .errors import (ConfigError, IncompatibleData, IOFailure, NoContraction, NoConvergence, NotSPD,
                     SelfIntersection, ShellFSIError)
from .forcing import Forcing, _lambdify, parse_expression
from .geometry import ReferenceDomain, hanzawa, transform_fields
from .io import (read_trajectory, write_csv, write_manifest, write_plot_data, write_schema, write_snapshot,
                 write_trajectory)
from .mesh import build_onion_mesh
from .pressure import recover_pressure
from .spectral import SpectralField

log = logging.getLogger(__name__)

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

SOLVER_STOPS = (SelfIntersection, NoContraction, NoConvergence, NotSPD)


def domain_from_config(cfg: RunConfig) -> ReferenceDomain:
    return ReferenceDomain(L=cfg.L, alpha=cfg.alpha, plateau=cfg.plateau)


def basis_from_config(cfg: RunConfig, base: Path = Path(".")):
    """Mesh and Galerkin basis, loading the cache when it matches the mesh."""
    mesh = build_onion_mesh(cfg.rings, cfg.segments)
    if cfg.basis_cache:
        path = base / cfg.basis_cache
        if path.exists():
            basis = GalerkinBasis.load(path, mesh)
            if basis.n >= cfg.n and basis.K == cfg.K:
                return mesh, basis.truncate(cfg.n)
    return mesh, build_basis(mesh, cfg.n, cfg.K)


def basis_hash(basis: GalerkinBasis, path: Path) -> str:
    basis.save(path)
    return hashlib.sha256(path.read_bytes()).hexdigest()


def shell_trajectory_from_expression(text: str, times, K: int) -> ShellTrajectory:
    import sympy

    expr = parse_expression(text, ("t", "y"))
    fn = _lambdify(expr, ("t", "y"))
    fn_t = _lambdify(sympy.diff(expr, sympy.Symbol("t", real=True)), ("t", "y"))
    return ShellTrajectory.from_function(fn, fn_t, times, K)


def velocity_from_expressions(system: GalerkinSystem, eta0: SpectralField, text: str) -> QuadField:
    """Initial velocity ``v0(x)`` given on the deformed domain, pulled back to the reference."""
    import sympy

    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ConfigError("v0 must be 'lift' or two comma-separated expressions")
    variables = ("x1", "x2")
    exprs = [parse_expression(p, variables) for p in parts]
    syms = [sympy.Symbol(v, real=True) for v in variables]
    comps = [_lambdify(e, variables) for e in exprs]
    grads = [[_lambdify(sympy.diff(e, s), variables) for s in syms] for e in exprs]
    x = hanzawa(system.domain, eta0, system.mesh.quad_points)
    tf = transform_fields(system.domain, eta0, system.points)
    vals = np.stack([c(x[:, 0], x[:, 1]) for c in comps], axis=1)
    gx = np.stack([np.stack([g(x[:, 0], x[:, 1]) for g in row], axis=1) for row in grads], axis=1)
    grads_ref = np.matmul(gx, tf.F)
    y = system.y
    xb = hanzawa(system.domain, eta0, system.domain.curve.frame(y)[0])
    trace = np.stack([c(xb[:, 0], xb[:, 1]) for c in comps], axis=1)
    return QuadField(vals, grads_ref, trace)


def _snapshot(system, traj, result, idx, path, mesh_file):
    t = result.times[idx]
    zeta, _ = traj.at(t)
    mesh = system.mesh
    U = (result.alphas[idx] @ system.basis.modes).reshape(2, mesh.n2).T
    v = transform_fields(system.domain, zeta, mesh.nodes, check=False).piola(U)
    try:
        pi = recover_pressure(system, traj, result, idx).values
    except ShellFSIError:
        pi = np.zeros(mesh.n1)
    write_snapshot(path, t, {
        "v": v, "pi": pi,
        "eta": result.etas[idx].to_real(),
        "eta_t": result.eta_rates[idx].to_real(),
    }, mesh_file=mesh_file, mesh_hash=mesh.hash)


def simulate(cfg: RunConfig, out_dir, base: Path = Path(".")) -> tuple[int, dict]:
    """Run a configured scenario and write every artifact into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IOFailure(f"cannot create output directory {out}: {exc}") from exc
    manifest = {"config": cfg.as_dict(), "version": __version__, "status": "error", "reason": None,
                "message": "", "exit_code": None}
    code = EXIT_OK
    try:
        code = _simulate(cfg, out, base, manifest)
    except ConfigError as exc:
        code, manifest["reason"], manifest["message"] = EXIT_VALIDATION, type(exc).__name__, str(exc)
    except IncompatibleData as exc:
        code, manifest["reason"], manifest["message"] = EXIT_VALIDATION, "IncompatibleData", str(exc)
    except SOLVER_STOPS as exc:
        code, manifest["reason"], manifest["message"] = EXIT_SOLVER, type(exc).__name__, str(exc)
        manifest["status"] = "stopped"
    except IOFailure as exc:
        code, manifest["reason"], manifest["message"] = EXIT_IO, "IOFailure", str(exc)
    manifest["exit_code"] = code
    write_manifest(out / "manifest.json", manifest)
    return code, manifest


def _simulate(cfg: RunConfig, out: Path, base: Path, manifest: dict) -> int:
    domain = domain_from_config(cfg)
    mesh, basis = basis_from_config(cfg, base)
    (out / "mesh.txt").write_text(mesh.to_text())
    manifest["mesh_hash"] = mesh.hash
    manifest["basis_hash"] = basis_hash(basis, out / "basis.bin")
    forcing = Forcing.from_expressions(cfg.f1, cfg.f2, cfg.g)
    physics = Physics(cfg.rho_f, cfg.rho_s, cfg.mu, cfg.stiffness)
    system = GalerkinSystem(basis, domain, physics, forcing, eps=cfg.eps)
    K = cfg.K
    eta0 = SpectralField.from_modes(parse_modes(cfg.eta0), K)
    eta_star = SpectralField.from_modes(parse_modes(cfg.eta_star), K)
    v0 = None if cfg.v0.strip() == "lift" else velocity_from_expressions(system, eta0, cfg.v0)
    eta0, eta_star, v0 = regularize_initial_data(system, eta0, eta_star, v0, cfg.mollify)
    eta_star = SpectralField(eta_star.resized(K).coeffs)
    nsteps = int(round(cfg.T / cfg.dt))

    if cfg.mode == "coupled":
        report = run_coupled(system, eta0, eta_star, cfg.T, cfg.dt, cfg.max_outer, cfg.tol, cfg.theta,
                             cfg.mollify, v0)
        result = report.result
        traj = result.shell_trajectory()
        manifest["coupling"] = {"iterations": report.iterations, "converged": report.converged,
                                "distances": report.distances, "factors": report.factors,
                                "horizon": report.horizon}
        reason, message = report.reason, report.message
    else:
        times = np.linspace(0.0, cfg.T, nsteps + 1)
        if cfg.zeta_file:
            traj = read_trajectory(base / cfg.zeta_file).resized(K)
        else:
            traj = shell_trajectory_from_expression(cfg.zeta, times, K)
        traj = mollify_geometry(traj, cfg.mollify) if cfg.mollify > 0 else traj
        alpha0 = initial_coefficients(system, traj.at(0.0)[0], eta_star, v0)
        result = run_decoupled(system, traj, eta0, alpha0, cfg.T, cfg.dt)
        reason, message = result.reason, result.message

    write_csv(out / "diagnostics.csv", result.rows)
    write_schema(out / "diagnostics.schema.txt")
    write_plot_data(out, result.rows)
    if len(result.times) > 1:
        write_trajectory(out / "trajectory.txt", result.shell_trajectory())
    if cfg.snapshots:
        snap = out / "snapshots"
        snap.mkdir(exist_ok=True)
        for idx in range(0, len(result.times), cfg.cadence):
            _snapshot(system, traj, result, idx, snap / f"snap_{idx:06d}.bin", "../mesh.txt")
    manifest["steps"] = max(len(result.times) - 1, 0)
    manifest["final_time"] = result.times[-1] if result.times else 0.0
    manifest["reason"] = reason
    manifest["message"] = message
    if reason is None:
        manifest["status"] = "ok"
        return EXIT_OK
    manifest["status"] = "stopped"
    manifest["stop_time"] = result.stop_time
    return EXIT_SOLVER
