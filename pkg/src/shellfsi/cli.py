"""Command line entry point: ``shellfsi simulate|verify|basis|gronwall``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigError, IOFailure, ShellFSIError
from .runner import EXIT_IO, EXIT_OK, EXIT_SOLVER, EXIT_VALIDATION


def _simulate(args) -> int:
    from .config import load_config
    from .runner import simulate

    cfg = load_config(args.config)
    base = Path(args.config).parent
    out = Path(args.output) if args.output else base / cfg.output
    code, manifest = simulate(cfg, out, base)
    status = manifest["status"]
    reason = manifest.get("reason")
    print(f"{status}: {manifest.get('steps', 0)} steps" + (f", reason {reason}" if reason else ""))
    if manifest.get("message"):
        print(manifest["message"])
    return code


def _verify(args) -> int:
    from .verify import run_suite

    try:
        checks = run_suite(args.suite)
    except KeyError:
        print(f"unknown suite {args.suite!r}", file=sys.stderr)
        return EXIT_VALIDATION
    failed = 0
    for name, ok, value in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  ({value:.6g})")
        failed += not ok
    return 1 if failed else EXIT_OK


def _basis(args) -> int:
    from .config import load_config
    from .runner import basis_from_config, basis_hash

    cfg = load_config(args.config)
    base = Path(args.config).parent
    out = Path(args.output) if args.output else base / (cfg.basis_cache or "basis.bin")
    out.parent.mkdir(parents=True, exist_ok=True)
    mesh, basis = basis_from_config(cfg, base)
    digest = basis_hash(basis, out)
    print(f"basis: n={basis.n} K={basis.K} lambda_1={basis.lam[0]:.10g}")
    print(f"mesh {mesh.hash}")
    print(f"cache {out} sha256 {digest}")
    return EXIT_OK


def _gronwall(args) -> int:
    import numpy as np

    from .diagnostics import gronwall_check
    from .io import read_csv

    data = read_csv(args.csv)
    t = data.get("t")
    if t is None:
        raise ConfigError("CSV needs a 't' column")
    f = data.get("f", data.get("accel_energy"))
    h = data.get("h", data.get("forcing_H"))
    if f is None or h is None:
        raise ConfigError("CSV needs columns f and h (or accel_energy and forcing_H)")
    keep = np.isfinite(f) & np.isfinite(h)
    if keep.sum() < 2:
        raise ConfigError("need at least two finite samples")
    try:
        res = gronwall_check(t[keep], f[keep], h[keep], args.c0, args.c1, args.p)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    print(f"T_tilde {res.T_tilde!r}")
    print(f"passed {res.passed}")
    print(f"margin {res.margin!r}")
    print(f"violation_time {res.violation_time!r}")
    if res.blowup:
        print(f"BlowupBeforeHorizon at {res.blowup_time!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shellfsi", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="run a configured scenario")
    s.add_argument("config")
    s.add_argument("-o", "--output", help="output directory (overrides the config)")
    s.set_defaults(func=_simulate)
    s = sub.add_parser("verify", help="run a property suite (geometry, basis, correction, gronwall, all)")
    s.add_argument("suite")
    s.set_defaults(func=_verify)
    s = sub.add_parser("basis", help="build and cache the Galerkin basis of a config")
    s.add_argument("config")
    s.add_argument("-o", "--output", help="cache file path")
    s.set_defaults(func=_basis)
    s = sub.add_parser("gronwall", help="check a sampled history against the local Gronwall bound")
    s.add_argument("csv")
    s.add_argument("c0", type=float)
    s.add_argument("c1", type=float)
    s.add_argument("p", type=float)
    s.set_defaults(func=_gronwall)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (IOFailure, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ShellFSIError as exc:
        print(f"solver stop: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
