"""Artifact writers and readers: CSV tables, snapshots, trajectories, manifests, plot data."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .diagnostics import COLUMNS
from .errors import IOFailure, ParseError
from .spectral import SpectralField

SNAPSHOT_MAGIC = "shellfsi-snapshot"


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def write_csv(path, rows, columns=None) -> None:
    columns = columns or [c for c, _ in COLUMNS]
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_fmt(row[c]) for c in columns])
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


def read_csv(path) -> dict:
    """Read a numeric CSV with a header row into ``{column: array}``."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            data = [[float(v) for v in line] for line in reader if line]
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from exc
    except (StopIteration, ValueError) as exc:
        raise ParseError(f"malformed CSV {path}: {exc}") from exc
    arr = np.array(data, dtype=float).reshape(-1, len(header))
    return {h: arr[:, i] for i, h in enumerate(header)}


def write_schema(path) -> None:
    lines = ["# column, description (one row per accepted step, in this order)"]
    lines += [f"{name}, {desc}" for name, desc in COLUMNS]
    _write_text(path, "\n".join(lines) + "\n")


def _write_text(path, text):
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# snapshots


def write_snapshot(path, t: float, arrays: dict, mesh_file: str = "", mesh_hash: str = "") -> None:
    """JSON header line followed by little-endian float64 payloads in header order."""
    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = {"format": SNAPSHOT_MAGIC, "version": 1, "t": float(t), "dtype": "<f8",
              "mesh": mesh_file, "mesh_hash": mesh_hash, "arrays": entries}
    try:
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
            for b in blobs:
                fh.write(b)
    except OSError as exc:
        raise IOFailure(f"cannot write snapshot {path}: {exc}") from exc


def read_snapshot(path):
    """Return ``(header, {name: array})``."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IOFailure(f"cannot read snapshot {path}: {exc}") from exc
    nl = raw.find(b"\n")
    try:
        header = json.loads(raw[:nl].decode())
    except ValueError as exc:
        raise ParseError(f"bad snapshot header in {path}") from exc
    if header.get("format") != SNAPSHOT_MAGIC:
        raise ParseError(f"{path} is not a snapshot file")
    body = raw[nl + 1:]
    out = {}
    for e in header["arrays"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        a = np.frombuffer(body, dtype="<f8", count=count, offset=e["offset"])
        out[e["name"]] = a.reshape(e["shape"]).copy()
    return header, out


# ---------------------------------------------------------------------------
# shell trajectories


def write_trajectory(path, traj) -> None:
    """Text table: ``t`` then real coefficients of ``eta`` and of ``d_t eta``."""
    K = traj.K
    lines = [f"# shell trajectory K={K} rows={traj.times.size}"]
    for t, c, r in zip(traj.times, traj.coeffs, traj.rates):
        vals = [t] + list(SpectralField(c).to_real()) + list(SpectralField(r).to_real())
        lines.append(" ".join(repr(float(v)) for v in vals))
    _write_text(path, "\n".join(lines) + "\n")


def read_trajectory(path):
    from .dynamics import ShellTrajectory

    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IOFailure(f"cannot read trajectory {path}: {exc}") from exc
    rows = [line.split() for line in text.splitlines() if line.strip() and not line.startswith("#")]
    try:
        data = np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise ParseError(f"malformed trajectory file {path}") from exc
    if data.ndim != 2 or data.shape[0] < 2 or (data.shape[1] - 1) % 2 or ((data.shape[1] - 1) // 2) % 2 == 0:
        raise ParseError(f"trajectory file {path} needs at least two rows of 1 + 2(2K+1) numbers")
    half = (data.shape[1] - 1) // 2
    coeffs = np.array([SpectralField.from_real(r[1:1 + half]).coeffs for r in data])
    rates = np.array([SpectralField.from_real(r[1 + half:]).coeffs for r in data])
    if np.any(np.diff(data[:, 0]) <= 0):
        raise ParseError(f"trajectory times in {path} must increase")
    return ShellTrajectory(data[:, 0], coeffs, rates)


# ---------------------------------------------------------------------------
# manifest and plot data


def write_manifest(path, manifest: dict) -> None:
    _write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


PLOT_COLUMNS = ("shell_kinetic", "shell_elastic", "fluid_l2", "energy", "viscous_dissipation", "accel_energy")


def write_plot_data(directory, rows) -> None:
    """``energy.dat`` (time versus each energy column) and a gnuplot script."""
    directory = Path(directory)
    lines = ["# t " + " ".join(PLOT_COLUMNS)]
    for row in rows:
        lines.append(" ".join(_fmt(row[c]) for c in ("t",) + PLOT_COLUMNS))
    _write_text(directory / "energy.dat", "\n".join(lines) + "\n")
    plots = ", ".join(f"'energy.dat' using 1:{i + 2} with lines title '{c}'" for i, c in enumerate(PLOT_COLUMNS))
    script = ("set terminal pngcairo size 900,600\n"
              "set output 'energy.png'\n"
              "set xlabel 't'\n"
              "set logscale y\n"
              f"plot {plots}\n")
    _write_text(directory / "energy.gp", script)
