import json

import numpy as np
import pytest

from shellfsi.config import RunConfig, load_config, parse_config, parse_modes, save_config
from shellfsi.diagnostics import COLUMN_NAMES
from shellfsi.dynamics import ShellTrajectory
from shellfsi.errors import IOFailure, ParseError, ValidationError
from shellfsi.io import (read_csv, read_snapshot, read_trajectory, write_csv, write_snapshot,
                         write_trajectory)
from shellfsi.runner import simulate
from shellfsi.spectral import SpectralField

SMALL = """
rings = 4
segments = 16
K = 4
n = 4
T = 0.02
dt = 0.01
mode = decoupled
eta0 = sin 1 0.01
"""


def test_minimal_config_takes_defaults():
    cfg = parse_config("T = 0.2\n")
    assert cfg.T == 0.2
    assert cfg.L == RunConfig().L and cfg.mode == "coupled" and cfg.snapshots is False


def test_comments_and_blank_lines():
    cfg = parse_config("# header\n\nalpha = 0.05   # tighter guard\nsnapshots = yes\n")
    assert cfg.alpha == 0.05 and cfg.snapshots is True


def test_alpha_must_be_below_L():
    with pytest.raises(ValidationError, match="alpha must be < L"):
        parse_config("alpha = 0.6\n")


@pytest.mark.parametrize("text", ["bogus = 1\n", "T 0.1\n", "T = 0.1\nT = 0.2\n", "rings = many\n"])
def test_parse_errors(text):
    with pytest.raises(ParseError):
        parse_config(text)


@pytest.mark.parametrize("text", ["T = 0.105\ndt = 0.01\n", "mode = split\n", "eta0 = sin 40 0.1\n",
                                  "dt = -1\n", "mode = decoupled\nzeta_file = nowhere.txt\n"])
def test_validation_errors(text):
    with pytest.raises(ValidationError):
        parse_config(text)


def test_parse_modes():
    assert parse_modes(" sin 1 0.01 ; const 0 2 ") == [("sin", 1, 0.01), ("const", 0, 2.0)]
    assert parse_modes("") == []
    with pytest.raises(ParseError):
        parse_modes("tan 1 0.1")


def test_config_round_trip(tmp_path):
    cfg = parse_config(SMALL)
    save_config(cfg, tmp_path / "c.cfg")
    assert load_config(tmp_path / "c.cfg") == cfg


def test_missing_config_is_io_failure(tmp_path):
    with pytest.raises(IOFailure):
        load_config(tmp_path / "absent.cfg")


def test_csv_round_trip(tmp_path, rng):
    rows = [{c: float(rng.normal()) for c in COLUMN_NAMES} for _ in range(5)]
    for r in rows:
        r["newton_iterations"] = 3
    write_csv(tmp_path / "d.csv", rows)
    data = read_csv(tmp_path / "d.csv")
    assert list(data) == list(COLUMN_NAMES)
    assert np.array_equal(data["energy"], [r["energy"] for r in rows])


def test_malformed_csv(tmp_path):
    (tmp_path / "bad.csv").write_text("t,f\n1,x\n")
    with pytest.raises(ParseError):
        read_csv(tmp_path / "bad.csv")


def test_snapshot_round_trip_is_bit_exact(tmp_path, rng):
    arrays = {"v": rng.normal(size=(7, 2)), "pi": rng.normal(size=5), "eta": np.zeros(9), "eta_t": np.zeros(9)}
    write_snapshot(tmp_path / "s.bin", 0.125, arrays, mesh_file="mesh.txt", mesh_hash="abc")
    header, back = read_snapshot(tmp_path / "s.bin")
    assert header["t"] == 0.125 and header["mesh_hash"] == "abc"
    for k, a in arrays.items():
        assert back[k].tobytes() == a.astype("<f8").tobytes()


def test_snapshot_rejects_foreign_file(tmp_path):
    (tmp_path / "x.bin").write_bytes(b'{"format": "other"}\n')
    with pytest.raises(ParseError):
        read_snapshot(tmp_path / "x.bin")


def test_trajectory_round_trip(tmp_path, rng):
    times = np.array([0.0, 0.1, 0.2])
    coeffs = np.array([SpectralField.from_real(rng.normal(size=9)).coeffs for _ in times])
    rates = np.array([SpectralField.from_real(rng.normal(size=9)).coeffs for _ in times])
    traj = ShellTrajectory(times, coeffs, rates)
    write_trajectory(tmp_path / "tr.txt", traj)
    back = read_trajectory(tmp_path / "tr.txt")
    assert np.array_equal(back.times, times)
    assert np.allclose(back.coeffs, coeffs, rtol=0, atol=1e-15)
    assert np.allclose(back.rates, rates, rtol=0, atol=1e-15)


def test_simulation_outputs_are_deterministic(tmp_path):
    cfg = parse_config(SMALL + "snapshots = true\n")
    code1, _ = simulate(cfg, tmp_path / "a")
    code2, _ = simulate(cfg, tmp_path / "b")
    assert code1 == code2 == 0
    for name in ("diagnostics.csv", "energy.dat", "trajectory.txt", "basis.bin", "manifest.json",
                 "snapshots/snap_000002.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    data = read_csv(tmp_path / "a" / "diagnostics.csv")
    assert data["t"].size == 3
    header, arrays = read_snapshot(tmp_path / "a" / "snapshots" / "snap_000000.bin")
    assert header["t"] == 0.0 and set(arrays) == {"v", "pi", "eta", "eta_t"}


def test_manifest_written_on_failure(tmp_path):
    cfg = parse_config(SMALL.replace("T = 0.02", "T = 0.5") + "g = 2000*cos(2*pi*y)\n")
    code, manifest = simulate(cfg, tmp_path)
    assert code == 3
    disk = json.loads((tmp_path / "manifest.json").read_text())
    assert disk["reason"] == "SelfIntersection" and disk["status"] == "stopped"
    assert (tmp_path / "diagnostics.csv").exists()
