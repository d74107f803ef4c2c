import csv
import io
from pathlib import Path

import numpy as np
import pytest

from dnflow import cli
from dnflow.errors import ConfigError, TrajectoryFormatError
from dnflow.io import (OUTPUT_ENV, RunConfig, config_from_dict, decode_trajectory, encode_trajectory,
                       initial_datum, load_config, read_trajectory, save_config, write_trajectory)

ROOT = Path(__file__).resolve().parents[1]
EIGENMODE = ROOT / "configs" / "eigenmode.toml"
# checksum of the eigenmode run, frozen after checking it against the discrete decay formula
EIGENMODE_SHA256 = "c4bd5e8700a1fea8949eaea3185c0f7d5cc335f485390bb993475a7477ff99e2"


def write_toml(path, text):
    path.write_text(text)
    return path


ZERO_CONFIG = """
output_dir = "ignored"
[domain]
n = 1
lo = [0.0]
hi = [1.0]
cells = [19]
[time]
T = 0.05
N = 5
[initial]
profile = "zero"
"""


# configuration --------------------------------------------------------------


def test_config_round_trip(tmp_path):
    cfg = load_config(EIGENMODE)
    save_config(cfg, tmp_path / "c.toml")
    again = load_config(tmp_path / "c.toml")
    assert again == cfg
    assert again.dumps() == cfg.dumps()


def test_default_config_is_valid():
    cfg = config_from_dict({})
    assert cfg == RunConfig()


@pytest.mark.parametrize("data, path", [
    ({"domain": {"n": 1, "cells": [0]}}, "domain"),
    ({"domain": {"n": 3}}, "domain.n"),
    ({"time": {"T": -1.0}}, "time.T"),
    ({"time": {"N": "ten"}}, "time.N"),
    ({"psi": {"family": "cubic"}}, "psi.family"),
    ({"F": {"family": "soft_quadratic", "params": {"eps": -1.0}}}, "F.params"),
    ({"initial": {"profile": "square"}}, "initial.profile"),
    ({"initial": {"profile": "sine", "params": {"phase": 1}}}, "initial.params"),
    ({"decay": {"vartheta": 0.5}}, "decay"),
    ({"analytics": {"radius": 0.0}}, "analytics.radius"),
    ({"solver": {"tol": 0.0}}, "solver"),
    ({"solver": {"tolerance": 1e-9}}, "solver.tolerance"),
    ({"colour": "red"}, "colour"),
])
def test_config_errors_name_the_field(data, path):
    with pytest.raises(ConfigError) as exc:
        config_from_dict(data)
    assert exc.value.path == path


def test_output_dir_resolution():
    cfg = RunConfig(output_dir="cfg")
    assert cfg.resolve_output_dir(environ={}) == Path("cfg")
    assert cfg.resolve_output_dir(environ={OUTPUT_ENV: "env"}) == Path("env")
    assert cfg.resolve_output_dir("flag", environ={OUTPUT_ENV: "env"}) == Path("flag")


@pytest.mark.parametrize("profile, params", [("zero", {}), ("sine", {"mode": 2}),
                                             ("bump", {"center": 0.4, "radius": 0.2}),
                                             ("random_smooth", {"modes": 3, "seed": 5})])
def test_initial_profiles(profile, params):
    cfg = config_from_dict({"m": 2, "domain": {"n": 2, "lo": [0, 0], "hi": [1, 1], "cells": [9, 9]},
                            "initial": {"profile": profile, "params": params}})
    g = initial_datum(cfg)
    assert g.shape == (9, 9, 2)
    assert np.isfinite(g).all()
    np.testing.assert_array_equal(g, initial_datum(cfg))


# trajectory files -------------------------------------------------------------


def test_trajectory_round_trip_is_lossless(square_run, tmp_path):
    path = tmp_path / "t.dnf"
    write_trajectory(path, square_run)
    back = read_trajectory(path)
    np.testing.assert_array_equal(back.snapshots, square_run.snapshots)
    assert back.domain == square_run.domain and back.tau == square_run.tau
    assert back.psi_meta == square_run.psi_meta and back.F_meta == square_run.F_meta
    assert encode_trajectory(back) == encode_trajectory(square_run)


def test_trajectory_layout(heat_run):
    blob = encode_trajectory(heat_run)
    assert blob[:4] == b"DNF1"
    hlen = int.from_bytes(blob[4:8], "little")
    assert len(blob) == 8 + hlen + 8 * 101 * 99 + 32


@pytest.mark.parametrize("mutate", [
    lambda b: b[:-1],
    lambda b: b"XNF1" + b[4:],
    lambda b: b[:100] + bytes([b[100] ^ 1]) + b[101:],
    lambda b: b[:8],
])
def test_corrupt_files_rejected(heat_run, mutate):
    with pytest.raises(TrajectoryFormatError):
        decode_trajectory(mutate(encode_trajectory(heat_run)))


# command line -----------------------------------------------------------------


def run_cli(args, capsys):
    code = cli.main([str(a) for a in args])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_solve_zero_config(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    cfg = write_toml(tmp_path / "zero.toml", ZERO_CONFIG)
    code, out, _ = run_cli(["solve", cfg, "--output-dir", tmp_path / "o"], capsys)
    assert code == 0
    tr = read_trajectory(tmp_path / "o" / "trajectory.dnf")
    assert tr.N == 5 and not np.any(tr.snapshots)
    lines = (tmp_path / "o" / "steps.jsonl").read_text().splitlines()
    assert len(lines) == 5

    code, out, _ = run_cli(["energy-report", tmp_path / "o" / "trajectory.dnf"], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 6
    assert all(float(r["potential"]) == 0 and float(r["d_k"]) == 0 for r in rows)


def test_env_var_overrides_output_dir(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    cfg = write_toml(tmp_path / "zero.toml", ZERO_CONFIG)
    assert run_cli(["solve", cfg], capsys)[0] == 0
    assert (tmp_path / "env" / "trajectory.dnf").exists()


def test_eigenmode_golden_checksum(tmp_path, capsys):
    code, out, _ = run_cli(["solve", EIGENMODE, "--output-dir", tmp_path], capsys)
    assert code == 0
    assert f"sha256={EIGENMODE_SHA256}" in out


def test_malformed_config_exit_code(tmp_path, capsys):
    bad = write_toml(tmp_path / "bad.toml", "[time]\nT = -1.0\n")
    code, _, err = run_cli(["solve", bad], capsys)
    assert code == 2 and "time.T" in err
    broken = write_toml(tmp_path / "broken.toml", "[time\nT = ")
    assert run_cli(["solve", broken], capsys)[0] == 2


def test_corrupt_file_exit_code(tmp_path, capsys, heat_run):
    path = tmp_path / "t.dnf"
    write_trajectory(path, heat_run)
    blob = bytearray(path.read_bytes())
    blob[50] ^= 0xFF
    path.write_bytes(bytes(blob))
    for sub in ("energy-report", "regularity-map", "frac-exponent"):
        assert run_cli([sub, path], capsys)[0] == 4


def test_geometry_exit_code(tmp_path, capsys, heat_run):
    path = tmp_path / "t.dnf"
    write_trajectory(path, heat_run)
    code, _, err = run_cli(["regularity-map", path, "--radius", "0.6"], capsys)
    assert code == 5 and "geometry" in err


def test_solver_failure_exit_code(tmp_path, capsys):
    cfg = write_toml(tmp_path / "hard.toml", ZERO_CONFIG.replace('profile = "zero"', 'profile = "sine"\nparams = { amplitude = 50.0 }')
                     + '[psi]\nfamily = "soft_quadratic"\n[solver]\ntol = 1e-14\nmax_newton = 1\n')
    code, _, err = run_cli(["solve", cfg, "--output-dir", tmp_path / "o"], capsys)
    assert code == 3 and "step" in err


def test_analysis_commands(tmp_path, capsys, heat_run):
    path = tmp_path / "t.dnf"
    write_trajectory(path, heat_run)
    code, out, _ = run_cli(["regularity-map", path, "--radius", "0.1", "--count", "3"], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 9 and set(rows[0]) == {"x0", "t", "r", "T1", "T2", "T3", "E", "flag"}

    code, out, _ = run_cli(["frac-exponent", path, "--field", "D2v"], capsys)
    assert code == 0
    slope = float(out.splitlines()[-3].split(",")[1])
    assert 1.8 <= slope <= 2.2

    code, out, _ = run_cli(["dimension", "--fixture", "slice"], capsys)
    assert code == 0
    assert abs(float(out.splitlines()[-3].split(",")[1]) - 1.0) <= 0.15

    out_csv = tmp_path / "dim.csv"
    code, _, _ = run_cli(["dimension", path, "--threshold", "1e9", "--out", out_csv], capsys)
    assert code == 0 and out_csv.read_text().splitlines()[-1] == "empty,1"


def test_outputs_are_byte_identical(tmp_path, capsys, heat_run):
    path = tmp_path / "t.dnf"
    write_trajectory(path, heat_run)
    first = run_cli(["regularity-map", path, "--count", "3"], capsys)[1]
    second = run_cli(["regularity-map", path, "--count", "3"], capsys)[1]
    assert first == second


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit):
        cli.main(["--help"])
    out = capsys.readouterr().out
    for sub in ("solve", "energy-report", "regularity-map", "dimension", "frac-exponent", "validate"):
        assert sub in out
