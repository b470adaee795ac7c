import subprocess
import sys

import pytest

from esnsch.cli import EXIT_OK, EXIT_VALIDATION, main
from esnsch.io import read_csv, read_snapshot

CONFIG = """\
surface = static_sphere
level = 2
dt = 1e-3
t_end = 3e-3

[initial]
phi = random
phi_amplitude = 0.3

[output]
snapshot_stride = 2
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text(CONFIG)
    return p


def test_run_writes_outputs(cfg_path, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(cfg_path), "-o", str(out)]) == EXIT_OK
    names = {p.name for p in out.iterdir()}
    assert {"config.ini", "summary.txt", "diagnostics.csv", "diagnostics.png"} <= names
    assert {"snapshot_000000.vtk", "snapshot_000002.vtk", "snapshot_000003.vtk"} <= names
    assert len(read_csv(out / "diagnostics.csv")["t"]) == 4
    assert "3 steps" in capsys.readouterr().out


def test_zero_horizon_writes_initial_snapshot_only(tmp_path):
    p = tmp_path / "zero.ini"
    p.write_text(CONFIG.replace("t_end = 3e-3", "t_end = 0"))
    out = tmp_path / "out"
    assert main(["run", str(p), "-o", str(out), "--no-figures"]) == EXIT_OK
    snaps = sorted(out.glob("*.vtk"))
    assert [s.name for s in snaps] == ["snapshot_000000.vtk"]
    assert read_snapshot(snaps[0]).t == 0.0
    assert not list(out.glob("*.png"))


def test_rerun_is_byte_identical(cfg_path, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(cfg_path), "-o", str(a)]) == EXIT_OK
    assert main(["run", str(cfg_path), "-o", str(b)]) == EXIT_OK
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


@pytest.mark.parametrize("argv", [
    ["run", "/nonexistent/run.ini"],
    ["frobnicate"],
    [],
    ["verify", "--only", "99"],
])
def test_invalid_invocations_exit_one(argv, capsys):
    assert main(argv) == EXIT_VALIDATION
    assert capsys.readouterr().err


def test_bad_key_exits_one(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text(CONFIG + "[scheme]\ndtt = 1\n")
    assert main(["run", str(p), "-o", str(tmp_path / "o")]) == EXIT_VALIDATION
    assert "line 13" in capsys.readouterr().err


def test_verify_single_fast_criterion(capsys):
    assert main(["verify", "--only", "12"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "PASS" in out and "1/1 criteria passed" in out


def test_geometry_check(tmp_path, capsys):
    p = tmp_path / "g.ini"
    p.write_text("surface = area_preserving_ellipsoid\nlevel = 2\ndt = 1e-2\nt_end = 0.1\n")
    assert main(["geometry-check", str(p), "-o", str(tmp_path)]) == EXIT_OK
    lines = (tmp_path / "geometry.csv").read_text().splitlines()
    assert lines[0].startswith("t,area,area_exact") and len(lines) == 6


def test_stability_command(cfg_path, tmp_path):
    assert main(["stability", str(cfg_path), "-o", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "stability.csv").exists() and (tmp_path / "stability.png").exists()


def test_console_entry_point(cfg_path):
    proc = subprocess.run([sys.executable, "-m", "esnsch.cli", "verify", "--only", "12"],
                          capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
