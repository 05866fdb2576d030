import json
import subprocess
import sys

import pytest
from hypothesis import given
from hypothesis import strategies as st

from granular import cli
from granular.config import SCHEMA, SUBCOMMANDS, format_value, parse_config
from granular.errors import ValidationError


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


def test_defaults_resolve_for_every_subcommand():
    for sub in SUBCOMMANDS:
        cfg = parse_config("", sub)
        assert set(cfg.values) == set(SCHEMA)
        assert cfg.seed == 0


def test_to_text_round_trips():
    cfg = parse_config("[dsmc]\nn_particles = 123\n[qscaling]\nells = 1e-3, 0.5\n", "haff",
                       {"hydro.dealias": "false"})
    again = parse_config(cfg.to_text(), "haff")
    assert again.values == cfg.values


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_format_is_lossless(x):
    assert float(format_value(x)) == x


def test_problems_are_collected():
    text = "[restitution]\nkind = constant\n[dsmc]\nn_particles = 1\nbogus = 3\n"
    with pytest.raises(ValidationError) as info:
        parse_config(text, "haff")
    msgs = " | ".join(info.value.problems)
    assert "restitution.e0 is required" in msgs
    assert "n_particles must be at least 2" in msgs
    assert "unknown key dsmc.bogus" in msgs


def test_syntax_error_reports_line():
    with pytest.raises(ValidationError) as info:
        parse_config("[run]\nseed = 1\nthis line is broken\n", "haff")
    assert "line 3" in str(info.value.problems)


def test_bad_values_rejected():
    for key, val in (("hydro.n", "48"), ("qscaling.samples", "10"), ("schedule.epsilon", "2"),
                     ("dsmc.collision_probability", "0.5"), ("hydro.dealias", "maybe")):
        with pytest.raises(ValidationError):
            parse_config("", "hydro", {key: val})


def test_cli_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["nonsense"])
    assert info.value.code == 1
    assert cli.main(["haff", "--out", str(tmp_path), "--set", "restitution.kind=constant"]) == 1
    assert "restitution.e0" in capsys.readouterr().err
    assert cli.main(["haff", "--out", str(tmp_path), "--set", "dsmc.n_particles=1"]) == 1


def test_numeric_failure_exit_code(tmp_path):
    args = ["hydro", "--out", str(tmp_path), "--set", "hydro.n=16", "--set", "hydro.dt=0.5",
            "--set", "hydro.t_end=1.0", "--set", "hydro.nu0=0.001", "--set", "hydro.xi=none"]
    assert cli.main(args) == 2


def test_constants_outputs(tmp_path):
    assert cli.main(["constants", "--out", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "constants.json").read_text())
    assert data["ratio"] == pytest.approx(1.2, rel=1e-8)
    manifest = (tmp_path / "manifest.ini").read_text()
    assert manifest.startswith("[manifest]\nsubcommand = constants\n")


def test_scaling_table_flags(tmp_path):
    assert cli.main(["scaling-table", "--eps", "0.5", "--t0", "0", "--t1", "2", "--points", "5",
                     "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "scaling.csv").read_text().splitlines()
    assert lines[0] == "t,V,tau,xi,ell,z" and len(lines) == 6
    assert "\r" not in (tmp_path / "scaling.csv").read_text()


def test_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["haff", "--out", str(a), "--seed", "3", "--set", "dsmc.n_particles=2000",
            "--set", "dsmc.temperature_drop=20", "--set", "haff.bootstrap=20"]
    assert cli.main(args) == 0
    assert cli.main(["rerun", str(a / "manifest.ini"), "--out", str(b)]) == 0
    assert _files(a) == _files(b)


def test_thread_environment_override(tmp_path, monkeypatch):
    base = ["haff", "--seed", "1", "--set", "dsmc.n_particles=4000", "--set", "dsmc.temperature_drop=10",
            "--set", "haff.bootstrap=10"]
    assert cli.main(base + ["--out", str(tmp_path / "one")]) == 0
    monkeypatch.setenv("GRANULAR_THREADS", "4")
    assert cli.main(base + ["--out", str(tmp_path / "four")]) == 0
    one = (tmp_path / "one" / "timeseries.csv").read_bytes()
    assert one == (tmp_path / "four" / "timeseries.csv").read_bytes()
    monkeypatch.setenv("GRANULAR_THREADS", "many")
    assert cli.main(base + ["--out", str(tmp_path / "bad")]) == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "granular", "constants", "--out", str(tmp_path)],
                          capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "constants.json").exists()
