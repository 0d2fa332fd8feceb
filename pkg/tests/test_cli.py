import json

import pytest

from forcedmcf import cli


def run(argv, tmp_path, name="out"):
    out = tmp_path / name
    code = cli.main(list(argv) + ["--output-dir", str(out)])
    return code, out


def test_defaults_are_standard():
    d = cli.defaults("verify")
    assert (d["c_min"], d["c_max"], d["lipschitz_bound"], d["bump_radius"], d["h"], d["width"],
            d["R0"]) == (1.0, 2.0, 5.0, 0.4, 0.1, 40.0, 2.0)
    assert cli.defaults("fluctuations")["seeds"] == 64
    assert cli.defaults("fluctuations")["times"] == [10.0, 20.0, 40.0, 80.0]
    assert cli.defaults("flatness")["flat_times"] == [20.0, 40.0, 80.0]


def test_help_and_missing_subcommand(capsys):
    assert cli.main(["--help"]) == 0
    assert cli.main([]) == 2
    assert cli.main(["speed", "--no-such-flag"]) == 2


def test_bump_radius_above_half_rejected(tmp_path, capsys):
    code, out = run(["field", "--bump-radius", "0.6"], tmp_path)
    assert code == 2
    assert "bump_radius" in capsys.readouterr().err
    assert not out.exists()


def test_bad_values_are_usage_errors(tmp_path):
    assert run(["speed", "--times", "20,10"], tmp_path)[0] == 2
    assert run(["speed", "--h", "abc"], tmp_path)[0] == 2
    assert run(["field", "--constant", "5"], tmp_path)[0] == 2
    assert run(["verify", "--horizon", "5"], tmp_path)[0] == 2
    assert run(["fluctuations", "--seeds", "8"], tmp_path)[0] == 2


def test_precedence_defaults_config_flags(tmp_path):
    cfg = tmp_path / "a.cfg"
    cfg.write_text("# comment\nh = 0.05\nwidth = 12\nbump-radius = 0.3\n")
    sub, c, opts = cli.parse_config(["speed", "--config", str(cfg), "--width", "20"])
    assert c["h"] == 0.05          # config over default
    assert c["width"] == 20.0      # flag over config
    assert c["bump_radius"] == 0.3
    assert c["c_max"] == 2.0       # untouched default
    assert opts["jobs"] == 1


def test_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "a.cfg"
    cfg.write_text("horizon = 3\n")
    assert cli.main(["field", "--config", str(cfg)]) == 2
    assert "unknown key for field: horizon" in capsys.readouterr().err
    assert cli.main(["field", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_environment_defaults(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "envout"))
    monkeypatch.setenv(cli.JOBS_ENV, "3")
    _, _, opts = cli.parse_config(["field"])
    assert opts["output_dir"] == tmp_path / "envout"
    assert opts["jobs"] == 3
    _, _, opts = cli.parse_config(["field", "--jobs", "2", "--output-dir", "x"])
    assert opts["jobs"] == 2 and str(opts["output_dir"]) == "x"


def test_field_outputs_and_manifest(tmp_path):
    code, out = run(["field", "--box", "0,2,0,1", "--spacing", "0.25", "--seed", "4"], tmp_path)
    assert code == 0
    rows = (out / "field.csv").read_text().splitlines()
    assert rows[0] == "x,y,c" and len(rows) == 1 + 9 * 5
    man = json.loads((out / "manifest.json").read_text())
    assert man["exit_code"] == 0
    assert man["master_seed"] == 4
    assert set(man["outputs"]) == {"field.csv", "field.json", "resolved.cfg"}
    assert man["outputs"]["field.csv"] == cli.sha256(out / "field.csv")
    assert "--config" in man["replay"]


@pytest.mark.parametrize("argv", [
    ["field", "--box=-1,1,-1,1", "--spacing", "0.2", "--seed", "9"],
    ["speed", "--constant", "1", "--times", "2,4", "--seeds", "2", "--width", "4"],
    ["arrival", "--horizon", "1.5", "--width", "4", "--seed", "3"],
])
def test_replay_is_byte_identical(tmp_path, argv):
    code, a = run(argv, tmp_path, "a")
    assert code == 0
    code2 = cli.main([argv[0], "--config", str(a / "resolved.cfg"),
                      "--output-dir", str(tmp_path / "b")])
    assert code2 == 0
    b = tmp_path / "b"
    ma = json.loads((a / "manifest.json").read_text())["outputs"]
    mb = json.loads((b / "manifest.json").read_text())["outputs"]
    assert ma == mb
    for name in ma:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_speed_constant_medium(tmp_path):
    code, out = run(["speed", "--constant", "1", "--times", "2,4", "--seeds", "2",
                     "--width", "4"], tmp_path)
    assert code == 0
    s = json.loads((out / "speed.json").read_text())
    assert s["c_bar"] == pytest.approx(1.0, rel=0.02)
    assert s["passed"] is True


def test_disable_forcing_gated(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("FORCEDMCF_TEST_MODE", raising=False)
    argv = ["evolve", "--source", "disc", "--radius", "1", "--until", "0.1", "--disable-forcing"]
    assert run(argv, tmp_path, "x")[0] == 2
    assert "FORCEDMCF_TEST_MODE" in capsys.readouterr().err
    monkeypatch.setenv("FORCEDMCF_TEST_MODE", "1")
    code, out = run(argv, tmp_path, "y")
    assert code == 0
    meta = json.loads((out / "snapshot.json").read_text())
    assert meta["t"] == pytest.approx(0.1)


def test_failed_check_exit_code(tmp_path, monkeypatch):
    monkeypatch.setitem(cli.HANDLERS, "field", lambda cfg, spec, out, jobs: (cli.EXIT_FAIL, [0]))
    code, out = run(["field"], tmp_path)
    assert code == 1
    assert json.loads((out / "manifest.json").read_text())["exit_code"] == 1


def test_solver_failure_exit_code(tmp_path, monkeypatch):
    def boom(cfg, spec, out, jobs):
        raise cli.SolverError("non-finite u")
    monkeypatch.setitem(cli.HANDLERS, "field", boom)
    assert run(["field"], tmp_path)[0] == 3


def test_module_entry_point(tmp_path):
    import subprocess
    import sys
    r = subprocess.run([sys.executable, "-m", "forcedmcf", "field", "--box", "0,1,0,1",
                        "--output-dir", str(tmp_path / "m")], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "m" / "manifest.json").exists()


def test_flag_times_override_file(tmp_path):
    cfg = tmp_path / "t.cfg"
    cfg.write_text("times = 10,20\n")
    _, c, _ = cli.parse_config(["speed", "--config", str(cfg), "--times", "10,20,40"])
    assert c["times"] == [10.0, 20.0, 40.0]


def test_speed_constant_medium_eight_seeds(tmp_path):
    code, out = run(["speed", "-e", "1,0", "--seeds", "8", "--times", "10,20", "--constant", "1"],
                    tmp_path)
    assert code == 0
    s = json.loads((out / "speed.json").read_text())
    assert s["n_seeds"] == 8
    assert s["c_bar"] == pytest.approx(1.0, rel=0.02)
