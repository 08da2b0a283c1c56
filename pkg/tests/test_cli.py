import json
from pathlib import Path

import pytest

from conftest import quiet
from grushin_mfg.cli import EXIT_CONFIG, EXIT_INVARIANT, EXIT_NUMERICAL, EXIT_OK, MANIFEST, OUT_ENV, main
from grushin_mfg.config import parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write_config(path, base, **overrides):
    cfg = quiet(parse_config, CONFIGS / base)
    if overrides:
        cfg = quiet(cfg.with_overrides, **overrides)
    path.write_text(cfg.canonical())
    return str(path)


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    """LQR on a 21 x 21 grid: every subcommand finishes in about a second."""
    d = tmp_path_factory.mktemp("cfg")
    return write_config(d / "tiny.toml", "lqr_small.toml", grid__n1=21, grid__n2=21, time__n_steps=20)


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    return str(CONFIGS / "benchmark_small.toml")


def run(*argv):
    return quiet(main, [str(a) for a in argv])


def manifest(out):
    return json.loads((Path(out) / MANIFEST).read_text())


def assert_manifest_complete(out):
    man = manifest(out)
    listed = set(man["outputs"])
    on_disk = {p.name for p in Path(out).iterdir()} - {MANIFEST}
    assert listed == on_disk
    assert "config.toml" in listed
    assert len(man["config_hash"]) == 64
    return man


@pytest.mark.parametrize(
    "cmd,extra",
    [
        ("solve-hjb", ["--every", "5"]),
        ("oc-trajectory", ["--x0=-0.5,0.5", "--restarts", "4"]),
        ("solve-transport", ["--every", "5", "--density", "0.3"]),
        ("viscosity-sweep", ["--sigmas", "0.2,0.1,0.05"]),
        ("gdiff-probe", ["--points", "0.5,0.5;-0.4,0.2"]),
    ],
)
def test_subcommands(tiny, tmp_path, cmd, extra):
    out = tmp_path / cmd
    assert run(cmd, "--config", tiny, "--out", out, *extra) == EXIT_OK
    man = assert_manifest_complete(out)
    assert man["subcommand"] == cmd and man["passed"]
    assert man["invariants"]
    assert run("check-invariants", "--out", out) == EXIT_OK


def test_solve_mfg_and_regression(bench, tmp_path):
    out = tmp_path / "mfg"
    assert run("solve-mfg", "--config", bench, "--out", out, "--every", "10") == EXIT_OK
    man = assert_manifest_complete(out)
    names = {i["name"] for i in man["invariants"]}
    assert {"mfg.converged", "mfg.mass_error", "mfg.dpp_optimality_gap"} <= names
    summary = json.loads((out / "summary.json").read_text())
    assert summary["converged"] and summary["iterations"] <= 50

    ref = tmp_path / "ref.json"
    ref.write_text(json.dumps(summary))
    assert run("check-invariants", "--out", out, "--reference", ref) == EXIT_OK
    ref.write_text(json.dumps({**summary, "u_inf": summary["u_inf"] * 1.01}))
    assert run("check-invariants", "--out", out, "--reference", ref) == EXIT_INVARIANT


def test_unconverged_fixpoint_exits_4(bench, tmp_path, capsys):
    assert run("solve-mfg", "--config", bench, "--out", tmp_path, "--max-iters", "1") == EXIT_INVARIANT
    assert "[FAIL] mfg.converged" in capsys.readouterr().out
    assert not manifest(tmp_path)["passed"]


def test_repeat_runs_bit_identical(tiny, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run("solve-transport", "--config", tiny, "--out", out, "--every", "4") == EXIT_OK
    names = sorted(p.name for p in a.glob("*.csv"))
    assert names and names == sorted(p.name for p in b.glob("*.csv"))
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()
    assert (a / "config.toml").read_bytes() == (b / "config.toml").read_bytes()


def test_seed_override_changes_hash_and_cloud(tiny, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run("solve-transport", "--config", tiny, "--out", a, "--every", "20")
    run("solve-transport", "--config", tiny, "--out", b, "--every", "20", "--seed", "3")
    assert manifest(a)["config_hash"] != manifest(b)["config_hash"]
    assert manifest(b)["seed"] == 3
    assert (a / "m_t0.csv").read_bytes() != (b / "m_t0.csv").read_bytes()


def test_corrupted_mass_column_is_named(tiny, tmp_path, capsys):
    assert run("solve-transport", "--config", tiny, "--out", tmp_path, "--every", "10") == EXIT_OK
    path = tmp_path / "transport_diagnostics.csv"
    lines = path.read_text().splitlines()
    head = lines[0].split(",")
    row = lines[3].split(",")
    row[head.index("mass")] = "1.001"
    lines[3] = ",".join(row)
    path.write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert run("check-invariants", "--out", tmp_path) == EXIT_INVARIANT
    out = capsys.readouterr().out
    assert "[FAIL] transport.mass_conservation" in out
    report = json.loads((tmp_path / "invariants.json").read_text())
    assert [r["name"] for r in report if not r["passed"]] == ["transport.mass_conservation"]


def test_missing_output_detected(tiny, tmp_path):
    assert run("solve-hjb", "--config", tiny, "--out", tmp_path, "--every", "10") == EXIT_OK
    (tmp_path / "u_t0.csv").unlink()
    assert run("check-invariants", "--out", tmp_path) == EXIT_INVARIANT


def test_numerical_failure_exits_3(tmp_path, capsys):
    cfg = write_config(
        tmp_path / "blow.toml", "lqr_small.toml",
        grid__n1=21, grid__n2=21, time__n_steps=20,
        F__potential="const:1.7e308", G__potential="const:1.7e308",
    )
    out = tmp_path / "out"
    assert run("solve-hjb", "--config", cfg, "--out", out) == EXIT_NUMERICAL
    assert "numerical failure" in capsys.readouterr().err
    man = manifest(out)
    assert not man["passed"] and man["extra"]["error"] == "numerical failure"


@pytest.mark.parametrize(
    "argv",
    [
        ["solve-hjb"],
        ["solve-hjb", "--config", "/nonexistent.toml"],
        ["oc-trajectory", "--x0=9,9"],
        ["oc-trajectory", "--x0=0.1"],
        ["oc-trajectory", "--x0=0,0", "--t", "2"],
        ["solve-hjb", "--every", "0"],
        ["viscosity-sweep", "--sigmas", "0.1,-1"],
        ["gdiff-probe", "--points", "4.9,0"],
        ["gdiff-probe", "--slice-index", "99"],
        ["solve-hjb", "--threads", "0"],
    ],
)
def test_config_errors_exit_2(tiny, tmp_path, argv, capsys):
    if "--config" not in argv and argv != ["solve-hjb"]:
        argv = argv + ["--config", tiny]
    assert run(*argv, "--out", tmp_path / "o") == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_bad_toml_exits_2(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("T = 1.0\nbox.x1_min = -1\n")
    assert run("solve-hjb", "--config", bad, "--out", tmp_path / "o") == EXIT_CONFIG


def test_check_invariants_needs_run_dir(tmp_path):
    assert run("check-invariants", "--out", tmp_path) == EXIT_CONFIG
    assert run("check-invariants") == EXIT_CONFIG


def test_output_dir_from_environment(tiny, tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    assert run("gdiff-probe", "--config", tiny, "--points", "1") == EXIT_OK
    assert (tmp_path / "env" / MANIFEST).is_file()


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.strip()
