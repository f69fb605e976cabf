import numpy as np
import pytest

from onco import (
    ConfigError,
    ControlProfile,
    ModelParams,
    ParseError,
    UsageError,
    ValidationError,
    build_grid,
    cli,
    initial_drug,
    initial_tumor,
    solve_forward,
)
from onco.cli import (
    EXIT_CONFIG,
    EXIT_GRADCHECK,
    EXIT_OK,
    EXIT_SOLVER,
    RunConfig,
    cmd_gradcheck,
    cmd_optimize,
    cmd_simulate,
    drug_peak_time,
    load_config,
    main,
    read_control_csv,
)
from onco.optimize import ProbeResult


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


# -- configuration ---------------------------------------------------------------------


def test_empty_config_gives_defaults(tmp_path):
    cfg = load_config(write(tmp_path, "# nothing\n\n"))
    assert cfg == RunConfig()
    assert cfg.params == ModelParams()
    assert cfg.n_x == 200 and cfg.cfl == 0.025


def test_config_values_and_comments(tmp_path):
    cfg = load_config(write(tmp_path, "m_tol = 2.5   # lower cap\nn_x=64\nsvg = true\ncontrol = zero\n"))
    assert cfg.params.m_tol == 2.5
    assert cfg.n_x == 64 and cfg.svg and cfg.control == "zero"


def test_negative_weight_rejected(tmp_path):
    with pytest.raises(ValidationError) as info:
        load_config(write(tmp_path, "beta_w = -1\n"))
    assert info.value.key == "beta_w"


def test_parse_error_reports_line(tmp_path):
    with pytest.raises(ParseError) as info:
        load_config(write(tmp_path, "n_x = 50\n\nthis line is wrong\n"))
    assert info.value.line == 3


def test_duplicate_and_unknown_keys(tmp_path):
    with pytest.raises(ParseError):
        load_config(write(tmp_path, "n_x = 50\nn_x = 60\n"))
    with pytest.raises(ValidationError) as info:
        load_config(write(tmp_path, "kapa = 0.1\n"))
    assert info.value.key == "kapa"
    with pytest.raises(ValidationError):
        load_config(write(tmp_path, "n_x = fifty\n"))
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


def test_main_config_error_exit_code(tmp_path, capsys):
    assert main(["simulate", "--config", str(write(tmp_path, "diff = 0\n"))]) == EXIT_CONFIG
    assert "diff" in capsys.readouterr().err


# -- simulate -------------------------------------------------------------------------


def test_simulate_artifacts(tmp_path):
    cfg = RunConfig(n_x=41)
    summary = cmd_simulate(cfg, tmp_path)
    state = np.loadtxt(tmp_path / "state.csv", delimiter=",", skiprows=1)
    assert (tmp_path / "state.csv").read_text().splitlines()[0] == "t,x,p,d"
    assert (tmp_path / "mass.csv").read_text().splitlines()[0] == "t,mass"
    first = state[state[:, 0] == 0.0]
    assert first.shape == (41, 4)
    assert np.all(state[:, 3] == 0.0)  # zero control leaves no drug
    assert first[20, 1] == pytest.approx(0.5) and first[20, 2] == pytest.approx(1.0)
    assert summary["clamp_count"] == 0
    text = (tmp_path / "summary.txt").read_text()
    assert "runtime_s" in text and "J = " in text


def test_simulate_exp_decay_initial_row(tmp_path):
    cmd_simulate(RunConfig(n_x=41), tmp_path, "exp-decay")
    state = np.loadtxt(tmp_path / "state.csv", delimiter=",", skiprows=1)
    first = state[state[:, 0] == 0.0]
    assert np.all(first[:, 3] == 0.0)
    assert first[:, 2].max() == pytest.approx(1.0) and first[np.argmax(first[:, 2]), 1] == pytest.approx(0.5)
    assert state[:, 3].max() > 0.0


def test_simulate_cli_and_env_output_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("ONCO_OUT_DIR", str(tmp_path / "env_out"))
    assert main(["simulate", "--nx", "30"]) == EXIT_OK
    assert (tmp_path / "env_out" / "mass.csv").is_file()
    assert main(["simulate", "--nx", "30", "--out", str(tmp_path / "flag_out")]) == EXIT_OK
    assert (tmp_path / "flag_out" / "summary.txt").is_file()
    capsys.readouterr()


def test_solver_failure_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, "delta = 1e5\nn_x = 30\ncontrol = exp-decay\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_SOLVER
    assert "solver error" in capsys.readouterr().err


def test_csv_number_format(tmp_path):
    cmd_simulate(RunConfig(n_x=30), tmp_path)
    for line in (tmp_path / "mass.csv").read_text().splitlines()[1:50]:
        for v in line.split(","):
            x = float(v)
            assert np.isfinite(x)
            assert v == f"{x:.12g}"
            assert "x" not in v.lower()


# -- optimize / round trip -----------------------------------------------------------------


def test_optimize_artifacts_and_round_trip(tmp_path):
    cfg = RunConfig(n_x=40)
    report = cmd_optimize(cfg, tmp_path)
    lines = (tmp_path / "convergence.csv").read_text().splitlines()
    assert lines[0] == "iter,J,grad_norm,step"
    assert len(lines) == len(report.iterates) + 1
    control = np.loadtxt(tmp_path / "control.csv", delimiter=",", skiprows=1)
    assert (tmp_path / "control.csv").read_text().startswith("t,I\n")
    assert control.shape[1] == 2 and np.all((control[:, 1] >= 0) & (control[:, 1] <= 4))
    evo = (tmp_path / "control_evolution.csv").read_text().splitlines()[0].split(",")
    assert evo == ["t"] + [f"I_{k}" for k in range(len(report.iterates))]

    (tmp_path / "replay").mkdir()
    summary = cmd_simulate(cfg, tmp_path / "replay", str(tmp_path / "control.csv"))
    assert summary["J"] == pytest.approx(report.iterates[-1].J, rel=1e-12)


def test_read_control_csv_interpolates(params, tmp_path):
    grid = build_grid(params, 30)
    path = write(tmp_path, "t,I\n0,2\n1,0\n", "c.csv")
    ctrl = read_control_csv(path, grid, params)
    np.testing.assert_allclose(ctrl.samples, 2.0 * (1.0 - grid.times), atol=1e-12)
    with pytest.raises(ValidationError):
        read_control_csv(write(tmp_path, "t,I\n0,9\n1,0\n", "bad.csv"), grid, params)
    with pytest.raises(ConfigError):
        read_control_csv(write(tmp_path, "t,I,x\n0,1,2\n", "wide.csv"), grid, params)


def test_missing_control_file_is_config_error(tmp_path, capsys):
    assert main(["simulate", "--nx", "30", "--control", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == EXIT_CONFIG
    capsys.readouterr()


# -- gradcheck ---------------------------------------------------------------------------


def test_gradcheck_without_kill_or_transport():
    cfg = RunConfig(params=ModelParams(delta=1e-12, kappa=0.0), n_x=30)
    for r in cmd_gradcheck(cfg):
        assert r.rel_error <= 1e-3


def test_gradcheck_cli_pass(capsys):
    assert main(["gradcheck", "--nx", "30"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS") == 5 and "FAIL" not in out


def test_gradcheck_cli_fail_exit_code(monkeypatch, capsys):
    monkeypatch.setattr(cli, "cmd_gradcheck", lambda cfg: [ProbeResult(1.0, 1.0), ProbeResult(1.2, 1.0)])
    assert main(["gradcheck"]) == EXIT_GRADCHECK
    assert "FAIL" in capsys.readouterr().out


# -- drug peak ----------------------------------------------------------------------


def test_drug_peak_time(params):
    grid = build_grid(params, 30)
    p0, d0 = initial_tumor(grid), initial_drug(grid)
    const = solve_forward(ControlProfile.constant(1.0, grid), p0, d0, grid, params, stride=grid.n_t)
    assert drug_peak_time(const) == pytest.approx(1.0)
    pulse = np.where(grid.times < 0.25, 4.0, 0.0)
    traj = solve_forward(pulse, p0, d0, grid, params, stride=grid.n_t)
    assert drug_peak_time(traj) == pytest.approx(0.25, abs=2 * grid.dt)
    zero = solve_forward(ControlProfile.constant(0.0, grid), p0, d0, grid, params, stride=grid.n_t)
    with pytest.raises(UsageError):
        drug_peak_time(zero)
