import json

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from pclab import runtime
from pclab.cli import main
from pclab.config import FieldSemantics
from pclab.gridio import read_field_csv, write_field_csv


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture(autouse=True)
def _reset_runtime():
    yield
    runtime.DETERMINISTIC = False


def _coarse_args(out_dir, *extra):
    return ["--coarse", "--out", str(out_dir), *extra]


def test_solve_zero_control_writes_state_and_manifest(runner, tmp_path):
    result = runner.invoke(main, ["solve", *_coarse_args(tmp_path, "--zero-control")])
    assert result.exit_code == 0, result.output
    state = read_field_csv(tmp_path / "state.csv", FieldSemantics.STATE)
    assert state.values.shape == (65, 31)
    assert (tmp_path / "state_profiles.png").exists()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["subcommand"] == "solve"
    assert manifest["effective_config"]["grid"]["n_space"] == 65
    assert len(manifest["config_sha256"]) == 64


def test_solve_reads_control_file(runner, tmp_path):
    from pclab.config import GridField, coarse_experiment

    cfg = coarse_experiment()
    u = GridField(0.1 * np.ones((65, 30)), FieldSemantics.CONTROL)
    ctrl_path = tmp_path / "u.csv"
    write_field_csv(ctrl_path, u, cfg.grid)
    result = runner.invoke(main, ["solve", *_coarse_args(tmp_path),
                                  "--control", str(ctrl_path)])
    assert result.exit_code == 0, result.output


def test_out_dir_falls_back_to_env(runner, tmp_path, monkeypatch):
    monkeypatch.setenv("PCL_OUT_DIR", str(tmp_path / "envout"))
    result = runner.invoke(main, ["solve", "--coarse", "--zero-control"])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "envout" / "state.csv").exists()


def test_invalid_config_exits_with_code_one(runner, tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"grid": {"n_time": 7}}))
    result = runner.invoke(main, ["solve", "--coarse", "--zero-control",
                                  "--out", str(tmp_path), "--config", str(bad)])
    assert result.exit_code == 1
    assert "InvalidGrid" in result.output


def test_blowup_exits_with_code_two(runner, tmp_path):
    # paper-scale grid forced to a single RK4 step per slab is linearly
    # unstable; the command must fail with the runtime-error exit code
    cfg = tmp_path / "unstable.yaml"
    cfg.write_text(yaml.safe_dump({"grid": {"substeps": 1}}))
    result = runner.invoke(main, ["solve", "--zero-control", "--out", str(tmp_path),
                                  "--config", str(cfg)])
    assert result.exit_code == 2
    assert "blew up" in result.output


def test_adjoint_coarse_run(runner, tmp_path):
    result = runner.invoke(main, ["adjoint", *_coarse_args(tmp_path, "--deterministic")])
    assert result.exit_code == 0, result.output
    control = read_field_csv(tmp_path / "control.csv", FieldSemantics.CONTROL)
    assert control.values.shape == (65, 30)
    assert (tmp_path / "run_record.csv").exists()
    assert (tmp_path / "loss_history.png").exists()
    assert "final J" in result.output


def test_check_gradients_passes(runner):
    result = runner.invoke(main, ["check-gradients", "--coarse"])
    assert result.exit_code == 0, result.output
    assert "PASS" in result.output


def test_export_roundtrip_csv_binary(runner, tmp_path):
    from pclab.config import GridField, coarse_experiment

    cfg = coarse_experiment()
    rng = np.random.default_rng(0)
    u = GridField(rng.normal(size=(65, 30)), FieldSemantics.CONTROL)
    src = tmp_path / "u.csv"
    write_field_csv(src, u, cfg.grid)

    out1 = tmp_path / "bin"
    result = runner.invoke(main, ["export", "--coarse", "--out", str(out1),
                                  "--input", str(src), "--kind", "control",
                                  "--to", "binary"])
    assert result.exit_code == 0, result.output
    out2 = tmp_path / "csv"
    result = runner.invoke(main, ["export", "--coarse", "--out", str(out2),
                                  "--input", str(out1 / "control.bin"),
                                  "--kind", "control", "--to", "csv"])
    assert result.exit_code == 0, result.output
    back = read_field_csv(out2 / "control.csv", FieldSemantics.CONTROL)
    assert np.array_equal(back.values, u.values)


def test_export_params_to_control_csv(runner, tmp_path):
    from pclab.gridio import write_params_binary
    from pclab.mlp import MlpArchitecture, init_params

    net = init_params(MlpArchitecture(), 0)
    src = tmp_path / "net.pcl"
    write_params_binary(src, net.flat, net.arch.layer_widths)
    result = runner.invoke(main, ["export", "--coarse", "--out", str(tmp_path),
                                  "--input", str(src), "--kind", "params",
                                  "--to", "control-csv"])
    assert result.exit_code == 0, result.output
    field = read_field_csv(tmp_path / "control.csv", FieldSemantics.CONTROL)
    assert field.values.shape == (65, 30)


def test_pinn_direct_coarse_run(runner, tmp_path):
    result = runner.invoke(main, ["pinn-direct", *_coarse_args(tmp_path, "--deterministic")])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "control.csv").exists()
    assert (tmp_path / "state_net.pcl").exists()
    assert (tmp_path / "control_net.pcl").exists()
    assert "final training loss" in result.output


def test_evaluate_control_file(runner, tmp_path):
    from pclab.config import GridField, coarse_experiment

    cfg = coarse_experiment()
    u = GridField(np.zeros((65, 30)), FieldSemantics.CONTROL)
    src = tmp_path / "u.csv"
    write_field_csv(src, u, cfg.grid)
    result = runner.invoke(main, ["evaluate", *_coarse_args(tmp_path),
                                  "--control", str(src)])
    assert result.exit_code == 0, result.output
    payload = json.loads((tmp_path / "evaluation.json").read_text())
    assert payload["J_Q_rect"] == 0.0
    assert payload["J_T_rect"] > 0
    assert payload["rel_l2_u"] is None


def test_main_help_lists_subcommands(runner):
    result = runner.invoke(main, ["--help"])
    assert result.exit_code == 0
    for cmd in ("solve", "adjoint", "pinn-direct", "pinn-indirect",
                "evaluate", "compare", "check-gradients", "export"):
        assert cmd in result.output
