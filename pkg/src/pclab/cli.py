"""Command-line surface: per-method runs, the full comparison, oracle checks,
and artifact I/O.

Exit codes: 0 success, 1 validation/usage error, 2 runtime failure (solver
blow-up, line-search dead end).  Every run writes a manifest (config hash,
seed, versions, wall time) alongside its outputs.  Flags override config-file
values; the effective merged configuration is echoed into the manifest.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__, runtime
from .config import (ExperimentConfig, FieldSemantics, GridField,
                     SpecValidationError, coarse_experiment, config_as_dict,
                     default_experiment, load_config)
from .fd_solver import BlowUpError, resolve_substeps, solve_state
from .gridio import (read_field_binary, read_field_csv, read_params_binary,
                     write_field_binary, write_field_csv, write_params_binary)


class CliError(click.ClickException):
    exit_code = 1


class RuntimeFailure(click.ClickException):
    exit_code = 2


def _load_cfg(config_path, coarse: bool) -> ExperimentConfig:
    base = coarse_experiment() if coarse else default_experiment()
    try:
        return load_config(config_path, base) if config_path else base.validated()
    except (SpecValidationError, ValueError, OSError) as exc:
        raise CliError(str(exc)) from exc


def _out_dir(out) -> Path:
    out = out or os.environ.get("PCL_OUT_DIR") or "."
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {path}: {exc}") from exc
    return path


def _write_manifest(out_dir: Path, cfg: ExperimentConfig, seed: int, t_start: float,
                    extra=None):
    eff = config_as_dict(cfg)
    blob = json.dumps(eff, sort_keys=True).encode()
    manifest = {
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "effective_config": eff,
        "seed": seed,
        "deterministic": runtime.DETERMINISTIC,
        "argv": sys.argv[1:],
        "versions": {"pclab": __version__, "numpy": np.__version__,
                     "python": sys.version.split()[0]},
        "wall_seconds": 0.0 if runtime.DETERMINISTIC else time.perf_counter() - t_start,
    }
    if extra:
        manifest.update(extra)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_control(path, grid):
    path = str(path)
    field = (read_field_binary(path, FieldSemantics.CONTROL) if path.endswith((".bin", ".pcl"))
             else read_field_csv(path, FieldSemantics.CONTROL))
    field.check_shape(grid)
    return field


def common_options(fn):
    for deco in reversed([
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                     default=None, help="YAML configuration file."),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--out", "out", type=click.Path(file_okay=False), default=None,
                     help="Output directory (fallback: $PCL_OUT_DIR, then cwd)."),
        click.option("--threads", type=int, default=None,
                     help="Thread cap for numerical kernels (1 = deterministic path)."),
        click.option("--deterministic", is_flag=True, default=False,
                     help="Sequential reductions and zeroed wall-times in outputs."),
        click.option("--coarse", is_flag=True, default=False,
                     help="Start from the coarse test-scale configuration."),
    ]):
        fn = deco(fn)
    return fn


def _apply_mode(threads, deterministic):
    if deterministic or threads == 1:
        runtime.set_deterministic(True)
    elif threads is not None:
        try:
            import threadpoolctl

            threadpoolctl.threadpool_limits(threads)
        except ImportError:
            pass


@click.group()
@click.version_option(__version__)
def main():
    """Optimal control of a 1D Allen-Cahn equation: discrete adjoint,
    direct PINN, and indirect (KKT) PINN on a shared FD baseline."""


@main.command()
@common_options
@click.option("--zero-control", is_flag=True, default=False,
              help="Solve with u = 0 instead of reading a control file.")
@click.option("--control", "control_path", type=click.Path(exists=True), default=None,
              help="Control field (CSV or PCL1 binary).")
def solve(config_path, seed, out, threads, deterministic, coarse, zero_control, control_path):
    """Forward-solve the state equation and write the trajectory CSV."""
    _apply_mode(threads, deterministic)
    t0 = time.perf_counter()
    cfg = _load_cfg(config_path, coarse)
    out_dir = _out_dir(out)
    if zero_control or control_path is None:
        control = GridField.zeros(cfg.grid, FieldSemantics.CONTROL)
    else:
        control = _read_control(control_path, cfg.grid)
    try:
        traj = solve_state(control, cfg.spec, cfg.grid)
    except BlowUpError as exc:
        raise RuntimeFailure(str(exc)) from exc
    write_field_csv(out_dir / "state.csv", traj.snapshots, cfg.grid)
    from .report import plot_profiles
    plot_profiles(traj.snapshots.values, cfg.grid, out_dir / "state_profiles.png",
                  "y", "state trajectory")
    _write_manifest(out_dir, cfg, seed, t0, {"subcommand": "solve"})
    click.echo(f"wrote {out_dir / 'state.csv'}")


@main.command("adjoint")
@common_options
@click.option("--init-control", "init_path", type=click.Path(exists=True), default=None,
              help="Warm-start control (CSV or PCL1).")
@click.option("--reference", "reference_path", type=click.Path(exists=True), default=None,
              help="Reference control for in-training rel-L2 logging.")
def adjoint_cmd(config_path, seed, out, threads, deterministic, coarse, init_path,
                reference_path):
    """Discrete-adjoint optimization of the control array."""
    from .adjoint import optimize_adjoint
    from .report import plot_control_heatmap, plot_loss_history

    _apply_mode(threads, deterministic)
    t0 = time.perf_counter()
    cfg = _load_cfg(config_path, coarse)
    out_dir = _out_dir(out)
    init = (_read_control(init_path, cfg.grid) if init_path
            else GridField.zeros(cfg.grid, FieldSemantics.CONTROL))
    reference = _read_control(reference_path, cfg.grid) if reference_path else None
    try:
        control, record = optimize_adjoint(init, cfg.spec, cfg.grid, cfg.adjoint_qn,
                                           reference=reference)
    except BlowUpError as exc:
        raise RuntimeFailure(str(exc)) from exc
    write_field_csv(out_dir / "control.csv", control, cfg.grid)
    write_field_binary(out_dir / "control.bin", control)
    record.to_csv(out_dir / "run_record.csv")
    plot_loss_history(record, out_dir / "loss_history.png", "adjoint optimization")
    plot_control_heatmap(control, cfg.grid, out_dir / "control.png")
    _write_manifest(out_dir, cfg, seed, t0,
                    {"subcommand": "adjoint", "status": record.status,
                     "final_J": record.final_loss})
    click.echo(f"final J = {record.final_loss}")


def _train_pinn_cmd(kind, config_path, seed, out, threads, deterministic, coarse,
                    reference_path):
    from .evaluate import export_control, rel_l2
    from .losses import PinnProblem
    from .optim import train_pinn
    from .evaluate import _make_nets
    from .report import plot_control_heatmap, plot_loss_history

    _apply_mode(threads, deterministic)
    t0 = time.perf_counter()
    cfg = _load_cfg(config_path, coarse)
    out_dir = _out_dir(out)
    reference = _read_control(reference_path, cfg.grid) if reference_path else None
    problem = PinnProblem(cfg.spec, cfg.grid, cfg.weights, cfg.colloc.n_int,
                          cfg.colloc.n_bc, kind)
    nets0 = _make_nets(cfg, seed)
    rel_fn = None
    if reference is not None:
        rel_fn = lambda plist: rel_l2(export_control(plist[1], cfg.grid), reference, cfg.grid)
    nets, record, _ = train_pinn(problem, nets0, cfg.adam, cfg.qn,
                                 cfg.colloc.seed + seed, rel_l2_fn=rel_fn)
    control = export_control(nets[1], cfg.grid)
    write_field_csv(out_dir / "control.csv", control, cfg.grid)
    write_params_binary(out_dir / "state_net.pcl", nets[0].flat, nets[0].arch.layer_widths)
    write_params_binary(out_dir / "control_net.pcl", nets[1].flat, nets[1].arch.layer_widths)
    record.to_csv(out_dir / "run_record.csv")
    plot_loss_history(record, out_dir / "loss_history.png", f"{kind} PINN training")
    plot_control_heatmap(control, cfg.grid, out_dir / "control.png")
    _write_manifest(out_dir, cfg, seed, t0,
                    {"subcommand": f"pinn-{kind}", "status": record.status,
                     "final_loss": record.final_loss})
    click.echo(f"final training loss = {record.final_loss}")


@main.command("pinn-direct")
@common_options
@click.option("--reference", "reference_path", type=click.Path(exists=True), default=None)
def pinn_direct(config_path, seed, out, threads, deterministic, coarse, reference_path):
    """Train the direct-formulation PINN."""
    _train_pinn_cmd("direct", config_path, seed, out, threads, deterministic, coarse,
                    reference_path)


@main.command("pinn-indirect")
@common_options
@click.option("--reference", "reference_path", type=click.Path(exists=True), default=None)
def pinn_indirect(config_path, seed, out, threads, deterministic, coarse, reference_path):
    """Train the indirect (KKT) PINN."""
    _train_pinn_cmd("indirect", config_path, seed, out, threads, deterministic, coarse,
                    reference_path)


@main.command("evaluate")
@common_options
@click.option("--control", "control_path", type=click.Path(exists=True), required=True)
@click.option("--reference", "reference_path", type=click.Path(exists=True), default=None)
@click.option("--state-net", "state_net_path", type=click.Path(exists=True), default=None)
def evaluate_cmd(config_path, seed, out, threads, deterministic, coarse, control_path,
                 reference_path, state_net_path):
    """Evaluate one control on the shared FD baseline."""
    from .evaluate import Method, evaluate_method
    from .mlp import MlpArchitecture, MlpParams

    _apply_mode(threads, deterministic)
    t0 = time.perf_counter()
    cfg = _load_cfg(config_path, coarse)
    out_dir = _out_dir(out)
    control = _read_control(control_path, cfg.grid)
    reference = _read_control(reference_path, cfg.grid) if reference_path else None
    state_net = None
    if state_net_path:
        flat, widths = read_params_binary(state_net_path)
        state_net = MlpParams(flat, MlpArchitecture(widths))
    try:
        res = evaluate_method(Method.DIRECT_PINN if state_net else Method.ADJOINT_SCRATCH,
                              control, cfg.spec, cfg.grid, state_net=state_net,
                              reference_control=reference)
    except BlowUpError as exc:
        raise RuntimeFailure(str(exc)) from exc
    payload = {
        "J_T_rect": res.objective_rect.j_terminal,
        "J_Q_rect": res.objective_rect.j_control,
        "J_rect": res.objective_rect.j_total,
        "J_T_trap": res.objective_trap.j_terminal,
        "J_Q_trap": res.objective_trap.j_control,
        "J_trap": res.objective_trap.j_total,
        "rel_l2_u": res.rel_l2_u_vs_reference,
        "terminal_identity_inf": res.terminal_identity_inf,
    }
    with open(out_dir / "evaluation.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_field_csv(out_dir / "solver_state.csv", res.solver_state.snapshots, cfg.grid)
    if res.net_state is not None:
        write_field_csv(out_dir / "net_state.csv", res.net_state.snapshots, cfg.grid)
    _write_manifest(out_dir, cfg, seed, t0, {"subcommand": "evaluate"})
    click.echo(json.dumps(payload, indent=2, sort_keys=True))


@main.command("compare")
@common_options
@click.option("--reference", "reference_path", type=click.Path(exists=True), default=None,
              help="Precomputed reference control (enables in-training rel-L2 logs).")
def compare(config_path, seed, out, threads, deterministic, coarse, reference_path):
    """Run all four methods and emit the summary table, CSVs, and figures."""
    from .evaluate import run_comparison
    from .report import (plot_control_heatmap, plot_loss_history,
                         plot_state_comparison, plot_summary)

    _apply_mode(threads, deterministic)
    t0 = time.perf_counter()
    cfg = _load_cfg(config_path, coarse)
    out_dir = _out_dir(out)
    reference = _read_control(reference_path, cfg.grid) if reference_path else None
    results, summary, records = run_comparison(cfg, seed=seed, reference_control=reference)
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for method, res in results.items():
        mdir = out_dir / method.value
        mdir.mkdir(exist_ok=True)
        write_field_csv(mdir / "control.csv", res.control, cfg.grid)
        write_field_csv(mdir / "solver_state.csv", res.solver_state.snapshots, cfg.grid)
        if res.net_state is not None:
            write_field_csv(mdir / "net_state.csv", res.net_state.snapshots, cfg.grid)
            np.savetxt(mdir / "snapshot_errors.csv", res.snapshot_errors,
                       delimiter=",", newline="\n")
        plot_control_heatmap(res.control, cfg.grid, mdir / "control.png",
                             f"u(x,t), {method.value}")
        plot_state_comparison(res, cfg.grid, mdir / "state.png")
    for name, record in records.items():
        record.to_csv(out_dir / f"record_{name}.csv")
        plot_loss_history(record, out_dir / f"history_{name}.png", name)
    plot_summary(summary, out_dir / "summary.png")
    _write_manifest(out_dir, cfg, seed, t0,
                    {"subcommand": "compare", "failures": summary["failures"]})
    click.echo(json.dumps(summary["methods"], indent=2, sort_keys=True))
    if summary["failures"]:
        raise RuntimeFailure(f"stage failures: {summary['failures']}")


@main.command("check-gradients")
@common_options
def check_gradients(config_path, seed, out, threads, deterministic, coarse):
    """Verify adjoint-vs-FD and MLP-vs-FD gradients; exit 0 iff both <= 1e-6."""
    from .checks import run_all_checks

    _apply_mode(threads, deterministic)
    result = run_all_checks(verbose=True)
    if not result["ok"]:
        raise RuntimeFailure("gradient checks exceeded 1e-6")


@main.command("export")
@common_options
@click.option("--input", "input_path", type=click.Path(exists=True), required=True)
@click.option("--kind", type=click.Choice(["control", "state", "adjoint", "params"]),
              default="control", show_default=True)
@click.option("--to", "target", type=click.Choice(["csv", "binary", "control-csv"]),
              required=True, help="control-csv samples a params file on the grid.")
def export(config_path, seed, out, threads, deterministic, coarse, input_path, kind, target):
    """Convert between the CSV and PCL1 binary formats (or sample a network)."""
    from .mlp import MlpArchitecture, MlpParams

    _apply_mode(threads, deterministic)
    t0 = time.perf_counter()
    cfg = _load_cfg(config_path, coarse)
    out_dir = _out_dir(out)
    sem = {"control": FieldSemantics.CONTROL, "state": FieldSemantics.STATE,
           "adjoint": FieldSemantics.ADJOINT}.get(kind)
    if kind == "params":
        flat, widths = read_params_binary(input_path)
        if target == "control-csv":
            from .evaluate import export_control

            net = MlpParams(flat, MlpArchitecture(widths))
            field = export_control(net, cfg.grid)
            write_field_csv(out_dir / "control.csv", field, cfg.grid)
            click.echo(f"wrote {out_dir / 'control.csv'}")
        else:
            raise CliError("params files can only be exported with --to control-csv")
    else:
        path = str(input_path)
        field = (read_field_binary(path, sem) if path.endswith((".bin", ".pcl"))
                 else read_field_csv(path, sem))
        if target == "csv":
            write_field_csv(out_dir / f"{kind}.csv", field, cfg.grid)
            click.echo(f"wrote {out_dir / f'{kind}.csv'}")
        elif target == "binary":
            write_field_binary(out_dir / f"{kind}.bin", field)
            click.echo(f"wrote {out_dir / f'{kind}.bin'}")
        else:
            raise CliError("--to control-csv requires --kind params")
    _write_manifest(out_dir, cfg, seed, t0, {"subcommand": "export"})


if __name__ == "__main__":
    main()
