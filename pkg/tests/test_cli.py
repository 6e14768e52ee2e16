"""Command-line entry point: subcommands, exit codes, and error mapping."""

import os

import pytest

from capmix import cli, solver
from capmix.errors import EntropyViolationError, LinearSolveError


def _write_config(tmp_path, out_dir, extra=""):
    path = tmp_path / "run.cfg"
    path.write_text(f"""
    [solver]
    t_end = 2e-3
    [mesh]
    num_cells = 8
    [initial]
    profile = sine_perturbation
    amplitude = 0.05
    [output]
    directory = {out_dir}
    {extra}
    """)
    return str(path)


def test_validate_accepts_reference_parameters(tmp_path, capsys):
    cfg = _write_config(tmp_path, tmp_path / "out")
    assert cli.main(["validate", cfg]) == 0
    out = capsys.readouterr().out
    assert "parameters accepted" in out
    assert "alpha1=-1.9" in out


def test_validate_rejects_bad_exponents(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("[model]\nbeta1 = 4.0\n")
    assert cli.main(["validate", str(path)]) == 2
    err = capsys.readouterr().err
    assert "error:" in err and "5 < beta1" in err


def test_missing_config_file(tmp_path, capsys):
    assert cli.main(["validate", str(tmp_path / "absent.cfg")]) == 2
    assert "error:" in capsys.readouterr().err


def test_malformed_config_reports_line(tmp_path, capsys):
    path = tmp_path / "dup.cfg"
    path.write_text("[model]\nkappa = 1e-3\nkappa = 2e-3\n")
    assert cli.main(["run", str(path)]) == 2
    assert "line 3" in capsys.readouterr().err


def test_run_writes_outputs(tmp_path, capsys):
    out_dir = tmp_path / "out"
    cfg = _write_config(tmp_path, out_dir)
    assert cli.main(["run", cfg]) == 0
    stdout = capsys.readouterr().out
    assert "run complete: 2 recorded steps" in stdout
    assert "lyapunov" in stdout
    for name in ("diagnostics.csv", "snapshots.csv", "manifest.json"):
        assert (out_dir / name).exists()


def test_run_solver_failure_maps_to_exit_3(tmp_path, capsys):
    path = tmp_path / "hard.cfg"
    path.write_text(f"""
    [model]
    kappa = 5e-2
    [solver]
    t_end = 0.1
    fp_max_iters = 2
    homotopy_steps = 2
    [mesh]
    num_cells = 8
    [initial]
    profile = sine_perturbation
    amplitude = 0.2
    [output]
    directory = {tmp_path / "hard_out"}
    """)
    code = cli.main(["run", str(path)])
    assert code == 3
    assert "error:" in capsys.readouterr().err


def test_entropy_violation_maps_to_exit_4(tmp_path, capsys, monkeypatch):
    cfg = _write_config(tmp_path, tmp_path / "out")

    def explode(*args, **kwargs):
        raise EntropyViolationError("entropy inequality violated at step 1")

    monkeypatch.setattr(solver, "run_simulation", explode)
    assert cli.main(["run", cfg]) == 4
    assert "entropy inequality" in capsys.readouterr().err


def test_linear_solver_failure_maps_to_exit_3(tmp_path, capsys, monkeypatch):
    cfg = _write_config(tmp_path, tmp_path / "out")

    def explode(*args, **kwargs):
        raise LinearSolveError("conjugate gradients did not converge")

    monkeypatch.setattr(solver, "run_simulation", explode)
    assert cli.main(["run", cfg]) == 3


def test_strict_entropy_flag_overrides_config(tmp_path, monkeypatch):
    path = tmp_path / "lenient.cfg"
    path.write_text(f"""
    [solver]
    t_end = 2e-3
    strict_entropy = false
    [mesh]
    num_cells = 8
    [initial]
    profile = sine_perturbation
    amplitude = 0.05
    [output]
    directory = {tmp_path / "out2"}
    """)
    seen = {}
    real = solver.run_simulation

    def capture(initial, params, spec, solver_cfg):
        seen["strict"] = solver_cfg.strict_entropy
        return real(initial, params, spec, solver_cfg)

    monkeypatch.setattr(solver, "run_simulation", capture)
    assert cli.main(["run", str(path)]) == 0
    assert seen["strict"] is False
    assert cli.main(["run", str(path), "--strict-entropy"]) == 0
    assert seen["strict"] is True


def test_study_writes_report(tmp_path, capsys):
    out_dir = tmp_path / "study_out"
    path = tmp_path / "study.cfg"
    path.write_text(f"""
    [model]
    kappa = 2e-3
    [solver]
    t_end = 8e-3
    [mesh]
    num_cells = 8
    [initial]
    profile = sine_perturbation
    amplitude = 0.05
    [output]
    directory = {out_dir}
    """)
    code = cli.main(["study", str(path), "--kappas", "4e-3,2e-3",
                     "--epsilons", ""])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "kappa ladder" in stdout
    assert (out_dir / "study.json").exists()


def test_study_rejects_malformed_ladder(tmp_path, capsys):
    cfg = _write_config(tmp_path, tmp_path / "out")
    assert cli.main(["study", cfg, "--kappas", "fast,slow"]) == 2
    assert "error:" in capsys.readouterr().err


def test_threads_flag_validation(tmp_path):
    cfg = _write_config(tmp_path, tmp_path / "out")
    with pytest.raises(SystemExit):
        cli.main(["--threads", "0", "validate", cfg])


def test_threads_flag_pins_environment(tmp_path, monkeypatch):
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        monkeypatch.delenv(var, raising=False)
    cfg = _write_config(tmp_path, tmp_path / "out")
    assert cli.main(["--threads", "1", "validate", cfg]) == 0
    assert os.environ["OPENBLAS_NUM_THREADS"] == "1"


def test_selftest_passes(capsys):
    assert cli.main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "all checks passed" in out
    assert "FAIL" not in out


def test_no_subcommand_is_usage_error():
    with pytest.raises(SystemExit):
        cli.main([])
