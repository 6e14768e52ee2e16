"""Configuration parsing/rendering round trips, line-precise error reporting,
problem materialization, and the on-disk output contract."""

import json
import os

import numpy as np
import pytest

from capmix import constitutive as cst
from capmix import entropy as ent
from capmix import fem
from capmix import runio
from capmix import solver
from capmix.errors import (ArgumentError, ConfigParseError,
                           ConfigValidationError, OutputError)


def test_empty_text_gives_defaults():
    cfg = runio.parse_config("")
    assert cfg.params == cst.default_params()
    assert cfg.solver == solver.SolverConfig()
    assert cfg.num_cells == 64
    assert (cfg.x_left, cfg.x_right) == (0.0, 1.0)
    assert cfg.diffusion == ent.DiffusionMatrixSpec()
    assert cfg.initial_profile == "equilibrium"
    assert cfg.initial_args == {}
    assert cfg.output_dir == "out"


def test_full_document_parses():
    text = """
    # two-phase run
    [model]
    n_species = 3
    kappa = 5e-4        # time step
    eps = 2e-3
    [solver]
    t_end = 0.02
    fp_tol = 1e-8
    strict_entropy = false
    [mesh]
    num_cells = 32
    x_left = -1.0
    x_right = 1.0
    [diffusion]
    d0 = 0.5
    d1 = 2.0
    [initial]
    profile = sine_perturbation
    amplitude = 0.05
    species_index = 2
    [output]
    directory = results
    record_every = 4
    """
    cfg = runio.parse_config(text)
    assert cfg.params.kappa == 5e-4 and cfg.params.eps == 2e-3
    assert cfg.solver.t_end == 0.02 and cfg.solver.fp_tol == 1e-8
    assert cfg.solver.strict_entropy is False
    assert cfg.solver.record_every == 4
    assert cfg.num_cells == 32 and cfg.x_left == -1.0
    assert cfg.diffusion.d0 == 0.5 and cfg.diffusion.d1 == 2.0
    assert cfg.initial_profile == "sine_perturbation"
    assert cfg.initial_args == {"amplitude": 0.05, "species_index": 2}
    assert cfg.output_dir == "results"


@pytest.mark.parametrize("text, fragment", [
    ("[model]\nkappa = 1e-3\nkappa = 2e-3", "line 3: duplicate key 'kappa'"),
    ("[model]\nkappa = 1e-3\nkappa = 2e-3", "first set on line 2"),
    ("[engine]\nkappa = 1e-3", "line 1: unknown section"),
    ("kappa = 1e-3", "line 1: key outside of any section"),
    ("[model]\njust some words", "line 2: expected 'key = value'"),
    ("[model]\nkappa = fast", "not a valid float"),
    ("[solver]\nfp_max_iters = 2.5", "not a valid int"),
    ("[solver]\nstrict_entropy = maybe", "not a valid bool"),
    ("[model]\n= 3", "line 2: empty key"),
    ("[model]\nviscosity = 1", "unknown key 'viscosity' in [model]"),
])
def test_parse_errors_carry_line_numbers(text, fragment):
    with pytest.raises(ConfigParseError) as err:
        runio.parse_config(text)
    assert fragment in str(err.value)


def test_record_every_misplacement_hint():
    with pytest.raises(ConfigParseError) as err:
        runio.parse_config("[solver]\nrecord_every = 2")
    assert "record_every belongs in [output]" in str(err.value)


def test_inadmissible_exponents_are_validation_errors():
    with pytest.raises(ConfigValidationError) as err:
        runio.parse_config("[model]\nbeta1 = 4.0")
    assert "5 < beta1" in str(err.value)
    with pytest.raises(ConfigValidationError):
        runio.parse_config("[model]\nlam = 20.0")


def test_inadmissible_profile_state_caught_at_parse_time():
    text = ("[initial]\nprofile = step_profile\n"
            "left_state = 0.5, 0.4, 0.3\nright_state = 0.1, 0.1, 0.1")
    with pytest.raises(ConfigValidationError):
        runio.parse_config(text)
    with pytest.raises(ConfigValidationError) as err:
        runio.parse_config("[initial]\nprofile = shock")
    assert "unknown initial profile" in str(err.value)
    with pytest.raises(ConfigValidationError) as err:
        runio.parse_config("[initial]\nprofile = equilibrium\namplitude = 0.1")
    assert "does not take key" in str(err.value)


def test_species_count_redefaults_boundary_composition():
    cfg = runio.parse_config("[model]\nn_species = 2")
    assert cfg.params.n_species == 2
    assert cfg.params.s_gamma == (0.225, 0.225)
    # An explicit composition wins over the re-default.
    cfg = runio.parse_config("[model]\nn_species = 2\ns_gamma = 0.3, 0.1")
    assert cfg.params.s_gamma == (0.3, 0.1)


def test_render_parse_round_trip():
    default = runio.RunConfig()
    assert runio.parse_config(runio.render_config(default)) == default
    custom = runio.RunConfig(
        params=cst.default_params(kappa=2.5e-4, eps=5e-4),
        solver=solver.SolverConfig(t_end=0.01, fp_tol=1e-8, record_every=3,
                                   strict_entropy=False),
        num_cells=48, x_left=-0.5, x_right=2.0,
        diffusion=ent.DiffusionMatrixSpec(d0=0.7, d1=1.9),
        initial_profile="sine_perturbation",
        initial_args={"amplitude": 0.07, "species_index": 1},
        output_dir="runs/demo")
    assert runio.parse_config(runio.render_config(custom)) == custom
    step = runio.RunConfig(
        initial_profile="step_profile",
        initial_args={"left_state": (0.3, 0.2, 0.1),
                      "right_state": (0.1, 0.2, 0.3)})
    assert runio.parse_config(runio.render_config(step)) == step


def test_build_problem_materializes_components():
    cfg = runio.parse_config("[mesh]\nnum_cells = 10")
    params, spec, mesh, initial, solver_cfg = runio.build_problem(cfg)
    assert params == cfg.params and spec == cfg.diffusion
    assert mesh.num_cells == 10
    assert np.array_equal(initial.values,
                          fem.constant_field(mesh, params).values)
    assert solver_cfg == cfg.solver
    with pytest.raises(ArgumentError):
        runio.build_problem(runio.RunConfig(initial_profile="step_profile"))


def test_diagnostics_header_is_frozen():
    assert runio.DIAGNOSTICS_HEADER == (
        "step,time,lyapunov,diss_dbeta_sq,diss_capillary,diss_grad_dbeta,"
        "diss_eps_w,diss_proj_mu,min_species,max_total,fp_iters")


def _tiny_config(out_dir):
    return runio.parse_config(f"""
    [solver]
    t_end = 2e-3
    [mesh]
    num_cells = 8
    [initial]
    profile = sine_perturbation
    amplitude = 0.05
    [output]
    directory = {out_dir}
    """)


def _run_and_write(cfg, directory):
    params, spec, mesh, initial, solver_cfg = runio.build_problem(cfg)
    traj = solver.run_simulation(initial, params, spec, solver_cfg)
    manifest = runio.write_outputs(traj, cfg, directory)
    return traj, manifest


def test_write_outputs_contract(tmp_path):
    out = tmp_path / "run1"
    cfg = _tiny_config(out)
    traj, manifest = _run_and_write(cfg, out)

    diag_text = (out / "diagnostics.csv").read_text()
    lines = diag_text.splitlines()
    assert lines[0] == runio.DIAGNOSTICS_HEADER
    assert len(lines) == 1 + len(traj.diagnostics) - 1  # header + steps

    snap_lines = (out / "snapshots.csv").read_text().splitlines()
    assert snap_lines[0].startswith("time,node_index,x,S_1")
    assert len(snap_lines) == 1 + len(traj.times) * traj.states[0].mesh.num_nodes

    on_disk = json.loads((out / "manifest.json").read_text())
    assert on_disk == json.loads(json.dumps(runio._jsonable(manifest)))
    assert set(manifest) == {
        "config", "num_steps_recorded", "final_time", "apriori_report",
        "entropy_margins", "entropy_check_constants", "lyapunov", "versions"}
    assert manifest["num_steps_recorded"] == 2
    assert manifest["final_time"] == pytest.approx(2e-3)
    assert all(m >= 0 for m in manifest["entropy_margins"])
    assert manifest["versions"]["numpy"] == np.__version__
    # The stored configuration reproduces the run.
    assert runio.parse_config(manifest["config"]).params == cfg.params


def test_outputs_are_byte_identical_across_reruns(tmp_path):
    cfg = _tiny_config(tmp_path / "a")
    _run_and_write(cfg, tmp_path / "a")
    _run_and_write(cfg, tmp_path / "b")
    for name in ("diagnostics.csv", "snapshots.csv", "manifest.json"):
        first = (tmp_path / "a" / name).read_bytes()
        second = (tmp_path / "b" / name).read_bytes()
        assert first == second, name


def test_write_outputs_filesystem_error(tmp_path):
    blocker = tmp_path / "occupied"
    blocker.write_text("not a directory")
    cfg = _tiny_config(tmp_path / "unused")
    params, spec, mesh, initial, solver_cfg = runio.build_problem(cfg)
    traj = solver.run_simulation(initial, params, spec, solver_cfg)
    with pytest.raises(OutputError):
        runio.write_outputs(traj, cfg, blocker)
