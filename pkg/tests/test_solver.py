"""Time stepping: linear solve accuracy, stationarity at the boundary
composition, Lyapunov monotonicity on a perturbed run, trajectory recording,
initial-profile builders, and the refinement-study report."""

import numpy as np
import pytest

from capmix import constitutive as cst
from capmix import entropy as ent
from capmix import fem
from capmix import solver
from capmix.errors import ArgumentError, PreconditionError

P0 = cst.default_params()
SPEC = ent.DiffusionMatrixSpec()


def _assembled(num_cells=16, seed=11):
    mesh = fem.build_mesh(num_cells)
    s_prev = solver.sine_perturbation_initial(mesh, P0, amplitude=0.1)
    rng = np.random.default_rng(seed)
    w = fem.NodalField(0.05 * rng.standard_normal((mesh.num_nodes, 3)), mesh)
    return fem.assemble_system(w, s_prev, P0, SPEC, 1.0,
                               fem.beta_gradient_field(s_prev, P0))


def test_solve_linear_matches_dense_factorisation():
    system = _assembled()
    x = solver.solve_linear(system, linear_tol=1e-12)
    dense = np.linalg.solve(system.matrix.toarray(), system.rhs)
    assert np.allclose(x, dense, rtol=1e-10, atol=1e-14)
    resid = np.linalg.norm(system.matrix @ x - system.rhs)
    assert resid <= 1e-12 * np.linalg.norm(system.rhs)


def test_solve_linear_zero_load_is_exact_zero():
    mesh = fem.build_mesh(16)
    eq = fem.constant_field(mesh, P0)
    w0 = fem.NodalField(np.zeros((mesh.num_nodes, 3)), mesh)
    system = fem.assemble_system(w0, eq, P0, SPEC, 1.0)
    x = solver.solve_linear(system)
    assert np.array_equal(x, np.zeros_like(x))


def test_equilibrium_step_is_bitwise_stationary():
    mesh = fem.build_mesh(32)
    eq = solver.equilibrium_initial(mesh, P0)
    cfg = solver.SolverConfig()
    s_new, stats = solver.solve_time_step(eq, P0, SPEC, cfg)
    assert np.array_equal(s_new.values, eq.values)
    assert not stats.used_homotopy
    assert stats.iterations <= 2
    assert stats.residual == 0.0


def test_equilibrium_run_stays_at_rest():
    mesh = fem.build_mesh(16)
    eq = solver.equilibrium_initial(mesh, P0)
    cfg = solver.SolverConfig(t_end=0.01)
    traj = solver.run_simulation(eq, P0, SPEC, cfg)
    assert len(traj.states) == 11
    for state in traj.states:
        assert np.array_equal(state.values, eq.values)
    for rec in traj.diagnostics:
        assert rec.lyapunov == 0.0
        assert rec.diss_dbeta_sq <= 1e-15
        assert rec.diss_eps_w <= 1e-15


def test_perturbed_run_dissipates():
    mesh = fem.build_mesh(16)
    init = solver.sine_perturbation_initial(mesh, P0, amplitude=0.1)
    cfg = solver.SolverConfig(t_end=5e-3)
    traj = solver.run_simulation(init, P0, SPEC, cfg)
    lyap = [rec.lyapunov for rec in traj.diagnostics]
    assert lyap[0] > 0.0
    assert all(b <= a + 1e-12 for a, b in zip(lyap, lyap[1:]))
    assert lyap[-1] < lyap[0]
    for rec in traj.diagnostics[1:]:
        assert rec.entropy_margin >= 0.0
        assert rec.min_species > 0.0
        assert rec.max_total < 1.0
        assert rec.fp_iters >= 1


def test_trajectory_recording_thins_but_keeps_last():
    mesh = fem.build_mesh(16)
    init = solver.sine_perturbation_initial(mesh, P0, amplitude=0.05)
    cfg = solver.SolverConfig(t_end=5e-3, record_every=2)
    traj = solver.run_simulation(init, P0, SPEC, cfg)
    # 5 steps, kept at 0, 2, 4 and the final 5th.
    assert traj.times == pytest.approx([0.0, 2e-3, 4e-3, 5e-3], abs=1e-15)
    assert [rec.step for rec in traj.diagnostics] == [0, 2, 4, 5]
    assert len(traj.states) == 4


def test_run_rejects_inadmissible_initial_state():
    mesh = fem.build_mesh(8)
    vals = np.tile(P0.s_gamma, (mesh.num_nodes, 1))
    vals[0, 0] = 0.3  # boundary row off the boundary composition
    bad = fem.NodalField(vals, mesh)
    with pytest.raises(PreconditionError):
        solver.run_simulation(bad, P0, SPEC, solver.SolverConfig())


def test_run_rejects_horizon_shorter_than_one_step():
    mesh = fem.build_mesh(8)
    eq = solver.equilibrium_initial(mesh, P0)
    with pytest.raises(ArgumentError):
        solver.run_simulation(eq, P0, SPEC, solver.SolverConfig(t_end=1e-4))


def test_sine_perturbation_profile():
    mesh = fem.build_mesh(20)
    field = solver.sine_perturbation_initial(mesh, P0, amplitude=0.1,
                                             species_index=1)
    field.check_admissible(P0)
    sg = np.asarray(P0.s_gamma)
    assert np.array_equal(field.values[0], sg)
    assert np.array_equal(field.values[-1], sg)
    mid = mesh.num_nodes // 2
    assert field.values[mid, 1] > sg[1]
    assert field.values[mid, 0] == sg[0]
    # Oversized amplitudes are pulled back strictly inside the state space.
    big = solver.sine_perturbation_initial(mesh, P0, amplitude=5.0)
    big.check_admissible(P0)
    with pytest.raises(ArgumentError):
        solver.sine_perturbation_initial(mesh, P0, species_index=3)


def test_step_profile():
    mesh = fem.build_mesh(10, 0.0, 1.0)
    left = (0.3, 0.2, 0.1)
    right = (0.1, 0.2, 0.3)
    field = solver.step_profile_initial(mesh, P0, left, right)
    field.check_admissible(P0)
    assert np.array_equal(field.values[1], left)
    assert np.array_equal(field.values[-2], right)
    with pytest.raises(ArgumentError):
        solver.step_profile_initial(mesh, P0, (0.5, 0.5, 0.5), right)
    with pytest.raises(ArgumentError):
        solver.step_profile_initial(mesh, P0, (0.3, 0.2), right)


def test_refinement_study_report_structure():
    mesh = fem.build_mesh(16)
    params = cst.default_params(kappa=2e-3)
    init = solver.sine_perturbation_initial(mesh, params, amplitude=0.05)
    cfg = solver.SolverConfig(t_end=8e-3)
    report = solver.refinement_study(init, params, SPEC, cfg,
                                     kappa_list=[4e-3, 2e-3, 1e-3],
                                     eps_list=[1e-3, 5e-4])
    kd = report["kappa"]
    assert kd["values"] == [4e-3, 2e-3, 1e-3]
    assert len(kd["pairwise_l2"]) == 2
    assert all(d > 0 for d in kd["pairwise_l2"])
    assert len(kd["orders"]) == 1
    assert np.isfinite(kd["orders"][0])
    assert len(kd["apriori"]) == 3
    assert isinstance(kd["flags"], list)
    ed = report["eps"]
    assert ed["values"] == [1e-3, 5e-4]
    assert len(ed["apriori"]) == 2
    for rep in kd["apriori"] + ed["apriori"]:
        assert "dkbeta_L2L2" in rep and "exponents" in rep


def test_refinement_study_requires_non_increasing_ladders():
    mesh = fem.build_mesh(8)
    init = solver.equilibrium_initial(mesh, P0)
    cfg = solver.SolverConfig(t_end=4e-3)
    with pytest.raises(ArgumentError):
        solver.refinement_study(init, P0, SPEC, cfg,
                                kappa_list=[1e-3, 2e-3], eps_list=[])
    with pytest.raises(ArgumentError):
        solver.refinement_study(init, P0, SPEC, cfg,
                                kappa_list=[], eps_list=[1e-4, 1e-3])
