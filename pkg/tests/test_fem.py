"""Mesh, nodal fields and the assembled linear system: structure, symmetry,
the equilibrium null property, and the history load."""

import numpy as np
import pytest

from capmix import constitutive as cst
from capmix import entropy as ent
from capmix import fem
from capmix import solver
from capmix.errors import ArgumentError, DomainError

P0 = cst.default_params()
SPEC = ent.DiffusionMatrixSpec()


def test_build_mesh_basic():
    mesh = fem.build_mesh(8, 0.0, 2.0)
    assert mesh.num_cells == 8
    assert mesh.num_nodes == 9
    assert mesh.x_left == 0.0 and mesh.x_right == 2.0
    assert np.allclose(mesh.widths, 0.25, atol=1e-15)


@pytest.mark.parametrize("bad", [(1, 0.0, 1.0), (2.5, 0.0, 1.0),
                                 (4, 1.0, 1.0), (4, 2.0, 1.0)])
def test_build_mesh_validation(bad):
    with pytest.raises(ArgumentError):
        fem.build_mesh(*bad)


def test_lumped_mass_partitions_length():
    mesh = fem.build_mesh(10, 0.0, 3.0)
    m = fem.lumped_mass(mesh)
    assert m.sum() == pytest.approx(3.0, abs=1e-14)
    assert m[0] == pytest.approx(0.15, abs=1e-15)
    assert m[-1] == pytest.approx(0.15, abs=1e-15)
    assert np.allclose(m[1:-1], 0.3, atol=1e-15)


def test_constant_field_and_admissibility():
    mesh = fem.build_mesh(6)
    field = fem.constant_field(mesh, P0)
    assert field.values.shape == (7, 3)
    assert np.array_equal(field.values, np.tile(P0.s_gamma, (7, 1)))
    field.check_admissible(P0)


def test_nodal_field_validation():
    mesh = fem.build_mesh(4)
    with pytest.raises(ArgumentError):
        fem.NodalField(np.zeros((3, 2)), mesh)
    with pytest.raises(DomainError):
        fem.NodalField(np.full((5, 2), np.nan), mesh)
    vals = np.tile(P0.s_gamma, (5, 1))
    vals[2] = (0.6, 0.3, 0.2)  # total > 1 inside
    with pytest.raises(DomainError):
        fem.NodalField(vals, mesh).check_admissible(P0)
    vals = np.tile(P0.s_gamma, (5, 1))
    vals[0, 0] = 0.2  # boundary row off the boundary composition
    with pytest.raises(DomainError):
        fem.NodalField(vals, mesh).check_admissible(P0)


def test_field_norms():
    mesh = fem.build_mesh(4, 0.0, 1.0)
    ones = np.ones(mesh.num_nodes)
    norms = fem.field_norms(ones, mesh)
    assert norms["l2"] == pytest.approx(1.0, abs=1e-14)
    assert norms["h1_semi"] == 0.0
    lin = mesh.nodes.copy()
    norms = fem.field_norms(lin, mesh)
    assert norms["h1_semi"] == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(ArgumentError):
        fem.field_norms(np.ones(3), mesh)


def test_beta_gradient_field_constant_state_is_zero():
    mesh = fem.build_mesh(12)
    g = fem.beta_gradient_field(fem.constant_field(mesh, P0), P0)
    assert g.shape == (12, 2)
    assert np.array_equal(g, np.zeros((12, 2)))


def test_beta_gradient_field_linear_profile():
    mesh = fem.build_mesh(10)
    slope = 0.2
    totals = 0.3 + slope * mesh.nodes
    vals = np.column_stack([totals / 3.0] * 3)
    field = fem.NodalField(vals, mesh)
    g = fem.beta_gradient_field(field, P0)
    # tau evaluated at the interpolated totals of the two Gauss points per
    # cell, times the constant chord slope of the total.
    tot_q = fem._interp_cells(totals, fem._Q_XI)
    expected = cst.eval_coeffs(tot_q, P0).tau * slope
    assert np.allclose(g, expected, rtol=1e-13, atol=0)


def _sine_setup(num_cells=16):
    mesh = fem.build_mesh(num_cells)
    s_prev = solver.sine_perturbation_initial(mesh, P0, amplitude=0.1)
    grad_beta = fem.beta_gradient_field(s_prev, P0)
    return mesh, s_prev, grad_beta


def test_assembled_system_shape_and_symmetry():
    mesh, s_prev, grad_beta = _sine_setup()
    rng = np.random.default_rng(5)
    w = fem.NodalField(0.05 * rng.standard_normal((mesh.num_nodes, 3)), mesh)
    system = fem.assemble_system(w, s_prev, P0, SPEC, 1.0, grad_beta)
    n_int = (mesh.num_nodes - 2) * 3
    assert system.matrix.shape == (n_int, n_int)
    assert system.rhs.shape == (n_int,)
    assert system.num_interior == mesh.num_nodes - 2
    dense = system.matrix.toarray()
    # Bitwise symmetric by construction (symmetric outer products only).
    assert np.max(np.abs(dense - dense.T)) == 0.0
    assert np.linalg.eigvalsh(dense).min() > 0.0


def test_assembled_load_scales_linearly_in_sigma():
    mesh, s_prev, grad_beta = _sine_setup()
    rng = np.random.default_rng(6)
    w = fem.NodalField(0.05 * rng.standard_normal((mesh.num_nodes, 3)), mesh)
    full = fem.assemble_system(w, s_prev, P0, SPEC, 1.0, grad_beta)
    half = fem.assemble_system(w, s_prev, P0, SPEC, 0.5, grad_beta)
    assert np.array_equal(half.rhs, 0.5 * full.rhs)


def test_equilibrium_assembly_has_zero_load():
    mesh = fem.build_mesh(16)
    eq = fem.constant_field(mesh, P0)
    w0 = fem.NodalField(np.zeros((mesh.num_nodes, 3)), mesh)
    system = fem.assemble_system(w0, eq, P0, SPEC, 1.0)
    assert np.array_equal(system.rhs, np.zeros_like(system.rhs))


def test_history_memory_enters_the_load():
    mesh = fem.build_mesh(16)
    eq = fem.constant_field(mesh, P0)
    w0 = fem.NodalField(np.zeros((mesh.num_nodes, 3)), mesh)
    uniform = np.full((mesh.num_cells, 2), 0.05)
    system = fem.assemble_system(w0, eq, P0, SPEC, 1.0, grad_beta_prev=uniform)
    # A uniform carried flux telescopes across interior nodes: divergence-free.
    assert np.array_equal(system.rhs, np.zeros_like(system.rhs))
    varying = uniform * np.linspace(0.0, 1.0, mesh.num_cells)[:, None]
    system = fem.assemble_system(w0, eq, P0, SPEC, 1.0, grad_beta_prev=varying)
    # A varying carried gradient drives the state away from rest.
    assert float(np.abs(system.rhs).max()) > 0.0


def test_assemble_validates_inputs():
    mesh, s_prev, _ = _sine_setup()
    w0 = fem.NodalField(np.zeros((mesh.num_nodes, 3)), mesh)
    with pytest.raises(ArgumentError):
        fem.assemble_system(w0, s_prev, P0, SPEC, 1.5)
    with pytest.raises(ArgumentError):
        fem.assemble_system(w0, s_prev, P0, SPEC, 1.0,
                            grad_beta_prev=np.zeros((3, 2)))
    other = fem.build_mesh(8)
    s_other = fem.constant_field(other, P0)
    with pytest.raises(ArgumentError):
        fem.assemble_system(w0, s_other, P0, SPEC, 1.0)


def test_positive_semidefinite_without_regularisation():
    params0 = cst.default_params(eps=0.0)
    mesh = fem.build_mesh(16)
    s_prev = solver.sine_perturbation_initial(mesh, params0, amplitude=0.1)
    rng = np.random.default_rng(7)
    w = fem.NodalField(0.05 * rng.standard_normal((mesh.num_nodes, 3)), mesh)
    system = fem.assemble_system(w, s_prev, params0, SPEC, 1.0)
    dense = system.matrix.toarray()
    for _ in range(200):
        v = rng.standard_normal(dense.shape[0])
        v /= np.linalg.norm(v)
        assert float(v @ dense @ v) >= -1e-10
