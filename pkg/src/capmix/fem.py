"""1d P1 finite elements: mesh, nodal fields, and the linearised system.

One implicit time step solves, for the entropy variables w (zero on the
boundary), the frozen-coefficient variational problem

    sum_il  int [ M_il(S*) G(S*) + D_il(S*) + eps (S_i*/S*) delta_il ]
            grad w_l . grad phi_i  dx  =  sigma * F(phi),

with G(S) = (a(S)/S) (pc'(S) + tau(S)/kappa) and the load obtained by moving
the known-state terms of the implicit Euler equation to the right:

    F(phi) = - sum_i int (S_i* - S_i^prev)/kappa phi_i dx
             + (1/kappa) sum_i int (S_i*/S*) (tau(S*) - a(S*) pc'(S*))
                                / f'(S*) * g_prev . grad phi_i dx,

where f'(S) = tau(S)/a(S) + tau(S)/kappa is the derivative of the scalar
inversion map and g_prev is the previous beta-gradient (tau(S^prev) grad
S^prev sampled at the assembly quadrature points, or the gradient memory
carried by a running simulation).  The history coefficient is the exact
chain-rule rewrite of the dynamic-capillarity flux: grad S couples to both
grad w and grad S^prev through the state recovery, the grad S^prev share
being tau(S^prev)/(kappa f'(S*)).  Dropping that share (i.e. using the
plain coefficient a tau(S^prev)/kappa) loses the telescoping structure of
the flux dissipation and measurably breaks the per-step entropy inequality.
The coefficient is nonnegative exactly because pc' <= tau/a.

Starred quantities are recovered pointwise from the interpolated current
iterate w* (per-quadrature-point state recovery keeps the mobility block
pointwise symmetric PSD).  The time term is mass-lumped, and additionally
linearised in w around the iterate (quasi-Newton block), which leaves the
fixed points untouched but makes the stiff time-term feedback implicit.

Assembly is fully vectorised over cells; the same interpolation/recovery
helpers are reused by the diagnostics module so that the dissipation budget
is evaluated with the identical quadrature as the assembled forms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import constitutive as cst
from . import entropy as ent
from .errors import ArgumentError, AssemblyError, DomainError

__all__ = [
    "Mesh",
    "NodalField",
    "LinearSystem",
    "build_mesh",
    "constant_field",
    "assemble_system",
    "beta_gradient_field",
    "field_norms",
    "lumped_mass",
]

# Two-point Gauss rule on the reference cell [0,1].
_Q_XI = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_Q_W = np.array([0.5, 0.5])  # weights relative to cell width


@dataclass(frozen=True, eq=False)
class Mesh:
    """Uniform 1d mesh on (x_left, x_right) with nodes at cell endpoints."""

    nodes: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", arr)
        if arr.ndim != 1 or arr.size < 3:
            raise ArgumentError("mesh needs at least 2 cells (3 nodes)")
        if not np.all(np.diff(arr) > 0):
            raise ArgumentError("mesh nodes must be strictly increasing")

    @property
    def num_nodes(self):
        return self.nodes.size

    @property
    def num_cells(self):
        return self.nodes.size - 1

    @property
    def widths(self):
        return np.diff(self.nodes)

    @property
    def boundary_nodes(self):
        return (0, self.nodes.size - 1)

    @property
    def x_left(self):
        return float(self.nodes[0])

    @property
    def x_right(self):
        return float(self.nodes[-1])


def build_mesh(num_cells, x_left=0.0, x_right=1.0) -> Mesh:
    """Uniform mesh with num_cells >= 2 cells on (x_left, x_right)."""
    if int(num_cells) != num_cells or num_cells < 2:
        raise ArgumentError(f"num_cells must be an integer >= 2; got {num_cells!r}")
    if not x_left < x_right:
        raise ArgumentError("x_left must be less than x_right")
    return Mesh(np.linspace(float(x_left), float(x_right), int(num_cells) + 1))


@dataclass(frozen=True, eq=False)
class NodalField:
    """Per-node composition vectors attached to a mesh.

    values has shape (num_nodes, n_species).  Interior rows must lie in the
    admissible set and boundary rows must equal the boundary composition;
    ``check_admissible`` enforces this against a parameter set.
    """

    values: np.ndarray
    mesh: Mesh

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", arr)
        if arr.ndim != 2 or arr.shape[0] != self.mesh.num_nodes:
            raise ArgumentError("values must be (num_nodes, n_species)")
        if not np.all(np.isfinite(arr)):
            raise DomainError("nodal values must be finite")

    @property
    def n_species(self):
        return self.values.shape[1]

    @property
    def totals(self):
        return self.values.sum(axis=1)

    def check_admissible(self, params):
        """Interior rows in the open set; boundary rows exactly S^Gamma."""
        sg = np.asarray(params.s_gamma, dtype=float)
        if self.values.shape[1] != params.n_species:
            raise ArgumentError("field species count does not match params")
        v = self.values
        if not (np.all(v[1:-1] > 0.0) and np.all(v[1:-1].sum(axis=1) < 1.0)):
            raise DomainError("interior nodal state outside the admissible set")
        if not (np.array_equal(v[0], sg) and np.array_equal(v[-1], sg)):
            raise DomainError("boundary nodal states must equal the boundary composition")


def constant_field(mesh: Mesh, params) -> NodalField:
    """Field identically equal to the boundary composition."""
    sg = np.asarray(params.s_gamma, dtype=float)
    return NodalField(np.tile(sg, (mesh.num_nodes, 1)), mesh)


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Sparse symmetric system over interior degrees of freedom (node-major:
    unknown (node, species) at index node*n + species)."""

    matrix: sparse.csr_matrix
    rhs: np.ndarray
    sigma: float
    n_species: int
    num_interior: int


def lumped_mass(mesh: Mesh) -> np.ndarray:
    """Trapezoidal (lumped) nodal masses, all nodes."""
    h = mesh.widths
    m = np.zeros(mesh.num_nodes)
    m[:-1] += 0.5 * h
    m[1:] += 0.5 * h
    return m


def field_norms(field, mesh: Mesh) -> dict:
    """Mass-lumped L2 norm and broken H1 seminorm of nodal data.

    Accepts (num_nodes,) scalar or (num_nodes, k) vector data; vector data is
    reduced over components inside the norms.
    """
    v = np.asarray(field, dtype=float)
    if v.shape[0] != mesh.num_nodes or v.ndim > 2:
        raise ArgumentError("field size does not match mesh")
    vv = v if v.ndim == 2 else v[:, None]
    m = lumped_mass(mesh)
    l2 = float(np.sqrt(np.sum(m[:, None] * vv**2)))
    h = mesh.widths
    grads = (vv[1:] - vv[:-1]) / h[:, None]
    h1 = float(np.sqrt(np.sum(h[:, None] * grads**2)))
    return {"l2": l2, "h1_semi": h1}


# ---------------------------------------------------------------------------
# Interpolation and pointwise state recovery (shared with diagnostics)
# ---------------------------------------------------------------------------

def _interp_cells(nodal, xi):
    """Interpolate nodal data to per-cell reference points.

    nodal: (num_nodes, ...) -> (num_cells, len(xi), ...).  Uses the
    left-value-plus-increment form so constant data interpolates bitwise
    exactly (needed for exact equilibrium preservation).
    """
    left = nodal[:-1]
    right = nodal[1:]
    diff = right - left
    xi = np.asarray(xi)
    xi_shaped = xi.reshape((1, xi.size) + (1,) * (nodal.ndim - 1))
    return left[:, None, ...] + xi_shaped * diff[:, None, ...]


def _recover_points(w_pts, prev_tot_pts, params):
    """State recovery at stacked points of arbitrary leading shape.

    w_pts: (..., n), prev_tot_pts: (...).  Returns dict of arrays with the
    leading shape: s (.., n), total, ds_dw (.., n), f_value.
    """
    lead = prev_tot_pts.shape
    n = w_pts.shape[-1]
    w_flat = w_pts.reshape(-1, n)
    p_flat = prev_tot_pts.reshape(-1)
    s, total, ds_dw, f_val = ent._state_from_w_many(w_flat, p_flat, params)
    return {
        "s": s.reshape(lead + (n,)),
        "total": total.reshape(lead),
        "ds_dw": ds_dw.reshape(lead + (n,)),
        "f_value": f_val.reshape(lead),
    }


def beta_gradient_field(state: NodalField, params) -> np.ndarray:
    """Gradient of beta(S) sampled at the assembly quadrature points.

    Returns (num_cells, num_q) values tau(S_q) * grad S|_cell where S_q is
    the interpolated nodal total and grad S the piecewise-constant gradient.
    This initialises the gradient memory of a run from nodal data; at a
    constant state it is exactly zero.
    """
    tot = state.totals
    tot_q = _interp_cells(tot, _Q_XI)                 # (nc, 2)
    grad_tot = (tot[1:] - tot[:-1]) / state.mesh.widths
    return cst._tau(tot_q, params) * grad_tot[:, None]


def _coefficient_blocks(w_field, s_prev, params, spec, grad_beta_prev):
    """Everything the bilinear form and load need at quadrature points.

    Returns a dict of per-cell, per-quadrature-point arrays for the current
    iterate (recovered states, mobility matrices, coefficient G, diffusion
    matrices, fractions) plus the history pieces built from the previous
    beta-gradient samples.
    """
    w = w_field.values
    prev_tot = s_prev.totals

    w_q = _interp_cells(w, _Q_XI)                     # (nc, 2, n)
    prev_tot_q = _interp_cells(prev_tot, _Q_XI)       # (nc, 2)
    rec = _recover_points(w_q, prev_tot_q, params)
    s_q, tot_q, dsdw_q = rec["s"], rec["total"], rec["ds_dw"]

    coeff = cst.eval_coeffs(tot_q, params)
    a_q, pcp_q, tau_q = coeff.a, coeff.pc_prime, coeff.tau
    g_q = (a_q / tot_q) * (pcp_q + tau_q / params.kappa)

    # Mobility matrix as outer(s, s)/(S f'): bitwise symmetric.
    fprime_q = ent._f_prime_of_total(tot_q, params)
    m_q = s_q[..., :, None] * s_q[..., None, :] / (tot_q * fprime_q)[..., None, None]

    d_q = ent._diffusion_many(s_q.reshape(-1, s_q.shape[-1]), spec)
    d_q = d_q.reshape(s_q.shape[:-1] + d_q.shape[-2:])

    y_q = s_q / tot_q[..., None]

    # History coefficient of the exact chain-rule rewrite; nonnegative
    # because pc' <= tau/a.
    hist_q = (tau_q - a_q * pcp_q) / fprime_q

    return {
        "w_q": w_q, "s_q": s_q, "tot_q": tot_q, "ds_dw_q": dsdw_q,
        "a_q": a_q, "pcp_q": pcp_q, "tau_q": tau_q, "g_q": g_q,
        "m_q": m_q, "d_mat_q": d_q, "y_q": y_q, "fprime_q": fprime_q,
        "hist_q": hist_q, "grad_beta_prev": grad_beta_prev,
    }


def assemble_system(w_star: NodalField, s_prev: NodalField, params, spec,
                    sigma, grad_beta_prev=None) -> LinearSystem:
    """Assemble the linearised operator and load at the iterate w_star.

    Operator blocks per quadrature point: M(S*) G(S*) + D(S*) + eps diag(y*);
    load: minus the lumped time difference (S* - S^prev)/kappa plus the
    frozen history flux (S*_i/S*) (tau* - a* pc'*) / f'* g_prev / kappa,
    the whole load scaled by sigma.  Boundary rows are eliminated (w = 0
    there).  g_prev is the previous beta-gradient at the quadrature points;
    omitted, it is sampled from the previous nodal states.

    The time difference is additionally linearised in w around the iterate
    (S(w) ~ S* + M(S*)(w - w*) nodally), which moves the symmetric PSD block
    sigma (m_nu/kappa) M(S*_nu) into the matrix and the matching term into
    the load.  The fixed points are identical to the fully frozen load, but
    the stiff time-term feedback becomes implicit: without this the
    fixed-point map has a Jacobian of spectral radius well above one at
    practical time steps and plain damped iteration diverges.
    """
    mesh = w_star.mesh
    if s_prev.mesh is not mesh and not np.array_equal(s_prev.mesh.nodes, mesh.nodes):
        raise ArgumentError("w_star and s_prev live on different meshes")
    if not 0.0 <= sigma <= 1.0:
        raise ArgumentError("sigma must lie in [0, 1]")
    n = params.n_species
    nn, nc = mesh.num_nodes, mesh.num_cells
    h = mesh.widths

    if grad_beta_prev is None:
        grad_beta_prev = beta_gradient_field(s_prev, params)
    grad_beta_prev = np.asarray(grad_beta_prev, dtype=float)
    if grad_beta_prev.shape != (nc, _Q_XI.size):
        raise ArgumentError("grad_beta_prev must be (num_cells, num_q)")

    blocks = _coefficient_blocks(w_star, s_prev, params, spec, grad_beta_prev)

    # Per-cell coefficient matrix: width-weighted quadrature average of
    # M G + D + eps diag(y); the P1 gradients are constant per cell, so only
    # this average enters the stiffness block.
    alpha_q = (blocks["m_q"] * blocks["g_q"][..., None, None]
               + blocks["d_mat_q"])
    idx = np.arange(n)
    alpha_q[..., idx, idx] += params.eps * blocks["y_q"]
    c_bar = np.einsum("q,cqij->cij", _Q_W, alpha_q)  # (nc, n, n)

    if not np.all(np.isfinite(c_bar)):
        raise AssemblyError("non-finite frozen coefficient in the operator")

    # Nodal recovery for the lumped time term, plus the nodal mobility
    # blocks M = outer(s, s)/(S f') of the implicit time linearisation.
    rec_nodes = _recover_points(w_star.values, s_prev.totals, params)
    s_star_nodes = rec_nodes["s"]
    fprime_nodes = ent._f_prime_of_total(rec_nodes["total"], params)
    m_nodes = (s_star_nodes[:, :, None] * s_star_nodes[:, None, :]
               / (rec_nodes["total"] * fprime_nodes)[:, None, None])

    # History flux, q-averaged per cell and species:
    # sum_q w_q y_iq (tau_q - a_q pc'_q)/f'_q g_prev_q / kappa.
    flux_hist = np.einsum(
        "q,cqi->ci", _Q_W,
        blocks["y_q"] * (blocks["hist_q"] * grad_beta_prev)[..., None])
    flux_hist /= params.kappa

    m_lump = lumped_mass(mesh)
    load = np.zeros((nn, n))
    load -= m_lump[:, None] * (s_star_nodes - s_prev.values) / params.kappa
    # Counterpart of the implicit time block: + (m/kappa) M(S*) w*.
    load += (m_lump[:, None] / params.kappa) * np.einsum(
        "vij,vj->vi", m_nodes, w_star.values)
    # grad phi of the left node is -1/h, of the right node +1/h; the cell
    # integral of flux.grad(phi) is therefore -/+ the averaged flux.
    load[:-1] -= flux_hist
    load[1:] += flux_hist
    load *= sigma

    if not np.all(np.isfinite(load)):
        raise AssemblyError("non-finite frozen coefficient in the load")

    # Scatter the 2x2 node pattern of each cell into interior-only COO.
    # Interior dof index of node v (1..nn-2): (v-1)*n + i.
    stiff = c_bar / h[:, None, None]  # (nc, n, n)
    cells = np.arange(nc)
    pattern = np.array([[1.0, -1.0], [-1.0, 1.0]])
    node_pair = np.stack([cells, cells + 1], axis=1)  # (nc, 2)

    rows_list, cols_list, vals_list = [], [], []

    # Implicit time blocks: sigma (m_nu/kappa) M(S*_nu) on the interior nodes.
    interior = np.arange(1, nn - 1)
    mass_block = (sigma / params.kappa) * m_lump[interior, None, None] \
        * m_nodes[interior]
    if not np.all(np.isfinite(mass_block)):
        raise AssemblyError("non-finite mobility block in the time term")
    r0 = ((interior - 1) * n)[:, None, None] + idx[None, :, None]
    c0 = ((interior - 1) * n)[:, None, None] + idx[None, None, :]
    rows_list.append(np.broadcast_to(r0, mass_block.shape).ravel())
    cols_list.append(np.broadcast_to(c0, mass_block.shape).ravel())
    vals_list.append(mass_block.ravel())

    for a_loc in range(2):
        for b_loc in range(2):
            va = node_pair[:, a_loc]
            vb = node_pair[:, b_loc]
            keep = (va >= 1) & (va <= nn - 2) & (vb >= 1) & (vb <= nn - 2)
            if not np.any(keep):
                continue
            va, vb = va[keep], vb[keep]
            block = stiff[keep] * pattern[a_loc, b_loc]  # (k, n, n)
            k = va.size
            r = ((va - 1) * n)[:, None, None] + idx[None, :, None]
            c = ((vb - 1) * n)[:, None, None] + idx[None, None, :]
            rows_list.append(np.broadcast_to(r, (k, n, n)).ravel())
            cols_list.append(np.broadcast_to(c, (k, n, n)).ravel())
            vals_list.append(block.ravel())

    ndof = (nn - 2) * n
    mat = sparse.coo_matrix(
        (np.concatenate(vals_list),
         (np.concatenate(rows_list), np.concatenate(cols_list))),
        shape=(ndof, ndof)).tocsr()

    rhs = load[1:-1].ravel()
    return LinearSystem(mat, rhs, float(sigma), n, nn - 2)
