"""Mixing free energy, chemical potentials and the entropy-variable transform.

For a composition vector S_1..S_n with total S = sum S_i in (0,1), the free
energy density is

    F(S_1..S_n) = sum_i S_i log(S_i/S) + E(S),

with E the convex kernel from :mod:`capmix.constitutive`.  Its gradient gives
the chemical potentials mu_i = log(S_i/S) + f0(S).  The entropy variable used
by the implicit scheme shifts mu by its boundary value and adds the (parallel
to (1,..,1)) dynamic-capillarity increment:

    w_i = mu_i(S) - mu_i(S^G) + (beta(S) - beta(s_prev)) / kappa.

Inverting w -> S reduces to one scalar strictly-increasing equation

    f(S) = f0(S) - f0(S^G) + (beta(S) - beta(s_prev))/kappa = logsumexp-like rhs,

whose root gives the total; the fractions are a weighted softmax of w.  Both
directions evaluate f through the same helper, so the round-trip error equals
the root-find residual rather than any quadrature error.

Cross-diffusion matrices act on the complement of span{(1,..,1)}: the package
ships the scaled projection d0*Pi and a state-weighted Pi W(S) Pi family, both
sandwiched between d0 and d1 on that complement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import constitutive as cst
from .errors import ArgumentError, DomainError, RootFindError

__all__ = [
    "SpeciesState",
    "EntropyVars",
    "DiffusionMatrixSpec",
    "make_state",
    "free_energy",
    "chem_potentials",
    "relative_free_energy",
    "project_orthogonal",
    "species_from_relative",
    "w_from_state",
    "state_from_w",
    "w_from_states",
    "states_from_w",
    "diffusion_matrix",
    "hypocoercivity_constants",
    "jmz_inequality_check",
]


@dataclass(frozen=True, eq=False)
class SpeciesState:
    """Composition vector with its cached total; must lie in the open set
    {S_i > 0, sum S_i < 1}."""

    s: np.ndarray
    total: float

    def __post_init__(self):
        arr = np.asarray(self.s, dtype=float)
        object.__setattr__(self, "s", arr)
        object.__setattr__(self, "total", float(self.total))
        if arr.ndim != 1 or arr.size < 1:
            raise ArgumentError("species vector must be one-dimensional and non-empty")
        if abs(self.total - float(arr.sum())) > 1e-14:
            raise ArgumentError("total does not match the component sum")
        if not np.all(arr > 0.0) or not self.total < 1.0 or not np.all(np.isfinite(arr)):
            raise DomainError("state outside the admissible set (need S_i > 0, sum < 1)")

    @property
    def n(self):
        return self.s.size


def make_state(s) -> SpeciesState:
    """Build a SpeciesState from a component vector, computing the total."""
    arr = np.asarray(s, dtype=float)
    return SpeciesState(arr, float(arr.sum()))


@dataclass(frozen=True, eq=False)
class EntropyVars:
    """Entropy variables at one point plus the transform's derivative data.

    ``ds_dw`` holds dS/dw_j of the total; the mobility matrix of the
    linearised operator is M_ij = S_i * ds_dw_j (symmetric, PSD, rank <= 1).
    ``f_value`` is the scalar f(S) of the inversion relation.
    """

    w: np.ndarray
    ds_dw: np.ndarray
    f_value: float


@dataclass(frozen=True)
class DiffusionMatrixSpec:
    """Diffusion-matrix family: ``scaled_projection`` (d0 * Pi) or
    ``state_weighted`` (Pi diag(d0 + (d1-d0) S_i) Pi)."""

    kind: str = "scaled_projection"
    d0: float = 1.0
    d1: float = 1.0

    def __post_init__(self):
        if self.kind not in ("scaled_projection", "state_weighted"):
            raise ArgumentError(f"unknown diffusion matrix kind {self.kind!r}")
        if not self.d0 > 0:
            raise ArgumentError("d0 must be positive")
        if self.d1 < self.d0:
            raise ArgumentError("d1 must be at least d0")


# ---------------------------------------------------------------------------
# Free energy and potentials
# ---------------------------------------------------------------------------

def _boundary_arrays(params):
    sg = np.asarray(params.s_gamma, dtype=float)
    return sg, float(sg.sum())


def free_energy(state: SpeciesState, params) -> float:
    """F = sum S_i log(S_i/S) + E(S); bounded below by -(1/e) n S."""
    s, total = state.s, state.total
    mixing = float(np.sum(s * (np.log(s) - math.log(total))))
    return mixing + cst.entropy_E(total, params)


def chem_potentials(state: SpeciesState, params) -> np.ndarray:
    """mu_i = log(S_i/S) + f0(S) — the gradient of free_energy."""
    return np.log(state.s) - math.log(state.total) + cst.f0_integral(state.total, params)


def relative_free_energy(state: SpeciesState, params) -> float:
    """F(S) - F(S^G) - mu(S^G).(S - S^G): nonnegative, zero only at S^G."""
    sg, _ = _boundary_arrays(params)
    ref = make_state(sg)
    mu_ref = chem_potentials(ref, params)
    return (free_energy(state, params) - free_energy(ref, params)
            - float(mu_ref @ (state.s - sg)))


def project_orthogonal(v) -> np.ndarray:
    """Orthogonal projection onto the complement of span{(1,..,1)}:
    v - mean(v)."""
    arr = np.asarray(v, dtype=float)
    return arr - arr.mean(axis=-1, keepdims=True)


def species_from_relative(total, mu_star) -> SpeciesState:
    """Recover a state from its total and relative chemical potentials.

    S_i = total * softmax(mu_star)_i; invariant under constant shifts of
    mu_star (max-subtraction keeps the exponentials finite).
    """
    t = float(total)
    if not 0.0 < t < 1.0:
        raise DomainError(f"total must lie in (0,1); got {total!r}")
    m = np.asarray(mu_star, dtype=float)
    shifted = m - m.max()
    e = np.exp(shifted)
    frac = e / e.sum()
    return SpeciesState(t * frac, t)


# ---------------------------------------------------------------------------
# Entropy-variable transform
# ---------------------------------------------------------------------------

def _f_scalar_terms(params):
    """Constants of f: (log boundary fractions, f0(S^G), boundary total)."""
    sg, sgt = _boundary_arrays(params)
    log_yg = np.log(sg) - math.log(sgt)
    f0_ref = cst.f0_integral(sgt, params)
    return log_yg, f0_ref, sgt


def _f_of_total(total, s_prev_total, params):
    """f(S) = f0(S) - f0(S^G) + (beta(S) - beta(s_prev))/kappa, elementwise.

    Uses the tabulated beta shared by assembly and diagnostics; the transform
    is exactly self-inverse modulo the root residual because w_from_state
    evaluates this same function.
    """
    _, f0_ref, _ = _f_scalar_terms(params)
    return (cst.f0_integral(total, params) - f0_ref
            + (cst._beta_hat(total, params) - cst._beta_hat(s_prev_total, params)) / params.kappa)


def _f_prime_of_total(total, params):
    """f'(S) = tau/a + tau/kappa > 0."""
    arr = np.asarray(total, dtype=float)
    return cst._tau_over_a(arr, params) + cst._tau(arr, params) / params.kappa


def _w_many(s, total, s_prev_total, params):
    """Vectorised w_from_state on stacked states.

    s: (m, n) components, total: (m,), s_prev_total: (m,).
    Returns (w (m,n), ds_dw (m,n), f_value (m,)).
    """
    log_yg, _, _ = _f_scalar_terms(params)
    f_val = _f_of_total(total, s_prev_total, params)
    logy = np.log(s) - np.log(total)[:, None]
    w = (logy - log_yg[None, :]) + f_val[:, None]
    fp = _f_prime_of_total(total, params)
    ds_dw = s / (total * fp)[:, None]
    return w, ds_dw, f_val


def _solve_total_many(c, s_prev_total, params, max_expand=200, max_bisect=110):
    """Solve f(S) = c per point by bracketing from s_prev_total + bisection.

    f is strictly increasing with range the whole real line, so the geometric
    expansion of the bracket toward either endpoint always succeeds.
    Convergence target |f(S) - c| <= rootfind_tol * (1 + |c|).
    """
    c = np.asarray(c, dtype=float)
    prev = np.asarray(s_prev_total, dtype=float)
    tol = params.rootfind_tol * (1.0 + np.abs(c))

    # Accept the starting point outright where it already satisfies the
    # convergence target (stationary regions; avoids bracket churn there).
    f_prev = _f_of_total(prev, prev, params)
    done = np.abs(f_prev - c) <= tol
    if np.all(done):
        return prev.copy(), f_prev
    if np.any(done):
        mid = prev.copy()
        fm = f_prev
        idx = np.flatnonzero(~done)
        sub_mid, sub_fm = _solve_total_many(c[idx], prev[idx], params,
                                            max_expand, max_bisect)
        mid[idx] = sub_mid
        fm[idx] = sub_fm
        return mid, fm

    lo = prev.copy()
    hi = prev.copy()
    # Grow the lower edge toward 0 until f(lo) <= c.
    for _ in range(max_expand):
        mask = _f_of_total(lo, prev, params) > c
        if not np.any(mask):
            break
        lo[mask] *= 0.5
    else:
        raise RootFindError("bracket expansion toward 0 did not terminate")
    # Grow the upper edge toward 1 until f(hi) >= c.
    for _ in range(max_expand):
        mask = _f_of_total(hi, prev, params) < c
        if not np.any(mask):
            break
        hi[mask] = 1.0 - 0.5 * (1.0 - hi[mask])
    else:
        raise RootFindError("bracket expansion toward 1 did not terminate")

    mid = 0.5 * (lo + hi)
    fm = _f_of_total(mid, prev, params)
    for _ in range(max_bisect):
        if np.all(np.abs(fm - c) <= tol):
            break
        below = fm < c
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        mid = 0.5 * (lo + hi)
        fm = _f_of_total(mid, prev, params)
    resid = np.abs(fm - c)
    if np.any(resid > tol):
        # Newton polish from the bisection point before giving up.
        for _ in range(4):
            fp = _f_prime_of_total(mid, params)
            step = (fm - c) / fp
            cand = np.clip(mid - step, np.nextafter(lo, 1.0), np.nextafter(hi, 0.0))
            mid = np.where(resid > tol, cand, mid)
            fm = _f_of_total(mid, prev, params)
            resid = np.abs(fm - c)
            if np.all(resid <= tol):
                break
        if np.any(resid > tol):
            worst = float(np.max(resid / (1.0 + np.abs(c))))
            raise RootFindError(
                f"total-saturation inversion stalled at residual {worst:.3e} "
                f"(tolerance {params.rootfind_tol:.1e})")
    return mid, fm


def _state_from_w_many(w, s_prev_total, params):
    """Vectorised state_from_w on stacked points.

    w: (m, n), s_prev_total: (m,).  Returns (s (m,n), total (m,), ds_dw (m,n),
    f_value (m,)).
    """
    w = np.asarray(w, dtype=float)
    prev = np.asarray(s_prev_total, dtype=float)
    log_yg, _, sgt = _f_scalar_terms(params)
    sg, _ = _boundary_arrays(params)

    # At w = 0 with the previous total equal to the boundary total, the exact
    # root is the boundary state itself (f(S^G_total) = 0 and the fractions
    # reduce to the boundary fractions); return it bitwise so equilibrium is
    # preserved exactly instead of to round-off of logsumexp/softmax.
    snap = (prev == sgt) & np.all(w == 0.0, axis=1)
    if np.any(snap):
        m, n = w.shape
        s = np.empty((m, n))
        total = np.empty(m)
        f_val = np.empty(m)
        s[snap] = sg
        total[snap] = sgt
        f_val[snap] = 0.0
        rest = ~snap
        if np.any(rest):
            s_r, t_r, f_r = _state_from_w_core(w[rest], prev[rest], log_yg, params)
            s[rest] = s_r
            total[rest] = t_r
            f_val[rest] = f_r
    else:
        s, total, f_val = _state_from_w_core(w, prev, log_yg, params)
    fp = _f_prime_of_total(total, params)
    ds_dw = s / (total * fp)[:, None]
    return s, total, ds_dw, f_val


def _state_from_w_core(w, prev, log_yg, params):
    """Softmax fractions plus scalar root-find; no equilibrium special case."""
    shifted = w + log_yg[None, :]
    c = logsumexp(shifted, axis=1)
    total, f_val = _solve_total_many(c, prev, params)
    frac = np.exp(shifted - c[:, None])
    s = total[:, None] * frac
    return s, total, f_val


def w_from_state(state: SpeciesState, s_prev_total, params) -> EntropyVars:
    """Entropy variables at one state given the previous total."""
    prev = float(s_prev_total)
    if not 0.0 < prev < 1.0:
        raise DomainError(f"previous total must lie in (0,1); got {s_prev_total!r}")
    w, ds_dw, f_val = _w_many(state.s[None, :], np.asarray([state.total]),
                              np.asarray([prev]), params)
    return EntropyVars(w[0], ds_dw[0], float(f_val[0]))


def w_from_states(s, s_prev_total, params):
    """Vectorised forward transform on stacked states.

    s: (m, n) component rows, s_prev_total: (m,) previous totals.  Returns
    (w (m,n), ds_dw (m,n), f_value (m,)).  This is the batch form of
    ``w_from_state`` used by assembly and diagnostics.
    """
    arr = np.asarray(s, dtype=float)
    prev = np.asarray(s_prev_total, dtype=float)
    if arr.ndim != 2 or prev.shape != (arr.shape[0],):
        raise ArgumentError("need s of shape (m, n) and matching previous totals")
    totals = arr.sum(axis=1)
    if not (np.all(arr > 0.0) and np.all(totals < 1.0)):
        raise DomainError("states outside the admissible set (need S_i > 0, sum < 1)")
    if not (np.all(prev > 0.0) and np.all(prev < 1.0)):
        raise DomainError("previous totals must lie in (0,1)")
    return _w_many(arr, totals, prev, params)


def states_from_w(w, s_prev_total, params):
    """Vectorised inverse transform on stacked points.

    w: (m, n) entropy-variable rows, s_prev_total: (m,) previous totals.
    Returns (s (m,n), total (m,), ds_dw (m,n), f_value (m,)); the recovered
    rows always lie in the admissible set.
    """
    warr = np.asarray(w, dtype=float)
    prev = np.asarray(s_prev_total, dtype=float)
    if warr.ndim != 2 or prev.shape != (warr.shape[0],):
        raise ArgumentError("need w of shape (m, n) and matching previous totals")
    if not (np.all(prev > 0.0) and np.all(prev < 1.0)):
        raise DomainError("previous totals must lie in (0,1)")
    return _state_from_w_many(warr, prev, params)


def state_from_w(w, s_prev_total, params):
    """Invert the transform at one point; returns (EntropyVars, SpeciesState)."""
    prev = float(s_prev_total)
    if not 0.0 < prev < 1.0:
        raise DomainError(f"previous total must lie in (0,1); got {s_prev_total!r}")
    warr = np.asarray(w, dtype=float)
    s, total, ds_dw, f_val = _state_from_w_many(warr[None, :], np.asarray([prev]), params)
    state = SpeciesState(s[0], float(total[0]))
    return EntropyVars(warr, ds_dw[0], float(f_val[0])), state


# ---------------------------------------------------------------------------
# Diffusion matrices on the complement of span{(1,..,1)}
# ---------------------------------------------------------------------------

def _projection_matrix(n):
    return np.eye(n) - np.full((n, n), 1.0 / n)


def diffusion_matrix(state: SpeciesState, spec: DiffusionMatrixSpec) -> np.ndarray:
    """Symmetric diffusion matrix annihilating constants; its spectrum on the
    complement of span{(1,..,1)} lies in [d0, d1]."""
    n = state.n
    pi = _projection_matrix(n)
    if spec.kind == "scaled_projection":
        return spec.d0 * pi
    wdiag = spec.d0 + (spec.d1 - spec.d0) * state.s
    m = pi @ np.diag(wdiag) @ pi
    return 0.5 * (m + m.T)


def _diffusion_many(s, spec: DiffusionMatrixSpec):
    """Stacked diffusion matrices for (m, n) component arrays -> (m, n, n)."""
    m, n = s.shape
    pi = _projection_matrix(n)
    if spec.kind == "scaled_projection":
        return np.broadcast_to(spec.d0 * pi, (m, n, n)).copy()
    wdiag = spec.d0 + (spec.d1 - spec.d0) * s
    out = np.einsum("ik,pk,kj->pij", pi, wdiag, pi)
    return 0.5 * (out + np.transpose(out, (0, 2, 1)))


def _complement_basis(n):
    """Orthonormal basis of the complement of span{(1,..,1)} (Householder)."""
    e = np.zeros(n)
    e[0] = 1.0
    u = np.full(n, 1.0 / math.sqrt(n)) - e
    nu = np.linalg.norm(u)
    h = np.eye(n) if nu == 0.0 else np.eye(n) - 2.0 * np.outer(u, u) / nu**2
    return h[:, 1:]


def hypocoercivity_constants(matrix) -> tuple:
    """(d_low, d_high): extreme Rayleigh quotients v.Dv/|Pi v|^2 over the
    complement of span{(1,..,1)}, via the eigen-decomposition of the matrix
    restricted to that subspace."""
    d = np.asarray(matrix, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ArgumentError("matrix must be square")
    n = d.shape[0]
    if n < 2:
        raise ArgumentError("restriction needs at least two species")
    scale = max(1.0, float(np.abs(d).max()))
    if float(np.abs(d - d.T).max()) > 1e-12 * scale:
        raise ArgumentError("matrix must be symmetric")
    q = _complement_basis(n)
    restricted = q.T @ d @ q
    eig = np.linalg.eigvalsh(0.5 * (restricted + restricted.T))
    return float(eig[0]), float(eig[-1])


def jmz_inequality_check(alpha, beta_v, v) -> bool:
    """Truth of |a.v|^2 + |v - (b.v)b|^2 >= (1/4)(a.b)^2 |v|^2 for unit a, b."""
    a = np.asarray(alpha, dtype=float)
    b = np.asarray(beta_v, dtype=float)
    vv = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(a) - 1.0) > 1e-12 or abs(np.linalg.norm(b) - 1.0) > 1e-12:
        raise ArgumentError("alpha and beta_v must be unit vectors")
    lhs = float(a @ vv) ** 2 + float(np.sum((vv - (b @ vv) * b) ** 2))
    rhs = 0.25 * float(a @ b) ** 2 * float(vv @ vv)
    return bool(lhs >= rhs)
