"""Implicit Euler stepping via accelerated fixed-point iteration.

Each step solves the nonlinear system for the entropy variables w by
repeated linearisation: assemble the operator and load at the current
iterate, solve the symmetric positive definite sparse system, and iterate
until the lumped-L2 defect norm drops below fp_tol.  The plain damped
update is Anderson-accelerated, because the coefficient feedback makes the
bare map expansive at practical time steps; with an empty history the
update is the plain damped step, so w* = 0 remains the exact one-shot
solution at equilibrium and equilibrium states are stationary by
construction.  If the accelerated iteration at full load (sigma = 1)
stalls, a homotopy ladder re-runs it with the load switched on gradually,
warm-starting each rung.

A run records, per accepted step, the dissipation budget and the signed
margin of the per-step entropy inequality; strict mode aborts on the first
violation.  Refinement studies rerun the same problem over decreasing time
steps (and regularisation strengths) and report self-convergence orders
plus the stability of the a-priori bound quantities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import diags
from scipy.sparse.linalg import LinearOperator, cg, gmres, splu

from . import diagnostics as diag
from . import fem
from .errors import (ArgumentError, AssemblyError, EntropyViolationError,
                     FixedPointError, LinearSolveError, PreconditionError)

__all__ = [
    "SolverConfig",
    "StepStats",
    "Trajectory",
    "solve_linear",
    "solve_time_step",
    "run_simulation",
    "refinement_study",
    "equilibrium_initial",
    "sine_perturbation_initial",
    "step_profile_initial",
]

_DIRECT_SOLVE_MAX_DOF = 5000
_DAMPING_FLOOR = 0.125
_ANDERSON_WINDOW = 8
# Conservative default step scale for the accelerated iteration; large moves
# through the strongly nonlinear transient otherwise overshoot and lengthen
# the search phase before local convergence sets in.
_MIXING_START = 0.25
# The accelerated phase hands over to the Newton finisher after this many
# map evaluations; wandering longer rarely helps, whereas Newton converges
# fast from any iterate the acceleration has pulled into the basin.
_ANDERSON_MAX = 40
_GMRES_RESTART = 20
_NEWTON_MAX_OUTER = 8


class _BudgetExhausted(Exception):
    """Internal: the map-evaluation budget of the Newton finisher ran out."""


@dataclass(frozen=True)
class SolverConfig:
    """Iteration and run-control knobs.

    damping caps the fixed-point mixing parameter: the iteration starts at
    min(damping, 0.25) and halves the value (floored at 0.125) whenever an
    update is rejected.  fp_tol is measured in the lumped L2 norm of the
    fixed-point defect.
    """

    fp_tol: float = 1e-9
    fp_max_iters: int = 100
    damping: float = 1.0
    homotopy_steps: int = 4
    linear_tol: float = 1e-10
    t_end: float = 0.05
    record_every: int = 1
    strict_entropy: bool = True

    def __post_init__(self):
        if not (self.fp_tol > 0 and self.linear_tol > 0 and self.t_end > 0):
            raise ArgumentError("tolerances and t_end must be positive")
        if self.fp_max_iters < 1 or self.homotopy_steps < 1 or self.record_every < 1:
            raise ArgumentError("iteration counts must be at least 1")
        if not 0.0 < self.damping <= 1.0:
            raise ArgumentError("damping must lie in (0, 1]")


@dataclass(frozen=True)
class StepStats:
    iterations: int
    residual: float
    used_homotopy: bool
    damping_final: float


@dataclass(eq=False)
class Trajectory:
    times: list
    states: list
    diagnostics: list
    params: object = None
    spec: object = None
    config: SolverConfig = None


def solve_linear(system: fem.LinearSystem, linear_tol=1e-12) -> np.ndarray:
    """Solve the assembled SPD system to a verified relative residual.

    Small systems use a sparse direct factorisation, large ones a conjugate
    gradient iteration with diagonal preconditioning; either way the achieved
    residual is checked against linear_tol times the load norm.
    """
    rhs = system.rhs
    if not np.any(rhs):
        return np.zeros_like(rhs)
    mat = system.matrix
    rhs_norm = float(np.linalg.norm(rhs))
    if mat.shape[0] <= _DIRECT_SOLVE_MAX_DOF:
        try:
            lu = splu(mat.tocsc())
            x = lu.solve(rhs)
            # Iterative refinement squeezes out factorisation error down to
            # the rounding floor of the residual evaluation itself.
            for _ in range(3):
                r = rhs - mat @ x
                if float(np.linalg.norm(r)) <= linear_tol * rhs_norm:
                    break
                x += lu.solve(r)
        except RuntimeError as exc:
            raise LinearSolveError(f"sparse factorization failed: {exc}") from exc
    else:
        inv_diag = 1.0 / mat.diagonal()
        x, info = cg(mat, rhs, rtol=0.1 * linear_tol, atol=0.0,
                     maxiter=20 * mat.shape[0], M=diags(inv_diag))
        if info != 0:
            raise LinearSolveError(
                f"conjugate gradients did not converge (info={info}); "
                "the operator may be singular (eps too small?)")
    if not np.all(np.isfinite(x)):
        raise LinearSolveError("linear solve produced non-finite values")
    resid = float(np.linalg.norm(mat @ x - rhs))
    if resid > linear_tol * rhs_norm:
        raise LinearSolveError(
            f"linear solve residual {resid:.3e} exceeds "
            f"{linear_tol:.1e} * ||rhs|| = {linear_tol * rhs_norm:.3e}")
    return x


def _newton_polish(x, g, res, apply_map, mesh, cfg: SolverConfig, budget):
    """Jacobian-free Newton finisher for the fixed-point defect.

    Solves (I - G') d = f by GMRES, probing the Jacobian of the fixed-point
    map G with forward differences (one map evaluation per probe), then
    backtracks on the lumped-L2 defect norm.  Spending of map evaluations is
    capped by budget.  Returns (w, residual, converged, evals_used); on a
    fruitless backtrack or an evaluation failure it stops early and hands its
    best iterate back to the caller.
    """
    used = 0
    f = g - x
    shape = x.shape
    best_x, best_res = x, res

    def call_map(wvals):
        nonlocal used
        if used >= budget:
            raise _BudgetExhausted
        used += 1
        return apply_map(wvals)

    for _ in range(_NEWTON_MAX_OUTER):
        if used >= budget:
            break
        fv = f.ravel()
        base_scale = 1.0 + float(np.linalg.norm(x.ravel()))

        def jvp(v):
            vnorm = float(np.linalg.norm(v))
            if vnorm == 0.0:
                return v.copy()
            eps_fd = math.sqrt(np.finfo(float).eps) * base_scale / vnorm
            g_pert = call_map(x + eps_fd * v.reshape(shape))
            return v - (g_pert - g).ravel() / eps_fd

        op = LinearOperator((fv.size, fv.size), matvec=jvp, dtype=float)
        try:
            d, _ = gmres(op, fv, rtol=1e-3, atol=0.0,
                         restart=_GMRES_RESTART, maxiter=1)
        except (_BudgetExhausted, AssemblyError, LinearSolveError):
            break
        if not np.all(np.isfinite(d)):
            break
        d = d.reshape(shape)

        accepted = False
        alpha = 1.0
        while alpha >= 0.125:
            trial = x + alpha * d
            try:
                g_t = call_map(trial)
            except _BudgetExhausted:
                return best_x, best_res, False, used
            except (AssemblyError, LinearSolveError):
                alpha *= 0.5
                continue
            f_t = g_t - trial
            res_t = fem.field_norms(f_t, mesh)["l2"]
            if res_t <= cfg.fp_tol:
                return g_t, res_t, True, used
            if res_t < res:
                x, g, f, res = trial, g_t, f_t, res_t
                if res < best_res:
                    best_x, best_res = x, res
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
    return best_x, best_res, False, used


def _fixed_point(s_prev: fem.NodalField, params, spec, cfg: SolverConfig,
                 sigma, w_init, grad_beta_prev):
    """Two-phase nonlinear solve at fixed sigma: Anderson-accelerated damped
    fixed-point iteration, then a Jacobian-free Newton finisher.

    Returns (w, evals, residual, converged, mixing), with evals the total
    number of map evaluations.  One application of the map assembles the
    frozen-coefficient system at the iterate and solves it; the lumped-L2
    norm of the defect g - w* is both the convergence measure and the
    residual the acceleration extrapolates on.  With an empty history the
    update is exactly the plain damped step, so an iterate that already
    solves its own linearisation (w = 0 at equilibrium) is accepted after a
    single application with residual exactly zero.  The plain damped map is
    not a contraction here: the load couples back into the solution through
    the state-dependent coefficients, and at practical time steps that
    feedback carries isolated eigenvalues far outside the unit disk.  The
    least-squares extrapolation removes those few directions while the rest
    of the spectrum keeps contracting.  On a defect increase or a failed
    evaluation the history is dropped, the mixing parameter halved (floored),
    and the best iterate restored.  Whatever iterate the accelerated phase
    ends on, the Newton finisher runs the remaining evaluation budget down on
    it; terminal convergence is its job, the accelerated phase only has to
    reach the basin.
    """
    mesh = s_prev.mesh
    n = params.n_species
    evals = 0

    def apply_map(wvals):
        nonlocal evals
        evals += 1
        system = fem.assemble_system(fem.NodalField(wvals, mesh), s_prev,
                                     params, spec, sigma,
                                     grad_beta_prev=grad_beta_prev)
        solved = solve_linear(system, cfg.linear_tol)
        g = np.zeros_like(wvals)
        g[1:-1] = solved.reshape(-1, n)
        return g

    x = w_init.copy()
    mixing = min(cfg.damping, _MIXING_START)
    hist_x, hist_f = [], []
    best_x, best_g, best_res = None, None, math.inf
    res = math.inf
    rejects = 0
    anderson_cap = min(_ANDERSON_MAX, cfg.fp_max_iters)
    while evals < anderson_cap:
        try:
            g = apply_map(x)
        except (AssemblyError, LinearSolveError):
            # Trial iterate left the resolvable region; back off.
            if best_x is None:
                raise
            rejects += 1
            if rejects >= 3 and mixing <= _DAMPING_FLOOR:
                break
            hist_x.clear()
            hist_f.clear()
            mixing = max(0.5 * mixing, _DAMPING_FLOOR)
            x = best_x.copy()
            continue
        f = g - x
        res = fem.field_norms(f, mesh)["l2"]
        if res <= cfg.fp_tol:
            return g, evals, res, True, mixing
        if res < best_res:
            best_res, best_x, best_g = res, x.copy(), g.copy()
            rejects = 0
        elif res > 10.0 * best_res:
            rejects += 1
            if rejects >= 5:
                break
            hist_x.clear()
            hist_f.clear()
            mixing = max(0.5 * mixing, _DAMPING_FLOOR)
            x = best_x.copy()
            continue
        hist_x.append(x.copy())
        hist_f.append(f.copy())
        if len(hist_x) > _ANDERSON_WINDOW + 1:
            hist_x.pop(0)
            hist_f.pop(0)
        if len(hist_x) >= 2:
            df = np.stack([(hist_f[j + 1] - hist_f[j]).ravel()
                           for j in range(len(hist_f) - 1)], axis=1)
            dx = np.stack([(hist_x[j + 1] - hist_x[j]).ravel()
                           for j in range(len(hist_x) - 1)], axis=1)
            theta, *_ = np.linalg.lstsq(df, f.ravel(), rcond=None)
            if np.all(np.isfinite(theta)) and np.max(np.abs(theta)) <= 50.0:
                step = mixing * f.ravel() - (dx + mixing * df) @ theta
                x = x + step.reshape(x.shape)
                continue
            # Ill-conditioned history: keep only the newest pair.
            hist_x = hist_x[-1:]
            hist_f = hist_f[-1:]
        x = x + mixing * f

    if best_x is not None:
        polish_budget = cfg.fp_max_iters - evals
        if polish_budget > 0:
            w, res_p, ok, used = _newton_polish(
                best_x, best_g, best_res, apply_map, mesh, cfg, polish_budget)
            if ok:
                return w, evals, res_p, True, mixing
            if res_p < best_res:
                best_x, best_res = w, res_p
    if best_res < res:
        return best_x, evals, best_res, False, mixing
    return x, evals, res, False, mixing


def solve_time_step(s_prev: fem.NodalField, params, spec,
                    solver_cfg: SolverConfig, grad_beta_prev=None):
    """Advance one implicit Euler step; returns (new state, StepStats).

    Starts from w* = 0 at full load; on non-convergence retries with the
    sigma homotopy ladder, warm-starting each rung.  The returned nodal
    states are recovered through the inverse transform, hence always lie in
    the admissible set.  grad_beta_prev carries the quadrature samples of the
    previous step's beta gradient (the run memory); omitted, it is rebuilt
    from the previous state, which is exact on the first step from rest.
    """
    mesh = s_prev.mesh
    n = params.n_species
    if grad_beta_prev is None:
        grad_beta_prev = fem.beta_gradient_field(s_prev, params)
    w_zero = np.zeros((mesh.num_nodes, n))
    w, iters, res, ok, mixing = _fixed_point(s_prev, params, spec, solver_cfg,
                                             1.0, w_zero, grad_beta_prev)
    total_iters = iters
    used_homotopy = False
    if not ok:
        used_homotopy = True
        w = w_zero
        sigmas = np.linspace(1.0 / solver_cfg.homotopy_steps, 1.0,
                             solver_cfg.homotopy_steps)
        for sigma in sigmas:
            w, iters, res, ok, mixing = _fixed_point(
                s_prev, params, spec, solver_cfg, float(sigma), w,
                grad_beta_prev)
            total_iters += iters
            if not ok:
                break
        if not ok:
            raise FixedPointError(
                f"fixed-point iteration failed (last sigma {sigma:.3f}, "
                f"residual {res:.3e} > fp_tol {solver_cfg.fp_tol:.1e})")
    rec = fem._recover_points(w, s_prev.totals, params)
    new_state = fem.NodalField(rec["s"], mesh)
    stats = StepStats(iterations=total_iters, residual=float(res),
                      used_homotopy=used_homotopy,
                      damping_final=float(mixing))
    return new_state, stats


def run_simulation(initial: fem.NodalField, params, spec,
                   solver_cfg: SolverConfig) -> Trajectory:
    """March round(t_end/kappa) implicit Euler steps from the initial state.

    Preconditions on the initial data (interior states strictly inside the
    admissible set, boundary rows equal to the boundary composition) are
    enforced before any stepping.  Each accepted step is budgeted and the
    entropy inequality checked with tolerance 10 * fp_tol; strict mode turns
    a violation into an abort.
    """
    mesh = initial.mesh
    try:
        initial.check_admissible(params)
    except Exception as exc:
        raise PreconditionError(f"invalid initial state: {exc}") from exc

    kappa = params.kappa
    num_steps = int(round(solver_cfg.t_end / kappa))
    if num_steps < 1:
        raise ArgumentError("t_end must cover at least one time step")

    rec0 = diag.initial_record(initial, params, spec)
    traj = Trajectory(times=[0.0], states=[initial], diagnostics=[rec0],
                      params=params, spec=spec, config=solver_cfg)
    l_prev = rec0.lyapunov
    s_prev = initial
    grad_beta = rec0.grad_beta
    check_tol = 10.0 * solver_cfg.fp_tol

    for k in range(1, num_steps + 1):
        s_new, stats = solve_time_step(s_prev, params, spec, solver_cfg,
                                       grad_beta_prev=grad_beta)
        budget = diag.dissipation_budget(s_new, s_prev, params, spec, mesh,
                                         step=k, time=k * kappa,
                                         fp_iters=stats.iterations,
                                         grad_beta_prev=grad_beta)
        check = diag.check_entropy_step(l_prev, budget.lyapunov, budget,
                                        kappa, check_tol)
        record = replace(budget, entropy_margin=check.margin)
        if not check.passed and solver_cfg.strict_entropy:
            raise EntropyViolationError(
                f"entropy inequality violated at step {k}: "
                f"margin {check.margin:.6e}")
        if k % solver_cfg.record_every == 0 or k == num_steps:
            traj.times.append(k * kappa)
            traj.states.append(s_new)
            traj.diagnostics.append(record)
        l_prev = budget.lyapunov
        s_prev = s_new
        grad_beta = record.grad_beta
    return traj


# ---------------------------------------------------------------------------
# Initial conditions
# ---------------------------------------------------------------------------

def equilibrium_initial(mesh: fem.Mesh, params) -> fem.NodalField:
    """Constant boundary composition everywhere."""
    return fem.constant_field(mesh, params)


def sine_perturbation_initial(mesh: fem.Mesh, params, amplitude=0.1,
                              species_index=0) -> fem.NodalField:
    """Equilibrium plus amplitude * sin(pi x / L) on one species, clipped to
    stay strictly inside the admissible set; boundary rows stay exact."""
    sg = np.asarray(params.s_gamma, dtype=float)
    if not 0 <= species_index < params.n_species:
        raise ArgumentError("species_index out of range")
    values = np.tile(sg, (mesh.num_nodes, 1))
    xi = (mesh.nodes - mesh.x_left) / (mesh.x_right - mesh.x_left)
    values[:, species_index] += amplitude * np.sin(math.pi * xi)
    floor = 1e-8
    values = np.clip(values, floor, None)
    totals = values.sum(axis=1)
    over = totals > 1.0 - floor
    if np.any(over):
        values[over] *= ((1.0 - floor) / totals[over])[:, None]
    values[0] = sg
    values[-1] = sg
    return fem.NodalField(values, mesh)


def step_profile_initial(mesh: fem.Mesh, params, left_state,
                         right_state) -> fem.NodalField:
    """Piecewise-constant interior profile jumping at the domain midpoint."""
    left = np.asarray(left_state, dtype=float)
    right = np.asarray(right_state, dtype=float)
    n = params.n_species
    for arr, name in ((left, "left_state"), (right, "right_state")):
        if arr.shape != (n,):
            raise ArgumentError(f"{name} must have {n} components")
        if not (np.all(arr > 0) and arr.sum() < 1.0):
            raise ArgumentError(f"{name} must lie in the admissible set")
    sg = np.asarray(params.s_gamma, dtype=float)
    mid = 0.5 * (mesh.x_left + mesh.x_right)
    values = np.where((mesh.nodes < mid)[:, None], left, right)
    values[0] = sg
    values[-1] = sg
    return fem.NodalField(values, mesh)


# ---------------------------------------------------------------------------
# Refinement studies
# ---------------------------------------------------------------------------

def _total_density_l2_diff(times_coarse, totals_coarse, times_fine,
                           totals_fine, mesh, kappa_coarse):
    """L2(Omega x (0,T)) distance of two total-density trajectories on the
    same mesh, linearly interpolating the finer run to the coarser times."""
    m = fem.lumped_mass(mesh)
    tf = np.asarray(times_fine)
    acc = 0.0
    for t, row in zip(times_coarse[1:], totals_coarse[1:]):
        j = np.searchsorted(tf, t)
        j = min(max(j, 1), tf.size - 1)
        t0, t1 = tf[j - 1], tf[j]
        u = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
        fine_row = (1.0 - u) * totals_fine[j - 1] + u * totals_fine[j]
        diff = row - fine_row
        acc += kappa_coarse * float(np.sum(m * diff**2))
    return math.sqrt(acc)


def _ladder_runs(initial, params, spec, solver_cfg, values, kind):
    runs = []
    for v in values:
        pv = replace(params, kappa=float(v)) if kind == "kappa" \
            else replace(params, eps=float(v))
        traj = run_simulation(initial, pv, spec, solver_cfg)
        runs.append((pv, traj))
    return runs


def _stability_flags(reports, values, label):
    """Flag any scalar bound quantity growing beyond a factor 2 between
    consecutive ladder runs (upper-bound semantics: shrinking is fine)."""
    flags = []
    scalar_keys = [k for k, v in reports[0].items() if np.isscalar(v)]
    for key in scalar_keys:
        for j in range(len(reports) - 1):
            lo, hi = reports[j][key], reports[j + 1][key]
            if hi > 2.0 * max(lo, 0.0) and hi > 1e-14:
                flags.append({
                    "quantity": key, "parameter": label,
                    "from_value": values[j], "to_value": values[j + 1],
                    "ratio": math.inf if lo <= 0 else hi / lo,
                })
    return flags


def refinement_study(initial: fem.NodalField, params, spec,
                     solver_cfg: SolverConfig, kappa_list, eps_list) -> dict:
    """Self-convergence in the time step plus bound-quantity stability.

    Runs the identical problem over the kappa ladder at fixed eps, reporting
    pairwise space-time L2 differences of the total density and the implied
    temporal orders, then over the eps ladder at fixed kappa, tracking the
    a-priori quantities; growth of any bound quantity beyond a factor-2 band
    is flagged.
    """
    kappa_list = [float(v) for v in kappa_list]
    eps_list = [float(v) for v in eps_list]
    for name, lst in (("kappa_list", kappa_list), ("eps_list", eps_list)):
        if any(b > a for a, b in zip(lst, lst[1:])):
            raise ArgumentError(f"{name} must be non-increasing")

    report = {}

    if kappa_list:
        runs = _ladder_runs(initial, params, spec, solver_cfg, kappa_list,
                            "kappa")
        totals = [np.stack([st.totals for st in tr.states]) for _, tr in runs]
        times = [tr.times for _, tr in runs]
        diffs = []
        for j in range(len(runs) - 1):
            diffs.append(_total_density_l2_diff(
                times[j], totals[j], times[j + 1], totals[j + 1],
                initial.mesh, kappa_list[j]))
        orders = []
        for j in range(len(diffs) - 1):
            if diffs[j] > 0 and diffs[j + 1] > 0:
                orders.append(math.log2(diffs[j] / diffs[j + 1]))
            else:
                orders.append(math.nan)
        apriori = [diag.apriori_report(tr, pv) for pv, tr in runs]
        report["kappa"] = {
            "values": kappa_list,
            "pairwise_l2": diffs,
            "orders": orders,
            "apriori": apriori,
            "flags": _stability_flags(apriori, kappa_list, "kappa"),
        }

    if eps_list:
        runs = _ladder_runs(initial, params, spec, solver_cfg, eps_list,
                            "eps")
        apriori = [diag.apriori_report(tr, pv) for pv, tr in runs]
        report["eps"] = {
            "values": eps_list,
            "apriori": apriori,
            "flags": _stability_flags(apriori, eps_list, "eps"),
        }
    return report
