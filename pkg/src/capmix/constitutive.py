"""Constitutive laws for degenerate two-phase flow with dynamic capillarity.

The scalar total saturation S lives in (0, 1) and carries four power-law
coefficient functions (lam, gamma, gamma1, beta1, beta2 > 0):

* mobility               a(S)    = (1-S)^lam * S^gamma / ((1-S)^lam + S^gamma)
* capillary slope        pc'(S)  = S^(-beta1) + (1-S)^(-beta2)
* relaxation coefficient tau(S)  = [S^gamma + S^(gamma-gamma1) (1-S)^lam]
                                   / (S^gamma + (1-S)^lam)
* degeneracy quotient    tau/a   = (1-S)^(-lam) + S^(-gamma1)

tau is the derivative of the Kirchhoff-type primitive beta(S), normalised so
beta(1/2) = 0.  The quotient tau/a is itself the derivative of the convex
free-energy kernel: f0' = tau/a, and the kernel's own primitive E (with
E(1/2) = E'(1/2) = 0 up to the normalisation of f0) closes the mixing free
energy.  Both f0 and E admit closed forms, used throughout:

    A(S)  = (1-S)^(1-lam)/(lam-1) - S^(1-gamma1)/(gamma1-1)
    f0(S) = A(S) - A(1/2)
    B(S)  = (1-S)^(2-lam)/((lam-1)(lam-2)) + S^(2-gamma1)/((gamma1-1)(gamma1-2))
    E(S)  = B(S) - B(1/2) - A(1/2) (S - 1/2)

Everything here is elementwise and accepts numpy arrays as well as scalars.
Evaluations stay in log space where the power laws would under/overflow;
states outside the open interval raise DomainError rather than being clamped.

The admissibility conditions on the exponents (checked by
``validate_assumptions``) guarantee in particular that pc' <= tau/a pointwise
and that the two integrability exponents p_gamma, p_lambda both exceed 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, interpolate, optimize

from .errors import ArgumentError, DomainError, QuadratureError, RangeError, RootFindError

__all__ = [
    "ModelParams",
    "CoefficientValues",
    "AssumptionReport",
    "default_params",
    "eval_coeffs",
    "beta_value",
    "beta_inverse",
    "f0_integral",
    "entropy_E",
    "validate_assumptions",
    "sup_beta_prime",
]


@dataclass(frozen=True)
class ModelParams:
    """Model parameters: species count, coefficient exponents, boundary state,
    time step, regularisation strength and numerical tolerances.

    ``s_gamma`` is the constant boundary composition (one positive entry per
    species, summing to less than 1).  ``lam`` is the wetting-side exponent
    usually written as a lowercase lambda.
    """

    n_species: int = 3
    lam: float = 7.0
    gamma: float = 6.2
    gamma1: float = 6.0
    beta1: float = 6.0
    beta2: float = 6.0
    s_gamma: tuple = (0.15, 0.15, 0.15)
    kappa: float = 1e-3
    eps: float = 1e-3
    quadrature_tol: float = 1e-10
    rootfind_tol: float = 1e-12

    def __post_init__(self):
        object.__setattr__(self, "s_gamma", tuple(float(v) for v in self.s_gamma))
        if self.n_species < 1:
            raise ArgumentError("n_species must be at least 1")
        for name in ("lam", "gamma", "gamma1", "beta1", "beta2"):
            if not getattr(self, name) > 0:
                raise ArgumentError(f"exponent {name} must be positive")
        if len(self.s_gamma) != self.n_species:
            raise ArgumentError("s_gamma must have one entry per species")
        if any(v <= 0 for v in self.s_gamma):
            raise ArgumentError("boundary composition entries must be positive")
        if sum(self.s_gamma) >= 1.0:
            raise ArgumentError("boundary composition must sum to less than 1")
        if not self.kappa > 0:
            raise ArgumentError("kappa must be positive")
        if self.eps < 0:
            raise ArgumentError("eps must be non-negative")
        if not (self.quadrature_tol > 0 and self.rootfind_tol > 0):
            raise ArgumentError("tolerances must be positive")

    @property
    def total_gamma(self):
        """Total boundary saturation sum(s_gamma)."""
        return float(sum(self.s_gamma))


def default_params(**overrides) -> ModelParams:
    """Reference parameter set (lam=7, gamma=6.2, gamma1=6, beta1=beta2=6)."""
    return ModelParams(**overrides)


@dataclass(frozen=True)
class CoefficientValues:
    """Coefficients at one saturation: a, pc_prime, tau and the quotient tau/a.

    ``tau_over_a`` is evaluated from its own closed form, not by division, so
    it stays finite and accurate deep in the degenerate regions.
    """

    a: float
    pc_prime: float
    tau: float
    tau_over_a: float


@dataclass(frozen=True)
class AssumptionReport:
    """Outcome of the exponent admissibility check.

    ``violated_clauses`` lists human-readable inequality strings (empty when
    accepted).  The derived exponents alpha1/alpha2 (endpoint powers of the
    free-energy kernel) and the integrability exponents p_gamma, p_lambda,
    p = min of the two, q = 2p/(1+p) are always computed.
    """

    accepted: bool
    violated_clauses: tuple
    alpha1: float
    alpha2: float
    p_gamma: float
    p_lambda: float
    p: float
    q: float


def _as_open_unit(s):
    """Validate s in (0,1) elementwise; return float array and scalar flag."""
    arr = np.asarray(s, dtype=float)
    if arr.size and (np.any(~np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr >= 1.0)):
        bad = arr[~(np.isfinite(arr) & (arr > 0.0) & (arr < 1.0))]
        raise DomainError(f"saturation must lie strictly in (0,1); got {bad.flat[0]!r}")
    return arr, np.isscalar(s) or arr.ndim == 0


def _log_s_terms(arr, p: ModelParams):
    """Return (gamma*log s, lam*log(1-s)) — the two recurring log powers."""
    ls = np.log(arr)
    l1ms = np.log1p(-arr)
    return p.gamma * ls, p.lam * l1ms, ls, l1ms


def _mobility(arr, p: ModelParams):
    lg, la, _, _ = _log_s_terms(arr, p)
    return np.exp(lg + la - np.logaddexp(lg, la))


def _tau(s, p: ModelParams):
    """Relaxation coefficient tau = beta'; continuous limits tau(0)=0, tau(1)=1."""
    arr = np.asarray(s, dtype=float)
    shape = arr.shape
    flat = arr.ravel()
    out = np.empty_like(flat)
    interior = (flat > 0.0) & (flat < 1.0)
    if np.any(interior):
        si = flat[interior]
        lg, la, ls, _ = _log_s_terms(si, p)
        num = np.logaddexp(lg, (p.gamma - p.gamma1) * ls + la)
        den = np.logaddexp(lg, la)
        out[interior] = np.exp(num - den)
    out[flat == 0.0] = 0.0
    out[flat == 1.0] = 1.0
    return out.reshape(shape)


def _tau_over_a(arr, p: ModelParams):
    # Plain sum of two powers: no cancellation, so direct pow is both exact
    # on dyadic states and honest (inf) on overflow.
    with np.errstate(over="ignore"):
        return np.power(1.0 - arr, -p.lam) + np.power(arr, -p.gamma1)


def _pc_prime(arr, p: ModelParams):
    with np.errstate(over="ignore"):
        return np.power(arr, -p.beta1) + np.power(1.0 - arr, -p.beta2)


def eval_coeffs(s, params: ModelParams) -> CoefficientValues:
    """Evaluate (a, pc', tau, tau/a) at saturation ``s`` in (0,1).

    Elementwise on arrays.  Each entry comes from its own closed form; in
    particular tau/a is *not* obtained by dividing the other two, which keeps
    it accurate where a underflows.
    """
    arr, scalar = _as_open_unit(s)
    a = _mobility(arr, params)
    tau = _tau(arr, params)
    toa = _tau_over_a(arr, params)
    pcp = _pc_prime(arr, params)
    if scalar:
        return CoefficientValues(float(a), float(pcp), float(tau), float(toa))
    return CoefficientValues(a, pcp, tau, toa)


# ---------------------------------------------------------------------------
# beta = primitive of tau, normalised at 1/2
# ---------------------------------------------------------------------------

_TABLE_INTERVALS = 4096
_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(7)


@lru_cache(maxsize=32)
def _beta_table(lam, gamma, gamma1):
    """Monotone interpolant of beta on [0,1] from panelwise Gauss quadrature.

    Returns (pchip, pchip_derivative, knots, values).  All hot paths evaluate
    beta through this single cached object, so discrete identities that pair
    beta differences with tau-chords are exact regardless of table accuracy.
    """
    p = ModelParams(n_species=1, lam=lam, gamma=gamma, gamma1=gamma1,
                    beta1=6.0, beta2=6.0, s_gamma=(0.5,))
    knots = np.linspace(0.0, 1.0, _TABLE_INTERVALS + 1)
    h = knots[1] - knots[0]
    # Gauss points of every panel, evaluated in one vectorised sweep.
    mids = 0.5 * (knots[:-1] + knots[1:])
    pts = mids[:, None] + 0.5 * h * _GAUSS_NODES[None, :]
    vals = _tau(pts, p)
    panel = 0.5 * h * vals @ _GAUSS_WEIGHTS
    cum = np.concatenate([[0.0], np.cumsum(panel)])
    cum -= cum[_TABLE_INTERVALS // 2]  # knots has even panel count; 0.5 is a knot
    pch = interpolate.PchipInterpolator(knots, cum)
    return pch, pch.derivative(), knots, cum


def _beta_hat(arr, p: ModelParams):
    """Tabulated beta used by transforms, assembly and diagnostics."""
    pch = _beta_table(p.lam, p.gamma, p.gamma1)[0]
    return pch(arr)


def _beta_hat_prime(arr, p: ModelParams):
    dpch = _beta_table(p.lam, p.gamma, p.gamma1)[1]
    return dpch(arr)


def beta_value(s, params: ModelParams) -> float:
    """beta(s) = integral of tau from 1/2 to s, by adaptive quadrature.

    Accepts s in the closed interval [0,1] (tau is bounded, so beta extends
    continuously to the endpoints).  Raises QuadratureError if the integrator
    cannot certify params.quadrature_tol.
    """
    sf = float(s)
    if not (0.0 <= sf <= 1.0) or not math.isfinite(sf):
        raise DomainError(f"beta_value requires s in [0,1]; got {s!r}")
    if sf == 0.5:
        return 0.0
    tol = params.quadrature_tol
    val, abserr, info = integrate.quad(
        lambda t: float(_tau(np.asarray(t), params)),
        0.5, sf, epsabs=tol, epsrel=tol, limit=200, full_output=True,
    )[:3]
    if abserr > 10.0 * max(tol, tol * abs(val)):
        raise QuadratureError(
            f"beta quadrature reached error estimate {abserr:.3e} "
            f"(requested {tol:.1e})")
    return float(val)


def beta_inverse(b, params: ModelParams) -> float:
    """Inverse of beta_value by safeguarded bracketing on [0,1].

    Raises RangeError when b lies outside [beta(0), beta(1)] and
    RootFindError if the residual tolerance cannot be met.
    """
    bf = float(b)
    lo_val = beta_value(0.0, params)
    hi_val = beta_value(1.0, params)
    if not (lo_val <= bf <= hi_val):
        raise RangeError(
            f"value {bf!r} outside the attainable range [{lo_val!r}, {hi_val!r}] of beta")
    tol = params.rootfind_tol
    root = optimize.brentq(
        lambda t: beta_value(t, params) - bf, 0.0, 1.0,
        xtol=min(tol, 1e-13), rtol=8.9e-16, maxiter=200)
    resid = abs(beta_value(root, params) - bf)
    if resid > tol:
        raise RootFindError(
            f"beta inversion residual {resid:.3e} exceeds tolerance {tol:.1e}")
    return float(root)


# ---------------------------------------------------------------------------
# Convex free-energy kernel: f0 (first primitive of tau/a) and E (second)
# ---------------------------------------------------------------------------

def _A_raw(arr, p: ModelParams):
    with np.errstate(over="ignore"):
        return (np.power(1.0 - arr, 1.0 - p.lam) / (p.lam - 1.0)
                - np.power(arr, 1.0 - p.gamma1) / (p.gamma1 - 1.0))


def _B_raw(arr, p: ModelParams):
    with np.errstate(over="ignore"):
        return (np.power(1.0 - arr, 2.0 - p.lam) / ((p.lam - 1.0) * (p.lam - 2.0))
                + np.power(arr, 2.0 - p.gamma1) / ((p.gamma1 - 1.0) * (p.gamma1 - 2.0)))


def _require_kernel_exponents(p: ModelParams):
    if p.lam <= 2.0 or p.gamma1 <= 2.0:
        raise ArgumentError(
            "closed-form free-energy kernel requires lam > 2 and gamma1 > 2")


def f0_integral(s, params: ModelParams):
    """f0(s) = integral of tau/a from 1/2 to s (closed form), f0(1/2) = 0.

    Strictly increasing with range the whole real line; blows up like
    -s^(1-gamma1) near 0 and (1-s)^(1-lam) near 1.  Elementwise on arrays.
    """
    _require_kernel_exponents(params)
    arr, scalar = _as_open_unit(s)
    half = np.asarray(0.5)
    out = _A_raw(arr, params) - _A_raw(half, params)
    return float(out) if scalar else out


def entropy_E(s, params: ModelParams):
    """Convex kernel E with E' = f0 and E(1/2) = 0 (closed form).

    E is nonnegative, vanishes to second order at 1/2, and grows like
    s^(2-gamma1) / (1-s)^(2-lam) towards the endpoints.  Elementwise.
    """
    _require_kernel_exponents(params)
    arr, scalar = _as_open_unit(s)
    half = np.asarray(0.5)
    out = (_B_raw(arr, params) - _B_raw(half, params)
           - _A_raw(half, params) * (arr - 0.5))
    return float(out) if scalar else out


# ---------------------------------------------------------------------------
# Admissibility of the exponent set
# ---------------------------------------------------------------------------

def validate_assumptions(params: ModelParams) -> AssumptionReport:
    """Check every admissibility clause on the exponents and derive the
    integrability exponents.

    Clauses checked (all must hold for acceptance):
      5 < beta1,  beta1 <= gamma1,  gamma1 < gamma,
      gamma < beta1/2 + (5/6)(gamma1 - 2),
      5 < beta2,  beta2 <= lam,  lam < 3 beta2 - 10,
    plus a sampled verification that pc' <= tau/a on a fine interior grid.
    """
    g, g1, b1 = params.gamma, params.gamma1, params.beta1
    lm, b2 = params.lam, params.beta2

    clauses = []

    def check(ok, text, bound=None):
        if not ok:
            clauses.append(text if bound is None else f"{text} (bound {bound:.6g})")

    check(5.0 < b1, "5 < beta1")
    check(b1 <= g1, "beta1 <= gamma1", g1)
    check(g1 < g, "gamma1 < gamma", g1)
    check(g < b1 / 2.0 + (5.0 / 6.0) * (g1 - 2.0),
          "gamma < beta1/2 + (5/6)(gamma1 - 2)", b1 / 2.0 + (5.0 / 6.0) * (g1 - 2.0))
    check(5.0 < b2, "5 < beta2")
    check(b2 <= lm, "beta2 <= lam", b2)
    check(lm < 3.0 * b2 - 10.0, "lam < 3 beta2 - 10", 3.0 * b2 - 10.0)

    alpha1 = 1.0 + (g - g1 - b1) / 2.0
    alpha2 = 1.0 - b2 / 2.0
    p_gamma = -(10.0 / 3.0 + g - (5.0 / 3.0) * g1 - b1) / g
    p_lambda = -(4.0 / 3.0 - (2.0 / 3.0) * lm + 2.0 - b2) / lm
    p = min(p_gamma, p_lambda)
    q = 2.0 * p / (1.0 + p) if p > -1.0 else math.nan

    # Pointwise bound pc' <= tau/a, sampled on a fine interior grid.  Under the
    # clauses above it holds with room to spare; the sample guards typos in
    # hand-edited exponent sets.
    if not clauses:
        grid = np.linspace(1e-6, 1.0 - 1e-6, 10_001)
        c = eval_coeffs(grid, params)
        finite = np.isfinite(c.tau_over_a) & np.isfinite(c.pc_prime)
        if not np.all(c.pc_prime[finite] <= c.tau_over_a[finite] * (1.0 + 1e-12)):
            clauses.append("pc_prime <= tau_over_a (sampled)")

    return AssumptionReport(
        accepted=not clauses,
        violated_clauses=tuple(clauses),
        alpha1=alpha1,
        alpha2=alpha2,
        p_gamma=p_gamma,
        p_lambda=p_lambda,
        p=p,
        q=q,
    )


@lru_cache(maxsize=32)
def _piecewise_quadratic_sup(pp):
    """Exact supremum of a piecewise-quadratic scipy PPoly.

    Checks breakpoints plus the interior critical point of each quadratic
    piece (the root of its linear derivative) that falls inside the piece.
    """
    x = pp.x
    c = pp.c
    candidates = [pp(x)]
    a2, a1 = c[0], c[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_star = -a1 / (2.0 * a2)
    dx = np.diff(x)
    inside = np.isfinite(t_star) & (t_star > 0.0) & (t_star < dx)
    if np.any(inside):
        idx = np.flatnonzero(inside)
        candidates.append(pp(x[:-1][idx] + t_star[idx]))
    return float(np.max(np.concatenate(candidates)))


def _sup_beta_prime_cached(lam, gamma, gamma1):
    p = ModelParams(n_species=1, lam=lam, gamma=gamma, gamma1=gamma1,
                    beta1=6.0, beta2=6.0, s_gamma=(0.5,))
    grid = np.concatenate([
        np.linspace(0.0, 1.0, 100_001),
        1.0 - np.geomspace(1e-14, 1e-5, 200),
        np.geomspace(1e-14, 1e-5, 200),
    ])
    sup_tau = float(np.max(_tau(grid, p)))
    # The tabulated beta is what the scheme differences nodally, so the exact
    # supremum of the interpolant's (piecewise-quadratic) derivative is the
    # Lipschitz constant that enters the entropy-check weighting.
    pch, _, _, _ = _beta_table(lam, gamma, gamma1)
    sup_table = _piecewise_quadratic_sup(pch.derivative())
    return max(sup_tau, sup_table)


def sup_beta_prime(params: ModelParams) -> float:
    """Supremum of beta' over [0,1]: the larger of the fine-grid sup of tau
    and the exact sup of the tabulated interpolant's derivative (equals 1 up
    to table error when gamma > gamma1, approached as s -> 1)."""
    return _sup_beta_prime_cached(params.lam, params.gamma, params.gamma1)
