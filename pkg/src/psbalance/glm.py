"""Logistic propensity model (IRLS) and per-arm linear outcome models.

Also exposes the per-unit estimating-function contributions (score vectors)
consumed by the sandwich-variance machinery.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import (
    ArmTooSmall,
    DimensionMismatch,
    NonConvergence,
    SingularDesign,
    UnknownColumn,
)

#: Linear predictors beyond this magnitude with an unconverged score signal
#: quasi-separation: the MLE is drifting to infinity.
_SEPARATION_BOUND = 30.0

_RANK_TOL = 1e-10


@dataclass(frozen=True)
class DesignSpec:
    """Ordered design terms: raw columns, squares 'X1^2', or products 'X1*X2'.

    The intercept column is always included and always comes first.
    """

    terms: tuple[str, ...]

    def __init__(self, terms):
        object.__setattr__(self, "terms", tuple(terms))

    def columns_used(self) -> tuple[str, ...]:
        used = []
        for t in self.terms:
            for name in _split_term(t):
                if name not in used:
                    used.append(name)
        return tuple(used)


def _split_term(term: str) -> tuple[str, ...]:
    if "*" in term:
        a, b = term.split("*", 1)
        return (a.strip(), b.strip())
    if term.endswith("^2"):
        return (term[:-2].strip(),)
    return (term.strip(),)


def build_design(ds: Dataset, spec: DesignSpec) -> np.ndarray:
    """Build the n x (1+q) design matrix: intercept first, then spec terms in order."""
    cols = [np.ones(ds.n_units)]
    for term in spec.terms:
        if "*" in term:
            a, b = _split_term(term)
            cols.append(ds.column(a) * ds.column(b))
        elif term.endswith("^2"):
            (a,) = _split_term(term)
            cols.append(ds.column(a) ** 2)
        else:
            cols.append(ds.column(term.strip()))
    return np.column_stack(cols)


def _check_full_rank(M: np.ndarray, context: str) -> None:
    _, r = np.linalg.qr(M)
    d = np.abs(np.diag(r))
    if d.size and d.min() <= _RANK_TOL * max(d.max(), 1.0):
        raise SingularDesign(f"{context}: design matrix is rank deficient")


def logistic(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


@dataclass(frozen=True)
class FittedPropensity:
    """Logistic MLE: coefficients (intercept first), fitted scores in (0,1)."""

    coefficients: np.ndarray
    design_spec: tuple[str, ...]
    scores: np.ndarray
    converged: bool
    iterations: int
    score_norm: float
    loglik_path: tuple[float, ...] = ()


def _loglik(Z, eta):
    # numerically stable Bernoulli log-likelihood: sum z*eta - log(1+exp(eta))
    return float(np.sum(Z * eta - np.logaddexp(0.0, eta)))


def fit_logistic(V: np.ndarray, Z: np.ndarray, tol: float = 1e-8, max_iter: int = 100,
                 design_terms: tuple[str, ...] = ()) -> FittedPropensity:
    """Solve the logistic score equation sum_i (Z_i - e_i) V_i = 0 by IRLS.

    Newton steps with step-halving on log-likelihood decrease; convergence is
    declared on the infinity norm of the score. Quasi-separation (|V beta|
    drifting past 30 while the score is still large) raises NonConvergence
    carrying the last iterate.
    """
    V = np.asarray(V, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if V.ndim != 2 or V.shape[0] != Z.shape[0]:
        raise DimensionMismatch("V must be n x k and aligned with Z")
    zvals = np.unique(Z)
    if not (0.0 in zvals and 1.0 in zvals):
        raise DimensionMismatch("Z must contain both classes")
    _check_full_rank(V, "fit_logistic")

    n, k = V.shape
    beta = np.zeros(k)
    eta = V @ beta
    e = logistic(eta)
    ll = _loglik(Z, eta)
    ll_path = [ll]
    for it in range(1, max_iter + 1):
        score = V.T @ (Z - e)
        score_norm = float(np.max(np.abs(score)))
        if score_norm <= tol:
            return FittedPropensity(beta, tuple(design_terms), e, True, it - 1,
                                    score_norm, tuple(ll_path))
        if np.max(np.abs(eta)) > _SEPARATION_BOUND:
            raise NonConvergence(
                "quasi-separation: fitted linear predictor diverging while score "
                f"norm {score_norm:.3e} > tol",
                last_beta=beta, scores=e, score_norm=score_norm)
        w = e * (1.0 - e)
        H = V.T @ (V * w[:, None])
        try:
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError as exc:
            raise SingularDesign(f"fit_logistic: singular weighted normal equations: {exc}") from exc
        t = 1.0
        for _ in range(50):
            beta_new = beta + t * step
            eta_new = V @ beta_new
            ll_new = _loglik(Z, eta_new)
            if ll_new >= ll - 1e-12:
                break
            t *= 0.5
        beta, eta, ll = beta_new, eta_new, ll_new
        e = logistic(eta)
        ll_path.append(ll)
    score = V.T @ (Z - e)
    score_norm = float(np.max(np.abs(score)))
    raise NonConvergence(
        f"IRLS did not reach score norm {tol:g} in {max_iter} iterations "
        f"(final norm {score_norm:.3e})",
        last_beta=beta, scores=e, score_norm=score_norm)


def fit_propensity(ds: Dataset, spec: DesignSpec, tol: float = 1e-8,
                   max_iter: int = 100) -> FittedPropensity:
    """Build the PS design from a Dataset and fit the logistic model."""
    for name in spec.columns_used():
        if name not in ds.covariate_names:
            raise UnknownColumn(f"PS design references unknown column {name!r}")
    V = build_design(ds, spec)
    return fit_logistic(V, ds.treatment, tol=tol, max_iter=max_iter, design_terms=spec.terms)


@dataclass(frozen=True)
class FittedOutcome:
    """Per-arm least-squares fits with fitted values extrapolated to every unit."""

    coefficients_treated: np.ndarray
    coefficients_control: np.ndarray
    design_spec: tuple[str, ...]
    fitted_m1: np.ndarray
    fitted_m0: np.ndarray


def fit_outcome(W: np.ndarray, Y: np.ndarray, Z: np.ndarray,
                design_terms: tuple[str, ...] = ()) -> FittedOutcome:
    """Fit m_z separately on each arm by least squares; predict for all units."""
    W = np.asarray(W, dtype=float)
    Y = np.asarray(Y, dtype=float)
    Z = np.asarray(Z)
    if W.ndim != 2 or W.shape[0] != Y.shape[0] or Y.shape[0] != Z.shape[0]:
        raise DimensionMismatch("W, Y and Z must be row-aligned")
    k = W.shape[1]
    alphas = {}
    for z in (1, 0):
        mask = Z == z
        if mask.sum() < k:
            raise ArmTooSmall(f"arm z={z} has {int(mask.sum())} units; needs at least {k}")
        Wz, Yz = W[mask], Y[mask]
        _check_full_rank(Wz, f"fit_outcome arm z={z}")
        alphas[z], *_ = np.linalg.lstsq(Wz, Yz, rcond=None)
    return FittedOutcome(
        coefficients_treated=alphas[1],
        coefficients_control=alphas[0],
        design_spec=tuple(design_terms),
        fitted_m1=W @ alphas[1],
        fitted_m0=W @ alphas[0],
    )


def fit_outcome_models(ds: Dataset, spec: DesignSpec) -> FittedOutcome:
    for name in spec.columns_used():
        if name not in ds.covariate_names:
            raise UnknownColumn(f"outcome design references unknown column {name!r}")
    W = build_design(ds, spec)
    return fit_outcome(W, ds.outcome, ds.treatment, design_terms=spec.terms)


def logistic_score(V: np.ndarray, Z: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Per-unit logistic score contributions (Z_i - e_i) V_i, one row per unit."""
    V = np.asarray(V, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if V.shape[1] != beta.shape[0] or V.shape[0] != np.shape(Z)[0]:
        raise DimensionMismatch("V, Z and beta dimensions disagree")
    e = logistic(V @ beta)
    return (np.asarray(Z, dtype=float) - e)[:, None] * V


def outcome_score(W: np.ndarray, Y: np.ndarray, Z: np.ndarray,
                  alpha_z: np.ndarray, z: int) -> np.ndarray:
    """Per-unit normal-equation contributions 1{Z_i=z} W_i (Y_i - W_i' alpha_z)."""
    W = np.asarray(W, dtype=float)
    alpha_z = np.asarray(alpha_z, dtype=float)
    if W.shape[1] != alpha_z.shape[0] or W.shape[0] != np.shape(Y)[0] or W.shape[0] != np.shape(Z)[0]:
        raise DimensionMismatch("W, Y, Z and alpha_z dimensions disagree")
    arm = (np.asarray(Z) == z).astype(float)
    resid = np.asarray(Y, dtype=float) - W @ alpha_z
    return (arm * resid)[:, None] * W
