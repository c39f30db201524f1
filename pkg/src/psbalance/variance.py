"""Sandwich (M-estimation) variances for the Hajek and augmented estimators,
and a nonparametric bootstrap for everything else.

Each estimator is written as tau = c' theta for a stacked parameter theta
solving sum_i psi(unit_i, theta) = 0; the variance is N^{-1} c' A^{-1} B A^{-T} c
with A the (analytic) negative mean Jacobian of psi and B the outer-product
average. Rows of psi tied to tiny weights (e.g. high-order beta weights) are
rescaled by fixed constants, which leaves the variance unchanged but keeps
the bread matrix well conditioned.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import Dataset, WeightScheme
from .errors import (
    ArmTooSmall,
    DegenerateTreatment,
    EmptyEffectiveArm,
    InfiniteWeight,
    NonConvergence,
    SingularBread,
    SingularDesign,
    TooManyFailedResamples,
)
from .glm import FittedOutcome, FittedPropensity, logistic
from .weights import (
    WeightSet,
    selection_beta_factor,
    selection_g,
    weight_beta_factor,
    weight_wz,
)

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class EstimatingStack:
    """Stacked estimating equations: theta, per-unit psi, and the contrast c."""

    theta: np.ndarray
    psi: Callable[[np.ndarray], np.ndarray]
    contrast_c: np.ndarray
    row_scales: np.ndarray

    def residual(self) -> np.ndarray:
        return self.psi(self.theta).sum(axis=0)


@dataclass(frozen=True)
class SandwichResult:
    A_N: np.ndarray
    B_N: np.ndarray
    Sigma: np.ndarray
    variance: float
    se: float


def _finish(A: np.ndarray, B: np.ndarray, c: np.ndarray, n: int) -> SandwichResult:
    if not np.all(np.isfinite(A)) or np.linalg.cond(A) > _COND_LIMIT:
        raise SingularBread("bread matrix A_N is numerically singular")
    Ainv = np.linalg.inv(A)
    Sigma = Ainv @ B @ Ainv.T
    variance = float(c @ Sigma @ c) / n
    if variance < 0.0:
        variance = 0.0
    return SandwichResult(A_N=A, B_N=B, Sigma=Sigma, variance=variance, se=float(np.sqrt(variance)))


def build_hajek_stack(ds: Dataset, fp: FittedPropensity, scheme: WeightScheme,
                      V: np.ndarray, ws: WeightSet) -> EstimatingStack:
    """theta = (beta', mu_1g, mu_0g); psi rows per the weighted-mean stack."""
    z = ds.treatment.astype(float)
    y = ds.outcome
    t = ds.treatment == 1
    mu1 = float(np.sum(ws.norm_w1[t] * y[t]))
    mu0 = float(np.sum(ws.norm_w0[~t] * y[~t]))
    k = V.shape[1]
    n = ds.n_units
    s1 = n / ws.sum_w1
    s0 = n / ws.sum_w0
    theta = np.concatenate([fp.coefficients, [mu1, mu0]])
    scales = np.concatenate([np.ones(k), [s1, s0]])
    c = np.zeros(k + 2)
    c[k], c[k + 1] = 1.0, -1.0

    def psi(th: np.ndarray) -> np.ndarray:
        beta, m1, m0 = th[:k], th[k], th[k + 1]
        e = logistic(V @ beta)
        w1 = weight_wz(scheme, e, 1)
        w0 = weight_wz(scheme, e, 0)
        return np.column_stack([
            (z - e)[:, None] * V,
            s1 * z * w1 * (y - m1),
            s0 * (1.0 - z) * w0 * (y - m0),
        ])

    return EstimatingStack(theta=theta, psi=psi, contrast_c=c, row_scales=scales)


def sandwich_hajek(ds: Dataset, fp: FittedPropensity, scheme: WeightScheme,
                   ws: WeightSet, V: np.ndarray) -> SandwichResult:
    """Sandwich variance of the Hajek estimator, PS coefficients treated as estimated."""
    stack = build_hajek_stack(ds, fp, scheme, V, ws)
    e = fp.scores
    z = ds.treatment.astype(float)
    y = ds.outcome
    n = ds.n_units
    k = V.shape[1]
    s1, s0 = stack.row_scales[k], stack.row_scales[k + 1]
    mu1, mu0 = stack.theta[k], stack.theta[k + 1]

    dw1 = weight_beta_factor(scheme, e, 1)
    dw0 = weight_beta_factor(scheme, e, 0)

    A = np.zeros((k + 2, k + 2))
    A[:k, :k] = (V * (e * (1.0 - e))[:, None]).T @ V / n
    A[k, :k] = -s1 * (z * dw1 * (y - mu1)) @ V / n
    A[k + 1, :k] = -s0 * ((1.0 - z) * dw0 * (y - mu0)) @ V / n
    A[k, k] = s1 * np.sum(z * ws.raw_w1) / n
    A[k + 1, k + 1] = s0 * np.sum((1.0 - z) * ws.raw_w0) / n

    P = stack.psi(stack.theta)
    B = P.T @ P / n
    return _finish(A, B, stack.contrast_c, n)


def build_augmented_stack(ds: Dataset, fp: FittedPropensity, of: FittedOutcome,
                          scheme: WeightScheme, V: np.ndarray, W: np.ndarray,
                          ws: WeightSet) -> EstimatingStack:
    """theta = (beta', alpha_1', alpha_0', tau_1g, tau_0g, mu_1g, mu_0g)."""
    z = ds.treatment.astype(float)
    y = ds.outcome
    t = ds.treatment == 1
    n = ds.n_units
    k = V.shape[1]
    r = W.shape[1]
    g = ws.g_values
    gsum = g.sum()
    if gsum <= 0.0:
        raise EmptyEffectiveArm("all selection-function values are zero")
    tau1 = float(np.sum(g * of.fitted_m1) / gsum)
    tau0 = float(np.sum(g * of.fitted_m0) / gsum)
    mu1 = float(np.sum(ws.norm_w1[t] * (y[t] - of.fitted_m1[t])))
    mu0 = float(np.sum(ws.norm_w0[~t] * (y[~t] - of.fitted_m0[~t])))
    sg = n / gsum
    s1 = n / ws.sum_w1
    s0 = n / ws.sum_w0
    theta = np.concatenate([fp.coefficients, of.coefficients_treated,
                            of.coefficients_control, [tau1, tau0, mu1, mu0]])
    scales = np.concatenate([np.ones(k + 2 * r), [sg, sg, s1, s0]])
    c = np.zeros(k + 2 * r + 4)
    c[k + 2 * r:] = [1.0, -1.0, 1.0, -1.0]

    def psi(th: np.ndarray) -> np.ndarray:
        beta = th[:k]
        a1 = th[k:k + r]
        a0 = th[k + r:k + 2 * r]
        t1, t0, m1c, m0c = th[k + 2 * r:]
        e = logistic(V @ beta)
        if scheme.kind == "TRUNC":
            gv = selection_g(scheme, e, z=ds.treatment)
        else:
            gv = selection_g(scheme, e)
        w1 = weight_wz(scheme, e, 1)
        w0 = weight_wz(scheme, e, 0)
        m1 = W @ a1
        m0 = W @ a0
        return np.column_stack([
            (z - e)[:, None] * V,
            (z * (y - m1))[:, None] * W,
            ((1.0 - z) * (y - m0))[:, None] * W,
            sg * gv * (m1 - t1),
            sg * gv * (m0 - t0),
            s1 * z * w1 * (y - m1 - m1c),
            s0 * (1.0 - z) * w0 * (y - m0 - m0c),
        ])

    return EstimatingStack(theta=theta, psi=psi, contrast_c=c, row_scales=scales)


def sandwich_augmented(ds: Dataset, fp: FittedPropensity, of: FittedOutcome,
                       scheme: WeightScheme, ws: WeightSet,
                       V: np.ndarray, W: np.ndarray) -> SandwichResult:
    """Sandwich variance of the augmented estimator (shared outcome design W)."""
    stack = build_augmented_stack(ds, fp, of, scheme, V, W, ws)
    e = fp.scores
    z = ds.treatment.astype(float)
    y = ds.outcome
    n = ds.n_units
    k = V.shape[1]
    r = W.shape[1]
    i_t1, i_t0, i_m1, i_m0 = k + 2 * r, k + 2 * r + 1, k + 2 * r + 2, k + 2 * r + 3
    sg, _, s1, s0 = stack.row_scales[k + 2 * r:]
    tau1, tau0, mu1, mu0 = stack.theta[k + 2 * r:]
    g = ws.g_values
    m1hat, m0hat = of.fitted_m1, of.fitted_m0

    dg = selection_beta_factor(scheme, e)
    dw1 = weight_beta_factor(scheme, e, 1)
    dw0 = weight_beta_factor(scheme, e, 0)

    K = k + 2 * r + 4
    A = np.zeros((K, K))
    sl_b = slice(0, k)
    sl_a1 = slice(k, k + r)
    sl_a0 = slice(k + r, k + 2 * r)
    A[sl_b, sl_b] = (V * (e * (1.0 - e))[:, None]).T @ V / n
    A[sl_a1, sl_a1] = (W * z[:, None]).T @ W / n
    A[sl_a0, sl_a0] = (W * (1.0 - z)[:, None]).T @ W / n
    A[i_t1, sl_b] = -sg * (dg * (m1hat - tau1)) @ V / n
    A[i_t0, sl_b] = -sg * (dg * (m0hat - tau0)) @ V / n
    A[i_t1, sl_a1] = -sg * g @ W / n
    A[i_t0, sl_a0] = -sg * g @ W / n
    A[i_t1, i_t1] = sg * g.sum() / n
    A[i_t0, i_t0] = sg * g.sum() / n
    A[i_m1, sl_b] = -s1 * (z * dw1 * (y - m1hat - mu1)) @ V / n
    A[i_m0, sl_b] = -s0 * ((1.0 - z) * dw0 * (y - m0hat - mu0)) @ V / n
    A[i_m1, sl_a1] = s1 * (z * ws.raw_w1) @ W / n
    A[i_m0, sl_a0] = s0 * ((1.0 - z) * ws.raw_w0) @ W / n
    A[i_m1, i_m1] = s1 * np.sum(z * ws.raw_w1) / n
    A[i_m0, i_m0] = s0 * np.sum((1.0 - z) * ws.raw_w0) / n

    P = stack.psi(stack.theta)
    B = P.T @ P / n
    return _finish(A, B, stack.contrast_c, n)


@dataclass(frozen=True)
class BootstrapResult:
    se: float
    replicates: np.ndarray
    n_failed: int


_RESAMPLE_FAILURES = (NonConvergence, InfiniteWeight, EmptyEffectiveArm,
                      SingularDesign, SingularBread, ArmTooSmall, DegenerateTreatment)


def bootstrap_variance(ds: Dataset, analysis_closure: Callable[[Dataset], float],
                       B: int, seed: int, threads: int = 1,
                       max_fail_frac: float = 0.2) -> BootstrapResult:
    """Unit-level nonparametric bootstrap SE of a full analysis pipeline.

    analysis_closure re-runs the whole pipeline (PS fit, weights, estimate)
    on each resample. Resamples that fail numerically are excluded and
    counted; more than max_fail_frac failures aborts, since bootstrap
    behaves badly exactly where positivity is lacking.
    """
    if B < 2:
        raise TooManyFailedResamples("bootstrap needs at least 2 replicates")
    n = ds.n_units

    def one(b: int) -> float:
        rng = np.random.default_rng([seed, b])
        idx = rng.integers(0, n, size=n)
        boot = Dataset(
            treatment=ds.treatment[idx],
            outcome=ds.outcome[idx],
            covariates=ds.covariates[idx],
            covariate_names=ds.covariate_names,
            treat_col=ds.treat_col,
            outcome_col=ds.outcome_col,
        )
        try:
            return float(analysis_closure(boot))
        except _RESAMPLE_FAILURES:
            return np.nan

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reps = np.array(list(pool.map(one, range(B))))
    else:
        reps = np.array([one(b) for b in range(B)])
    ok = np.isfinite(reps)
    n_failed = int(B - ok.sum())
    if n_failed > max_fail_frac * B:
        raise TooManyFailedResamples(
            f"{n_failed}/{B} bootstrap resamples failed; the data lack the "
            "positivity needed for a stable bootstrap")
    good = reps[ok]
    se = float(good.std(ddof=1)) if good.size > 1 else 0.0
    return BootstrapResult(se=se, replicates=good, n_failed=n_failed)
