"""Point estimators: crude contrast, Hajek weighting, stabilized weighting,
regression imputation, the augmented estimator for general g, and the
doubly-robust estimator for affine g.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, WeightScheme
from .errors import (
    AllZeroSelection,
    EmptyEffectiveArm,
    InfiniteWeight,
    SchemeNotAffine,
    UnsupportedScheme,
)
from .glm import FittedOutcome, FittedPropensity
from .weights import WeightSet


def crude_estimate(ds: Dataset) -> float:
    """Unadjusted difference of arm means."""
    t = ds.treatment == 1
    return float(ds.outcome[t].mean() - ds.outcome[~t].mean())


def hajek_estimate(ws: WeightSet, ds: Dataset) -> float:
    """Ratio-normalized weighted mean contrast sum_i [Z W1 - (1-Z) W0] Y."""
    t = ds.treatment == 1
    return float(np.sum(ws.norm_w1[t] * ds.outcome[t]) - np.sum(ws.norm_w0[~t] * ds.outcome[~t]))


def stabilized_ipw_estimate(ds: Dataset, fp: FittedPropensity) -> float:
    """Prevalence-stabilized unnormalized weighting estimator.

    N^{-1} sum_i [ p_hat Z_i Y_i / e_i - (1 - p_hat)(1 - Z_i) Y_i / (1 - e_i) ]
    with p_hat the sample treated proportion.
    """
    e = np.asarray(fp.scores, dtype=float)
    t = ds.treatment == 1
    y = ds.outcome
    with np.errstate(divide="ignore"):
        w1 = 1.0 / e[t]
        w0 = 1.0 / (1.0 - e[~t])
    bad = np.concatenate([np.nonzero(t)[0][~np.isfinite(w1)],
                          np.nonzero(~t)[0][~np.isfinite(w0)]])
    if bad.size:
        raise InfiniteWeight("stabilized IPW weight is non-finite", rows=bad)
    p = t.mean()
    return float((p * np.sum(y[t] * w1) - (1.0 - p) * np.sum(y[~t] * w0)) / ds.n_units)


@dataclass(frozen=True)
class AugmentedInputs:
    """Bundle of pre-fitted pieces consumed by the augmented/DR estimators."""

    weightset: WeightSet
    outcome_fit: FittedOutcome
    scheme: WeightScheme

    @property
    def affine_ab(self):
        return self.scheme.affine_ab


def regression_estimate(outcome_fit: FittedOutcome, g_values: np.ndarray) -> float:
    """g-weighted mean of the fitted contrasts: (sum g)^-1 sum g (m1 - m0)."""
    g = np.asarray(g_values, dtype=float)
    total = g.sum()
    if total <= 0.0:
        raise AllZeroSelection("all selection-function values are zero")
    return float(np.sum(g * (outcome_fit.fitted_m1 - outcome_fit.fitted_m0)) / total)


def _weighted_residual_terms(inputs: AugmentedInputs, ds: Dataset) -> tuple[float, float]:
    ws = inputs.weightset
    of = inputs.outcome_fit
    t = ds.treatment == 1
    if ws.norm_w1[t].sum() <= 0 or ws.norm_w0[~t].sum() <= 0:
        raise EmptyEffectiveArm("an arm carries zero weight mass")
    term1 = float(np.sum(ws.norm_w1[t] * (ds.outcome[t] - of.fitted_m1[t])))
    term0 = float(np.sum(ws.norm_w0[~t] * (ds.outcome[~t] - of.fitted_m0[~t])))
    return term1, term0


def augmented_estimate(inputs: AugmentedInputs, ds: Dataset) -> float:
    """Weighting estimator corrected by outcome regressions, with the third
    term weighted by W4 = g / sum g (affine and equipoise schemes only)."""
    if inputs.scheme.kind in ("TRIM", "TRUNC"):
        raise UnsupportedScheme(
            f"augmentation is not defined for {inputs.scheme.label}; "
            "use hajek_estimate with bootstrap variance")
    term1, term0 = _weighted_residual_terms(inputs, ds)
    g = inputs.weightset.g_values
    total = g.sum()
    if total <= 0.0:
        raise AllZeroSelection("all selection-function values are zero")
    of = inputs.outcome_fit
    term_g = float(np.sum(g * (of.fitted_m1 - of.fitted_m0)) / total)
    return term1 - term0 + term_g


def dr_estimate(inputs: AugmentedInputs, ds: Dataset) -> float:
    """Doubly-robust estimator for affine g(x) = a + b e(x): the third term is
    weighted by W3 = (a + b Z) / sum (a + b Z) instead of the estimated g."""
    ab = inputs.affine_ab
    if ab is None:
        raise SchemeNotAffine(
            f"{inputs.scheme.label} is not affine in e; use augmented_estimate")
    a, b = ab
    term1, term0 = _weighted_residual_terms(inputs, ds)
    z = ds.treatment.astype(float)
    w3 = a + b * z
    total = w3.sum()
    if total <= 0.0:
        raise AllZeroSelection("the affine arm weights sum to zero")
    of = inputs.outcome_fit
    term_g = float(np.sum(w3 * (of.fitted_m1 - of.fitted_m0)) / total)
    return term1 - term0 + term_g
