"""Selection functions g(e), balancing weights w_z = g(e) e^{-z}(1-e)^{z-1}, and
their analytic gradients with respect to the logistic coefficients.

The matching selection function min{e, 1-e} is replaced inside
[0.5-delta, 0.5+delta] by the cubic-smoothed version so that weight
derivatives exist everywhere; outside the band it is exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .data import Dataset, WeightScheme
from .errors import (
    DimensionMismatch,
    EmptyEffectiveArm,
    InfiniteWeight,
    MissingParam,
    UnsupportedScheme,
)
from .glm import FittedPropensity

#: Schemes with smooth weight/selection gradients (sandwich variance available).
SMOOTH_KINDS = ("IPW", "ATT", "ATC", "OW", "MW", "EW", "BW")


@dataclass(frozen=True)
class SmoothedMatchingCoeffs:
    """Cubic coefficients replacing the matching weights inside the delta band.

    a1 (lower branch) are the coefficients of the cubic standing in for
    w1(e) = min{1, (1-e)/e}; a2 (upper branch) for w0(e) = min{1, e/(1-e)}.
    The implied selection function on the band is the quartic e * c1(e),
    which equals (1-e) * c2(e) identically and matches min{e, 1-e} in value
    and first derivative at both junctions.
    """

    delta: float
    a1: tuple[float, float, float, float]
    a2: tuple[float, float, float, float]


@lru_cache(maxsize=16)
def smoothing_coeffs(delta: float = 0.002) -> SmoothedMatchingCoeffs:
    """Solve the two Hermite systems for the matching-weight smoothing cubics."""
    lo, hi = 0.5 - delta, 0.5 + delta
    D = np.array([
        [1.0, lo, lo ** 2, lo ** 3],
        [0.0, 1.0, 2 * lo, 3 * lo ** 2],
        [1.0, hi, hi ** 2, hi ** 3],
        [0.0, 1.0, 2 * hi, 3 * hi ** 2],
    ])
    ratio = (1 - 2 * delta) / (1 + 2 * delta)
    slope = 4.0 / (1 + 2 * delta) ** 2
    a1 = np.linalg.solve(D, np.array([1.0, 0.0, ratio, -slope]))
    a2 = np.linalg.solve(D, np.array([ratio, slope, 1.0, 0.0]))
    return SmoothedMatchingCoeffs(delta=delta, a1=tuple(a1), a2=tuple(a2))


def _poly(coeffs, e):
    a0, a1, a2, a3 = coeffs
    return a0 + e * (a1 + e * (a2 + e * a3))


def _mw_band(e, delta):
    return (e > 0.5 - delta) & (e < 0.5 + delta)


def _entropy(e):
    # -[e ln e + (1-e) ln(1-e)] with the 0 ln 0 := 0 convention
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(e > 0.0, e * np.log(e), 0.0)
        t0 = np.where(e < 1.0, (1.0 - e) * np.log1p(-e), 0.0)
    return -(t1 + t0)


def _trunc_j(alpha, u):
    # J_alpha(u) = u [ 1{u < alpha}/alpha + 1{u > 1-alpha}/(1-alpha) ]
    return u * (np.where(u < alpha, 1.0 / alpha, 0.0)
                + np.where(u > 1.0 - alpha, 1.0 / (1.0 - alpha), 0.0))


def selection_g(scheme: WeightScheme, e, z=None):
    """Evaluate the selection function g at propensity value(s) e in [0, 1].

    TRUNC is the one arm-dependent composite in the catalog, so it requires z.
    """
    e_in = np.asarray(e, dtype=float)
    scalar = e_in.ndim == 0
    e = np.atleast_1d(e_in)
    kind = scheme.kind
    if kind == "IPW":
        g = np.ones_like(e)
    elif kind == "ATT":
        g = e.copy()
    elif kind == "ATC":
        g = 1.0 - e
    elif kind == "TRIM":
        a = scheme.alpha
        g = ((e >= a) & (e <= 1.0 - a)).astype(float)
    elif kind == "TRUNC":
        if z is None:
            raise MissingParam("the TRUNC composite depends on the arm; pass z")
        a = scheme.alpha
        inside = ((e >= a) & (e <= 1.0 - a)).astype(float)
        zv = np.broadcast_to(np.asarray(z, dtype=float), e.shape)
        g = inside + np.where(zv == 1.0, _trunc_j(a, e), _trunc_j(a, 1.0 - e))
    elif kind == "OW":
        g = e * (1.0 - e)
    elif kind == "MW":
        sm = smoothing_coeffs(scheme.delta)
        band = _mw_band(e, scheme.delta)
        g = np.where(band, e * _poly(sm.a1, e), np.minimum(e, 1.0 - e))
    elif kind == "EW":
        g = _entropy(e)
    elif kind == "BW":
        g = (e * (1.0 - e)) ** (scheme.nu - 1.0)
    else:  # pragma: no cover
        raise UnsupportedScheme(f"unknown scheme {kind}")
    return float(g[0]) if scalar else g


def weight_wz(scheme: WeightScheme, e, z: int):
    """Balancing weight w_z(e) = g(e) e^{-z} (1-e)^{z-1}, in closed form per scheme.

    Raises InfiniteWeight where the weight genuinely diverges at a numerical
    boundary; values are never clipped.
    """
    e_in = np.asarray(e, dtype=float)
    scalar = e_in.ndim == 0
    e = np.atleast_1d(e_in)
    kind = scheme.kind
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind == "IPW":
            w = 1.0 / e if z == 1 else 1.0 / (1.0 - e)
        elif kind == "ATT":
            w = np.ones_like(e) if z == 1 else e / (1.0 - e)
        elif kind == "ATC":
            w = (1.0 - e) / e if z == 1 else np.ones_like(e)
        elif kind == "TRIM":
            a = scheme.alpha
            inside = (e >= a) & (e <= 1.0 - a)
            w = np.where(inside, 1.0 / e if z == 1 else 1.0 / (1.0 - e), 0.0)
        elif kind == "TRUNC":
            a = scheme.alpha
            u = e if z == 1 else 1.0 - e
            w = np.where(u < a, 1.0 / a,
                         np.where(u > 1.0 - a, 1.0 / (1.0 - a), 1.0 / u))
        elif kind == "OW":
            w = 1.0 - e if z == 1 else e.copy()
        elif kind == "MW":
            sm = smoothing_coeffs(scheme.delta)
            band = _mw_band(e, scheme.delta)
            if z == 1:
                raw = np.where(e <= 0.5, 1.0, (1.0 - e) / np.where(e > 0, e, 1.0))
                w = np.where(band, _poly(sm.a1, e), raw)
            else:
                raw = np.where(e > 0.5, 1.0, e / np.where(e < 1, 1.0 - e, 1.0))
                w = np.where(band, _poly(sm.a2, e), raw)
        elif kind == "EW":
            xi = _entropy(e)
            w = xi / e if z == 1 else xi / (1.0 - e)
        elif kind == "BW":
            nu = scheme.nu
            if z == 1:
                w = e ** (nu - 2.0) * (1.0 - e) ** (nu - 1.0)
            else:
                w = e ** (nu - 1.0) * (1.0 - e) ** (nu - 2.0)
            if nu == 2.0:
                w = (1.0 - e) if z == 1 else e.copy()
        else:  # pragma: no cover
            raise UnsupportedScheme(f"unknown scheme {kind}")
    bad = ~np.isfinite(w)
    if bad.any():
        raise InfiniteWeight(
            f"{scheme.label} weight w_{z} is non-finite at {int(bad.sum())} propensity value(s); "
            "the data violate positivity for this estimand",
            rows=np.nonzero(bad)[0])
    return float(w[0]) if scalar else w


@dataclass(frozen=True)
class WeightSet:
    """Per-unit selection values, raw and normalized balancing weights."""

    scheme: WeightScheme
    g_values: np.ndarray
    raw_w1: np.ndarray
    raw_w0: np.ndarray
    norm_w1: np.ndarray
    norm_w0: np.ndarray
    sum_w1: float
    sum_w0: float


def compute_weightset(ds: Dataset, fp: FittedPropensity, scheme: WeightScheme) -> WeightSet:
    """Evaluate g and the per-arm normalized weights for every unit.

    Normalization uses the within-arm sums N_w1 = sum_{Z=1} w1 and
    N_w0 = sum_{Z=0} w0, so the normalized weights sum to one in each arm.
    """
    e = np.asarray(fp.scores, dtype=float)
    if e.shape[0] != ds.n_units:
        raise DimensionMismatch("propensity scores are not aligned with the dataset rows")
    z = ds.treatment
    raw_w1 = weight_wz(scheme, e, 1)
    raw_w0 = weight_wz(scheme, e, 0)
    if scheme.kind == "TRUNC":
        g = selection_g(scheme, e, z=z)
    else:
        g = selection_g(scheme, e)
    sum_w1 = float(raw_w1[z == 1].sum())
    sum_w0 = float(raw_w0[z == 0].sum())
    if sum_w1 <= 0.0:
        raise EmptyEffectiveArm(f"{scheme.label}: treated arm carries zero total weight")
    if sum_w0 <= 0.0:
        raise EmptyEffectiveArm(f"{scheme.label}: control arm carries zero total weight")
    return WeightSet(
        scheme=scheme,
        g_values=g,
        raw_w1=raw_w1,
        raw_w0=raw_w0,
        norm_w1=raw_w1 / sum_w1,
        norm_w0=raw_w0 / sum_w0,
        sum_w1=sum_w1,
        sum_w0=sum_w0,
    )


# ---------------------------------------------------------------------------
# Analytic gradients with respect to the logistic coefficients.
#
# With e = logistic(V'beta), d e/d beta = e(1-e) V, so each gradient is a
# scalar factor times V. The factors below are d w_z/d e * e(1-e) and
# d g/d e * e(1-e). ATT/ATC and BW factors follow by direct differentiation;
# the remaining entries mirror the published derivative table, with the
# entropy rows carrying the sign that matches d/d e of xi(e)/e and
# xi(e)/(1-e) (verified against finite differences).
# ---------------------------------------------------------------------------


def _require_smooth(scheme: WeightScheme) -> None:
    if scheme.kind in ("TRIM", "TRUNC"):
        raise UnsupportedScheme(
            f"{scheme.label} has no smooth weight gradient; use bootstrap_variance")
    if scheme.kind not in SMOOTH_KINDS:  # pragma: no cover
        raise UnsupportedScheme(f"unknown scheme {scheme.kind}")


def weight_beta_factor(scheme: WeightScheme, e, z: int):
    """Scalar factor f(e) such that d w_z / d beta = f(e) * V_i."""
    _require_smooth(scheme)
    e = np.atleast_1d(np.asarray(e, dtype=float))
    kind = scheme.kind
    eta2 = e * (1.0 - e)
    if kind == "IPW":
        f = -(1.0 - e) / e if z == 1 else e / (1.0 - e)
    elif kind == "ATT":
        f = np.zeros_like(e) if z == 1 else e / (1.0 - e)
    elif kind == "ATC":
        f = -(1.0 - e) / e if z == 1 else np.zeros_like(e)
    elif kind == "OW":
        f = -eta2 if z == 1 else eta2
    elif kind == "MW":
        sm = smoothing_coeffs(scheme.delta)
        band = _mw_band(e, scheme.delta)
        if z == 1:
            a = sm.a1
            cubic_slope = a[1] + 2 * a[2] * e + 3 * a[3] * e ** 2
            f = np.where(band, cubic_slope * eta2,
                         np.where(e <= 0.5, 0.0, -(1.0 - e) / np.where(e > 0, e, 1.0)))
        else:
            a = sm.a2
            cubic_slope = a[1] + 2 * a[2] * e + 3 * a[3] * e ** 2
            f = np.where(band, cubic_slope * eta2,
                         np.where(e > 0.5, 0.0, e / np.where(e < 1, 1.0 - e, 1.0)))
    elif kind == "EW":
        if z == 1:
            f = np.log1p(-e) * (1.0 - e) / e
        else:
            f = -np.log(e) * e / (1.0 - e)
    elif kind == "BW":
        nu = scheme.nu
        if z == 1:
            f = e ** (nu - 2.0) * (1.0 - e) ** (nu - 1.0) * ((nu - 2.0) - (2 * nu - 3.0) * e)
        else:
            f = e ** (nu - 1.0) * (1.0 - e) ** (nu - 2.0) * ((nu - 1.0) - (2 * nu - 3.0) * e)
    return f


def selection_beta_factor(scheme: WeightScheme, e):
    """Scalar factor f(e) such that d g / d beta = f(e) * V_i."""
    _require_smooth(scheme)
    e = np.atleast_1d(np.asarray(e, dtype=float))
    kind = scheme.kind
    eta2 = e * (1.0 - e)
    if kind == "IPW":
        f = np.zeros_like(e)
    elif kind == "ATT":
        f = eta2
    elif kind == "ATC":
        f = -eta2
    elif kind == "OW":
        f = (1.0 - 2.0 * e) * eta2
    elif kind == "MW":
        sm = smoothing_coeffs(scheme.delta)
        band = _mw_band(e, scheme.delta)
        a = sm.a1
        quartic_slope = a[0] + 2 * a[1] * e + 3 * a[2] * e ** 2 + 4 * a[3] * e ** 3
        f = np.where(band, quartic_slope * eta2, np.where(e <= 0.5, eta2, -eta2))
    elif kind == "EW":
        with np.errstate(divide="ignore"):
            f = np.log((1.0 - e) / e) * eta2
        f = np.where(eta2 == 0.0, 0.0, f)
    elif kind == "BW":
        nu = scheme.nu
        f = (nu - 1.0) * eta2 ** (nu - 2.0) * (1.0 - 2.0 * e) * eta2
    return f


def weight_gradient(scheme: WeightScheme, e, z: int, V: np.ndarray) -> np.ndarray:
    """Gradient d w_z / d beta, one row of length k per propensity value.

    V may be a single design row (k,) or the row-aligned matrix (n, k).
    Raises UnsupportedScheme for TRIM/TRUNC, whose g is not differentiable.
    """
    f = weight_beta_factor(scheme, e, z)
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        return f[0] * V if f.shape[0] == 1 else f[:, None] * V[None, :]
    return f[:, None] * V


def selection_gradient(scheme: WeightScheme, e, V: np.ndarray) -> np.ndarray:
    """Gradient d g / d beta, one row of length k per propensity value."""
    f = selection_beta_factor(scheme, e)
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        return f[0] * V if f.shape[0] == 1 else f[:, None] * V[None, :]
    return f[:, None] * V
