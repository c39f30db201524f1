"""Seeded data-generating processes, superpopulation estimand oracles, and the
Monte-Carlo harness producing ARB / RMSE / SD / SE / CP summaries.

Replicate r of a run is a pure function of (spec, r): its RNG stream is keyed
by (seed, r), so results are bit-identical regardless of worker count.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .data import Dataset, WeightScheme
from .errors import (
    AllReplicatesFailed,
    ArmTooSmall,
    EmptyEffectiveArm,
    InfiniteWeight,
    NonConvergence,
    ParamOutOfRange,
    SingularBread,
    SingularDesign,
    UnsupportedScheme,
)
from .estimators import AugmentedInputs, augmented_estimate, dr_estimate, hajek_estimate
from .glm import DesignSpec, build_design, fit_outcome_models, fit_propensity, logistic
from .variance import sandwich_augmented, sandwich_hajek
from .weights import compute_weightset, selection_g

FAMILIES = ("dgp1", "dgp2", "illustrative")
OVERLAPS = ("good", "moderate", "poor")
PREVALENCES = ("medium", "low")
SCENARIOS = ("A", "B", "C")
EFFECTS = ("homogeneous", "heterogeneous")

_DGP1_BETA = {
    "good": (-0.5, 0.3, 0.4, 0.4, 0.4),
    "moderate": (-1.0, 0.6, 0.8, 0.8, 0.8),
    "poor": (-1.5, 0.9, 1.2, 1.2, 1.2),
}
_DGP2_GAMMA = {"good": 1.0, "moderate": 2.0, "poor": 3.0}
_DGP2_INTERCEPT = {
    "medium": {"good": -0.1, "moderate": 0.0, "poor": 0.2},
    "low": {"good": -2.1, "moderate": -2.2, "poor": -2.8},
}
_DGP2_SLOPES = np.array([0.15, 0.3, 0.3, -0.2, -0.25, -0.25])
_ILLUSTRATIVE_ALPHA = {"A": (-2.8, 0.2, 0.8), "B": (-1.6, 0.45, 0.6), "C": (0.2, 0.8, 0.2)}

_ORACLE_SEED = 202_604  # fixed stream for superpopulation oracles


@dataclass(frozen=True)
class DgpSpec:
    """Fully determined simulation setting; seed is the base of all RNG streams."""

    family: str
    n: int
    seed: int
    overlap: str | None = None
    prevalence: str | None = None
    scenario: str | None = None
    effect: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParamOutOfRange(f"family must be one of {FAMILIES}")
        if self.n < 2:
            raise ParamOutOfRange("n must be at least 2")
        if self.family == "dgp1":
            if self.overlap not in OVERLAPS or self.effect not in EFFECTS:
                raise ParamOutOfRange("dgp1 needs overlap in "
                                      f"{OVERLAPS} and effect in {EFFECTS}")
        elif self.family == "dgp2":
            if (self.overlap not in OVERLAPS or self.prevalence not in PREVALENCES
                    or self.effect not in EFFECTS):
                raise ParamOutOfRange("dgp2 needs overlap, prevalence and effect")
        else:
            if self.scenario not in SCENARIOS:
                raise ParamOutOfRange(f"illustrative needs scenario in {SCENARIOS}")


def _rng(seed: int, replicate_index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(replicate_index)])


@dataclass(frozen=True)
class _Truth:
    """Covariates plus everything the oracles need: true e, m_z, Var(Y(z)|X)."""

    covariates: np.ndarray
    names: tuple[str, ...]
    e: np.ndarray
    m1: np.ndarray
    m0: np.ndarray
    var1: float
    var0: float

    @property
    def tau(self) -> np.ndarray:
        return self.m1 - self.m0


def _truth_dgp1(spec: DgpSpec, rng: np.random.Generator, n: int) -> _Truth:
    b = _DGP1_BETA[spec.overlap]
    x4 = (rng.random(n) < 0.5).astype(float)
    x3 = (rng.random(n) < 0.4 + 0.2 * x4).astype(float)
    mean1 = x4 - x3 + 0.5 * x3 * x4
    mean2 = -x4 + x3 + x3 * x4
    var = 2.0 - x3
    cov = 0.25 * (1.0 + x3)
    z1 = rng.standard_normal(n)
    z2 = rng.standard_normal(n)
    s = np.sqrt(var)
    x1 = mean1 + s * z1
    x2 = mean2 + (cov / s) * z1 + np.sqrt(var - cov ** 2 / var) * z2
    e = logistic(b[0] + b[1] * x1 + b[2] * x2 + b[3] * x3 + b[4] * x4)
    tau = np.full(n, 3.0) if spec.effect == "homogeneous" else -12.0 * e ** 2 + 12.0 * e + 3.0
    m0 = 0.5 + x1 + 0.6 * x2 + 2.2 * x3 + 1.2 * x4
    return _Truth(np.column_stack([x1, x2, x3, x4]), ("X1", "X2", "X3", "X4"),
                  e, m0 + tau, m0, 1.0, 1.0)


def _truth_dgp2(spec: DgpSpec, rng: np.random.Generator, n: int) -> _Truth:
    cov = np.full((6, 6), 0.5)
    np.fill_diagonal(cov, 1.0)
    X = rng.standard_normal((n, 6)) @ np.linalg.cholesky(cov).T
    X[:, 3:] = (X[:, 3:] < 0).astype(float)
    gamma = _DGP2_GAMMA[spec.overlap]
    b0 = _DGP2_INTERCEPT[spec.prevalence][spec.overlap]
    e = logistic(b0 + X @ (_DGP2_SLOPES * gamma))
    tau = np.full(n, 0.75) if spec.effect == "homogeneous" else (1.0 + e) ** 2
    m0 = X @ np.array([-0.5, -0.5, -1.5, 0.8, 0.8, 1.0])
    return _Truth(X, tuple(f"X{j}" for j in range(1, 7)), e, m0 + tau, m0, 1.5 ** 2, 1.5 ** 2)


def _truth_illustrative(spec: DgpSpec, rng: np.random.Generator, n: int) -> _Truth:
    a = _ILLUSTRATIVE_ALPHA[spec.scenario]
    x1 = rng.normal(2.0, 2.0, n)
    x2 = rng.normal(1.0, 1.0, n)
    e = logistic(a[0] + a[1] * x1 + a[2] * x2)
    m0 = x1 + x2
    m1 = 2.0 + x1 + x2 + 2.0 * x1 ** 2 + 0.5 * x2 ** 2
    return _Truth(np.column_stack([x1, x2]), ("X1", "X2"), e, m1, m0, 2.0 ** 2, 1.0)


_TRUTH_FN = {"dgp1": _truth_dgp1, "dgp2": _truth_dgp2, "illustrative": _truth_illustrative}


def _draw_truth(spec: DgpSpec, rng: np.random.Generator, n: int) -> _Truth:
    return _TRUTH_FN[spec.family](spec, rng, n)


def _generate(spec: DgpSpec, replicate_index: int) -> Dataset:
    rng = _rng(spec.seed, replicate_index)
    truth = _draw_truth(spec, rng, spec.n)
    z = (rng.random(spec.n) < truth.e).astype(np.int64)
    y1 = truth.m1 + np.sqrt(truth.var1) * rng.standard_normal(spec.n)
    y0 = truth.m0 + np.sqrt(truth.var0) * rng.standard_normal(spec.n)
    y = np.where(z == 1, y1, y0)
    return Dataset(treatment=z, outcome=y, covariates=truth.covariates,
                   covariate_names=truth.names)


def generate_dgp1(spec: DgpSpec, replicate_index: int) -> Dataset:
    if spec.family != "dgp1":
        raise ParamOutOfRange("spec.family must be 'dgp1'")
    return _generate(spec, replicate_index)


def generate_dgp2(spec: DgpSpec, replicate_index: int) -> Dataset:
    if spec.family != "dgp2":
        raise ParamOutOfRange("spec.family must be 'dgp2'")
    return _generate(spec, replicate_index)


def generate_illustrative(spec: DgpSpec, replicate_index: int) -> Dataset:
    if spec.family != "illustrative":
        raise ParamOutOfRange("spec.family must be 'illustrative'")
    return _generate(spec, replicate_index)


def generate(spec: DgpSpec, replicate_index: int) -> Dataset:
    return _generate(spec, replicate_index)


def _oracle_g(scheme: WeightScheme, e: np.ndarray) -> np.ndarray:
    # scaled beta keeps high-order BW weights away from underflow; the
    # estimand ratio is invariant to any constant rescaling of g
    if scheme.kind == "BW":
        return (4.0 * e * (1.0 - e)) ** (scheme.nu - 1.0)
    return selection_g(scheme, e)


def true_estimand(spec: DgpSpec, scheme: WeightScheme, superpop_n: int = 1_000_000,
                  seed: int = _ORACLE_SEED) -> float:
    """Superpopulation value of the weighted average treatment effect for g.

    Homogeneous effects short-circuit for arm-free g (it cancels for constant
    tau). TRUNC uses its arm-specific composites,
    E[g1 m1]/E[g1] - E[g0 m0]/E[g0], whose baseline parts do not cancel, so
    it is always evaluated on the superpopulation.
    """
    key = (spec.family, spec.overlap, spec.prevalence, spec.scenario, spec.effect)
    return _true_estimand_cached(key, scheme, int(superpop_n), int(seed))


@lru_cache(maxsize=256)
def _true_estimand_cached(key, scheme: WeightScheme, superpop_n: int, seed: int) -> float:
    family, overlap, prevalence, scenario, effect = key
    if family != "illustrative" and effect == "homogeneous" and scheme.kind != "TRUNC":
        return 3.0 if family == "dgp1" else 0.75
    spec = DgpSpec(family=family, n=2, seed=0, overlap=overlap,
                   prevalence=prevalence, scenario=scenario, effect=effect)
    rng = np.random.default_rng([seed, 0])
    truth = _draw_truth(spec, rng, superpop_n)
    if scheme.kind == "TRUNC":
        g1 = selection_g(scheme, truth.e, z=1)
        g0 = selection_g(scheme, truth.e, z=0)
    else:
        g1 = g0 = _oracle_g(scheme, truth.e)
    return float(np.sum(g1 * truth.m1) / np.sum(g1) - np.sum(g0 * truth.m0) / np.sum(g0))


def _avar_terms(g, e, m1, m0, v1, v0):
    """The two expectation terms of the influence-function variance, already
    normalized by E[g]^2. Regions where g = 0 contribute nothing to either."""
    eg2 = np.mean(g) ** 2
    d1 = m1 - np.sum(g * m1) / np.sum(g)
    d0 = m0 - np.sum(g * m0) / np.sum(g)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = g ** 2 * ((d1 ** 2 + v1) / e + (d0 ** 2 + v0) / (1.0 - e))
        s = np.sqrt((1.0 - e) / e) * d1 + np.sqrt(e / (1.0 - e)) * d0
        t2 = g ** 2 * s ** 2
    t1 = np.where(g == 0.0, 0.0, t1)
    t2 = np.where(g == 0.0, 0.0, t2)
    return float(np.mean(t1) / eg2), float(np.mean(t2) / eg2)


def true_asymptotic_variance(spec: DgpSpec, scheme: WeightScheme,
                             superpop_n: int = 1_000_000,
                             seed: int = _ORACLE_SEED) -> float:
    """Monte-Carlo value of the influence-function variance of the augmented
    estimator (first expectation term minus the squared-projection term)."""
    if scheme.kind == "TRUNC":
        raise UnsupportedScheme("TRUNC has no single selection function")
    rng = np.random.default_rng([seed, 1])
    truth = _draw_truth(spec, rng, int(superpop_n))
    g = _oracle_g(scheme, truth.e)
    t1, t2 = _avar_terms(g, truth.e, truth.m1, truth.m0, truth.var1, truth.var0)
    return t1 - t2


@dataclass(frozen=True)
class MonteCarloSummary:
    """Per-scheme metrics over replicates; rates are x100 except cp."""

    scheme: str
    true_value: float
    arb: float
    rmse: float
    sd: float
    se_avg: float
    cp: float
    n_reps: int
    n_failed: int


_PS_COLUMNS = {
    "dgp1": ("X1", "X2", "X3", "X4"),
    "dgp2": ("X1", "X2", "X3", "X4", "X5", "X6"),
    "illustrative": ("X1", "X2"),
}

MISSPECS = ("none", "ps", "outcome", "both")


def analysis_designs(spec: DgpSpec, misspec: str) -> tuple[DesignSpec, DesignSpec]:
    """Correct PS/outcome designs for the family; misspecification drops X1."""
    cols = _PS_COLUMNS[spec.family]
    ps_cols = tuple(c for c in cols if not (misspec in ("ps", "both") and c == "X1"))
    out_cols = tuple(c for c in cols if not (misspec in ("outcome", "both") and c == "X1"))
    return DesignSpec(ps_cols), DesignSpec(out_cols)


_REPLICATE_FAILURES = (NonConvergence, InfiniteWeight, EmptyEffectiveArm,
                       SingularDesign, SingularBread, ArmTooSmall)


def _mc_replicate(spec: DgpSpec, rep: int, schemes: tuple[WeightScheme, ...],
                  estimator_mode: str, misspec: str):
    """One replicate: returns {scheme label: (estimate, se) or None}."""
    out = {}
    ds = _generate(spec, rep)
    ps_spec, out_spec = analysis_designs(spec, misspec)
    try:
        fp = fit_propensity(ds, ps_spec)
    except _REPLICATE_FAILURES:
        return {s.label: None for s in schemes}
    V = build_design(ds, ps_spec)
    of = W = None
    if estimator_mode in ("augmented", "dr"):
        try:
            of = fit_outcome_models(ds, out_spec)
            W = build_design(ds, out_spec)
        except _REPLICATE_FAILURES:
            return {s.label: None for s in schemes}
    for scheme in schemes:
        try:
            ws = compute_weightset(ds, fp, scheme)
            if estimator_mode == "hajek":
                est = hajek_estimate(ws, ds)
                se = sandwich_hajek(ds, fp, scheme, ws, V).se
            elif estimator_mode == "augmented":
                est = augmented_estimate(AugmentedInputs(ws, of, scheme), ds)
                se = sandwich_augmented(ds, fp, of, scheme, ws, V, W).se
            else:  # dr
                est = dr_estimate(AugmentedInputs(ws, of, scheme), ds)
                # for g = 1 the DR and augmented estimators coincide, so the
                # augmented sandwich applies to IPW; none is derived for ATT/ATC
                if scheme.kind == "IPW":
                    se = sandwich_augmented(ds, fp, of, scheme, ws, V, W).se
                else:
                    se = np.nan
            out[scheme.label] = (est, se)
        except _REPLICATE_FAILURES:
            out[scheme.label] = None
    return out


def run_monte_carlo(spec: DgpSpec, schemes, estimator_mode: str = "hajek",
                    misspec: str = "none", n_reps: int = 1000, base_seed: int = 0,
                    threads: int = 1, superpop_n: int = 1_000_000):
    """Run the replicate loop and aggregate ARB/RMSE/SD/SE/CP per scheme.

    Failed replicates (non-convergence, infinite weights, singularities) are
    excluded per scheme and counted in n_failed.
    """
    if estimator_mode not in ("hajek", "augmented", "dr"):
        raise ParamOutOfRange("estimator_mode must be hajek, augmented or dr")
    if misspec not in MISSPECS:
        raise ParamOutOfRange(f"misspec must be one of {MISSPECS}")
    if estimator_mode == "hajek" and misspec in ("outcome", "both"):
        raise ParamOutOfRange("the Hajek estimator fits no outcome model; "
                              "only misspec in ('none', 'ps') applies")
    if n_reps < 2:
        raise ParamOutOfRange("n_reps must be at least 2")
    schemes = tuple(schemes)
    for s in schemes:
        if estimator_mode == "dr" and s.affine_ab is None:
            raise ParamOutOfRange(f"dr mode requires affine schemes; got {s.label}")
        if estimator_mode in ("hajek", "augmented") and s.kind in ("TRIM", "TRUNC"):
            raise UnsupportedScheme(
                f"{s.label} has no sandwich variance; the Monte-Carlo harness "
                "covers smooth schemes only")
    run_spec = dataclasses.replace(spec, seed=base_seed)

    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_mc_replicate, [run_spec] * n_reps, range(n_reps),
                                    [schemes] * n_reps, [estimator_mode] * n_reps,
                                    [misspec] * n_reps, chunksize=max(1, n_reps // (4 * threads))))
    else:
        results = [_mc_replicate(run_spec, r, schemes, estimator_mode, misspec)
                   for r in range(n_reps)]

    summaries = []
    for scheme in schemes:
        rows = [results[r][scheme.label] for r in range(n_reps)]
        good = [v for v in rows if v is not None]
        if not good:
            raise AllReplicatesFailed(f"every replicate failed for {scheme.label}")
        est = np.array([v[0] for v in good])
        se = np.array([v[1] for v in good])
        true = true_estimand(spec, scheme, superpop_n=superpop_n)
        bias = est.mean() - true
        sd = est.std(ddof=0)
        se_ok = np.isfinite(se)
        if se_ok.any():
            se_avg = float(se[se_ok].mean())
            cp = float(np.mean(np.abs(est[se_ok] - true) <= 1.96 * se[se_ok]))
        else:
            se_avg = float("nan")
            cp = float("nan")
        summaries.append(MonteCarloSummary(
            scheme=scheme.label,
            true_value=true,
            arb=100.0 * abs(bias) / abs(true),
            rmse=100.0 * float(np.sqrt(np.mean((est - true) ** 2))),
            sd=100.0 * float(sd),
            se_avg=100.0 * se_avg if np.isfinite(se_avg) else se_avg,
            cp=cp,
            n_reps=n_reps,
            n_failed=n_reps - len(good),
        ))
    return summaries
