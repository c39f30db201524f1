"""Core domain types: datasets of (Z, X, Y) triples and weighting-scheme descriptors.

All types are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import (
    DegenerateTreatment,
    ExtraneousParam,
    MissingColumn,
    MissingParam,
    NonBinaryTreatment,
    NonFiniteValue,
    ParamOutOfRange,
)

SCHEME_KINDS = ("IPW", "ATT", "ATC", "TRIM", "TRUNC", "OW", "MW", "EW", "BW")

#: Schemes whose selection function is affine in the propensity score,
#: g(x) = a + b e(x); the map gives (a, b).
AFFINE_AB = {"IPW": (1.0, 0.0), "ATT": (0.0, 1.0), "ATC": (1.0, -1.0)}

#: Symmetric, boundary-vanishing selection functions (clinical equipoise).
EQUIPOISE_KINDS = ("OW", "MW", "EW", "BW")

_ESTIMAND_LABEL = {
    "IPW": "ATE",
    "ATT": "ATT",
    "ATC": "ATC",
    "TRIM": "OSATE",
    "TRUNC": "truncated-population WATE",
    "OW": "equipoise",
    "MW": "equipoise",
    "EW": "equipoise",
    "BW": "equipoise",
}


@dataclass(frozen=True)
class WeightScheme:
    """A selection function g together with its parameters.

    alpha applies to TRIM/TRUNC, nu to BW, delta to the MW cubic smoothing.
    """

    kind: str
    alpha: float | None = None
    nu: float | None = None
    delta: float | None = None

    @property
    def label(self) -> str:
        if self.kind in ("TRIM", "TRUNC"):
            return f"{self.kind}({self.alpha:g})"
        if self.kind == "BW":
            return f"BW({self.nu:g})"
        return self.kind

    @property
    def estimand_label(self) -> str:
        return _ESTIMAND_LABEL[self.kind]

    @property
    def affine_ab(self) -> tuple[float, float] | None:
        return AFFINE_AB.get(self.kind)

    @property
    def is_equipoise(self) -> bool:
        return self.kind in EQUIPOISE_KINDS


def validate_scheme(kind: str, alpha: float | None = None, nu: float | None = None,
                    delta: float | None = None) -> WeightScheme:
    """Validate parameters for the given scheme kind and return a WeightScheme.

    Raises MissingParam / ExtraneousParam / ParamOutOfRange on violations.
    """
    if kind not in SCHEME_KINDS:
        raise ParamOutOfRange(f"unknown scheme kind {kind!r}; expected one of {SCHEME_KINDS}")

    if kind in ("TRIM", "TRUNC"):
        if alpha is None:
            raise MissingParam(f"{kind} requires alpha in (0, 0.5)")
        if not (0.0 < alpha < 0.5):
            raise ParamOutOfRange(f"{kind} alpha must lie in (0, 0.5), got {alpha}")
    elif alpha is not None:
        raise ExtraneousParam(f"alpha is only valid for TRIM/TRUNC, not {kind}")

    if kind == "BW":
        if nu is None:
            raise MissingParam("BW requires nu >= 2")
        if not nu >= 2.0:
            raise ParamOutOfRange(f"BW nu must satisfy nu >= 2, got {nu}")
    elif nu is not None:
        raise ExtraneousParam(f"nu is only valid for BW, not {kind}")

    if kind == "MW":
        if delta is None:
            delta = 0.002
        if not (0.0 < delta < 0.5):
            raise ParamOutOfRange(f"MW delta must lie in (0, 0.5), got {delta}")
    elif delta is not None:
        raise ExtraneousParam(f"delta is only valid for MW, not {kind}")

    return WeightScheme(kind=kind, alpha=alpha, nu=nu, delta=delta)


_SCHEME_RE = re.compile(r"^([A-Za-z]+)(?:\(([^)]*)\))?$")


def parse_scheme(text: str) -> WeightScheme:
    """Parse a textual scheme spec such as 'OW', 'TRIM(0.1)', 'BW(11)' or 'MW(0.002)'."""
    m = _SCHEME_RE.match(text.strip())
    if not m:
        raise ParamOutOfRange(f"cannot parse scheme {text!r}")
    kind = m.group(1).upper()
    arg = m.group(2)
    value = None
    if arg is not None and arg.strip() != "":
        try:
            value = float(arg)
        except ValueError as exc:
            raise ParamOutOfRange(f"cannot parse scheme parameter in {text!r}") from exc
    if kind in ("TRIM", "TRUNC"):
        return validate_scheme(kind, alpha=value)
    if kind == "BW":
        return validate_scheme(kind, nu=value)
    if kind == "MW":
        return validate_scheme(kind, delta=value)
    if value is not None:
        raise ExtraneousParam(f"{kind} takes no parameter, got {text!r}")
    return validate_scheme(kind)


@dataclass(frozen=True)
class Dataset:
    """Observed triples (Z, X, Y) with named covariate columns."""

    treatment: np.ndarray
    outcome: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...]
    treat_col: str = "Z"
    outcome_col: str = "Y"

    def __post_init__(self):
        z = np.array(self.treatment)
        y = np.array(self.outcome, dtype=float)
        x = np.array(self.covariates, dtype=float)
        if x.ndim != 2:
            raise NonFiniteValue("covariates must form a 2-d matrix")
        n = z.shape[0]
        if y.shape[0] != n or x.shape[0] != n:
            raise NonFiniteValue("treatment, outcome and covariate rows must have equal length")
        if len(self.covariate_names) != x.shape[1]:
            raise MissingColumn("covariate_names must match the covariate matrix width")
        if not np.all(np.isfinite(z.astype(float))):
            raise NonFiniteValue("treatment contains non-finite values")
        zvals = np.unique(z)
        if not np.all(np.isin(zvals, (0, 1))):
            raise NonBinaryTreatment(f"treatment must be coded 0/1, saw values {zvals}")
        if zvals.size < 2:
            raise DegenerateTreatment("treatment must contain both 0 and 1")
        if not np.all(np.isfinite(y)):
            raise NonFiniteValue("outcome contains non-finite values")
        if not np.all(np.isfinite(x)):
            raise NonFiniteValue("covariates contain non-finite values")
        z = z.astype(np.int64)
        for name, arr in (("treatment", z), ("outcome", y), ("covariates", x)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))

    @property
    def n_units(self) -> int:
        return self.treatment.shape[0]

    @property
    def n_treated(self) -> int:
        return int(self.treatment.sum())

    @property
    def n_control(self) -> int:
        return self.n_units - self.n_treated

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.covariate_names.index(name)
        except ValueError:
            raise MissingColumn(f"no covariate column named {name!r}") from None
        return self.covariates[:, j]

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.covariates.copy(), columns=list(self.covariate_names))
        df.insert(0, self.treat_col, self.treatment)
        df[self.outcome_col] = self.outcome
        return df


def validate_dataset(raw_table: pd.DataFrame, treat_col: str, outcome_col: str) -> Dataset:
    """Validate a named table of reals and split it into (Z, X, Y).

    Covariates are all columns other than the treatment and outcome columns,
    in their original order.
    """
    for col in (treat_col, outcome_col):
        if col not in raw_table.columns:
            raise MissingColumn(f"column {col!r} not found in table")
    try:
        numeric = raw_table.astype(float)
    except (TypeError, ValueError) as exc:
        raise NonFiniteValue(f"table contains cells not parseable as reals: {exc}") from exc
    if numeric.isna().to_numpy().any():
        bad = [c for c in numeric.columns if numeric[c].isna().any()]
        raise NonFiniteValue(f"missing values in columns {bad}; impute before analysis")

    z_raw = numeric[treat_col].to_numpy()
    if not np.all(np.isin(z_raw, (0.0, 1.0))):
        raise NonBinaryTreatment(
            f"treatment column {treat_col!r} must contain only 0 and 1, saw {np.unique(z_raw)}")
    cov_cols = [c for c in raw_table.columns if c not in (treat_col, outcome_col)]
    return Dataset(
        treatment=z_raw.astype(np.int64),
        outcome=numeric[outcome_col].to_numpy(),
        covariates=numeric[cov_cols].to_numpy(),
        covariate_names=tuple(cov_cols),
        treat_col=treat_col,
        outcome_col=outcome_col,
    )


def read_csv(path, treat_col: str, outcome_col: str) -> Dataset:
    """Read a UTF-8 CSV with a header row and build a validated Dataset."""
    df = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    return validate_dataset(df, treat_col, outcome_col)


def write_csv(ds: Dataset, path) -> None:
    """Write a Dataset to CSV with 17-significant-digit reals (bit-exact round trip)."""
    ds.to_frame().to_csv(path, index=False, float_format="%.17g", encoding="utf-8")
