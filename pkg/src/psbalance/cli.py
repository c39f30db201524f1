"""Command-line surface: estimate and diagnose on CSV data, or run the
simulation studies. Outputs are CSV (17-digit round-trip reals) plus a JSON
run manifest; console numbers use 6 significant digits.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 data error.
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys
from dataclasses import dataclass

import click
import numpy as np
import pandas as pd

from . import __version__
from .data import Dataset, WeightScheme, parse_scheme, read_csv
from .diagnostics import effective_sample_size, overlap_summary, variance_inflation, weighted_smd
from .errors import ConfigError, DataError, NumericalError, UnsupportedScheme
from .estimators import AugmentedInputs, augmented_estimate, dr_estimate, hajek_estimate
from .glm import DesignSpec, build_design, fit_outcome_models, fit_propensity
from .simulation import DgpSpec, run_monte_carlo, true_estimand
from .variance import bootstrap_variance, sandwich_augmented, sandwich_hajek
from .weights import compute_weightset

SCHEMA_VERSION = 1


def _default_threads() -> int:
    return int(os.environ.get("PSBALANCE_THREADS", "1"))


def _fmt6(x: float) -> str:
    return f"{x:.6g}"


def _write_frame(df: pd.DataFrame, path: str) -> None:
    df.to_csv(path, index=False, float_format="%.17g", encoding="utf-8")


def _write_manifest(path: str, payload: dict) -> None:
    payload = {"schema_version": SCHEMA_VERSION, "package": "psbalance",
               "version": __version__, **payload}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass(frozen=True)
class EstimateReport:
    """One result row per scheme: estimate, uncertainty, and weight diagnostics."""

    scheme: str
    estimand_label: str
    point: float
    se: float
    variance_method: str
    ci_lo: float
    ci_hi: float
    ess_treated: float
    ess_control: float
    variance_inflation: float
    n_used: int


@dataclass(frozen=True)
class AnalysisConfig:
    input_path: str
    treat_col: str
    outcome_col: str
    ps_terms: tuple[str, ...]
    outcome_terms: tuple[str, ...]
    schemes: tuple[WeightScheme, ...]
    estimator_mode: str = "auto"
    variance: str = "sandwich"
    boot_reps: int = 1000
    seed: int = 0
    threads: int = 1


def _design_from_terms(terms: tuple[str, ...], ds) -> DesignSpec:
    # empty -> every covariate column; the literal term "1" -> intercept only
    if not terms:
        return DesignSpec(ds.covariate_names)
    if terms == ("1",):
        return DesignSpec(())
    return DesignSpec(terms)


def _resolve_mode(mode: str, scheme: WeightScheme) -> str:
    if mode != "auto":
        return mode
    if scheme.affine_ab is not None:
        return "dr"
    if scheme.is_equipoise:
        return "augmented"
    return "hajek"


def _point_estimate(mode: str, ds, ws, of, scheme) -> float:
    if mode == "hajek":
        return hajek_estimate(ws, ds)
    if mode == "augmented":
        return augmented_estimate(AugmentedInputs(ws, of, scheme), ds)
    return dr_estimate(AugmentedInputs(ws, of, scheme), ds)


def run_estimate(config: AnalysisConfig) -> list[EstimateReport]:
    """Full estimation pipeline for every configured scheme."""
    ds = read_csv(config.input_path, config.treat_col, config.outcome_col)
    if not config.schemes:
        raise ConfigError("at least one scheme is required")
    ps_spec = _design_from_terms(config.ps_terms, ds)
    out_spec = _design_from_terms(config.outcome_terms, ds)

    # reject unsupported combinations before any heavy work
    for scheme in config.schemes:
        mode = _resolve_mode(config.estimator_mode, scheme)
        if config.variance == "sandwich":
            if scheme.kind in ("TRIM", "TRUNC"):
                raise UnsupportedScheme(
                    f"{scheme.label} has no smooth weight gradient, so no sandwich "
                    "variance exists; rerun with --variance bootstrap")
            if mode == "dr" and scheme.kind != "IPW":
                raise UnsupportedScheme(
                    f"no sandwich variance is derived for the DR estimator with "
                    f"{scheme.label}; rerun with --variance bootstrap")
        if mode == "dr" and scheme.affine_ab is None:
            raise ConfigError(f"{scheme.label} is not affine; dr mode does not apply")
        if mode == "augmented" and scheme.kind in ("TRIM", "TRUNC"):
            raise UnsupportedScheme(
                f"augmentation is not defined for {scheme.label}; use --estimator hajek")

    fp = fit_propensity(ds, ps_spec)
    V = build_design(ds, ps_spec)
    needs_outcome = any(_resolve_mode(config.estimator_mode, s) != "hajek"
                        for s in config.schemes)
    of = fit_outcome_models(ds, out_spec) if needs_outcome else None
    W = build_design(ds, out_spec) if needs_outcome else None

    reports = []
    for scheme in config.schemes:
        mode = _resolve_mode(config.estimator_mode, scheme)
        ws = compute_weightset(ds, fp, scheme)
        point = _point_estimate(mode, ds, ws, of, scheme)
        if config.variance == "sandwich":
            if mode == "hajek":
                se = sandwich_hajek(ds, fp, scheme, ws, V).se
            else:
                se = sandwich_augmented(ds, fp, of, scheme, ws, V, W).se
        elif config.variance == "bootstrap":
            def closure(boot: Dataset, _scheme=scheme, _mode=mode) -> float:
                bfp = fit_propensity(boot, ps_spec)
                bws = compute_weightset(boot, bfp, _scheme)
                bof = fit_outcome_models(boot, out_spec) if _mode != "hajek" else None
                return _point_estimate(_mode, boot, bws, bof, _scheme)

            boot = bootstrap_variance(ds, closure, B=config.boot_reps,
                                      seed=config.seed, threads=config.threads)
            se = boot.se
            if boot.n_failed:
                click.echo(f"warning: {boot.n_failed}/{config.boot_reps} bootstrap "
                           f"resamples failed for {scheme.label}", err=True)
        else:
            se = float("nan")
        ess1 = effective_sample_size(ws, ds, 1)
        ess0 = effective_sample_size(ws, ds, 0)
        if ess1 < 0.05 * ds.n_treated or ess0 < 0.05 * ds.n_control:
            click.echo(f"warning: extreme weights under {scheme.label} "
                       f"(ESS {ess1:.1f}/{ds.n_treated} treated, "
                       f"{ess0:.1f}/{ds.n_control} control)", err=True)
        t = ds.treatment == 1
        n_used = int(np.sum(ws.norm_w1[t] > 0) + np.sum(ws.norm_w0[~t] > 0))
        reports.append(EstimateReport(
            scheme=scheme.label,
            estimand_label=scheme.estimand_label,
            point=point,
            se=se,
            variance_method=config.variance,
            ci_lo=point - 1.96 * se if config.variance != "none" else float("nan"),
            ci_hi=point + 1.96 * se if config.variance != "none" else float("nan"),
            ess_treated=ess1,
            ess_control=ess0,
            variance_inflation=variance_inflation(ws, ds),
            n_used=n_used,
        ))
    return reports


def _reports_frame(reports: list[EstimateReport]) -> pd.DataFrame:
    return pd.DataFrame([dataclasses.asdict(r) for r in reports])


@click.group()
def main() -> None:
    """Balancing-weight causal estimation under limited overlap."""


def _common_data_options(fn):
    fn = click.option("--input", "input_path", required=True,
                      type=click.Path(exists=False), help="input CSV path")(fn)
    fn = click.option("--treat", "treat_col", default="Z", show_default=True)(fn)
    fn = click.option("--outcome", "outcome_col", default="Y", show_default=True)(fn)
    fn = click.option("--ps-design", default="", help="comma-separated PS design terms; "
                      "'1' means intercept only (default: all covariate columns)")(fn)
    return fn


def _parse_terms(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _run(fn) -> None:
    try:
        fn()
    except ConfigError as err:
        click.echo(f"error kind={type(err).__name__}: {err}", err=True)
        sys.exit(2)
    except NumericalError as err:
        click.echo(f"error kind={type(err).__name__}: {err}", err=True)
        sys.exit(3)
    except (DataError, FileNotFoundError) as err:
        click.echo(f"error kind={type(err).__name__}: {err}", err=True)
        sys.exit(4)


@main.command()
@_common_data_options
@click.option("--outcome-design", default="", help="comma-separated outcome design terms")
@click.option("--scheme", "-s", "scheme_texts", multiple=True, required=True,
              help="scheme, e.g. IPW, OW, TRIM(0.1), BW(11); repeatable")
@click.option("--estimator", type=click.Choice(["auto", "hajek", "augmented", "dr"]),
              default="auto", show_default=True)
@click.option("--variance", type=click.Choice(["sandwich", "bootstrap", "none"]),
              default="sandwich", show_default=True)
@click.option("--boot-reps", default=1000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--threads", default=None, type=int,
              help="parallel bootstrap workers [default: $PSBALANCE_THREADS or 1]")
@click.option("--output", default=None, help="write the report table to this CSV")
@click.option("--report", "report_path", default=None,
              help="write a structured JSON report (estimates + diagnostics)")
def estimate(input_path, treat_col, outcome_col, ps_design, outcome_design,
             scheme_texts, estimator, variance, boot_reps, seed, threads,
             output, report_path):
    """Fit the propensity model and estimate the WATE for each scheme."""

    def body():
        config = AnalysisConfig(
            input_path=input_path,
            treat_col=treat_col,
            outcome_col=outcome_col,
            ps_terms=_parse_terms(ps_design),
            outcome_terms=_parse_terms(outcome_design),
            schemes=tuple(parse_scheme(t) for t in scheme_texts),
            estimator_mode=estimator,
            variance=variance,
            boot_reps=boot_reps,
            seed=seed,
            threads=threads if threads is not None else _default_threads(),
        )
        reports = run_estimate(config)
        for r in reports:
            click.echo(f"{r.scheme}\t{r.estimand_label}\tpoint={_fmt6(r.point)}"
                       f"\tse={_fmt6(r.se)}\tci95=[{_fmt6(r.ci_lo)}, {_fmt6(r.ci_hi)}]"
                       f"\tESS=({_fmt6(r.ess_treated)}, {_fmt6(r.ess_control)})"
                       f"\tVI={_fmt6(r.variance_inflation)}")
        if output:
            _write_frame(_reports_frame(reports), output)
        if report_path:
            _write_manifest(report_path, {
                "command": "estimate",
                "config": {**dataclasses.asdict(config),
                           "schemes": [s.label for s in config.schemes]},
                "reports": [dataclasses.asdict(r) for r in reports],
            })

    _run(body)


@main.command()
@_common_data_options
@click.option("--scheme", "-s", "scheme_text", default="OW", show_default=True)
@click.option("--output", required=True, help="balance table CSV path")
@click.option("--summary-output", default=None,
              help="overlap summary CSV path [default: <output>.overlap.csv]")
def balance(input_path, treat_col, outcome_col, ps_design, scheme_text,
            output, summary_output):
    """Covariate balance and propensity-overlap diagnostics for one scheme."""

    def body():
        ds = read_csv(input_path, treat_col, outcome_col)
        scheme = parse_scheme(scheme_text)
        ps_spec = _design_from_terms(_parse_terms(ps_design), ds)
        fp = fit_propensity(ds, ps_spec)
        ws = compute_weightset(ds, fp, scheme)
        table = weighted_smd(ds, ws)
        _write_frame(table.to_frame(), output)
        summ = overlap_summary(fp, ds)
        rows = []
        for arm, s in (("treated", summ.summary_treated), ("control", summ.summary_control)):
            rows.append({"arm": arm, **s})
        df = pd.DataFrame(rows)
        df["prevalence"] = summ.prevalence
        df["variance_ratio"] = summ.variance_ratio
        df["equipoise_lean"] = summ.equipoise_lean
        df["note"] = summ.note
        _write_frame(df, summary_output or output + ".overlap.csv")
        click.echo(f"{scheme.label}: prevalence={_fmt6(summ.prevalence)} "
                   f"variance_ratio={_fmt6(summ.variance_ratio)} lean={summ.equipoise_lean}")

    _run(body)


@main.command()
@click.option("--dgp", type=click.Choice(["dgp1", "dgp2", "illustrative"]), required=True)
@click.option("--overlap", type=click.Choice(["good", "moderate", "poor"]), default=None)
@click.option("--prevalence", type=click.Choice(["medium", "low"]), default=None)
@click.option("--scenario", type=click.Choice(["A", "B", "C"]), default=None)
@click.option("--effect", type=click.Choice(["homo", "hetero"]), default=None)
@click.option("--n", default=2000, show_default=True)
@click.option("--reps", default=1000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--schemes", default="IPW,OW,MW,EW,BW(11),BW(81)", show_default=True)
@click.option("--estimator", type=click.Choice(["hajek", "augmented", "dr"]),
              default="hajek", show_default=True)
@click.option("--misspec", type=click.Choice(["none", "ps", "outcome", "both"]),
              default="none", show_default=True)
@click.option("--superpop-n", default=1_000_000, show_default=True,
              help="superpopulation size for the true-estimand oracle")
@click.option("--threads", default=None, type=int,
              help="parallel replicate workers; affects wall-clock only")
@click.option("--truth-only", is_flag=True, help="only compute true estimands")
@click.option("--output", required=True, help="results CSV path")
@click.option("--manifest", "manifest_path", default=None,
              help="run manifest JSON path [default: <output>.manifest.json]")
def simulate(dgp, overlap, prevalence, scenario, effect, n, reps, seed, schemes,
             estimator, misspec, superpop_n, threads, truth_only, output, manifest_path):
    """Run a Monte-Carlo study (or just its true-estimand table) and write CSV."""

    def body():
        effect_full = {"homo": "homogeneous", "hetero": "heterogeneous", None: None}[effect]
        spec = DgpSpec(family=dgp, n=n, seed=seed, overlap=overlap,
                       prevalence=prevalence, scenario=scenario, effect=effect_full)
        scheme_objs = tuple(parse_scheme(t) for t in _parse_terms(schemes))
        if truth_only:
            rows = [{"scheme": s.label,
                     "true_value": true_estimand(spec, s, superpop_n=superpop_n)}
                    for s in scheme_objs]
            df = pd.DataFrame(rows)
        else:
            summaries = run_monte_carlo(
                spec, scheme_objs, estimator_mode=estimator, misspec=misspec,
                n_reps=reps, base_seed=seed,
                threads=threads if threads is not None else _default_threads(),
                superpop_n=superpop_n)
            df = pd.DataFrame([dataclasses.asdict(s) for s in summaries])
        _write_frame(df, output)
        for row in df.itertuples(index=False):
            click.echo("\t".join(f"{k}={_fmt6(v) if isinstance(v, float) else v}"
                                 for k, v in row._asdict().items()))
        _write_manifest(manifest_path or output + ".manifest.json", {
            "command": "simulate",
            "spec": dataclasses.asdict(spec),
            "schemes": [s.label for s in scheme_objs],
            "estimator": estimator,
            "misspec": misspec,
            "n_reps": reps,
            "base_seed": seed,
            "superpop_n": superpop_n,
            "truth_only": truth_only,
        })

    _run(body)


if __name__ == "__main__":
    main()
