"""Plain-text and delimited report rendering.

Percentages print with 2 decimals, coefficients and p-values with 3;
undefined rates print as "undefined" rather than a number.  All output
is data tables; plotting is left to downstream tools.
"""

from __future__ import annotations

import csv

from .audit import AimReport
from .classifier import EvalReport


def fmt_pct(value) -> str:
    return "undefined" if value is None else f"{value:.2f}"


def fmt_coef(value: float) -> str:
    return f"{value:.3f}"


def write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def render_metrics_table(train: EvalReport, test: EvalReport) -> str:
    """Classification metrics, one block per data split."""
    lines = [
        f"{'Data':<10}{'Category':<14}{'Precision':>10}{'Recall':>10}{'F1-Score':>10}{'Support':>9}"
    ]
    for split_name, report in (("Training", train), ("Testing", test)):
        lines.append(
            f"{split_name:<10}{'Alcohol':<14}"
            f"{report.precision_alcohol:>10.2f}{report.recall_alcohol:>10.2f}"
            f"{report.f1_alcohol:>10.2f}{report.support_alcohol:>9d}"
        )
        lines.append(
            f"{'':<10}{'No Alcohol':<14}"
            f"{report.precision_non_alcohol:>10.2f}{report.recall_non_alcohol:>10.2f}"
            f"{report.f1_non_alcohol:>10.2f}{report.support_non_alcohol:>9d}"
        )
        lines.append(f"{'':<10}{'Accuracy':<14}{'':>10}{'':>10}{report.accuracy:>10.2f}{'':>9}")
    return "\n".join(lines) + "\n"


def render_aim_summary(report: AimReport) -> str:
    lines = ["Mismatch audit summary", "======================"]
    overall = report.overall
    lines.append(
        f"Overall: {overall.aim} mismatch / {overall.nonaim} non-mismatch "
        f"({fmt_pct(overall.aim_pct)}% mismatch rate); "
        f"{report.n_not_applicable} crashes predicted non-alcoholic (excluded)"
    )
    lines.append("")
    lines.append("By year:")
    for year in sorted(report.by_year):
        counts = report.by_year[year]
        lines.append(
            f"  {year}: {counts.aim:>6d} / {counts.nonaim:>6d}  rate {fmt_pct(counts.aim_pct)}%"
        )
    lines.append("")
    lines.append("By severity:")
    from .records import Severity

    for severity in Severity:
        counts = report.by_severity.get(severity)
        if counts is None:
            continue
        lines.append(
            f"  {severity.value}: {counts.aim:>6d} / {counts.nonaim:>6d}  "
            f"rate {fmt_pct(counts.aim_pct)}%"
        )
    return "\n".join(lines) + "\n"


def year_series_rows(report: AimReport) -> list:
    return [
        (year, report.by_year[year].aim, report.by_year[year].nonaim,
         fmt_pct(report.by_year[year].aim_pct))
        for year in sorted(report.by_year)
    ]


def severity_series_rows(report: AimReport) -> list:
    from .records import Severity

    rows = []
    for severity in Severity:
        counts = report.by_severity.get(severity)
        if counts is not None:
            rows.append((severity.value, counts.aim, counts.nonaim, fmt_pct(counts.aim_pct)))
    return rows


def county_rows(report: AimReport) -> list:
    rows = []
    for county in sorted(report.by_county):
        counts = report.by_county[county]
        rows.append((county, counts.aim, counts.nonaim, fmt_pct(counts.aim_pct)))
    return rows


def render_lisa_table(results) -> str:
    """County rows: cluster label, pseudo p, local Moran statistic."""
    lines = [f"{'CountyName':<16}{'LISA cluster':<17}{'P values':>9}{'Local Morans I':>16}"]
    for unit, cluster, pseudo_p, local_i in results:
        label = getattr(cluster, "value", cluster)
        lines.append(f"{unit:<16}{label:<17}{pseudo_p:>9.2f}{local_i:>16.2f}")
    return "\n".join(lines) + "\n"


def lisa_csv_rows(results) -> list:
    return [
        (unit, getattr(cluster, "value", cluster), f"{pseudo_p:.2f}", f"{local_i:.2f}")
        for unit, cluster, pseudo_p, local_i in results
    ]


def render_glmm_report(fit, columns) -> str:
    """Random-effects block followed by the fixed-effects table."""
    lines = ["Random effects:"]
    lines.append(f"{'Groups':<10}{'Name':<12}{'Variance':>10}{'Std. Dev':>10}")
    lines.append(
        f"{'County':<10}{'Intercept':<12}{fmt_coef(fit.sigma2_):>10}{fmt_coef(fit.sigma_):>10}"
    )
    if getattr(fit, "boundary_", False):
        lines.append("  (variance at boundary: estimated as exactly 0)")
    lines.append("")
    lines.append("Fixed effects:")
    lines.append(f"{'Variable Name':<34}{'Estimate':>10}{'Std.Error':>11}{'Z Value':>10}{'Pr(>z)':>9}")
    for effect in fit.fixed_effects(columns):
        lines.append(
            f"{effect.name:<34}{fmt_coef(effect.estimate):>10}"
            f"{fmt_coef(effect.std_error):>11}{fmt_coef(effect.z_value):>10}"
            f"{fmt_coef(effect.p_value):>9}"
        )
    lines.append("")
    lines.append(
        f"loglik {fit.loglik_:.3f}  AIC {fit.aic_:.3f}  BIC {fit.bic_:.3f}  "
        f"n {fit.n_obs_}  quadrature {fit.n_quadrature}  converged {fit.converged_}"
    )
    return "\n".join(lines) + "\n"


def render_anomalies(rows, missing=()) -> str:
    lines = ["County anomalies (BLUP vs LISA cluster):"]
    if not rows:
        lines.append("  none")
    for county, blup, cluster in rows:
        lines.append(f"  {county:<16}{fmt_coef(blup):>8}  {cluster}")
    for county in missing:
        lines.append(f"  {county:<16}{'n/a':>8}  (no regression sample rows)")
    return "\n".join(lines) + "\n"
