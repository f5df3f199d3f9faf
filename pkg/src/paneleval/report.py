"""Plain-text regression tables and CSV/JSON writers for results."""

from __future__ import annotations

import csv
import json
import math
from typing import Mapping, Sequence

import numpy as np

from .regression import RegressionResult, SkippedGroup


def stars(p) -> str:
    if not np.isfinite(p):
        return ""
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.1 else ""


def _num(v, digits=4):
    return "" if v is None or not np.isfinite(v) else f"{v:,.{digits}f}"


def format_table(columns: Mapping[str, RegressionResult], depvars: Mapping[str, str] | None = None,
                 variables: Sequence[str] | None = None, labels: Mapping[str, str] | None = None,
                 title: str | None = None, width=14) -> str:
    """Stacked coefficient / (t-stat) table with stars at 10/5/1%.

    ``columns`` maps a column header to a result (or a skipped group).
    """
    labels = dict(labels or {})
    heads = list(columns)
    if variables is None:
        variables = []
        for r in columns.values():
            if isinstance(r, RegressionResult):
                variables.extend(v for v in r.names if v not in variables)
    first = max([12] + [len(labels.get(v, v)) + 1 for v in variables])
    lines = []
    if title:
        lines.append(title)
    rule = "-" * (first + width * len(heads))
    lines.append(rule)
    lines.append(f"{'':<{first}}" + "".join(f"{h:>{width}}" for h in heads))
    if depvars:
        lines.append(f"{'VARIABLES':<{first}}" + "".join(f"{depvars.get(h, ''):>{width}}" for h in heads))
    lines.append(rule)
    for v in list(variables) + ["_cons"]:
        coef_cells, t_cells = [], []
        for h in heads:
            r = columns[h]
            if not isinstance(r, RegressionResult):
                coef_cells.append(""); t_cells.append("")
                continue
            if v == "_cons":
                if not r.fixed_effects and not np.isfinite(r.constant):
                    coef_cells.append(""); t_cells.append("")
                    continue
                c, t = r.constant, r.constant_t
                p = 2 * _tsf(abs(t), r) if np.isfinite(t) else float("nan")
            elif v in r.names:
                c, t, p = r[v], r.t(v), r.p(v)
            else:
                coef_cells.append(""); t_cells.append("")
                continue
            coef_cells.append(_num(c) + stars(p))
            t_cells.append(f"({_num(t)})")
        name = "Constant" if v == "_cons" else labels.get(v, v)
        lines.append(f"{name:<{first}}" + "".join(f"{c:>{width}}" for c in coef_cells))
        lines.append(f"{'':<{first}}" + "".join(f"{c:>{width}}" for c in t_cells))
    lines.append(rule)

    def stat(label, fn):
        cells = []
        for h in heads:
            r = columns[h]
            cells.append(fn(r) if isinstance(r, RegressionResult) else "skipped")
        lines.append(f"{label:<{first}}" + "".join(f"{c:>{width}}" for c in cells))

    stat("Observations", lambda r: f"{r.n_obs:,}")
    stat("R-squared", lambda r: _num(r.r2_within if r.fixed_effects else r.r2))
    stat("Number of id", lambda r: f"{r.n_entities:,}")
    stat("entity.fe", lambda r: "yes" if "entity" in r.fixed_effects else "no")
    stat("year.fe", lambda r: "yes" if "year" in r.fixed_effects else "no")
    lines.append(rule)
    skipped = [(h, r) for h, r in columns.items() if isinstance(r, SkippedGroup)]
    for h, r in skipped:
        lines.append(f"{h}: skipped ({r.reason})")
    lines.append("t statistics in parentheses; *** p<0.01, ** p<0.05, * p<0.1")
    return "\n".join(lines) + "\n"


def _tsf(t, r):
    from scipy import stats
    df = (r.n_clusters - 1) if r.n_clusters else r.df_resid
    return stats.t.sf(t, df)


def fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if not math.isfinite(v) else format(float(v), ".10g")
    return str(v)


def write_results_csv(columns: Mapping[str, RegressionResult], path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "term", "coef", "se", "t", "p", "ci_low", "ci_high"])
        for label, r in columns.items():
            if not isinstance(r, RegressionResult):
                w.writerow([label, "skipped", "", "", "", "", "", ""])
                continue
            for row in r.rows():
                w.writerow([label, row["term"]] + [fmt(row[k]) for k in ("coef", "se", "t", "p", "ci_low", "ci_high")])
            for key in ("n_obs", "r2", "r2_within", "n_entities"):
                w.writerow([label, key, fmt(getattr(r, key)), "", "", "", "", ""])


def rounded(obj):
    """Round floats to 10 significant digits so artifacts are stable across BLAS builds."""
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return None if not math.isfinite(v) else float(format(v, ".10g"))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded(v) for v in obj]
    return obj


def write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rounded(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def results_json(columns: Mapping[str, RegressionResult]):
    out = {}
    for label, r in columns.items():
        out[label] = r.summary_dict() if isinstance(r, RegressionResult) else {"skipped": r.reason}
    return out


def format_mediation_table(results, outcome="DEI") -> str:
    """Mechanism table: a first-stage and a second-stage column per mediator."""
    from .did import TREATMENT
    cols, dep = {}, {}
    k = 1
    for m in results:
        cols[f"({k})"] = m.first_stage
        dep[f"({k})"] = m.mediator
        cols[f"({k + 1})"] = m.second_stage
        dep[f"({k + 1})"] = outcome
        k += 2
    variables = [TREATMENT] + [m.mediator for m in results]
    text = format_table(cols, dep, variables)
    extra = []
    for m in results:
        share = m.share
        s = "n/a" if share is None else f"{100 * share:.2f}%"
        extra.append(f"{m.mediator}: phi={m.phi:.4f} delta={m.delta:.4f} theta={m.theta:.4f} "
                     f"share={s} verdict={m.verdict}")
    return text + "\n".join(extra) + "\n"
