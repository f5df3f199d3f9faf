"""Propensity scores, nearest-neighbour matching, balance diagnostics, PSM-DID."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .did import DualTreatment, did_baseline, treated_group
from .panel import PanelDataset, PanelError
from .regression import LogitResult, RegressionError, RegressionResult, fit_logit

POOLED = "pooled"
PERIOD = "period"


class MatchingError(PanelError):
    pass


def _mode(mode):
    m = str(mode).lower().replace("_", "-")
    if m in ("pooled", "pooled-cross-section", "cross-section"):
        return POOLED
    if m in ("period", "period-by-period", "year", "year-by-year"):
        return PERIOD
    raise ValueError(f"unknown matching mode {mode!r}")


def _logit_fn(p):
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True)
class PropensityModel:
    """Fitted scores per panel cell (NaN where no model applies).

    ``fits`` maps ``"pooled"`` or a year to its logit; ``flagged`` maps a year
    whose per-year logit failed to the reason.
    """

    mode: str
    covariates: tuple
    treatment: np.ndarray
    scores: np.ndarray
    index: np.ndarray
    fits: dict
    flagged: dict = field(default_factory=dict)

    @property
    def pseudo_r2(self):
        return {k: f.pseudo_r2 for k, f in self.fits.items()}


def _treatment_matrix(data, treatment):
    if isinstance(treatment, str):
        data.require([treatment])
        t = np.asarray(data[treatment])
    else:
        t = np.asarray(treatment, dtype=np.float64)
    if t.shape != data.shape or not np.all(np.isin(t, (0.0, 1.0))):
        raise MatchingError("treatment must be a 0/1 panel variable")
    return t


def fit_propensity(data: PanelDataset, treatment, covariates: Sequence[str], mode=POOLED) -> PropensityModel:
    """Logit propensity scores, pooled over all cells or one model per year."""
    mode = _mode(mode)
    covariates = tuple(covariates)
    data.require(covariates)
    t = _treatment_matrix(data, treatment)
    X = np.stack([data[c] for c in covariates], axis=-1)
    scores = np.full(data.shape, np.nan)
    index = np.full(data.shape, np.nan)
    fits, flagged = {}, {}
    if mode == POOLED:
        res = fit_logit(t.ravel(), X.reshape(-1, len(covariates)), covariates)
        _check_kept(res, covariates)
        fits[POOLED] = res
        index[:] = res.linear_predictor(X.reshape(-1, len(covariates))).reshape(data.shape)
    else:
        for j, year in enumerate(data.years):
            try:
                res = fit_logit(t[:, j], X[:, j, :], covariates)
                _check_kept(res, covariates)
            except RegressionError as exc:
                flagged[year] = str(exc)
                continue
            fits[year] = res
            index[:, j] = res.linear_predictor(X[:, j, :])
        if not fits:
            raise MatchingError(f"every per-year propensity model failed: {flagged}")
    scores = 0.5 * (1.0 + np.tanh(0.5 * index))
    scores = np.clip(scores, 1e-15, 1 - 1e-15)
    return PropensityModel(mode, covariates, t, scores, index, fits, flagged)


def _check_kept(res, covariates):
    if res.dropped:
        raise RegressionError(f"collinear matching covariates {list(res.dropped)}")


@dataclass(frozen=True)
class MatchedSample:
    """Matched treated/control cells.

    Pair arrays hold panel coordinates ``(entity index, year index)``.
    ``unmatched`` lists treated cells with no acceptable control and
    ``excluded`` lists cells dropped as off-support, each with a reason.
    """

    mode: str
    k: int
    caliper: float | None
    with_replacement: bool
    scale: str
    entities: tuple
    years: tuple
    t_cells: np.ndarray
    c_cells: np.ndarray
    score_t: np.ndarray
    score_c: np.ndarray
    distance: np.ndarray
    support: dict
    unmatched: tuple
    excluded: tuple
    treatment: np.ndarray = field(repr=False, default=None)
    scores: np.ndarray = field(repr=False, default=None)

    @property
    def n_pairs(self):
        return int(self.t_cells.shape[0])

    def weights(self) -> np.ndarray:
        """Frequency weights: 1 per matched treated cell, 1/k per control use."""
        w = np.zeros((len(self.entities), len(self.years)))
        if self.n_pairs == 0:
            return w
        tc = np.unique(self.t_cells, axis=0)
        w[tc[:, 0], tc[:, 1]] = 1.0
        np.add.at(w, (self.c_cells[:, 0], self.c_cells[:, 1]), 1.0 / self.k)
        return w

    def mask(self) -> np.ndarray:
        """Cells that enter the matched estimation sample (each once)."""
        return self.weights() > 0

    def coverage(self):
        """Share of on-support treated cells that found a match."""
        n_t = len(np.unique(self.t_cells, axis=0)) if self.n_pairs else 0
        n_un = sum(1 for u in self.unmatched if u[2] == "caliper" or u[2] == "no-control")
        return n_t / (n_t + n_un) if (n_t + n_un) else float("nan")

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["treated_id", "year", "control_id", "control_year", "score_t", "score_c", "distance"])
            for r in range(self.n_pairs):
                ti, tt = self.t_cells[r]
                ci, ct = self.c_cells[r]
                w.writerow([self.entities[ti], self.years[tt], self.entities[ci], self.years[ct],
                            format(self.score_t[r], ".10g"), format(self.score_c[r], ".10g"),
                            format(self.distance[r], ".10g")])


def _support(st, sc, rule, trim):
    if rule == "minmax":
        return max(st.min(), sc.min()), min(st.max(), sc.max())
    if rule == "trim":
        q = float(trim)
        return (max(np.percentile(st, q), np.percentile(sc, q)),
                min(np.percentile(st, 100 - q), np.percentile(sc, 100 - q)))
    if rule == "none":
        return -np.inf, np.inf
    raise ValueError(f"unknown support rule {rule!r}")


def match_nearest(model: PropensityModel, k=1, caliper=None, with_replacement=True, scale="probability",
                  support="minmax", trim=1.0, entities=None, years=None) -> MatchedSample:
    """Nearest-neighbour matching on the propensity score.

    Candidates are restricted to the common-support interval of the pool
    (all cells, or one year at a time in period mode). Ties are broken by the
    lower entity id, then the earlier year.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if scale not in ("probability", "logit"):
        raise ValueError("scale must be 'probability' or 'logit'")
    ne, nt = model.scores.shape
    entities = tuple(entities) if entities is not None else tuple(str(i) for i in range(ne))
    years = tuple(years) if years is not None else tuple(range(nt))
    values = model.scores if scale == "probability" else model.index
    # global tie-break rank: entity id (bytewise), then year
    ent_rank = np.empty(ne, dtype=np.int64)
    ent_rank[np.argsort(np.array(entities, dtype=object), kind="stable")] = np.arange(ne)
    cell_rank = ent_rank[:, None] * nt + np.arange(nt)[None, :]

    pools = [(POOLED, np.ones((ne, nt), dtype=bool))] if model.mode == POOLED else [
        (years[j], np.zeros((ne, nt), dtype=bool)) for j in range(nt)]
    if model.mode == PERIOD:
        for j, (_, m) in enumerate(pools):
            m[:, j] = True

    t_cells, c_cells, s_t, s_c, dist = [], [], [], [], []
    unmatched, excluded, supports = [], [], {}
    valid = np.isfinite(values)
    for key, pool in pools:
        if model.mode == PERIOD and key in model.flagged:
            continue
        tmask = pool & valid & (model.treatment == 1)
        cmask = pool & valid & (model.treatment == 0)
        if not tmask.any() or not cmask.any():
            if model.mode == POOLED:
                raise MatchingError("need at least one treated and one control cell")
            supports[key] = None
            continue
        lo, hi = _support(values[tmask], values[cmask], support, trim)
        if lo > hi:
            if model.mode == POOLED:
                raise MatchingError("treated and control scores do not overlap")
            supports[key] = None
            continue
        supports[key] = (float(lo), float(hi))
        on = (values >= lo) & (values <= hi)
        for cell in np.argwhere(tmask & ~on):
            excluded.append((entities[cell[0]], years[cell[1]], "treated-off-support"))
        for cell in np.argwhere(cmask & ~on):
            excluded.append((entities[cell[0]], years[cell[1]], "control-off-support"))
        tc = np.argwhere(tmask & on)
        cc = np.argwhere(cmask & on)
        if len(tc) == 0 or len(cc) == 0:
            if model.mode == POOLED:
                raise MatchingError("empty common support")
            continue
        tc = tc[np.lexsort((tc[:, 1], ent_rank[tc[:, 0]]))]
        tv = values[tc[:, 0], tc[:, 1]]
        cv = values[cc[:, 0], cc[:, 1]]
        crank = cell_rank[cc[:, 0], cc[:, 1]]
        idx, d = _kernels.nearest(tv, cv, crank, k, with_replacement)
        for r in range(len(tc)):
            got = 0
            for m in range(k):
                j = idx[r, m]
                if j < 0:
                    continue
                if caliper is not None and d[r, m] > caliper:
                    continue
                t_cells.append(tc[r])
                c_cells.append(cc[j])
                s_t.append(model.scores[tc[r][0], tc[r][1]])
                s_c.append(model.scores[cc[j][0], cc[j][1]])
                dist.append(d[r, m])
                got += 1
            if got == 0:
                reason = "caliper" if idx[r, 0] >= 0 else "no-control"
                unmatched.append((entities[tc[r][0]], years[tc[r][1]], reason))

    if model.mode == PERIOD and not t_cells and all(v is None for v in supports.values()):
        raise MatchingError("no year has overlapping treated and control scores")

    def arr(a, shape):
        return np.array(a).reshape(shape) if a else np.zeros((0,) + shape[1:])

    return MatchedSample(
        mode=model.mode, k=k, caliper=caliper, with_replacement=with_replacement, scale=scale,
        entities=entities, years=years,
        t_cells=arr(t_cells, (-1, 2)).astype(np.int64), c_cells=arr(c_cells, (-1, 2)).astype(np.int64),
        score_t=np.array(s_t, dtype=float), score_c=np.array(s_c, dtype=float),
        distance=np.array(dist, dtype=float), support=supports,
        unmatched=tuple(unmatched), excluded=tuple(excluded),
        treatment=model.treatment, scores=model.scores,
    )


# --------------------------------------------------------------------------
# Balance
# --------------------------------------------------------------------------

def _wmean_var(x, w):
    sw = w.sum()
    m = float((w * x).sum() / sw)
    v = float((w * (x - m) ** 2).sum() / (sw - 1)) if sw > 1 else float("nan")
    return m, v


def standardized_bias(xt, xc, wt=None, wc=None):
    """``100 * (mean_T - mean_C) / sqrt((var_T + var_C) / 2)``; NaN if both variances vanish."""
    wt = np.ones(len(xt)) if wt is None else np.asarray(wt, float)
    wc = np.ones(len(xc)) if wc is None else np.asarray(wc, float)
    mt, vt = _wmean_var(np.asarray(xt, float), wt)
    mc, vc = _wmean_var(np.asarray(xc, float), wc)
    denom = np.sqrt((vt + vc) / 2.0)
    bias = 100.0 * (mt - mc) / denom if denom > 0 else float("nan")
    return mt, mc, bias


@dataclass(frozen=True)
class BalanceRow:
    variable: str
    mean_t_before: float
    mean_c_before: float
    bias_before: float
    mean_t_after: float
    mean_c_after: float
    bias_after: float

    @property
    def reduction(self):
        if not np.isfinite(self.bias_before) or not np.isfinite(self.bias_after) or self.bias_before == 0:
            return float("nan")
        return 100.0 * (1.0 - abs(self.bias_after) / abs(self.bias_before))

    @property
    def flagged(self):
        return not np.isfinite(self.bias_after)


@dataclass(frozen=True)
class YearBlock:
    year: int
    rows: tuple
    logit_before: LogitResult | None
    logit_after: LogitResult | None
    note: str = ""


@dataclass(frozen=True)
class BalanceReport:
    rows: tuple
    pseudo_r2_before: float
    pseudo_r2_after: float
    mode: str
    year_blocks: tuple = ()
    logit_before: LogitResult | None = None
    logit_after: LogitResult | None = None

    def __getitem__(self, variable) -> BalanceRow:
        for r in self.rows:
            if r.variable == variable:
                return r
        raise KeyError(variable)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["block", "variable", "mean_t_before", "mean_c_before", "bias_before",
                        "mean_t_after", "mean_c_after", "bias_after", "reduction_pct"])
            blocks = [("all", self.rows)] + [(str(b.year), b.rows) for b in self.year_blocks]
            for label, rows in blocks:
                for r in rows:
                    w.writerow([label, r.variable] + [_f(v) for v in (
                        r.mean_t_before, r.mean_c_before, r.bias_before,
                        r.mean_t_after, r.mean_c_after, r.bias_after, r.reduction)])

    def to_text(self):
        wd = max([22] + [len(r.variable) + 6 for r in self.rows])
        lines = [f"Balance test ({self.mode})",
                 f"{'Variable':<{wd}}{'Mean T':>11}{'Mean C':>11}{'%bias':>9}{'%reduct':>9}"]
        for r in self.rows:
            lines.append(f"{r.variable + ' (U)':<{wd}}{r.mean_t_before:>11.4f}{r.mean_c_before:>11.4f}"
                         f"{r.bias_before:>9.1f}{'':>9}")
            red = "" if not np.isfinite(r.reduction) else f"{r.reduction:.1f}"
            after = "flagged" if r.flagged else f"{r.bias_after:.1f}"
            lines.append(f"{r.variable + ' (M)':<{wd}}{r.mean_t_after:>11.4f}{r.mean_c_after:>11.4f}"
                         f"{after:>9}{red:>9}")
        lines.append(f"Pseudo R2 before: {self.pseudo_r2_before:.4f}   after: {self.pseudo_r2_after:.4f}")
        for title, attr in (("before matching", "logit_before"), ("after matching", "logit_after")):
            if not self.year_blocks:
                break
            lines.append("")
            lines.append(f"Year-by-year balance test: {title}")
            years = [b.year for b in self.year_blocks]
            lines.append(f"{'VARIABLES':<{wd}}" + "".join(f"{y:>14}" for y in years))
            fits = [getattr(b, attr) for b in self.year_blocks]
            for var in self.year_blocks[0].rows:
                name = var.variable
                if name == "pscore":
                    continue
                coef, tval = [], []
                for f in fits:
                    if f is None or name not in f.names:
                        coef.append(f"{'--':>14}")
                        tval.append(f"{'':>14}")
                    else:
                        coef.append(f"{f[name]:>11.4f}{_stars(f.p(name)):<3}".rstrip().rjust(14))
                        tval.append(f"{'(' + format(f.t(name), '.4f') + ')':>14}")
                lines.append(f"{name:<{wd}}" + "".join(coef))
                lines.append(f"{'':<{wd}}" + "".join(tval))
            lines.append(f"{'Pseudo R2':<{wd}}" + "".join(
                f"{'--':>14}" if f is None else f"{f.pseudo_r2:>14.4f}" for f in fits))
            lines.append(f"{'Observations':<{wd}}" + "".join(
                f"{'--':>14}" if f is None else f"{f.n_obs:>14d}" for f in fits))
        return "\n".join(lines) + "\n"


def _f(v):
    return "" if not np.isfinite(v) else format(v, ".10g")


def _stars(p):
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.1 else ""


def _balance_rows(X, names, t, w_after, cell_mask):
    """Rows for cells in ``cell_mask``; before = all, after = weighted matched."""
    rows = []
    tb = cell_mask & (t == 1)
    cb = cell_mask & (t == 0)
    ta = cell_mask & (t == 1) & (w_after > 0)
    ca = cell_mask & (t == 0) & (w_after > 0)
    for j, name in enumerate(names):
        x = X[..., j]
        mt_b, mc_b, b_b = standardized_bias(x[tb], x[cb])
        if ta.any() and ca.any():
            mt_a, mc_a, b_a = standardized_bias(x[ta], x[ca], w_after[ta], w_after[ca])
        else:
            mt_a = mc_a = b_a = float("nan")
        rows.append(BalanceRow(name, mt_b, mc_b, b_b, mt_a, mc_a, b_a))
    return tuple(rows)


def _try_logit(y, X, names, w=None):
    try:
        return fit_logit(y, X, names, weights=w)
    except RegressionError:
        return None


def balance_report(data: PanelDataset, matched: MatchedSample, covariates: Sequence[str]) -> BalanceReport:
    """Standardized bias before/after matching, plus before/after logit pseudo-R²."""
    if matched.n_pairs == 0:
        raise MatchingError("matched sample is empty")
    covariates = tuple(covariates)
    data.require(covariates)
    t = matched.treatment
    valid = np.isfinite(matched.scores)
    X = np.stack([data[c] for c in covariates] + [matched.scores], axis=-1)
    names = covariates + ("pscore",)
    w = matched.weights()
    rows = _balance_rows(X, names, t, w, valid)

    Xc = X[..., :-1]
    before = _try_logit(t[valid], Xc[valid], covariates)
    sel = valid & (w > 0)
    after = _try_logit(t[sel], Xc[sel], covariates, w[sel])

    blocks = []
    if matched.mode == PERIOD:
        for j, year in enumerate(matched.years):
            col = np.zeros_like(valid)
            col[:, j] = True
            cm = col & valid
            if not cm.any():
                blocks.append(YearBlock(year, (), None, None, "no propensity model"))
                continue
            brows = _balance_rows(X, names, t, w, cm)
            lb = _try_logit(t[cm], Xc[cm], covariates)
            sa = cm & (w > 0)
            la = _try_logit(t[sa], Xc[sa], covariates, w[sa]) if sa.any() else None
            blocks.append(YearBlock(year, brows, lb, la))
    return BalanceReport(rows, before.pseudo_r2 if before else float("nan"),
                         after.pseudo_r2 if after else float("nan"), matched.mode, tuple(blocks),
                         before, after)


# --------------------------------------------------------------------------
# Kernel density
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DensityGrid:
    x: np.ndarray
    density: np.ndarray
    bandwidth: float
    kernel: str

    def integral(self):
        return float(np.trapezoid(self.density, self.x))

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "density"])
            for a, b in zip(self.x, self.density):
                w.writerow([format(a, ".10g"), format(b, ".10g")])


def silverman_bandwidth(values):
    v = np.asarray(values, dtype=np.float64)
    sd = v.std(ddof=1)
    iqr = np.subtract(*np.percentile(v, [75, 25]))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * v.size ** (-0.2)


def kernel_density(values, kernel="gaussian", bandwidth=None, n_grid=512, cut=3.0) -> DensityGrid:
    """Kernel density on an evenly spaced grid over ``[min - cut*h, max + cut*h]``."""
    v = np.asarray(values, dtype=np.float64).ravel()
    v = v[np.isfinite(v)]
    if v.size < 2:
        raise ValueError("kernel density needs at least two values")
    if not v.std() > 0:
        raise ValueError("kernel density undefined for zero-variance values")
    codes = {"gaussian": _kernels.KERNEL_GAUSSIAN, "epanechnikov": _kernels.KERNEL_EPANECHNIKOV}
    if kernel not in codes:
        raise ValueError(f"unknown kernel {kernel!r}")
    h = silverman_bandwidth(v) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    grid = np.linspace(v.min() - cut * h, v.max() + cut * h, n_grid)
    return DensityGrid(grid, _kernels.kde(v, grid, h, codes[kernel]), h, kernel)


def overlap_densities(matched: MatchedSample):
    """Treated/control score densities before and after matching."""
    valid = np.isfinite(matched.scores)
    t = matched.treatment
    w = matched.weights()
    out = {}
    for label, sel in (("before", valid), ("after", valid & (w > 0))):
        for grp, val in (("treated", 1), ("control", 0)):
            s = matched.scores[sel & (t == val)]
            if label == "after" and grp == "control":
                # controls weighted by reuse count
                counts = np.round(w[sel & (t == val)] * matched.k).astype(int)
                s = np.repeat(s, np.maximum(counts, 1))
            try:
                out[(label, grp)] = kernel_density(s)
            except ValueError:
                out[(label, grp)] = None
    return out


# --------------------------------------------------------------------------
# PSM-DID
# --------------------------------------------------------------------------

def psm_did(data: PanelDataset, dual: DualTreatment, matched: MatchedSample, outcome: str,
            controls: Sequence[str] = (), se_type="cluster") -> RegressionResult:
    """Staggered DID restricted to the matched cells."""
    mask = matched.mask()
    if mask.sum() < 4:
        raise RegressionError("matched panel too small for fixed effects")
    try:
        return did_baseline(data, dual, outcome, controls, se_type=se_type, mask=mask)
    except RegressionError as exc:
        raise RegressionError(f"matched panel too small for fixed effects: {exc}") from exc


@dataclass(frozen=True)
class PsmRun:
    model: PropensityModel
    matched: MatchedSample
    balance: BalanceReport
    result: RegressionResult


def run_psm_did(data: PanelDataset, dual: DualTreatment, outcome: str, covariates: Sequence[str],
                controls: Sequence[str] = (), mode=POOLED, k=1, caliper=None, with_replacement=True,
                scale="probability", se_type="cluster") -> PsmRun:
    """Fit scores on the ever-treated indicator, match, check balance, re-estimate."""
    group = treated_group(data, dual)
    model = fit_propensity(data, group, covariates, mode)
    matched = match_nearest(model, k, caliper, with_replacement, scale,
                            entities=data.entities, years=data.years)
    balance = balance_report(data, matched, covariates)
    result = psm_did(data, dual, matched, outcome, controls, se_type)
    return PsmRun(model, matched, balance, result)
