"""Treatment schedules, staggered TWFE difference-in-differences, event studies."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .panel import PanelDataset, PanelError
from .regression import RegressionResult, RegressionSpec, fit_ols, design, ols

TREATMENT = "Wtreat"


@dataclass(frozen=True)
class TreatmentSchedule:
    """Adoption year per entity for one policy; absent entities are never treated."""

    policy: str
    adoption: Mapping[str, int]

    def __post_init__(self):
        object.__setattr__(self, "adoption", {str(k): int(v) for k, v in self.adoption.items()})

    def year(self, entity):
        return self.adoption.get(entity)


@dataclass(frozen=True)
class DualTreatment:
    """Two policies; an entity is dual-treated from the later of its two adoptions."""

    first: TreatmentSchedule
    second: TreatmentSchedule

    @property
    def effective(self) -> dict:
        out = {}
        for e, a in self.first.adoption.items():
            b = self.second.adoption.get(e)
            if b is not None:
                out[e] = max(a, b)
        return out

    @property
    def column_names(self):
        return f"{self.first.policy}_treat", f"{self.second.policy}_treat", TREATMENT

    def treated_entities(self):
        return sorted(self.effective)

    @classmethod
    def single(cls, adoption: Mapping[str, int], policy="pseudo"):
        """Both schedules equal, so the effective year is ``adoption`` itself."""
        s = TreatmentSchedule(policy, adoption)
        return cls(s, s)


def read_schedules(path, policies: Sequence[str] | None = None) -> DualTreatment:
    """Read a schedule CSV with columns ``entity, policy, year``."""
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"entity", "policy", "year"}
        if reader.fieldnames is None or not need <= {f.strip() for f in reader.fieldnames}:
            raise PanelError(f"{path}: schedule CSV needs columns entity, policy, year")
        for lineno, row in enumerate(reader, start=2):
            row = {k.strip(): (v or "").strip() for k, v in row.items()}
            try:
                year = int(row["year"])
            except ValueError:
                raise PanelError(f"{path}:{lineno}: year {row['year']!r} is not an integer") from None
            pol = rows.setdefault(row["policy"], {})
            if row["entity"] in pol:
                raise PanelError(f"{path}:{lineno}: duplicate adoption for {row['entity']!r} under {row['policy']!r}")
            pol[row["entity"]] = year
    names = list(policies) if policies else sorted(rows)
    if len(names) != 2:
        raise PanelError(f"{path}: expected exactly two policies, found {sorted(rows)}")
    for p in names:
        if p not in rows:
            raise PanelError(f"{path}: no rows for policy {p!r}")
    return DualTreatment(TreatmentSchedule(names[0], rows[names[0]]),
                         TreatmentSchedule(names[1], rows[names[1]]))


def write_schedules(dual: DualTreatment, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["entity", "policy", "year"])
        for sched in (dual.first, dual.second):
            for e in sorted(sched.adoption):
                w.writerow([e, sched.policy, sched.adoption[e]])


def adoption_matrix(data: PanelDataset, adoption: Mapping[str, int]) -> np.ndarray:
    """0/1 absorbing-treatment matrix: one from the adoption year onward."""
    known = set(data.entities)
    unknown = sorted(set(adoption) - known)
    if unknown:
        raise PanelError(f"schedule references unknown entities {unknown[:5]}")
    years = np.asarray(data.years)
    out = np.zeros(data.shape)
    for i, e in enumerate(data.entities):
        g = adoption.get(e)
        if g is not None:
            out[i] = years >= g
    return out


def build_treatment_dummies(data: PanelDataset, dual: DualTreatment) -> PanelDataset:
    a = adoption_matrix(data, dual.first.adoption)
    b = adoption_matrix(data, dual.second.adoption)
    na, nb, nw = dual.column_names
    return data.with_variables({na: a, nb: b, nw: a * b})


def treated_group(data: PanelDataset, dual: DualTreatment) -> np.ndarray:
    """Ever-dual-treated indicator per cell (constant within entity)."""
    eff = dual.effective
    return np.repeat(np.array([[e in eff] for e in data.entities], dtype=float), len(data.years), axis=1)


def fit_treatment(data: PanelDataset, wtreat: np.ndarray, outcome: str, controls: Sequence[str] = (),
                  fixed_effects=("entity", "year"), se_type="cluster", mask=None) -> RegressionResult:
    """TWFE regression of ``outcome`` on a given treatment matrix plus controls."""
    controls = tuple(controls)
    m = np.ones(data.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    y, X, ent, yr = design(data, outcome, controls, m)
    X = np.column_stack([np.asarray(wtreat, dtype=np.float64).ravel()[m.ravel()], X])
    return fit_ols(y, X, (TREATMENT,) + controls, ent, yr, fixed_effects, se_type)


def did_baseline(data: PanelDataset, dual: DualTreatment, outcome: str, controls: Sequence[str] = (),
                 fixed_effects=("entity", "year"), se_type="cluster", mask=None) -> RegressionResult:
    """Staggered DID: outcome on the dual-pilot indicator, controls and two-way FE.

    The effect estimate is ``result["Wtreat"]``.
    """
    return fit_treatment(data, adoption_matrix(data, dual.effective), outcome, controls,
                         fixed_effects, se_type, mask)


def baseline_table(data: PanelDataset, dual: DualTreatment, outcome: str, controls: Sequence[str],
                   se_type="cluster") -> dict:
    """The four-column layout: with/without controls crossed with with/without FE."""
    out = {}
    for label, ctrl, fe in (("(1)", (), ()), ("(2)", (), ("entity", "year")),
                            ("(3)", controls, ()), ("(4)", controls, ("entity", "year"))):
        out[label] = did_baseline(data, dual, outcome, ctrl, fe, se_type)
    return out


def trim_sample(data: PanelDataset, drop_years: Sequence[int]) -> PanelDataset:
    drop = {int(y) for y in drop_years}
    keep = [y for y in data.years if y not in drop]
    if len(keep) < 2:
        raise PanelError("trimming must leave at least two years")
    if keep != list(range(keep[0], keep[0] + len(keep))):
        raise PanelError("trimming must leave consecutive years")
    return data.select_years(keep)


# --------------------------------------------------------------------------
# Event study
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EventBin:
    label: str
    rel: int
    coef: float
    se: float
    ci_low: float
    ci_high: float
    n_obs: int
    reference: bool = False
    pvalue: float = float("nan")


@dataclass(frozen=True)
class EventStudyResult:
    """Relative-time coefficients in bin order.

    ``Before_k`` covers ``rel = -(k + 1)`` and ``After_k`` covers ``rel = k + 1``;
    the outermost bins absorb everything beyond the window.
    """

    bins: tuple
    reference: str
    regression: RegressionResult
    dropped_bins: tuple = ()
    always_treated: tuple = ()
    n_treated_obs: int = 0

    def __getitem__(self, label) -> EventBin:
        for b in self.bins:
            if b.label == label:
                return b
        raise KeyError(label)

    @property
    def pre_bins(self):
        return [b for b in self.bins if b.rel < 0 and not b.reference]

    @property
    def post_bins(self):
        return [b for b in self.bins if b.rel >= 0]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin", "rel_time", "coef", "se", "ci_low", "ci_high", "n_obs", "reference"])
            for b in self.bins:
                w.writerow([b.label, b.rel] + [format(v, ".10g") for v in (b.coef, b.se, b.ci_low, b.ci_high)]
                           + [b.n_obs, int(b.reference)])


def event_bins(pre=2, post=6):
    """Ordered (label, rel) pairs for the window."""
    out = [(f"Before_{k}", -(k + 1)) for k in range(pre, -1, -1)]
    out.append(("Current", 0))
    out.extend((f"After_{k}", k + 1) for k in range(post + 1))
    return out


def relative_time(data: PanelDataset, adoption: Mapping[str, int]) -> np.ndarray:
    """``t - adoption`` per cell; NaN for never-treated entities."""
    years = np.asarray(data.years, dtype=np.float64)
    out = np.full(data.shape, np.nan)
    for i, e in enumerate(data.entities):
        g = adoption.get(e)
        if g is not None:
            out[i] = years - g
    return out


def event_study(data: PanelDataset, dual: DualTreatment, outcome: str, controls: Sequence[str] = (),
                pre=2, post=6, reference="Before_0", se_type="cluster", level=0.95) -> EventStudyResult:
    """Relative-time dummies around the dual-pilot adoption, with two-way FE.

    Bins run from ``Before_pre`` to ``After_post`` with endpoint binning; the
    ``reference`` bin is omitted and reported with coefficient exactly 0.
    """
    eff = {e: g for e, g in dual.effective.items()}
    unknown = sorted(set(eff) - set(data.entities))
    if unknown:
        raise PanelError(f"schedule references unknown entities {unknown[:5]}")
    if not eff:
        raise PanelError("no treated entities")
    bins = event_bins(pre, post)
    labels = [b[0] for b in bins]
    if reference not in labels:
        raise ValueError(f"reference bin {reference!r} not in {labels}")
    rel = relative_time(data, eff)
    lo, hi = bins[0][1], bins[-1][1]
    clipped = np.clip(rel, lo, hi)
    treated = ~np.isnan(rel)
    if not np.any(treated & (rel < 0)):
        raise PanelError("no treated entity has pre-adoption periods in the panel")

    counts = {lab: int(np.sum(treated & (clipped == r))) for lab, r in bins}
    dummies = {}
    dropped = []
    for lab, r in bins:
        if lab == reference:
            continue
        if counts[lab] == 0:
            dropped.append(lab)
            continue
        dummies[lab] = np.where(treated & (clipped == r), 1.0, 0.0)

    controls = tuple(controls)
    tmp = data.with_variables({f"__es_{k}": v for k, v in dummies.items()})
    regs = tuple(f"__es_{k}" for k in dummies) + controls
    res = ols(tmp, RegressionSpec(outcome, regs, ("entity", "year"), se_type), level=level)

    out = []
    for lab, r in bins:
        if lab == reference:
            out.append(EventBin(lab, r, 0.0, 0.0, 0.0, 0.0, counts[lab], reference=True))
            continue
        key = f"__es_{lab}"
        if lab in dropped:
            continue
        if key in res.dropped:
            dropped.append(lab)
            continue
        lo_ci, hi_ci = res.ci(key)
        out.append(EventBin(lab, r, res[key], res.se(key), lo_ci, hi_ci, counts[lab], pvalue=res.p(key)))

    first = data.years[0]
    always = tuple(sorted(e for e, g in eff.items() if g <= first))
    return EventStudyResult(tuple(out), reference, res, tuple(dropped), always, int(treated.sum()))
