"""Randomization placebo test: random pseudo-treated groups with random adoption years.

Replication ``r`` draws from ``Generator(PCG64(SeedSequence(seed).spawn(R)[r]))``,
so results do not depend on how replications are scheduled across threads.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .did import DualTreatment, adoption_matrix, did_baseline, fit_treatment, TREATMENT
from .panel import PanelDataset
from .psm import DensityGrid, kernel_density
from .regression import RegressionError, RegressionResult


@dataclass(frozen=True)
class PlaceboConfig:
    """``treated_count=None`` uses the real number of dual-treated entities.

    ``year_rule`` is ``"uniform"`` (any panel year) or ``"empirical"``
    (resample the real adoption years).
    """

    replications: int = 500
    treated_count: int | None = None
    seed: int = 0
    year_rule: str = "uniform"
    max_redraws: int = 10

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.treated_count is not None and self.treated_count < 1:
            raise ValueError("treated_count must be positive")
        if self.year_rule not in ("uniform", "empirical"):
            raise ValueError(f"unknown year rule {self.year_rule!r}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class PlaceboResult:
    betas: np.ndarray
    pvalues: np.ndarray
    actual: float
    actual_pvalue: float
    rank: int
    density: DensityGrid | None
    flagged: tuple = ()
    redraws: np.ndarray | None = None
    treated_count: int = 0

    @property
    def valid(self):
        return self.betas[np.isfinite(self.betas)]

    @property
    def percentile(self):
        n = self.valid.size
        return self.rank / n if n else float("nan")

    def summary(self):
        b = self.valid
        p = self.pvalues[np.isfinite(self.pvalues)]
        return {
            "replications": int(self.betas.size),
            "valid": int(b.size),
            "flagged": list(self.flagged),
            "treated_count": self.treated_count,
            "mean_beta": float(b.mean()) if b.size else None,
            "sd_beta": float(b.std(ddof=1)) if b.size > 1 else None,
            "share_p_above_0.1": float(np.mean(p > 0.1)) if p.size else None,
            "actual_beta": self.actual,
            "actual_pvalue": self.actual_pvalue,
            "rank": self.rank,
            "percentile": self.percentile,
            "bandwidth": None if self.density is None else self.density.bandwidth,
        }

    def write(self, prefix):
        """Write ``<prefix>_betas.csv``, ``<prefix>_density.csv``, ``<prefix>_summary.json``."""
        paths = [f"{prefix}_betas.csv", f"{prefix}_summary.json"]
        with open(paths[0], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replication", "beta", "pvalue"])
            for r, (b, p) in enumerate(zip(self.betas, self.pvalues)):
                w.writerow([r, "" if not np.isfinite(b) else format(b, ".10g"),
                            "" if not np.isfinite(p) else format(p, ".10g")])
        with open(paths[1], "w", encoding="utf-8") as fh:
            json.dump(_rounded(self.summary()), fh, indent=2, sort_keys=True)
            fh.write("\n")
        if self.density is not None:
            paths.insert(1, f"{prefix}_density.csv")
            self.density.to_csv(paths[1])
        return paths


def _rounded(obj):
    if isinstance(obj, float):
        return float(format(obj, ".10g"))
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_rounded(v) for v in obj]
    return obj


def replication_streams(seed, n):
    """Independent generators, one per replication."""
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(int(seed)).spawn(n)]


def _one(data, outcome, controls, fixed_effects, se_type, cfg, n_treat, real_years, rng):
    ne = len(data.entities)
    first, last = data.years[0], data.years[-1]
    for attempt in range(cfg.max_redraws + 1):
        who = rng.choice(ne, n_treat, replace=False)
        if cfg.year_rule == "uniform":
            when = rng.integers(first, last + 1, n_treat)
        else:
            when = rng.choice(real_years, n_treat, replace=True)
        pseudo = {data.entities[i]: int(y) for i, y in zip(who, when)}
        W = adoption_matrix(data, pseudo)
        try:
            res = fit_treatment(data, W, outcome, controls, fixed_effects, se_type)
        except RegressionError:
            continue
        if TREATMENT in res.names:
            return res[TREATMENT], res.p(TREATMENT), attempt
    return float("nan"), float("nan"), cfg.max_redraws + 1


def placebo_test(data: PanelDataset, real_dual: DualTreatment, outcome: str, controls: Sequence[str] = (),
                 config: PlaceboConfig = PlaceboConfig(), se_type="cluster",
                 fixed_effects=("entity", "year"), jobs=1, actual: RegressionResult | None = None) -> PlaceboResult:
    """Re-estimate the baseline under random pseudo-policies.

    A degenerate draw (pseudo-treatment not identified) is redrawn up to
    ``max_redraws`` times, after which the replication is flagged and
    recorded as NaN.
    """
    controls = tuple(controls)
    if actual is None:
        actual = did_baseline(data, real_dual, outcome, controls, fixed_effects, se_type)
    eff = {e: g for e, g in real_dual.effective.items() if e in set(data.entities)}
    n_treat = config.treated_count if config.treated_count is not None else len(eff)
    if n_treat < 1 or n_treat > len(data.entities):
        raise ValueError(f"treated count {n_treat} not in [1, {len(data.entities)}]")
    real_years = np.array(sorted(eff.values()) or [data.years[0]])
    streams = replication_streams(config.seed, config.replications)

    def task(rng):
        return _one(data, outcome, controls, fixed_effects, se_type, config, n_treat, real_years, rng)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            out = list(pool.map(task, streams))
    else:
        out = [task(rng) for rng in streams]

    betas = np.array([o[0] for o in out])
    pvals = np.array([o[1] for o in out])
    redraws = np.array([o[2] for o in out])
    flagged = tuple(int(i) for i in np.flatnonzero(~np.isfinite(betas)))
    a = actual[TREATMENT]
    valid = betas[np.isfinite(betas)]
    rank = int(np.sum(valid < a))
    density = None
    if valid.size >= 2 and valid.std() > 0:
        density = kernel_density(valid)
    return PlaceboResult(betas, pvals, a, actual.p(TREATMENT), rank, density, flagged, redraws, n_treat)
