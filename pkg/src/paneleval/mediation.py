"""Mediation by two TWFE regressions and the mediated share of the total effect."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .did import TREATMENT, DualTreatment, adoption_matrix, fit_treatment
from .index import standardize_zscore
from .panel import PanelDataset, ratio
from .regression import RegressionError, RegressionResult


def mediation_share(phi, delta, theta) -> float:
    """Mediated share ``phi*delta / (phi*delta + theta)``."""
    indirect = phi * delta
    total = indirect + theta
    if total == 0:
        raise ZeroDivisionError("indirect plus direct effect is zero")
    return indirect / total


def mediation_verdict(phi, delta, theta, p_phi, p_delta, p_theta, alpha=0.1) -> str:
    """Classify the mediation pattern at significance level ``alpha``.

    Both paths significant is required for any mediation. A significant
    direct effect with the sign of ``phi*delta`` is partial mediation; an
    insignificant one is full mediation; an opposite sign is suppression.
    """
    if not (p_phi < alpha and p_delta < alpha):
        return "no mediation"
    if not p_theta < alpha:
        return "full mediation"
    if np.sign(theta) == np.sign(phi * delta):
        return "partial mediation"
    return "suppression"


@dataclass(frozen=True)
class MediationResult:
    mediator: str
    first_stage: RegressionResult
    second_stage: RegressionResult
    alpha: float

    @property
    def phi(self):
        return self.first_stage[TREATMENT]

    @property
    def theta(self):
        return self.second_stage[TREATMENT]

    @property
    def delta(self):
        return self.second_stage[self.mediator]

    @property
    def verdict(self):
        return mediation_verdict(self.phi, self.delta, self.theta,
                                 self.first_stage.p(TREATMENT), self.second_stage.p(self.mediator),
                                 self.second_stage.p(TREATMENT), self.alpha)

    @property
    def share(self) -> float | None:
        """Mediated share, or None unless both paths are significant."""
        if self.verdict == "no mediation":
            return None
        return mediation_share(self.phi, self.delta, self.theta)

    def summary(self):
        fs, ss = self.first_stage, self.second_stage
        return {
            "mediator": self.mediator,
            "phi": self.phi, "phi_se": fs.se(TREATMENT), "phi_t": fs.t(TREATMENT),
            "theta": self.theta, "theta_se": ss.se(TREATMENT), "theta_t": ss.t(TREATMENT),
            "delta": self.delta, "delta_se": ss.se(self.mediator), "delta_t": ss.t(self.mediator),
            "share": self.share, "verdict": self.verdict, "alpha": self.alpha,
        }


def mediation_analysis(data: PanelDataset, dual: DualTreatment, mediator: str, outcome: str,
                       controls: Sequence[str] = (), se_type="cluster", alpha=0.1) -> MediationResult:
    """Mediator on treatment (first stage), outcome on treatment and mediator (second)."""
    controls = tuple(c for c in controls if c != mediator)
    data.require([mediator, outcome, *controls])
    W = adoption_matrix(data, dual.effective)
    first = fit_treatment(data, W, mediator, controls, se_type=se_type)
    second = fit_treatment(data, W, outcome, (mediator,) + controls, se_type=se_type)
    for res in (first, second):
        if TREATMENT not in res.names:
            raise RegressionError(f"mediator {mediator!r} is collinear with {TREATMENT}")
    if mediator not in second.names:
        raise RegressionError(f"mediator {mediator!r} is collinear with {TREATMENT} and the fixed effects")
    return MediationResult(mediator, first, second, alpha)


@dataclass(frozen=True)
class MediatorSources:
    """Column names of the raw inputs behind the three mechanism variables."""

    financial_amount: str = "financial_amount"
    gdp: str = "gdp"
    sector_employment: tuple = ("emp_research", "emp_it", "emp_finance", "emp_education")
    total_employment: str = "emp_total"
    scitech_spending: str = "scitech_spending"
    budget_total: str = "budget_total"
    patents: str = "patents"
    population: str = "population"


def mediator_construction(data: PanelDataset, sources: MediatorSources = MediatorSources(),
                          which: Sequence[str] = ("vcpe", "talents", "technology")) -> PanelDataset:
    """Append ``vcpe``, ``talents`` and ``technology``.

    * vcpe: financial-institution amount over GDP
    * talents: knowledge-sector employment over total employment
    * technology: 0.5 * sci-tech budget share + 0.5 * z-scored patents per capita
    """
    s = sources
    new = {}
    if "vcpe" in which:
        data.require([s.financial_amount, s.gdp])
        new["vcpe"] = ratio(data, data[s.financial_amount], data[s.gdp], "vcpe")
    if "talents" in which:
        data.require([*s.sector_employment, s.total_employment])
        num = sum(data[c] for c in s.sector_employment)
        new["talents"] = ratio(data, num, data[s.total_employment], "talents")
    if "technology" in which:
        data.require([s.scitech_spending, s.budget_total, s.patents, s.population])
        share = ratio(data, data[s.scitech_spending], data[s.budget_total], "technology budget share")
        per_cap = ratio(data, data[s.patents], data[s.population], "patents per capita")
        z = standardize_zscore(data.with_variable("__pc", per_cap), "__pc")["__pc"]
        new["technology"] = 0.5 * share + 0.5 * z
    unknown = set(which) - {"vcpe", "talents", "technology"}
    if unknown:
        raise ValueError(f"unknown mediators {sorted(unknown)}")
    return data.with_variables(new)
