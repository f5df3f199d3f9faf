"""Synthetic panels with planted fixed effects, schedules, effects and mediators.

All randomness comes from ``numpy.random.Generator(PCG64(seed))`` drawn in a
fixed order, so a config plus seed pins every cell.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .did import DualTreatment, TreatmentSchedule, adoption_matrix
from .panel import PanelDataset


@dataclass(frozen=True)
class MediatorSpec:
    """Mediator m = phi*W + FE + noise; outcome gets theta*W + delta*m."""

    phi: float
    delta: float
    theta: float
    noise_sd: float = 1.0
    entity_sd: float = 1.0
    name: str = "mediator"


@dataclass(frozen=True)
class DgpConfig:
    """Data-generating process for a staggered dual-pilot panel.

    The outcome is ``alpha + effect + controls @ gamma + entity FE + year FE
    + covariate_trend * mu_1 * (t - mid) + noise`` where ``effect`` is either
    ``beta * W`` (per-group betas when ``groups`` is set), a dynamic path keyed
    by years since adoption, or the mediated ``theta * W + delta * m``.
    """

    n_entities: int = 282
    n_years: int = 10
    start_year: int = 2011
    alpha: float = 0.0
    entity_fe_sd: float = 1.0
    year_fe_sd: float = 1.0
    noise_sd: float = 1.0
    treatment: str = "random"
    treated_share: float = 0.25
    adoption_years: tuple | None = None
    always_treated_share: float = 0.0
    single_policy_share: float = 0.2
    selection_intercept: float = -1.0
    selection_coefs: tuple = ()
    beta: float = 0.0
    dynamic: dict | None = None
    pre_trend: float = 0.0
    n_controls: int = 0
    control_gamma: tuple = ()
    control_entity_sd: float = 1.0
    control_noise_sd: float = 1.0
    covariate_trend: float = 0.0
    mediator: MediatorSpec | None = None
    groups: dict | None = None
    n_indicators: int = 0
    raw_sources: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("entity_fe_sd", "year_fe_sd", "noise_sd", "control_entity_sd", "control_noise_sd"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.n_entities < 2 or self.n_years < 2:
            raise ValueError("need at least two entities and two years")
        if self.treatment not in ("random", "selection"):
            raise ValueError(f"unknown treatment rule {self.treatment!r}")
        if not 0 <= self.treated_share <= 1:
            raise ValueError("treated_share must lie in [0, 1]")
        if len(self.control_gamma) not in (0, self.n_controls):
            raise ValueError("control_gamma must have one entry per control")
        if len(self.selection_coefs) > self.n_controls:
            raise ValueError("more selection coefficients than controls")
        if self.treatment == "selection" and not self.selection_coefs:
            raise ValueError("selection treatment needs selection_coefs")
        if self.mediator is not None and isinstance(self.mediator, dict):
            object.__setattr__(self, "mediator", MediatorSpec(**self.mediator))
        if self.dynamic is not None:
            object.__setattr__(self, "dynamic", {int(k): float(v) for k, v in self.dynamic.items()})
        if self.adoption_years is not None:
            lo, hi = (int(v) for v in self.adoption_years)
            if lo > hi:
                raise ValueError("adoption_years must be (min, max)")
            object.__setattr__(self, "adoption_years", (lo, hi))
        if self.groups is not None:
            g = {str(k): (float(v[0]), float(v[1])) for k, v in self.groups.items()}
            if abs(sum(s for s, _ in g.values()) - 1.0) > 1e-9:
                raise ValueError("group shares must sum to 1")
            object.__setattr__(self, "groups", g)
        object.__setattr__(self, "control_gamma", tuple(float(v) for v in self.control_gamma))
        object.__setattr__(self, "selection_coefs", tuple(float(v) for v in self.selection_coefs))

    @property
    def years(self):
        return tuple(range(self.start_year, self.start_year + self.n_years))

    @property
    def window(self):
        if self.adoption_years is not None:
            return self.adoption_years
        return self.start_year + 2, self.start_year + self.n_years - 2

    @classmethod
    def from_dict(cls, d: dict):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown DGP keys {sorted(extra)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        if self.dynamic is not None:
            d["dynamic"] = {str(k): v for k, v in self.dynamic.items()}
        return d


def control_names(n):
    return tuple(f"x{k + 1}" for k in range(n))


def _expit(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def generate(config: DgpConfig):
    """Draw a panel. Returns ``(PanelDataset, DualTreatment, truth)``."""
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    ne, nt = cfg.n_entities, cfg.n_years
    years = np.asarray(cfg.years)
    width = max(3, len(str(ne - 1)))
    entities = tuple(f"E{i:0{width}d}" for i in range(ne))

    entity_fe = rng.normal(0.0, cfg.entity_fe_sd, ne)
    year_fe = rng.normal(0.0, cfg.year_fe_sd, nt)
    mu = rng.normal(0.0, cfg.control_entity_sd, (ne, cfg.n_controls))
    x = mu[:, :, None] + rng.normal(0.0, cfg.control_noise_sd, (ne, cfg.n_controls, nt))

    # dual-treated group
    if cfg.treatment == "random":
        n_treat = int(round(cfg.treated_share * ne))
        treated = np.zeros(ne, dtype=bool)
        treated[rng.choice(ne, n_treat, replace=False)] = True
        score = np.full(ne, cfg.treated_share)
    else:
        c = np.zeros(cfg.n_controls)
        c[:len(cfg.selection_coefs)] = cfg.selection_coefs
        score = _expit(cfg.selection_intercept + mu @ c)
        treated = rng.random(ne) < score

    lo, hi = cfg.window
    g = rng.integers(lo, hi + 1, ne)
    always = rng.random(ne) < cfg.always_treated_share
    g = np.where(always, cfg.start_year - 1, g)
    lag = rng.integers(0, 3, ne)
    a_is_late = rng.random(ne) < 0.5
    single = rng.random(ne) < cfg.single_policy_share
    single_which = rng.random(ne) < 0.5
    single_year = rng.integers(cfg.start_year, cfg.start_year + nt, ne)

    sched_a, sched_b = {}, {}
    for i, e in enumerate(entities):
        if treated[i]:
            early = int(g[i] - lag[i])
            sched_a[e], sched_b[e] = (int(g[i]), early) if a_is_late[i] else (early, int(g[i]))
        elif single[i]:
            (sched_a if single_which[i] else sched_b)[e] = int(single_year[i])
    dual = DualTreatment(TreatmentSchedule("Innovation", sched_a), TreatmentSchedule("Smart", sched_b))

    # build the panel skeleton so adoption_matrix can be reused
    skeleton = PanelDataset(entities, cfg.years, {})
    W = adoption_matrix(skeleton, dual.effective)
    rel = np.where(treated[:, None], years[None, :] - g[:, None], np.nan)

    labels = None
    beta_i = np.full(ne, cfg.beta)
    if cfg.groups:
        names = list(cfg.groups)
        counts = np.floor([cfg.groups[n][0] * ne for n in names]).astype(int)
        counts[-1] = ne - counts[:-1].sum()
        perm = rng.permutation(ne)
        labels = np.empty(ne, dtype=object)
        start = 0
        for name, cnt in zip(names, counts):
            idx = perm[start:start + cnt]
            labels[idx] = name
            beta_i[idx] = cfg.groups[name][1]
            start += cnt

    if cfg.dynamic:
        keys = sorted(cfg.dynamic)
        path = np.zeros((ne, nt))
        for i in range(ne):
            if not treated[i]:
                continue
            for t in range(nt):
                r = rel[i, t]
                if r >= 0:
                    k = min(int(r), keys[-1])
                    path[i, t] = cfg.dynamic.get(k, 0.0)
        effect = path
    else:
        effect = beta_i[:, None] * W

    pre = np.where(treated[:, None] & (rel < -1), cfg.pre_trend * (rel + 1), 0.0)

    mediator = None
    if cfg.mediator is not None:
        m = cfg.mediator
        med_fe = rng.normal(0.0, m.entity_sd, ne)
        mediator = m.phi * W + med_fe[:, None] + rng.normal(0.0, m.noise_sd, (ne, nt))
        effect = m.theta * W + m.delta * mediator

    gamma = np.asarray(cfg.control_gamma) if cfg.control_gamma else np.zeros(cfg.n_controls)
    ctrl = np.einsum("ikt,k->it", x, gamma) if cfg.n_controls else np.zeros((ne, nt))
    trend = np.zeros((ne, nt))
    if cfg.n_controls and cfg.covariate_trend:
        trend = cfg.covariate_trend * mu[:, :1] * (years[None, :] - years.mean())
    noise = rng.normal(0.0, cfg.noise_sd, (ne, nt))
    y = cfg.alpha + effect + pre + ctrl + trend + entity_fe[:, None] + year_fe[None, :] + noise

    variables = {"y": y}
    for k, name in enumerate(control_names(cfg.n_controls)):
        variables[name] = x[:, k, :]
    if mediator is not None:
        variables[cfg.mediator.name] = mediator
    if labels is not None:
        codes = {name: j for j, name in enumerate(cfg.groups)}
        variables["group"] = np.repeat(np.array([codes[l] for l in labels], float)[:, None], nt, axis=1)
    if cfg.n_indicators:
        base = y - y.min() + 1.0
        for j in range(cfg.n_indicators):
            scale = rng.uniform(0.5, 2.0)
            variables[f"ind{j + 1}"] = base * scale * np.exp(rng.normal(0.0, 0.05, (ne, nt)))
    if cfg.raw_sources:
        variables.update(_raw_sources(rng, variables, cfg))

    data = PanelDataset(entities, cfg.years, variables)
    truth = {
        "config": cfg.to_dict(),
        "treatment_variable": "Wtreat",
        "beta": cfg.beta,
        "dynamic": None if cfg.dynamic is None else {str(k): v for k, v in cfg.dynamic.items()},
        "pre_trend": cfg.pre_trend,
        "treated_entities": [entities[i] for i in np.flatnonzero(treated)],
        "dual_adoption": {e: int(gy) for e, gy in dual.effective.items()},
        "entity_fe": entity_fe.tolist(),
        "year_fe": year_fe.tolist(),
        "control_gamma": list(gamma),
        "selection_score": score.tolist(),
    }
    if cfg.mediator is not None:
        m = cfg.mediator
        truth["mediation"] = {"phi": m.phi, "delta": m.delta, "theta": m.theta,
                              "total": m.theta + m.phi * m.delta,
                              "share": m.phi * m.delta / (m.phi * m.delta + m.theta)
                              if (m.phi * m.delta + m.theta) != 0 else None}
    if labels is not None:
        truth["groups"] = {"labels": {e: labels[i] for i, e in enumerate(entities)},
                           "codes": {name: j for j, name in enumerate(cfg.groups)},
                           "beta": {name: cfg.groups[name][1] for name in cfg.groups}}
    return data, dual, truth


def _raw_sources(rng, variables, cfg):
    """Raw yearbook-style columns from which controls and mediators are derived."""
    ne, nt = cfg.n_entities, cfg.n_years
    shape = (ne, nt)
    out = {}
    x1 = variables.get("x1", rng.normal(0.0, 1.0, shape))
    out["gdp_per_capita"] = np.exp(10.0 + 0.5 * x1)
    prim = rng.uniform(5.0, 20.0, shape)
    sec = rng.uniform(30.0, 50.0, shape)
    out["ind_primary"], out["ind_secondary"], out["ind_tertiary"] = prim, sec, 100.0 - prim - sec
    out["population"] = rng.uniform(50.0, 500.0, shape)
    out["internet_users"] = out["population"] * rng.uniform(0.05, 0.6, shape)
    out["rd_capital"] = np.exp(rng.normal(8.0, 0.5, shape))
    out["gdp"] = out["gdp_per_capita"] * out["population"] / 1e4
    med = variables.get("mediator")
    ratio = (med - med.min() + 0.1) if med is not None else rng.uniform(0.5, 2.0, shape)
    out["financial_amount"] = out["gdp"] * ratio
    emp_total = rng.uniform(1e3, 1e4, shape)
    out["emp_total"] = emp_total
    for name in ("emp_research", "emp_it", "emp_finance", "emp_education"):
        out[name] = emp_total * rng.uniform(0.01, 0.06, shape)
    out["budget_total"] = rng.uniform(100.0, 1000.0, shape)
    out["scitech_spending"] = out["budget_total"] * rng.uniform(0.005, 0.05, shape)
    out["patents"] = out["population"] * rng.gamma(2.0, 2.0, shape)
    return out


def truth_json(truth) -> str:
    return json.dumps(truth, indent=2, sort_keys=True)
