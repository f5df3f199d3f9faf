"""OLS with absorbed two-way fixed effects, robust/clustered SEs, and logit.

Two-way effects on a balanced (sub)panel are removed by double demeaning.
Any other sample (e.g. a matched subset of rows) takes the exact route of
entity demeaning plus explicit year dummies, which is algebraically the
same as the dummy-variable regression.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import linalg, stats

from . import _kernels
from .panel import PanelDataset

COLLINEAR_TOL = 1e-10

_SE_ALIASES = {
    "classical": "classical", "ols": "classical", "nonrobust": "classical",
    "robust": "robust", "hc1": "robust", "hc-robust": "robust",
    "cluster": "cluster", "cluster-by-entity": "cluster",
}


class RegressionError(RuntimeError):
    """Estimation failed (rank deficiency, too few observations, ...)."""


class SeparationError(RegressionError):
    """Logit coefficients diverge because the outcome is perfectly separated."""

    def __init__(self, message, variable=None):
        super().__init__(message)
        self.variable = variable


class ConvergenceError(RegressionError):
    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


def normalize_se_type(se_type: str) -> str:
    try:
        return _SE_ALIASES[str(se_type).lower()]
    except KeyError:
        raise ValueError(f"unknown standard-error type {se_type!r}") from None


def _normalize_effects(effects) -> tuple:
    if effects is None:
        return ()
    if isinstance(effects, str):
        effects = (effects,)
    out = tuple(e for e in ("entity", "year") if e in set(effects))
    if len(out) != len(set(effects)):
        raise ValueError(f"fixed effects must be a subset of ('entity', 'year'), got {effects!r}")
    return out


@dataclass(frozen=True)
class RegressionSpec:
    """What to regress: outcome, regressors, absorbed effects, SE type, sample.

    ``sample_filter`` is an optional predicate ``f(entity, year) -> bool``.
    """

    outcome: str
    regressors: tuple
    fixed_effects: tuple = ("entity", "year")
    se_type: str = "cluster"
    sample_filter: Callable[[str, int], bool] | None = None

    def __post_init__(self):
        object.__setattr__(self, "regressors", tuple(self.regressors))
        object.__setattr__(self, "fixed_effects", _normalize_effects(self.fixed_effects))
        object.__setattr__(self, "se_type", normalize_se_type(self.se_type))
        if self.outcome in self.regressors:
            raise ValueError(f"outcome {self.outcome!r} is also a regressor")
        if len(set(self.regressors)) != len(self.regressors):
            raise ValueError("duplicate regressor")


@dataclass(frozen=True)
class RegressionResult:
    """Coefficients and inference for the kept regressors.

    ``constant`` is the intercept; with absorbed effects it is the grand-mean
    adjustment ``mean(y) - mean(X) @ params``.
    """

    names: tuple
    params: np.ndarray
    bse: np.ndarray
    tvalues: np.ndarray
    pvalues: np.ndarray
    conf_int: np.ndarray
    constant: float
    constant_se: float
    r2: float
    r2_within: float
    n_obs: int
    n_entities: int
    df_resid: int
    se_type: str
    fixed_effects: tuple
    dropped: tuple = ()
    n_clusters: int | None = None
    vcov: np.ndarray | None = field(default=None, repr=False)
    ssr: float = float("nan")

    def _pos(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            if name in self.dropped:
                raise KeyError(f"{name!r} was dropped as collinear") from None
            raise KeyError(f"{name!r} not in model") from None

    def __getitem__(self, name) -> float:
        return float(self.params[self._pos(name)])

    def se(self, name) -> float:
        return float(self.bse[self._pos(name)])

    def t(self, name) -> float:
        return float(self.tvalues[self._pos(name)])

    def p(self, name) -> float:
        return float(self.pvalues[self._pos(name)])

    def ci(self, name):
        lo, hi = self.conf_int[self._pos(name)]
        return float(lo), float(hi)

    @property
    def constant_t(self):
        return self.constant / self.constant_se if self.constant_se > 0 else float("nan")

    def rows(self):
        out = []
        for j, name in enumerate(self.names):
            out.append({"term": name, "coef": float(self.params[j]), "se": float(self.bse[j]),
                        "t": float(self.tvalues[j]), "p": float(self.pvalues[j]),
                        "ci_low": float(self.conf_int[j, 0]), "ci_high": float(self.conf_int[j, 1])})
        if np.isfinite(self.constant):
            out.append({"term": "_cons", "coef": self.constant, "se": self.constant_se,
                        "t": self.constant_t, "p": float("nan"),
                        "ci_low": float("nan"), "ci_high": float("nan")})
        return out

    def summary_dict(self):
        return {
            "coefficients": self.rows(),
            "r2": self.r2, "r2_within": self.r2_within, "n_obs": self.n_obs,
            "n_entities": self.n_entities, "df_resid": self.df_resid,
            "se_type": self.se_type, "n_clusters": self.n_clusters,
            "fixed_effects": list(self.fixed_effects), "dropped": list(self.dropped),
        }

    def to_json(self):
        return json.dumps(self.summary_dict(), indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def _codes(labels):
    uniq, codes = np.unique(np.asarray(labels), return_inverse=True)
    return codes.astype(np.int64), len(uniq)


def independent_columns(Z: np.ndarray, tol=COLLINEAR_TOL) -> np.ndarray:
    """Greedy left-to-right selection of linearly independent columns.

    A column is kept when its QR diagonal (the norm of the part not explained
    by the columns before it) exceeds ``tol`` times its own norm.
    """
    if Z.shape[1] == 0:
        return np.zeros(0, dtype=bool)
    norms = np.linalg.norm(Z, axis=0)
    r = linalg.qr(Z, mode="r")[0]
    diag = np.abs(np.diag(r))
    keep = np.zeros(Z.shape[1], dtype=bool)
    m = min(Z.shape)
    keep[:m] = (norms[:m] > 0) & (diag[:m] > tol * np.where(norms[:m] > 0, norms[:m], 1.0))
    return keep


def _year_dummies(year_codes, n_years):
    D = np.zeros((year_codes.size, max(n_years - 1, 0)))
    rows = np.flatnonzero(year_codes > 0)
    D[rows, year_codes[rows] - 1] = 1.0
    return D


def _absorb(W, ent, n_ent, yr, n_yr, effects):
    """Remove absorbed effects from columns of ``W``.

    Returns (transformed W without grand mean, nuisance columns transformed the
    same way, absorbed degrees of freedom, whether the balanced path was used).
    """
    n = W.shape[0]
    empty = np.zeros((n, 0))
    if effects == ("entity", "year"):
        if n == n_ent * n_yr and np.unique(ent * n_yr + yr).size == n:
            order = np.lexsort((yr, ent))
            cube = W[order].T.reshape(W.shape[1], n_ent, n_yr)
            dm = _kernels.demean_twoway(cube).reshape(W.shape[1], n).T
            out = np.empty_like(dm)
            out[order] = dm
            return out, empty, (n_ent - 1) + (n_yr - 1), True
        D = _year_dummies(yr, n_yr)
        both = _kernels.group_demean(np.hstack([W, D]), ent, n_ent)
        return both[:, :W.shape[1]], both[:, W.shape[1]:], n_ent - 1, False
    if effects == ("entity",):
        return _kernels.group_demean(W, ent, n_ent), empty, n_ent - 1, True
    if effects == ("year",):
        return _kernels.group_demean(W, yr, n_yr), empty, n_yr - 1, True
    return W - W.mean(axis=0), empty, 0, True


def fit_ols(y, X, names: Sequence[str], entity=None, year=None, fixed_effects=("entity", "year"),
            se_type="cluster", clusters=None, level=0.95) -> RegressionResult:
    """Array-level OLS with optional absorbed entity/year effects.

    Parameters
    ----------
    y : (n,) array
    X : (n, k) array
    names : regressor names aligned with the columns of ``X``
    entity, year : (n,) labels, required when absorbed or clustering by entity
    fixed_effects : subset of ("entity", "year")
    se_type : "classical", "robust" (HC1) or "cluster"
    clusters : (n,) cluster labels; defaults to ``entity``
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    X = np.asarray(X, dtype=np.float64).reshape(y.size, -1)
    names = tuple(names)
    if X.shape[1] != len(names):
        raise ValueError("names do not match the columns of X")
    effects = _normalize_effects(fixed_effects)
    se_type = normalize_se_type(se_type)
    n = y.size
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
        raise RegressionError("non-finite values in the estimation sample")
    if n < X.shape[1] + 2:
        raise RegressionError(f"{n} observations is too few for {X.shape[1]} regressors")

    if entity is not None:
        ent, n_ent = _codes(entity)
    else:
        ent, n_ent = np.zeros(n, dtype=np.int64), 1
    if year is not None:
        yr, n_yr = _codes(year)
    else:
        yr, n_yr = np.zeros(n, dtype=np.int64), 1
    if "entity" in effects and entity is None:
        raise ValueError("entity labels are required to absorb entity effects")
    if "year" in effects and year is None:
        raise ValueError("year labels are required to absorb year effects")

    W = np.column_stack([y, X])
    grand = W.mean(axis=0)
    Wt, nuis, absorbed_df, balanced = _absorb(W, ent, n_ent, yr, n_yr, effects)
    yt = Wt[:, 0] + grand[0]
    Xt = Wt[:, 1:] + grand[1:]
    if nuis.shape[1]:
        nuis = nuis + _year_dummies(yr, n_yr).mean(axis=0)

    # column order sets drop priority: constant, nuisance, regressors
    Z = np.column_stack([np.ones(n), nuis, Xt])
    keep = independent_columns(Z)
    if not keep[0]:
        raise RegressionError("intercept is not identified")
    n_nuis = nuis.shape[1]
    user_keep = keep[1 + n_nuis:]
    dropped = tuple(nm for nm, k in zip(names, user_keep) if not k)
    Zk = Z[:, keep]
    K = Zk.shape[1]
    df_resid = n - K - absorbed_df
    if df_resid <= 0:
        raise RegressionError(f"no residual degrees of freedom (n={n}, params={K}, absorbed={absorbed_df})")

    Q, R = np.linalg.qr(Zk)
    beta = linalg.solve_triangular(R, Q.T @ yt)
    Rinv = linalg.solve_triangular(R, np.eye(K))
    bread = Rinv @ Rinv.T
    resid = yt - Zk @ beta
    ssr = float(resid @ resid)

    n_clusters = None
    if se_type == "classical":
        V = bread * (ssr / df_resid)
        df_inf = df_resid
    elif se_type == "robust":
        S = Zk * resid[:, None]
        V = (n / df_resid) * bread @ (S.T @ S) @ bread
        df_inf = df_resid
    else:
        if clusters is None:
            if entity is None:
                raise ValueError("cluster standard errors need entity or cluster labels")
            cl, G = ent, n_ent
        else:
            cl, G = _codes(clusters)
        if G < 2:
            raise RegressionError("cluster-robust standard errors need at least two clusters")
        S = _kernels.group_sums(Zk * resid[:, None], cl, G)
        k_c = K + absorbed_df
        if "entity" in effects and _nested(ent, cl, n_ent):
            k_c -= n_ent - 1
        if n - k_c <= 0:
            raise RegressionError("too few observations for the cluster small-sample factor")
        factor = G / (G - 1) * (n - 1) / (n - k_c)
        V = factor * bread @ (S.T @ S) @ bread
        df_inf = G - 1
        n_clusters = G

    se_all = np.sqrt(np.clip(np.diag(V), 0.0, None))
    # positions of kept user regressors inside Zk
    pos = np.arange(1 + int(keep[1:1 + n_nuis].sum()), K)
    params = beta[pos]
    bse = se_all[pos]
    with np.errstate(divide="ignore", invalid="ignore"):
        tvals = params / bse
    pvals = 2.0 * stats.t.sf(np.abs(tvals), df_inf)
    q = stats.t.ppf(0.5 + level / 2.0, df_inf)
    ci = np.column_stack([params - q * bse, params + q * bse])

    tss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ssr / tss if tss > 0 else float("nan")
    if not effects:
        r2_within = r2
    else:
        y_within = Wt[:, 0]
        if nuis.shape[1]:
            coef, *_ = np.linalg.lstsq(nuis - nuis.mean(axis=0), y_within, rcond=None)
            y_within = y_within - (nuis - nuis.mean(axis=0)) @ coef
        tss_w = float(y_within @ y_within)
        r2_within = 1.0 - ssr / tss_w if tss_w > 0 else float("nan")

    kept_names = tuple(nm for nm, k in zip(names, user_keep) if k)
    return RegressionResult(
        names=kept_names, params=params, bse=bse, tvalues=tvals, pvalues=pvals, conf_int=ci,
        constant=float(beta[0]), constant_se=float(se_all[0]), r2=r2, r2_within=r2_within,
        n_obs=n, n_entities=n_ent, df_resid=df_resid, se_type=se_type, fixed_effects=effects,
        dropped=dropped, n_clusters=n_clusters, vcov=V[np.ix_(pos, pos)], ssr=ssr,
    )


def _nested(ent, cl, n_ent):
    first = np.full(n_ent, -1, dtype=np.int64)
    first[ent] = cl
    return bool(np.all(first[ent] == cl))


def sample_mask(data: PanelDataset, spec: RegressionSpec, mask=None) -> np.ndarray:
    m = np.ones(data.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).copy()
    if spec.sample_filter is not None:
        f = spec.sample_filter
        for i, e in enumerate(data.entities):
            for t, yv in enumerate(data.years):
                if m[i, t] and not f(e, yv):
                    m[i, t] = False
    return m


def design(data: PanelDataset, outcome: str, regressors: Sequence[str], mask=None):
    """Long-format arrays ``(y, X, entity, year)`` for rows selected by ``mask``."""
    data.require([outcome, *regressors], complete=False)
    m = np.ones(data.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    for name in (outcome, *regressors):
        if (data.masks[name] & m).any():
            raise RegressionError(f"variable {name!r} has missing cells in the estimation sample")
    flat = m.ravel()
    ent_idx, yr_idx = data.long_index()
    y = data[outcome].ravel()[flat]
    X = np.column_stack([data[r].ravel()[flat] for r in regressors]) if regressors else np.zeros((flat.sum(), 0))
    return y, X, ent_idx[flat], np.asarray(data.years)[yr_idx[flat]]


def ols(data: PanelDataset, spec: RegressionSpec, mask=None, clusters=None, level=0.95) -> RegressionResult:
    """Estimate ``spec`` on the panel; ``mask`` optionally restricts the rows."""
    m = sample_mask(data, spec, mask)
    n = int(m.sum())
    if n < len(spec.regressors) + 2:
        raise RegressionError(f"sample filter leaves {n} observations for {len(spec.regressors)} regressors")
    y, X, ent, yr = design(data, spec.outcome, spec.regressors, m)
    return fit_ols(y, X, spec.regressors, ent, yr, spec.fixed_effects, spec.se_type,
                   clusters=None if clusters is None else np.asarray(clusters)[m.ravel()], level=level)


def within_transform(data: PanelDataset, variables: Sequence[str], effects=("entity", "year")) -> PanelDataset:
    """Demean variables by the chosen effects (balanced panels only)."""
    effects = _normalize_effects(effects)
    data.require(variables)
    if not variables:
        return data
    cube = np.stack([data[v] for v in variables])
    if effects == ("entity", "year"):
        out = _kernels.demean_twoway(cube)
    elif effects == ("entity",):
        out = cube - cube.mean(axis=2, keepdims=True)
    elif effects == ("year",):
        out = cube - cube.mean(axis=1, keepdims=True)
    else:
        out = cube
    return data.with_variables({v: out[j] for j, v in enumerate(variables)})


# --------------------------------------------------------------------------
# Subgroups
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SkippedGroup:
    label: str
    reason: str


def entity_groups(data: PanelDataset, groups) -> dict:
    """Map entity -> label from a within-entity-constant variable or a mapping."""
    if isinstance(groups, str):
        data.require([groups])
        vals = data[groups]
        out = {}
        for i, e in enumerate(data.entities):
            row = vals[i]
            if not np.all(row == row[0]):
                raise ValueError(f"group variable {groups!r} varies within entity {e!r}")
            v = row[0]
            out[e] = str(int(v)) if float(v).is_integer() else str(v)
        return out
    missing = [e for e in data.entities if e not in groups]
    if missing:
        raise ValueError(f"no group label for entities {missing[:5]}")
    return {e: str(groups[e]) for e in data.entities}


def subgroup_regressions(data: PanelDataset, spec: RegressionSpec, groups) -> dict:
    """One independent regression per entity group (labels sorted)."""
    labels = entity_groups(data, groups)
    out = {}
    for label in sorted(set(labels.values())):
        rows = np.array([labels[e] == label for e in data.entities])
        mask = np.repeat(rows[:, None], len(data.years), axis=1)
        try:
            out[label] = ols(data, spec, mask=mask)
        except RegressionError as exc:
            out[label] = SkippedGroup(label, str(exc))
    return out


# --------------------------------------------------------------------------
# Logit
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LogitResult(RegressionResult):
    """Logit fit; ``params`` exclude the intercept, which sits in ``constant``."""

    llf: float = float("nan")
    llnull: float = float("nan")
    n_iter: int = 0
    full_params: np.ndarray | None = field(default=None, repr=False)

    @property
    def pseudo_r2(self):
        return 1.0 - self.llf / self.llnull

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64).reshape(-1, len(self.names))
        return _expit(self.constant + X @ self.params)

    def linear_predictor(self, X):
        X = np.asarray(X, dtype=np.float64).reshape(-1, len(self.names))
        return self.constant + X @ self.params


def _expit(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _loglik(y, eta, w):
    # log p = -log(1+exp(-eta)), log(1-p) = -log(1+exp(eta))
    return float(np.sum(w * (-y * np.logaddexp(0.0, -eta) - (1.0 - y) * np.logaddexp(0.0, eta))))


SEPARATION_BOUND = 30.0


def fit_logit(y, X, names: Sequence[str], weights=None, tol=1e-8, max_iter=100, level=0.95) -> LogitResult:
    """Maximum-likelihood logit by iteratively reweighted least squares.

    An intercept is always included. The iterations run on standardized
    regressors; a standardized coefficient beyond 30 in absolute value is
    taken as perfect separation.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    X = np.asarray(X, dtype=np.float64).reshape(y.size, -1)
    names = tuple(names)
    n, k = X.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64).ravel()
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise RegressionError("logit outcome must be 0/1")
    ybar = float(np.sum(w * y) / np.sum(w))
    if ybar in (0.0, 1.0):
        raise RegressionError("logit outcome has no variation")

    mu = (w @ X) / w.sum()
    sd = np.sqrt((w @ (X - mu) ** 2) / w.sum())
    if np.any(sd == 0):
        bad = names[int(np.flatnonzero(sd == 0)[0])]
        raise RegressionError(f"logit regressor {bad!r} is constant")
    Xs = np.column_stack([np.ones(n), (X - mu) / sd])
    keep = independent_columns(Xs * np.sqrt(w)[:, None])
    dropped = tuple(nm for nm, kk in zip(names, keep[1:]) if not kk)
    Xs = Xs[:, keep]
    kept_idx = np.flatnonzero(keep[1:])

    b = np.zeros(Xs.shape[1])
    b[0] = np.log(ybar / (1.0 - ybar))
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = Xs @ b
        p = _expit(eta)
        v = w * p * (1.0 - p)
        if np.any(v[w > 0] <= 1e-300):
            j = int(np.argmax(np.abs(b[1:]))) if b.size > 1 else 0
            raise SeparationError(f"perfect separation on {names[kept_idx[j]]!r}", names[kept_idx[j]])
        z = eta + (y - p) / np.where(p * (1 - p) > 0, p * (1 - p), 1.0)
        sw = np.sqrt(v)
        b_new = np.linalg.lstsq(Xs * sw[:, None], z * sw, rcond=None)[0]
        delta = float(np.max(np.abs(b_new - b)))
        b = b_new
        trace.append((it, delta, _loglik(y, Xs @ b, w)))
        big = np.abs(b[1:]) > SEPARATION_BOUND
        if big.any():
            j = int(np.flatnonzero(big)[0])
            raise SeparationError(f"perfect separation on {names[kept_idx[j]]!r}", names[kept_idx[j]])
        if delta < tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"logit did not converge in {max_iter} iterations", trace)

    slopes = b[1:] / sd[kept_idx]
    intercept = b[0] - float(np.sum(b[1:] * mu[kept_idx] / sd[kept_idx]))
    Xk = np.column_stack([np.ones(n), X[:, kept_idx]])
    full = np.concatenate([[intercept], slopes])
    eta = Xk @ full
    p = _expit(eta)
    info = (Xk * (w * p * (1 - p))[:, None]).T @ Xk
    V = np.linalg.inv(info)
    se = np.sqrt(np.diag(V))
    zvals = full / se
    pvals = 2.0 * stats.norm.sf(np.abs(zvals))
    q = stats.norm.ppf(0.5 + level / 2.0)
    llf = _loglik(y, eta, w)
    llnull = float(np.sum(w * (y * np.log(ybar) + (1 - y) * np.log(1 - ybar))))
    nobs = int(round(w.sum()))
    return LogitResult(
        names=tuple(names[j] for j in kept_idx), params=slopes, bse=se[1:], tvalues=zvals[1:],
        pvalues=pvals[1:], conf_int=np.column_stack([slopes - q * se[1:], slopes + q * se[1:]]),
        constant=float(intercept), constant_se=float(se[0]),
        r2=1.0 - llf / llnull, r2_within=float("nan"), n_obs=nobs, n_entities=0,
        df_resid=nobs - len(full), se_type="classical", fixed_effects=(), dropped=dropped,
        vcov=V[1:, 1:], llf=llf, llnull=llnull, n_iter=it, full_params=full,
    )


def logit(data: PanelDataset, spec: RegressionSpec, mask=None) -> LogitResult:
    """Pooled logit of a 0/1 panel variable (no absorbed effects)."""
    if spec.fixed_effects:
        spec = RegressionSpec(spec.outcome, spec.regressors, (), "classical", spec.sample_filter)
    m = sample_mask(data, spec, mask)
    y, X, _, _ = design(data, spec.outcome, spec.regressors, m)
    return fit_logit(y, X, spec.regressors)
