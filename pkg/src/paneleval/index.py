"""Composite indices: min-max / z-score standardization, entropy and PCA weights."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .panel import PanelDataset, PanelError

ENTROPY_SHIFT = 1e-4
KAISER_TOL = 1e-9


class IndexBuildError(PanelError):
    pass


@dataclass(frozen=True)
class IndexSpec:
    """Indicators (name, direction) combined into one index.

    Directions are ``"+"`` / ``"positive"`` or ``"-"`` / ``"negative"``.
    """

    indicators: tuple
    method: str = "entropy"
    name: str = "DEI"

    def __post_init__(self):
        inds = []
        for item in self.indicators:
            var, direction = item
            inds.append((var, _direction(direction)))
        if len(inds) < 2:
            raise IndexBuildError("an index needs at least two indicators")
        if len({v for v, _ in inds}) != len(inds):
            raise IndexBuildError("duplicate indicator")
        if self.method not in ("entropy", "pca"):
            raise IndexBuildError(f"unknown weighting method {self.method!r}")
        object.__setattr__(self, "indicators", tuple(inds))

    @property
    def names(self):
        return [v for v, _ in self.indicators]


def _direction(d):
    d = str(d).strip().lower()
    if d in ("+", "positive", "pos"):
        return "positive"
    if d in ("-", "negative", "neg"):
        return "negative"
    raise IndexBuildError(f"indicator direction must be positive or negative, got {d!r}")


@dataclass(frozen=True)
class IndexWeights:
    indicators: tuple
    weights: np.ndarray
    method: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise IndexBuildError(f"invalid weight vector {w}")
        object.__setattr__(self, "weights", w)

    def as_dict(self):
        return dict(zip(self.indicators, self.weights.tolist()))

    def report(self, spec: IndexSpec | None = None):
        directions = dict(spec.indicators) if spec is not None else {}
        rows = []
        for j, name in enumerate(self.indicators):
            row = {"indicator": name, "direction": directions.get(name), "weight": float(self.weights[j])}
            if self.method == "entropy":
                row["entropy"] = float(self.diagnostics["entropy"][j])
                row["divergence"] = float(self.diagnostics["divergence"][j])
            else:
                row["loading_weight_raw"] = float(self.diagnostics["raw"][j])
            rows.append(row)
        out = {"method": self.method, "indicators": rows}
        if self.method == "pca":
            out["eigenvalues"] = [float(v) for v in self.diagnostics["eigenvalues"]]
            out["retained"] = int(self.diagnostics["retained"])
            out["recipe"] = self.diagnostics["recipe"]
        return out

    def to_json(self, spec=None):
        return json.dumps(self.report(spec), indent=2)


def standardize_minmax(data: PanelDataset, indicator: str, direction="positive", out=None) -> PanelDataset:
    """Pooled min-max scaling to [0, 1]; negative indicators are reversed."""
    data.require([indicator])
    x = data[indicator]
    lo, hi = x.min(), x.max()
    rng = hi - lo
    if not rng > 0:
        raise IndexBuildError(f"indicator {indicator!r} has zero range")
    if _direction(direction) == "positive":
        z = (x - lo) / rng
    else:
        z = (hi - x) / rng
    return data.with_variable(out or indicator, z)


def standardize_zscore(data: PanelDataset, indicator: str, out=None) -> PanelDataset:
    """Pooled z-score using the sample (n - 1) standard deviation."""
    data.require([indicator])
    x = data[indicator]
    sd = x.std(ddof=1) if x.size > 1 else 0.0
    if not sd > 0:
        raise IndexBuildError(f"indicator {indicator!r} has zero standard deviation")
    return data.with_variable(out or indicator, (x - x.mean()) / sd)


def _indicator_matrix(data, spec):
    data.require(spec.names)
    return np.column_stack([data[n].ravel() for n in spec.names])


def entropy_weights_array(x: np.ndarray, shift=ENTROPY_SHIFT):
    """Entropy weights for an ``(n_cells, n_indicators)`` standardized matrix."""
    x = np.asarray(x, dtype=np.float64) + shift
    n = x.shape[0]
    if n < 2:
        raise IndexBuildError("entropy weights need at least two cells")
    if np.any(x < 0):
        raise IndexBuildError("entropy weights need non-negative standardized inputs")
    p = x / x.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(p), 0.0)
    e = -plogp.sum(axis=0) / np.log(n)
    d = 1.0 - e
    # entropy of a uniform column can land a rounding error above 1
    d = np.where((d < 0) & (d > -1e-10), 0.0, d)
    total = d.sum()
    if not total > 0:
        raise IndexBuildError("no information content: every indicator is uniform")
    return d / total, e, d


def entropy_weights(data: PanelDataset, spec: IndexSpec, shift=ENTROPY_SHIFT) -> IndexWeights:
    """Entropy weights over indicators already standardized to [0, 1]."""
    w, e, d = entropy_weights_array(_indicator_matrix(data, spec), shift)
    return IndexWeights(tuple(spec.names), w, "entropy",
                        {"entropy": e, "divergence": d, "shift": shift})


def pca_weights_array(x: np.ndarray):
    """Kaiser-retained, variance-weighted absolute loadings of the correlation matrix.

    Loadings are eigenvector entries scaled by sqrt(eigenvalue).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] < 2:
        raise IndexBuildError("PCA weights need at least two indicators")
    sd = x.std(axis=0)
    if np.any(sd == 0):
        raise IndexBuildError("PCA weights undefined for a constant indicator")
    corr = np.corrcoef(x, rowvar=False)
    vals, vecs = np.linalg.eigh(corr)
    if vals.min() < -1e-8:
        raise IndexBuildError(f"correlation matrix is not positive semidefinite (min eigenvalue {vals.min():.3g})")
    order = np.argsort(vals)[::-1]
    vals, vecs = np.clip(vals[order], 0.0, None), vecs[:, order]
    keep = vals >= 1.0 - KAISER_TOL
    lam = vals[keep]
    loadings = np.abs(vecs[:, keep]) * np.sqrt(lam)
    raw = loadings @ (lam / lam.sum())
    return raw / raw.sum(), vals, int(keep.sum()), raw


def pca_weights(data: PanelDataset, spec: IndexSpec) -> IndexWeights:
    w, vals, retained, raw = pca_weights_array(_indicator_matrix(data, spec))
    return IndexWeights(tuple(spec.names), w, "pca", {
        "eigenvalues": vals, "retained": retained, "raw": raw,
        "recipe": "kaiser(eigenvalue>=1); weight_j ~ sum_k (lambda_k/sum lambda) |v_jk| sqrt(lambda_k)",
    })


def composite_index(data: PanelDataset, weights: IndexWeights, scale=100.0, name="DEI") -> PanelDataset:
    """Append ``scale * sum_j w_j x_j`` built from standardized indicator columns."""
    data.require(weights.indicators)
    total = np.zeros(data.shape)
    for w, ind in zip(weights.weights, weights.indicators):
        total = total + w * data[ind]
    return data.with_variable(name, scale * total)


def build_index(data: PanelDataset, spec: IndexSpec, scale=100.0):
    """Standardize, weight and combine; the index is appended to ``data``.

    Returns the extended dataset and the weights.
    """
    std = data
    for ind, direction in spec.indicators:
        std = standardize_minmax(std, ind, direction)
    if spec.method == "entropy":
        weights = entropy_weights(std, spec)
    else:
        weights = pca_weights(std, spec)
    idx = composite_index(std, weights, scale, spec.name)[spec.name]
    return data.with_variable(spec.name, idx), weights


def industrial_structure_index(data: PanelDataset, shares, name="industrial_structure") -> PanelDataset:
    """Weighted sum ``1*s1 + 2*s2 + 3*s3`` of primary/secondary/tertiary shares."""
    if len(shares) != 3:
        raise IndexBuildError("industrial structure index needs exactly three share columns")
    data.require(shares)
    s = [data[c] for c in shares]
    total = s[0] + s[1] + s[2]
    ok = (np.abs(total - 1.0) <= 0.02) | (np.abs(total - 100.0) <= 2.0)
    if not ok.all():
        warnings.warn(f"{int((~ok).sum())} cells have industry shares summing to neither 1 nor 100",
                      stacklevel=2)
    return data.with_variable(name, s[0] + 2.0 * s[1] + 3.0 * s[2])
