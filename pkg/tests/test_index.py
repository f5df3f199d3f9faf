import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from paneleval.index import (IndexBuildError, IndexSpec, IndexWeights, build_index, composite_index,
                             entropy_weights, entropy_weights_array, industrial_structure_index, pca_weights,
                             pca_weights_array, standardize_minmax, standardize_zscore)
from paneleval.panel import PanelDataset, stack_entities


def cells(*cols, names=None):
    """Panel with one entity per cell (single year)."""
    n = len(cols[0])
    names = names or [f"v{j}" for j in range(len(cols))]
    return PanelDataset([f"E{i}" for i in range(n)], [2011],
                        {nm: np.asarray(c, float).reshape(n, 1) for nm, c in zip(names, cols)})


def brute_entropy_weights(columns, shift=1e-4):
    """Spreadsheet-style entropy weights with explicit loops."""
    n = len(columns[0])
    d = []
    for col in columns:
        shifted = [v + shift for v in col]
        total = sum(shifted)
        h = 0.0
        for v in shifted:
            p = v / total
            if p > 0:
                h -= p * math.log(p)
        d.append(1.0 - h / math.log(n))
    s = sum(d)
    return [di / s for di in d]


def jacobi_eigh(a, tol=1e-15, sweeps=100):
    """Cyclic Jacobi eigenvalue algorithm for a symmetric matrix."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2 * a[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1))
                c = 1 / math.sqrt(t * t + 1)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q], rot[q, p] = s, -s
                a = rot.T @ a @ rot
                v = v @ rot
    return np.diag(a), v


def oracle_pca_weights(x):
    corr = np.corrcoef(x, rowvar=False)
    vals, vecs = jacobi_eigh(corr)
    keep = vals >= 1.0 - 1e-9
    raw = np.zeros(x.shape[1])
    for k in np.flatnonzero(keep):
        raw += vals[k] / vals[keep].sum() * np.abs(vecs[:, k]) * math.sqrt(vals[k])
    return raw / raw.sum()


# ---- standardization -------------------------------------------------------

def test_minmax_examples():
    d = cells([0, 5, 10])
    np.testing.assert_allclose(standardize_minmax(d, "v0", "positive")["v0"].ravel(), [0, 0.5, 1])
    np.testing.assert_allclose(standardize_minmax(d, "v0", "-")["v0"].ravel(), [1, 0.5, 0])
    with pytest.raises(IndexBuildError, match="v0"):
        standardize_minmax(cells([3, 3, 3]), "v0")


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=20), st.floats(0.01, 100), st.floats(-100, 100))
def test_minmax_affine_invariant(vals, a, b):
    x = np.array(vals)
    if np.ptp(x) < 1e-3:
        return
    base = standardize_minmax(cells(x), "v0")["v0"]
    moved = standardize_minmax(cells(a * x + b), "v0")["v0"]
    np.testing.assert_allclose(base, moved, atol=1e-9)
    assert base.min() == 0.0 and base.max() == 1.0


def test_zscore_sample_sd():
    np.testing.assert_allclose(standardize_zscore(cells([1, 2, 3]), "v0")["v0"].ravel(), [-1, 0, 1], atol=1e-15)
    with pytest.raises(IndexBuildError):
        standardize_zscore(cells([2, 2, 2]), "v0")


def test_zscore_idempotent(rng):
    d = standardize_zscore(cells(rng.normal(size=40)), "v0")
    again = standardize_zscore(d, "v0")
    np.testing.assert_allclose(again["v0"], d["v0"], atol=1e-12)


# ---- entropy ---------------------------------------------------------------

def test_entropy_toy_fixture_matches_oracle():
    a, b = [0, 0, 0, 1], [0.25, 0.25, 0.25, 0.25]
    spec = IndexSpec((("A", "+"), ("B", "+")))
    w = entropy_weights(cells(a, b, names=["A", "B"]), spec)
    np.testing.assert_allclose(w.weights, brute_entropy_weights([a, b]), atol=1e-9, rtol=0)
    assert w.weights[0] > 0.999 and w.weights[1] < 1e-3


def test_entropy_symmetry(rng):
    x = rng.uniform(size=30)
    w, _, _ = entropy_weights_array(np.column_stack([x, rng.permutation(x)]))
    np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-12)


def test_entropy_uniform_indicator_gets_zero(rng):
    w, _, _ = entropy_weights_array(np.column_stack([np.full(50, 0.3), rng.uniform(size=50)]))
    assert w[0] < 1e-3


def test_entropy_no_information():
    with pytest.raises(IndexBuildError, match="no information"):
        entropy_weights_array(np.full((5, 2), 0.5))


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 40), st.integers(2, 6), st.integers(0, 2 ** 31))
def test_entropy_weights_valid_and_match_oracle(n, k, seed):
    r = np.random.default_rng(seed)
    x = r.uniform(size=(n, k)) ** r.uniform(0.2, 5, k)
    try:
        w, _, _ = entropy_weights_array(x)
    except IndexBuildError:
        return
    assert abs(w.sum() - 1.0) <= 1e-9
    assert np.all(w >= 0)
    np.testing.assert_allclose(w, brute_entropy_weights([x[:, j].tolist() for j in range(k)]), atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_weights_permutation_equivariant(seed):
    r = np.random.default_rng(seed)
    x = r.uniform(size=(25, 4)) ** np.array([0.5, 1, 2, 3])
    perm = r.permutation(4)
    for fn in (lambda m: entropy_weights_array(m)[0], lambda m: pca_weights_array(m)[0]):
        np.testing.assert_allclose(fn(x)[perm], fn(x[:, perm]), atol=1e-10)


def test_entropy_duplicated_rows_invariant(rng):
    d = PanelDataset([f"E{i}" for i in range(8)], [2011, 2012, 2013],
                     {f"i{j}": rng.uniform(0, 10, (8, 3)) for j in range(3)})
    spec = IndexSpec(tuple((f"i{j}", "+") for j in range(3)))
    _, w1 = build_index(d, spec)
    _, w2 = build_index(stack_entities(d, d, suffixes=["", "_dup"]), spec)
    np.testing.assert_allclose(w1.weights, w2.weights, rtol=0, atol=1e-12)


# ---- PCA -------------------------------------------------------------------

def test_pca_perfectly_correlated():
    x = np.linspace(0, 1, 20)
    w, vals, kept, _ = pca_weights_array(np.column_stack([x, 3 * x + 1]))
    np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-12)
    assert kept == 1


def test_pca_uncorrelated():
    a = np.array([1.0, -1.0, 1.0, -1.0])
    b = np.array([1.0, 1.0, -1.0, -1.0])
    w, vals, kept, _ = pca_weights_array(np.column_stack([a, b]))
    np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-12)


def test_pca_block_correlation_matches_jacobi_oracle(rng):
    z = rng.normal(size=(500, 2))
    a = z[:, 0]
    b = 0.8 * z[:, 0] + 0.6 * rng.normal(size=500)
    c = z[:, 1]
    x = np.column_stack([a, b, c])
    w, _, _, _ = pca_weights_array(x)
    np.testing.assert_allclose(w, oracle_pca_weights(x), atol=1e-8, rtol=0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(2, 6))
def test_pca_matches_oracle_random(seed, k):
    r = np.random.default_rng(seed)
    x = r.normal(size=(60, k)) @ r.normal(size=(k, k))
    w, _, _, _ = pca_weights_array(x)
    np.testing.assert_allclose(w, oracle_pca_weights(x), atol=1e-8, rtol=0)
    assert abs(w.sum() - 1) <= 1e-9


def test_pca_weights_report(rng):
    d = cells(rng.uniform(size=30), rng.uniform(size=30), rng.uniform(size=30))
    spec = IndexSpec((("v0", "+"), ("v1", "+"), ("v2", "-")), "pca")
    w = pca_weights(d, spec)
    rep = w.report(spec)
    assert rep["method"] == "pca" and "recipe" in rep
    assert [r["direction"] for r in rep["indicators"]] == ["positive", "positive", "negative"]


# ---- composite and helpers ---------------------------------------------------

def test_composite_examples():
    d = cells([0.2], [0.6])
    w = IndexWeights(("v0", "v1"), np.array([0.5, 0.5]), "entropy")
    assert composite_index(d, w, 100.0)["DEI"][0, 0] == pytest.approx(40.0)
    d1 = cells([0.1, 0.7], [0.0, 0.0])
    w1 = IndexWeights(("v0", "v1"), np.array([1.0, 0.0]), "entropy")
    np.testing.assert_array_equal(composite_index(d1, w1, 1.0)["DEI"], d1["v0"])


def test_index_weights_validation():
    with pytest.raises(IndexBuildError):
        IndexWeights(("a", "b"), np.array([0.6, 0.6]), "entropy")
    with pytest.raises(IndexBuildError):
        IndexWeights(("a", "b"), np.array([1.2, -0.2]), "entropy")


def test_index_spec_validation():
    with pytest.raises(IndexBuildError):
        IndexSpec((("a", "+"),))
    with pytest.raises(IndexBuildError):
        IndexSpec((("a", "+"), ("b", "up")))
    with pytest.raises(IndexBuildError):
        IndexSpec((("a", "+"), ("b", "+")), method="factor")


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(0, 19), st.floats(0.0, 1.0))
def test_composite_monotone(seed, cell, bump):
    r = np.random.default_rng(seed)
    x = r.uniform(size=(20, 3))
    w = IndexWeights(("v0", "v1", "v2"), np.array([0.2, 0.3, 0.5]), "entropy")
    base = composite_index(cells(*x.T), w)["DEI"]
    x2 = x.copy()
    x2[cell, 1] += bump
    assert composite_index(cells(*x2.T), w)["DEI"][cell, 0] >= base[cell, 0]


def test_build_index_keeps_raw_columns(rng):
    d = cells(rng.uniform(1, 5, 10), rng.uniform(1, 5, 10))
    out, w = build_index(d, IndexSpec((("v0", "+"), ("v1", "-"))))
    np.testing.assert_array_equal(out["v0"], d["v0"])
    assert 0 <= out["DEI"].min() and out["DEI"].max() <= 100


@pytest.mark.parametrize("shares, expected", [((1, 0, 0), 1), ((0, 0, 1), 3), ((20, 40, 40), 220)])
def test_industrial_structure(shares, expected):
    d = cells(*[[s] for s in shares], names=["a", "b", "c"])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        out = industrial_structure_index(d, ["a", "b", "c"])
    assert out["industrial_structure"][0, 0] == pytest.approx(expected)


def test_industrial_structure_warns_on_bad_shares():
    d = cells([10], [10], [10], names=["a", "b", "c"])
    with pytest.warns(UserWarning):
        industrial_structure_index(d, ["a", "b", "c"])
