import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from paneleval.dgp import DgpConfig, generate
from paneleval.did import TREATMENT, adoption_matrix
from paneleval.panel import PanelDataset
from paneleval.regression import (RegressionError, RegressionSpec, SeparationError, SkippedGroup,
                                  fit_logit, fit_ols, logit, ols, subgroup_regressions, within_transform)

from conftest import random_panel


def lsdv(y, X, ent, yr, se_type="classical"):
    """Explicit-dummy OLS oracle: intercept, regressors, entity and year dummies.

    Cluster SEs use the entity-nested small-sample convention: entity dummies
    are not counted in K because they are nested in the clusters.
    """
    n = y.size
    ue, uy = np.unique(ent), np.unique(yr)
    De = (ent[:, None] == ue[None, 1:]).astype(float)
    Dy = (yr[:, None] == uy[None, 1:]).astype(float)
    Z = np.column_stack([X, np.ones(n), De, Dy])
    P = Z.shape[1]
    b = np.linalg.solve(Z.T @ Z, Z.T @ y)
    e = y - Z @ b
    A = np.linalg.inv(Z.T @ Z)
    k = X.shape[1]
    if se_type == "classical":
        V = A * (e @ e) / (n - P)
    elif se_type == "robust":
        V = n / (n - P) * A @ (Z.T * e ** 2) @ Z @ A
    else:
        G = ue.size
        meat = np.zeros((P, P))
        for g in ue:
            s = Z[ent == g].T @ e[ent == g]
            meat += np.outer(s, s)
        kc = P - (G - 1)
        V = G / (G - 1) * (n - 1) / (n - kc) * A @ meat @ A
    return b[:k], np.sqrt(np.diag(V))[:k], e


def long(d, names):
    ent, yr = d.long_index()
    return [d[n].ravel() for n in names], ent, np.asarray(d.years)[yr]


def test_noiseless_line():
    x = np.arange(10.0)
    res = fit_ols(2 * x, x[:, None], ["x"], fixed_effects=(), se_type="classical")
    assert res["x"] == pytest.approx(2.0, abs=1e-12)
    assert res.constant == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["classical", "robust", "cluster"]))
def test_twoway_equals_lsdv(seed, se_type):
    d = random_panel(seed)
    (y, x1, x2), ent, yr = long(d, ["y", "x1", "x2"])
    X = np.column_stack([x1, x2])
    res = ols(d, RegressionSpec("y", ("x1", "x2"), se_type=se_type))
    b, se, _ = lsdv(y, X, ent, yr, se_type)
    np.testing.assert_allclose(res.params, b, atol=1e-8, rtol=0)
    np.testing.assert_allclose(res.bse, se, rtol=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_unbalanced_subsample_equals_lsdv(seed):
    d = random_panel(seed, 12, 6)
    mask = np.random.default_rng(seed).random(d.shape) < 0.7
    mask[:, 0] = True  # every entity keeps at least one row
    res = ols(d, RegressionSpec("y", ("x1", "x2"), se_type="cluster"), mask=mask)
    y, x1, x2 = (d[n].ravel()[mask.ravel()] for n in ("y", "x1", "x2"))
    ent, yr = (a[mask.ravel()] for a in d.long_index())
    b, se, _ = lsdv(y, np.column_stack([x1, x2]), ent, yr, "cluster")
    np.testing.assert_allclose(res.params, b, atol=1e-8, rtol=0)
    np.testing.assert_allclose(res.bse, se, rtol=1e-8)


def test_r2_within_and_overall(rng):
    d = random_panel(7)
    (y, x1, x2), ent, yr = long(d, ["y", "x1", "x2"])
    res = ols(d, RegressionSpec("y", ("x1", "x2"), se_type="classical"))
    _, _, e = lsdv(y, np.column_stack([x1, x2]), ent, yr)
    assert res.ssr == pytest.approx(e @ e, rel=1e-10)
    assert res.r2 == pytest.approx(1 - (e @ e) / ((y - y.mean()) @ (y - y.mean())), rel=1e-10)
    yw = within_transform(d, ["y"])["y"].ravel()
    assert res.r2_within == pytest.approx(1 - (e @ e) / (yw @ yw), rel=1e-10)
    assert res.df_resid == 60 - 2 - 1 - 9 - 5


def test_constant_is_grand_mean_adjustment():
    d = random_panel(3)
    res = ols(d, RegressionSpec("y", ("x1", "x2")))
    expected = d["y"].mean() - d["x1"].mean() * res["x1"] - d["x2"].mean() * res["x2"]
    assert res.constant == pytest.approx(expected, abs=1e-12)


def test_t_equals_coef_over_se():
    res = ols(random_panel(11), RegressionSpec("y", ("x1", "x2")))
    np.testing.assert_allclose(np.abs(res.tvalues), np.abs(res.params) / res.bse, rtol=1e-10)


def test_within_transform_examples():
    d = PanelDataset(["A", "B"], [1, 2], {"v": [[1.0, 2.0], [3.0, 5.0]], "c": [[4.0, 4.0], [4.0, 4.0]],
                                          "e": [[1.0, 1.0], [7.0, 7.0]]})
    out = within_transform(d, ["v", "c", "e"])
    np.testing.assert_allclose(out["v"], [[0.25, -0.25], [-0.25, 0.25]], atol=1e-15)
    np.testing.assert_allclose(out["c"], 0, atol=1e-15)
    np.testing.assert_allclose(within_transform(d, ["e"], ("entity",))["e"], 0, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 9), st.integers(2, 9))
def test_within_means_vanish(seed, ne, nt):
    d = random_panel(seed, ne, nt, names=("v",))
    w = within_transform(d, ["v"])["v"]
    assert np.abs(w.mean(axis=0)).max() < 1e-10
    assert np.abs(w.mean(axis=1)).max() < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([(), ("entity",), ("year",), ("entity", "year")]))
def test_residuals_orthogonal(seed, effects):
    d = random_panel(seed)
    res = ols(d, RegressionSpec("y", ("x1", "x2"), fixed_effects=effects, se_type="classical"))
    (y, x1, x2), ent, yr = long(d, ["y", "x1", "x2"])
    # rebuild residuals from the transformed data
    w = within_transform(d, ["y", "x1", "x2"], effects)
    e = w["y"].ravel() - res["x1"] * w["x1"].ravel() - res["x2"] * w["x2"].ravel()
    if not effects:
        e = e - e.mean()
    for x in (w["x1"].ravel(), w["x2"].ravel()):
        assert abs(x @ e) < 1e-8 * max(1.0, np.linalg.norm(x) * np.linalg.norm(e))


def test_singleton_clusters_equal_hc1():
    d = random_panel(5)
    y, X = d["y"].ravel(), np.column_stack([d["x1"].ravel(), d["x2"].ravel()])
    robust = fit_ols(y, X, ["a", "b"], fixed_effects=(), se_type="robust")
    cl = fit_ols(y, X, ["a", "b"], fixed_effects=(), se_type="cluster", clusters=np.arange(y.size))
    np.testing.assert_allclose(cl.bse, robust.bse, rtol=1e-12)


def test_cluster_needs_two_clusters():
    d = random_panel(5)
    y, X = d["y"].ravel(), d["x1"].ravel()[:, None]
    with pytest.raises(RegressionError, match="two clusters"):
        fit_ols(y, X, ["a"], fixed_effects=(), se_type="cluster", clusters=np.zeros(y.size))


def test_collinear_column_dropped():
    d = random_panel(9)
    d = d.with_variable("x3", 2 * d["x1"] - d["x2"])
    res = ols(d, RegressionSpec("y", ("x1", "x2", "x3")))
    assert res.dropped == ("x3",)
    ref = ols(d, RegressionSpec("y", ("x1", "x2")))
    np.testing.assert_allclose(res.params, ref.params, atol=1e-12)
    with pytest.raises(KeyError, match="collinear"):
        res["x3"]


def test_entity_constant_regressor_absorbed():
    d = random_panel(9)
    d = d.with_variable("z", np.repeat(np.arange(10.0)[:, None], 6, axis=1))
    res = ols(d, RegressionSpec("y", ("x1", "z")))
    assert "z" in res.dropped


def test_spec_validation():
    with pytest.raises(ValueError):
        RegressionSpec("y", ("y",))
    with pytest.raises(ValueError):
        RegressionSpec("y", ("x",), se_type="bootstrap")
    with pytest.raises(ValueError):
        RegressionSpec("y", ("x",), fixed_effects=("city",))


def test_sample_filter_and_too_few():
    d = random_panel(1)
    spec = RegressionSpec("y", ("x1",), sample_filter=lambda e, y: y >= 2013)
    res = ols(d, spec)
    assert res.n_obs == 10 * 4
    tiny = RegressionSpec("y", ("x1", "x2"), sample_filter=lambda e, y: e == "C00" and y < 2013)
    with pytest.raises(RegressionError):
        ols(d, tiny)


# ---- subgroups ---------------------------------------------------------------

def test_subgroups_identical_and_whole():
    base = random_panel(21, 6, 6)
    twin = PanelDataset([e + "b" for e in base.entities], base.years, base.variables)
    from paneleval.panel import stack_entities
    d = stack_entities(base, twin)
    labels = {e: ("g1" if e.endswith("b") else "g0") for e in d.entities}
    spec = RegressionSpec("y", ("x1", "x2"))
    out = subgroup_regressions(d, spec, labels)
    np.testing.assert_allclose(out["g0"].params, out["g1"].params, atol=1e-12)
    np.testing.assert_allclose(out["g0"].bse, out["g1"].bse, rtol=1e-10)
    whole = subgroup_regressions(d, spec, {e: "all" for e in d.entities})["all"]
    np.testing.assert_allclose(whole.params, ols(d, spec).params, atol=1e-12)


def test_subgroup_too_small_is_skipped():
    d = random_panel(4, 6, 3)
    labels = {e: ("tiny" if e == "C00" else "big") for e in d.entities}
    out = subgroup_regressions(d, RegressionSpec("y", ("x1", "x2")), labels)
    assert isinstance(out["tiny"], SkippedGroup)
    assert not isinstance(out["big"], SkippedGroup)


def test_subgroup_from_panel_variable():
    d = random_panel(4, 6, 4)
    d = d.with_variable("region", np.repeat(np.array([0, 0, 0, 1, 1, 1.0])[:, None], 4, axis=1))
    out = subgroup_regressions(d, RegressionSpec("y", ("x1",)), "region")
    assert sorted(out) == ["0", "1"]


def test_subgroup_planted_betas_recovered():
    cfg = DgpConfig(n_entities=300, n_years=10, groups={"EAST": (0.5, 1.75), "WEST": (0.5, 0.18)},
                    treated_share=0.5, seed=3)
    data, dual, truth = generate(cfg)
    data = data.with_variable(TREATMENT, adoption_matrix(data, dual.effective))
    out = subgroup_regressions(data, RegressionSpec("y", (TREATMENT,)), truth["groups"]["labels"])
    for g, beta in (("EAST", 1.75), ("WEST", 0.18)):
        assert abs(out[g][TREATMENT] - beta) < 4 * out[g].se(TREATMENT)


# ---- logit -------------------------------------------------------------------

def newton_raphson_logit(y, X, tol=1e-13, max_iter=200):
    """Plain Newton iterations on the unstandardized log-likelihood."""
    Z = np.column_stack([np.ones(len(y)), X])
    b = np.zeros(Z.shape[1])
    for _ in range(max_iter):
        p = 1 / (1 + np.exp(-Z @ b))
        g = Z.T @ (y - p)
        H = (Z * (p * (1 - p))[:, None]).T @ Z
        step = np.linalg.solve(H, g)
        b = b + step
        if np.max(np.abs(step)) < tol:
            break
    return b


def loglik(b, y, Z):
    eta = Z @ b
    return float(np.sum(y * eta - np.logaddexp(0, eta)))


def logit_sample(seed, n=200, beta=(0.5, -1.0)):
    r = np.random.default_rng(seed)
    X = r.normal(size=(n, len(beta)))
    y = (r.random(n) < 1 / (1 + np.exp(-(0.2 + X @ np.asarray(beta))))).astype(float)
    return y, X


@pytest.mark.parametrize("seed", range(5))
def test_logit_matches_newton_raphson(seed):
    y, X = logit_sample(seed)
    res = fit_logit(y, X, ["a", "b"])
    b = newton_raphson_logit(y, X)
    np.testing.assert_allclose(np.r_[res.constant, res.params], b, atol=1e-6)


def test_logit_loglik_matches_quasi_newton_optimum():
    y, X = logit_sample(42)
    res = fit_logit(y, X, ["a", "b"])
    Z = np.column_stack([np.ones(len(y)), X])
    opt = optimize.minimize(lambda b: -loglik(b, y, Z), np.zeros(3),
                            jac=lambda b: -(Z.T @ (y - 1 / (1 + np.exp(-Z @ b)))), method="BFGS",
                            options={"gtol": 1e-12})
    assert res.llf == pytest.approx(-opt.fun, abs=1e-9)
    assert res.llf >= -opt.fun - 1e-12


def test_logit_standard_errors_are_inverse_information():
    y, X = logit_sample(8)
    res = fit_logit(y, X, ["a", "b"])
    Z = np.column_stack([np.ones(len(y)), X])
    p = 1 / (1 + np.exp(-Z @ np.r_[res.constant, res.params]))
    V = np.linalg.inv((Z * (p * (1 - p))[:, None]).T @ Z)
    np.testing.assert_allclose(res.bse, np.sqrt(np.diag(V))[1:], rtol=1e-6)


def test_logit_null_model():
    r = np.random.default_rng(0)
    X = r.normal(size=(5000, 2))
    y = (r.random(5000) < 0.4).astype(float)
    res = fit_logit(y, X, ["a", "b"])
    assert np.all(np.abs(res.params) < 0.1)
    assert res.pseudo_r2 < 0.005


def test_logit_separation_fixture():
    with pytest.raises(SeparationError) as exc:
        fit_logit(np.array([0.0, 0.0, 1.0, 1.0]), np.array([[-1.0], [-1.0], [1.0], [1.0]]), ["x"])
    assert exc.value.variable == "x"


def test_logit_rejects_non_binary():
    with pytest.raises(RegressionError):
        fit_logit(np.array([0.0, 2.0, 1.0]), np.zeros((3, 1)) + [[1], [2], [3]], ["x"])


def test_logit_frequency_weights_equal_duplication():
    y, X = logit_sample(3, n=80)
    w = np.random.default_rng(1).integers(1, 4, 80).astype(float)
    res_w = fit_logit(y, X, ["a", "b"], weights=w)
    rep = np.repeat(np.arange(80), w.astype(int))
    res_d = fit_logit(y[rep], X[rep], ["a", "b"])
    np.testing.assert_allclose(res_w.params, res_d.params, atol=1e-9)
    assert res_w.llf == pytest.approx(res_d.llf, rel=1e-10)


def test_logit_on_panel_and_predict():
    d = random_panel(2, 30, 5, names=("x1",))
    p = 1 / (1 + np.exp(-d["x1"]))
    d = d.with_variable("t", (np.random.default_rng(2).random(d.shape) < p).astype(float))
    res = logit(d, RegressionSpec("t", ("x1",), fixed_effects=()))
    probs = res.predict(d["x1"].ravel())
    assert np.all((probs > 0) & (probs < 1))
    assert res.pseudo_r2 == pytest.approx(1 - res.llf / res.llnull)
    assert res.n_obs == 150
