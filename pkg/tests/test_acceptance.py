"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from paneleval.cli import main
from paneleval.dgp import DgpConfig, generate
from paneleval.did import TREATMENT, did_baseline, event_study
from paneleval.fixture import fixture_dir
from paneleval.index import IndexSpec, build_index, entropy_weights, entropy_weights_array
from paneleval.mediation import mediation_share
from paneleval.panel import PanelDataset, stack_entities
from paneleval.placebo import PlaceboConfig, placebo_test
from paneleval.psm import run_psm_did
from paneleval.regression import RegressionSpec, SeparationError, fit_logit, ols

from conftest import random_panel
from test_index import brute_entropy_weights, cells
from test_regression import long, lsdv, newton_raphson_logit

GOLDEN = Path(__file__).parent / "golden" / "manifest_run.json"
BETA = 2.2347


@pytest.fixture
def verdict(capsys):
    def record(number, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, detail
    return record


def test_criterion_1_twfe_equals_lsdv(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(50):
        d = random_panel(seed)
        (y, x1, x2), ent, yr = long(d, ["y", "x1", "x2"])
        res = ols(d, RegressionSpec("y", ("x1", "x2"), se_type="classical"))
        b, _, _ = lsdv(y, np.column_stack([x1, x2]), ent, yr)
        worst = max(worst, float(np.max(np.abs(res.params - b))))
    elapsed = time.perf_counter() - t0
    verdict(1, worst <= 1e-8 and elapsed < 5,
            f"max |TWFE - LSDV| = {worst:.2e} (tol 1e-8) over 50 panels in {elapsed:.2f}s (< 5s)")


def test_criterion_2_effect_recovery(verdict):
    t0 = time.perf_counter()
    est, cover = [], 0
    for seed in range(200):
        d, dual, _ = generate(DgpConfig(n_entities=282, n_years=10, beta=BETA, noise_sd=3.0, seed=seed))
        res = did_baseline(d, dual, "y")
        est.append(res[TREATMENT])
        lo, hi = res.ci(TREATMENT)
        cover += lo <= BETA <= hi
    elapsed = time.perf_counter() - t0
    est = np.array(est)
    mcse = est.std(ddof=1) / np.sqrt(est.size)
    z = abs(est.mean() - BETA) / mcse
    coverage = cover / 200
    verdict(2, z <= 3 and 0.90 <= coverage <= 0.99 and elapsed < 120,
            f"mean {est.mean():.4f} is {z:.2f} MC SEs from {BETA}; coverage {coverage:.3f}; {elapsed:.1f}s")


def test_criterion_3_parallel_trend_diagnostics(verdict):
    covered, reject = {}, 0
    for r in range(200):
        d, dual, _ = generate(DgpConfig(beta=1.0, noise_sd=1.0, seed=1000 + r))
        for b in event_study(d, dual, "y").pre_bins:
            covered[b.label] = covered.get(b.label, 0) + (b.ci_low <= 0 <= b.ci_high)
        d, dual, _ = generate(DgpConfig(beta=1.0, noise_sd=1.0, pre_trend=0.5, seed=5000 + r))
        reject += any(b.pvalue < 0.05 for b in event_study(d, dual, "y").pre_bins)
    shares = {k: v / 200 for k, v in covered.items()}
    ok = len(shares) > 0 and min(shares.values()) >= 0.90 and reject / 200 >= 0.80
    verdict(3, ok, f"pre-bin coverage {shares} (>= 0.90); pre-trend rejection {reject / 200:.3f} (>= 0.80)")


def test_criterion_4_entropy_weights(verdict):
    a, b = [0, 0, 0, 1], [0.25, 0.25, 0.25, 0.25]
    w = entropy_weights(cells(a, b, names=["A", "B"]), IndexSpec((("A", "+"), ("B", "+")))).weights
    toy_err = float(np.max(np.abs(np.asarray(w) - brute_entropy_weights([a, b]))))
    rng = np.random.default_rng(4)
    sum_err = 0.0
    for _ in range(500):
        n, k = rng.integers(2, 60), rng.integers(2, 8)
        x = rng.uniform(size=(n, k)) ** rng.uniform(0.2, 5, k)
        sum_err = max(sum_err, abs(entropy_weights_array(x)[0].sum() - 1.0))
    dup_err = 0.0
    spec = IndexSpec(tuple((f"i{j}", "+") for j in range(3)))
    for _ in range(20):
        d = PanelDataset([f"E{i}" for i in range(8)], [2011, 2012, 2013],
                         {f"i{j}": rng.uniform(0, 10, (8, 3)) for j in range(3)})
        _, w1 = build_index(d, spec)
        _, w2 = build_index(stack_entities(d, d, suffixes=["", "_dup"]), spec)
        dup_err = max(dup_err, float(np.max(np.abs(np.asarray(w1.weights) - w2.weights))))
    verdict(4, toy_err <= 1e-9 and sum_err <= 1e-9 and dup_err <= 1e-12,
            f"toy vs oracle {toy_err:.1e} (1e-9); |sum-1| {sum_err:.1e} (1e-9); duplication {dup_err:.1e} (1e-12)")


def test_criterion_5_mediation_arithmetic(verdict):
    s1 = 100 * mediation_share(0.0034, 16.0090, 0.9061)
    s2 = 100 * mediation_share(35.8273, 0.0110, 0.5674)
    verdict(5, abs(s1 - 5.67) <= 0.01 and abs(s2 - 40.99) <= 0.01,
            f"shares {s1:.4f}% (5.67 +/- 0.01) and {s2:.4f}% (40.99 +/- 0.01)")


def test_criterion_6_placebo(verdict):
    t0 = time.perf_counter()
    d, dual, _ = generate(DgpConfig(beta=0.0, noise_sd=1.0, seed=600))
    null = placebo_test(d, dual, "y", config=PlaceboConfig(replications=500, seed=600))
    b = null.valid
    z = abs(b.mean()) / (b.std(ddof=1) / np.sqrt(b.size))
    p_share = float(np.mean(null.pvalues[np.isfinite(null.pvalues)] > 0.1))
    top = 0
    for m in range(20):
        d, dual, _ = generate(DgpConfig(beta=BETA, noise_sd=3.0, seed=700 + m))
        res = placebo_test(d, dual, "y", config=PlaceboConfig(replications=500, seed=700 + m))
        top += res.rank == res.valid.size == 500
    elapsed = time.perf_counter() - t0
    verdict(6, z <= 3 and p_share >= 0.85 and top / 20 >= 0.95 and elapsed < 600,
            f"null mean {b.mean():.4f} ({z:.2f} SEs); share p>0.1 {p_share:.3f}; "
            f"effect ranked first in {top}/20 meta-runs; {elapsed:.1f}s")


def test_criterion_7_psm_bias_reduction(verdict):
    balanced = wins = 0
    for seed in range(200):
        cfg = DgpConfig(n_entities=1000, n_years=10, treatment="selection", selection_intercept=-1.0,
                        selection_coefs=(1.0, 1.0), n_controls=2, control_gamma=(0.5, 0.5), covariate_trend=0.3,
                        beta=1.0, noise_sd=1.0, seed=seed)
        d, dual, _ = generate(cfg)
        run = run_psm_did(d, dual, "y", ("x1", "x2"), ("x1", "x2"))
        naive = did_baseline(d, dual, "y", ("x1", "x2"))[TREATMENT]
        balanced += all(abs(r.bias_after) < 0.5 * abs(r.bias_before) for r in run.balance.rows)
        wins += abs(run.result[TREATMENT] - 1.0) < abs(naive - 1.0)
    verdict(7, balanced == 200 and wins / 200 >= 0.80,
            f"every covariate halved in {balanced}/200; PSM-DID beats naive DID in {wins}/200 (>= 160)")


def test_criterion_8_logit_oracle(verdict):
    worst = 0.0
    for seed in range(20):
        r = np.random.default_rng(seed)
        n, k = int(r.integers(100, 500)), int(r.integers(1, 5))
        X = r.normal(size=(n, k)) * r.uniform(0.5, 3, k)
        beta = r.normal(scale=0.7, size=k)
        y = (r.random(n) < 1 / (1 + np.exp(-(r.normal(scale=0.5) + X @ beta)))).astype(float)
        res = fit_logit(y, X, [f"x{j}" for j in range(k)])
        worst = max(worst, float(np.max(np.abs(np.r_[res.constant, res.params] - newton_raphson_logit(y, X)))))
    try:
        fit_logit(np.array([0.0, 0.0, 1.0, 1.0]), np.array([[-1.0], [-1.0], [1.0], [1.0]]), ["x"])
        separated = False
    except SeparationError as exc:
        separated = exc.variable == "x"
    verdict(8, worst <= 1e-6 and separated,
            f"max |IRLS - Newton-Raphson| = {worst:.1e} (1e-6); separation detected: {separated}")


def test_criterion_9_determinism(verdict, tmp_path):
    golden = GOLDEN.read_bytes()
    config = fixture_dir() / "config.json"
    same = []
    for i in range(2):
        out = tmp_path / f"in{i}"
        main(["run", "--config", str(config), "--out", str(out), "--seed", "42"])
        same.append((out / "manifest.json").read_bytes() == golden)
    for threads, jobs in (("1", "1"), ("4", "4")):
        out = tmp_path / f"t{threads}"
        env = dict(os.environ, OPENBLAS_NUM_THREADS=threads, OMP_NUM_THREADS=threads, MKL_NUM_THREADS=threads,
                   NUMBA_NUM_THREADS=threads)
        subprocess.run([sys.executable, "-m", "paneleval", "run", "--config", str(config), "--out", str(out),
                        "--seed", "42", "--jobs", jobs], env=env, check=True, capture_output=True)
        same.append((out / "manifest.json").read_bytes() == golden)
    n_artifacts = len(json.loads(golden)["artifacts"])
    verdict(9, all(same), f"{sum(same)}/4 runs (2 in-process, 1 and 4 threads) match the golden manifest "
                          f"of {n_artifacts} artifacts byte-for-byte")
