"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The Diabetes criteria need data/diabetes.csv (scripts/fetch_diabetes.py).
Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline;
they are also repeated in the terminal summary.
"""

import json
import os
import time

import numpy as np
import pytest
from scipy.special import expit
from scipy.stats import spearmanr
from sklearn.datasets import load_breast_cancer

from codice import diffusion
from codice.coherence import RATIO, directional_coherence
from codice.data import Dataset, Feature, FeatureSchema, Preprocessor, make_s_curve, make_swiss_roll, train_test_split
from codice.diffusion import diffusion_distance
from codice.harness import (Experiment, MethodSpec, default_methods, fit_diffusion_map, run_ablation,
                            run_benchmark, run_tradeoff_sweep)
from codice.model import LogisticModel, accuracy, train_knn_prob, train_logistic
from codice.objective import WEIGHTED_L1, DesiredOutcome, ObjectiveWeights
from codice.search import GAConfig, find_counterfactual

from conftest import record_verdict
from oracles import dense_eigenpairs, dumbbell, eq1_distance, equidistant_triples, power_stationary


def check(number, title, ok, detail, elapsed, limit):
    in_time = elapsed < limit
    passed = bool(ok) and in_time
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail} ({elapsed:.1f}s, limit {limit:g}s)"
    print(line)
    record_verdict(line)
    assert ok, line
    assert in_time, line


def workers():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def random_point_sets(count, seed):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n, d = int(rng.integers(4, 11)), int(rng.integers(1, 5))
        yield rng.normal(size=(n, d)), int(rng.integers(1, n))


def test_01_diffusion_distance_matches_direct_formula():
    start = time.perf_counter()
    worst = 0.0
    for X, k in random_point_sets(25, seed=101):
        n = len(X)
        dm = diffusion.fit(X, k=k, t=1, m=n - 1)
        P = dm.transition_matrix()
        phi0 = power_stationary(P)
        for i in range(n):
            for j in range(i + 1, n):
                direct = eq1_distance(P, i, j, 1, phi0)
                worst = max(worst, abs(diffusion_distance(dm, X[i], X[j]) - direct))
    check(1, "spectral distance vs direct evaluation", worst <= 1e-8, f"max abs error {worst:.2e}",
          time.perf_counter() - start, 10)


def test_02_bottleneck_shortens_within_cluster_distance():
    start = time.perf_counter()
    X, left, right, radius = dumbbell(seed=0)
    # the bridge eigenvalue is far closer to 1 than the within-disc ones, so
    # cross-bridge separation dominates only once t is large enough
    dm = diffusion.fit(X, k=10, t=64)
    triples = equidistant_triples(X, left, right, radius, n_triples=200, seed=1)
    wins = sum(dm.distance(a, c) < dm.distance(a, b) for a, b, c in triples)
    frac = wins / len(triples)
    check(2, "dumbbell equidistant triples", frac >= 0.95, f"{frac:.1%} of {len(triples)} triples ordered",
          time.perf_counter() - start, 30)


@pytest.mark.parametrize("shape,make,threshold", [("s_curve", make_s_curve, 0.95),
                                                  ("swiss_roll", make_swiss_roll, 0.97)])
def test_03_synthetic_classifier_accuracy(shape, make, threshold):
    start = time.perf_counter()
    train, test = train_test_split(make(2000, 0.1, 0), 0.2, 0)
    pre = Preprocessor.fit(train)
    model = train_knn_prob(pre.transform(train.frame), train.target, k=10)
    acc = accuracy(model, pre.transform(test.frame), test.target)
    check(3, f"k-NN accuracy on {shape}", acc >= threshold, f"{acc:.4f} (need >= {threshold})",
          time.perf_counter() - start, 60)


@pytest.fixture(scope="module")
def diabetes_exp(diabetes_setup):
    train, test, pre, model = diabetes_setup
    return Experiment(train, test, pre, model, fit_diffusion_map(train, pre, k=10, alpha=1.0, t=1))


def test_04_diabetes_validity_and_orderings(diabetes_exp):
    start = time.perf_counter()
    report = run_benchmark(diabetes_exp, default_methods(), n_instances=100, seed=0, workers=workers())
    d, l = report.row("CoDiCE_diff"), report.row("CoDiCE_L1")
    ok = (d.validity == 100.0 and l.validity == 100.0 and d.n_attempted == 100
          and d.mean("diffusion") < l.mean("diffusion") and l.mean("l1") < d.mean("l1"))
    detail = (f"validity {d.validity:.0f}%/{l.validity:.0f}%, diffusion {d.mean('diffusion'):.3f} < "
              f"{l.mean('diffusion'):.3f}, L1 {l.mean('l1'):.3f} < {d.mean('l1'):.3f}")
    check(4, "Diabetes benchmark", ok, detail, time.perf_counter() - start, 20 * 60)


def test_05_ablation_orderings(diabetes_exp):
    start = time.perf_counter()
    base = default_methods()[0]
    report = run_ablation(diabetes_exp, base, n_instances=100, seed=0, workers=workers())
    prox, spars, coh = report.rows
    rows = report.rows
    ok = (all(r.validity == 100.0 for r in rows)
          and prox.mean("diffusion") == min(r.mean("diffusion") for r in rows)
          and spars.mean("sparsity") == min(r.mean("sparsity") for r in rows)
          and coh.mean("dcoherence") == max(r.mean("dcoherence") for r in rows))
    detail = ("diffusion " + "/".join(f"{r.mean('diffusion'):.3f}" for r in rows)
              + ", sparsity " + "/".join(f"{r.mean('sparsity'):.3f}" for r in rows)
              + ", dcoherence " + "/".join(f"{r.mean('dcoherence'):.3f}" for r in rows))
    check(5, "single-term ablations", ok, detail, time.perf_counter() - start, 30 * 60)


def test_06_tradeoff_trend(diabetes_exp):
    start = time.perf_counter()
    grid = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
    report = run_tradeoff_sweep(diabetes_exp, default_methods()[0], grid, lambda2=0.5,
                                n_instances=100, seed=0, workers=workers())
    rho_d = spearmanr(grid, [r.mean("diffusion") for r in report.rows]).statistic
    rho_c = spearmanr(grid, [r.mean("coherence_penalty") for r in report.rows]).statistic
    check(6, "lambda1 trade-off", rho_d <= -0.5 and rho_c >= 0.5,
          f"spearman diffusion {rho_d:+.2f}, coherence penalty {rho_c:+.2f}", time.perf_counter() - start, 45 * 60)


def brute_force_coherence(w, b, x, x_cf, desired):
    """Ratio score from closed-form probabilities of single-feature moves."""
    def p(v):
        p1 = expit(w @ v + b)
        return p1 if desired == 1 else 1.0 - p1
    base = p(x)
    coherent = 0
    for i in range(len(x)):
        if x_cf[i] == x[i]:
            coherent += 1
            continue
        control = x.copy()
        control[i] = x_cf[i]
        coherent += np.sign(p(control) - base) != -1
    return coherent / len(x)


def test_07_coherence_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    mismatches = 0
    identity_ok = True
    for _ in range(100):
        d = int(rng.integers(1, 7))
        w, b = rng.normal(size=d), float(rng.normal())
        x = rng.normal(size=d)
        step = rng.uniform(0.05, 2.0, size=d) * rng.choice([-1.0, 1.0], size=d)
        keep = rng.random(d) < 0.3
        x_cf = np.where(keep, x, x + step)
        desired = int(rng.integers(0, 2))
        schema = FeatureSchema(tuple(Feature(f"f{i}") for i in range(d)))
        pre = Preprocessor.passthrough(schema)
        model = LogisticModel(w, b)
        score = directional_coherence(model, x, x_cf, desired, pre, RATIO).score
        mismatches += score != brute_force_coherence(w, b, x, x_cf, desired)
        identity_ok &= directional_coherence(model, x, x, desired, pre, RATIO).score == 1.0
    check(7, "coherence vs brute force", mismatches == 0 and identity_ok,
          f"{mismatches} mismatches in 100 triples, identity scores 1.0: {identity_ok}",
          time.perf_counter() - start, 5)


def one_d_toy():
    schema = FeatureSchema((Feature("x"),))
    return Preprocessor.passthrough(schema), LogisticModel(np.array([4.0]), 0.0)


TOY_WEIGHTS = ObjectiveWeights(0.5, 0.5, 0.5, proximity_mode=WEIGHTED_L1)


def toy_runs():
    pre, model = one_d_toy()
    return [find_counterfactual(model, None, {"x": -1.0}, DesiredOutcome(1), TOY_WEIGHTS, GAConfig(), pre, seed=s)
            for s in range(20)]


def test_08_search_determinism_and_toy_validity():
    start = time.perf_counter()
    results = toy_runs()
    again = toy_runs()
    identical = all(json.dumps(a.to_record(), sort_keys=True) == json.dumps(b.to_record(), sort_keys=True)
                    for a, b in zip(results, again))
    monotone = all(all(q <= p for p, q in zip(r.best_history, r.best_history[1:])) for r in results)
    valid = sum(r.valid for r in results) / len(results)
    check(8, "search determinism, monotone best, toy validity", identical and monotone and valid == 1.0,
          f"records identical: {identical}, monotone: {monotone}, validity {valid:.0%}",
          time.perf_counter() - start, 30)


def test_08_toy_clears_hinge_boundary():
    # The objective's minimum sits exactly on x = 0.25; see the decision
    # ledger for why a strict inequality cannot hold for every seed.
    start = time.perf_counter()
    values = [r.counterfactual["x"] for r in toy_runs()]
    below = [(s, v) for s, v in enumerate(values) if not v > 0.25]
    check(8, "toy counterfactual beyond x = 0.25", not below,
          f"min {min(values):.5f}, seeds at or below boundary: {below}", time.perf_counter() - start, 30)


def test_09_transition_matrix_and_eigen_oracle():
    start = time.perf_counter()
    worst_rows, worst_eig = 0.0, 0.0
    for X, k in random_point_sets(25, seed=909):
        dm = diffusion.fit(X, k=k, m=len(X) - 1)
        P = dm.transition_matrix()
        worst_rows = max(worst_rows, np.abs(P.sum(axis=1) - 1.0).max())
        evals, vecs = dense_eigenpairs(P)
        worst_eig = max(worst_eig, np.abs(dm.eigenvalues - evals).max(), np.abs(dm.eigenvectors - vecs).max())
    large = diffusion.fit(np.random.default_rng(3).normal(size=(300, 3)), k=10)
    worst_rows = max(worst_rows, np.abs(large.transition_matrix().sum(axis=1) - 1.0).max())
    check(9, "stochastic rows and dense eigen oracle", worst_rows <= 1e-12 and worst_eig <= 1e-8,
          f"row-sum error {worst_rows:.1e}, eigen error {worst_eig:.1e}", time.perf_counter() - start, 10)


def test_10_breast_cancer_search_cost():
    bunch = load_breast_cancer(as_frame=True)
    frame = bunch.data
    schema = FeatureSchema(tuple(Feature(c) for c in frame.columns))
    train, test = train_test_split(Dataset(schema, frame, bunch.target.to_numpy()), 0.2, 0)
    pre = Preprocessor.fit(train)
    model = train_logistic(pre.transform(train.frame), train.target)
    dm = fit_diffusion_map(train, pre)
    x = test.frame.iloc[[0]]
    pred = int(model.predict(pre.transform(x))[0])
    start = time.perf_counter()
    result = find_counterfactual(model, dm, x, DesiredOutcome(1 - pred), ObjectiveWeights(), GAConfig(), pre,
                                 train=train, seed=0)
    elapsed = time.perf_counter() - start
    check(10, "30-feature search", len(schema) == 30,
          f"{len(schema)} features, valid {result.valid}, {result.generations_used} generations", elapsed, 30)
