import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from codice.data import CATEGORICAL, Dataset, Feature, FeatureSchema, Preprocessor
from codice.errors import AlreadyDesiredError, ConfigurationError
from codice.model import LogisticModel
from codice.objective import WEIGHTED_L1, DesiredOutcome, Objective, ObjectiveWeights
from codice.search import (GAConfig, SearchSpace, crossover, find_counterfactual, init_population, mutate,
                           run_search, select_survivors, step)


def setup(frozen_b=False, upper=None):
    schema = FeatureSchema((
        Feature("a"),
        Feature("b", frozen=frozen_b),
        Feature("c", CATEGORICAL, ("no", "yes")),
    ))
    lower = None if upper is None else -np.asarray(upper)
    pre = Preprocessor.passthrough(schema, lower=lower, upper=upper)
    return schema, pre


def space_for(x, **kw):
    _, pre = setup(**kw)
    return SearchSpace(pre, np.asarray(x, dtype=float))


class TestCrossover:
    def test_identical_parents(self, rng):
        sp = space_for([0.0, 0.0, 0.0])
        a = np.array([1.0, 2.0, 1.0])
        np.testing.assert_array_equal(crossover(a, a, 0.5, rng, sp)[[0, 2]], a[[0, 2]])

    def test_rate_extremes(self, rng):
        sp = space_for([0.0, 7.0, 0.0], frozen_b=True)
        a = np.array([1.0, 7.0, 0.0])
        b = np.array([2.0, 7.0, 1.0])
        np.testing.assert_array_equal(crossover(a, b, 0.0, rng, sp), a)
        np.testing.assert_array_equal(crossover(a, b, 1.0, rng, sp), b)

    def test_frozen_restored(self, rng):
        sp = space_for([0.0, 7.0, 0.0], frozen_b=True)
        a = np.array([[1.0, 3.0, 0.0]])
        b = np.array([[2.0, 4.0, 1.0]])
        assert crossover(a, b, 1.0, rng, sp)[0, 1] == 7.0


class TestMutate:
    def test_rate_zero_identity(self, rng):
        sp = space_for([0.0, 0.0, 0.0])
        c = np.array([0.5, -0.5, 1.0])
        np.testing.assert_array_equal(mutate(c, GAConfig(mutation_rate=0.0), rng, sp), c)

    def test_clipped_at_upper(self, rng):
        sp = space_for([0.0, 0.0, 0.0], upper=[1.0, 1.0])
        c = np.array([[1.0, 1.0, 0.0]] * 200)
        out = mutate(c, GAConfig(mutation_rate=1.0, mutation_scale=5.0), rng, sp)
        assert out[:, :2].max() <= 1.0 and out[:, :2].min() >= -1.0

    def test_binary_flip(self, rng):
        sp = space_for([0.0, 0.0, 0.0])
        out = mutate(np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]), GAConfig(mutation_rate=1.0), rng, sp)
        np.testing.assert_array_equal(out[:, 2], [1.0, 0.0])

    @given(st.integers(0, 2**31), st.floats(0, 1), st.floats(0, 3))
    def test_ranges_and_codes(self, seed, rate, scale):
        sp = space_for([0.0, 0.5, 1.0], upper=[2.0, 2.0], frozen_b=True)
        rng = np.random.default_rng(seed)
        c = np.tile([0.0, 0.5, 1.0], (10, 1))
        out = mutate(c, GAConfig(mutation_rate=rate, mutation_scale=scale), rng, sp)
        assert np.all(np.abs(out[:, 0]) <= 2.0)
        assert np.all(out[:, 1] == 0.5)
        assert set(out[:, 2]) <= {0.0, 1.0}


class TestInit:
    def test_pure_perturbation(self, rng):
        sp = space_for([0.0, 0.0, 0.0])
        pool = np.ones((5, 3))
        pop = init_population(sp, pool, GAConfig(population_size=10, init_fraction_sampled=0.0), rng)
        assert pop.shape == (10, 3)
        assert not any(np.array_equal(r, [1.0, 1.0, 1.0]) for r in pop)

    def test_scale_to_zero_continuous_near_x(self, rng):
        sp = space_for([0.3, -0.2, 0.0])
        cfg = GAConfig(population_size=20, init_fraction_sampled=0.0, mutation_scale=1e-12)
        pop = init_population(sp, np.empty((0, 3)), cfg, rng)
        np.testing.assert_allclose(pop[:, :2], np.tile([0.3, -0.2], (20, 1)), atol=1e-10)

    def test_sampled_members_from_pool(self, rng):
        sp = space_for([0.0, 5.0, 0.0], frozen_b=True)
        pool = np.array([[3.0, 9.0, 1.0]])
        pop = init_population(sp, pool, GAConfig(population_size=10, init_fraction_sampled=1.0), rng)
        np.testing.assert_array_equal(pop, np.tile([3.0, 5.0, 1.0], (10, 1)))

    def test_deterministic(self):
        sp = space_for([0.0, 0.0, 0.0])
        pool = np.random.default_rng(1).normal(size=(7, 3))
        cfg = GAConfig(population_size=12)
        a = init_population(sp, pool, cfg, np.random.default_rng(5))
        b = init_population(sp, pool, cfg, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)


class TestStep:
    def test_stable_ties(self):
        np.testing.assert_array_equal(select_survivors(np.array([1.0, 1.0, 1.0, 1.0])), [0, 1])
        np.testing.assert_array_equal(select_survivors(np.array([3.0, 1.0, 2.0])), [1, 2])

    def test_population_of_two(self, rng):
        sp = space_for([0.0, 0.0, 0.0])
        pop = np.array([[1.0, 1.0, 0.0], [2.0, 2.0, 1.0]])
        surv, kids = step(pop, np.array([0.5, 0.1]), GAConfig(population_size=2), rng, sp)
        np.testing.assert_array_equal(surv, pop[[1]])
        assert kids.shape == (1, 3)

    def test_best_kept(self, rng):
        sp = space_for([0.0, 0.0, 0.0])
        pop = rng.normal(size=(9, 3))
        pop[:, 2] = 0
        fit = rng.random(9)
        surv, kids = step(pop, fit, GAConfig(population_size=9), rng, sp)
        np.testing.assert_array_equal(surv[0], pop[np.argmin(fit)])
        assert len(surv) + len(kids) == 9


def toy_problem():
    schema = FeatureSchema((Feature("a"), Feature("b"), Feature("c", CATEGORICAL, ("no", "yes")),
                            Feature("age", frozen=True)))
    rng = np.random.default_rng(0)
    frame = pd.DataFrame({"a": rng.normal(size=200), "b": rng.normal(size=200),
                          "c": rng.choice(["no", "yes"], size=200), "age": rng.uniform(20, 60, size=200)})
    ds = Dataset(schema, frame, np.zeros(200))
    pre = Preprocessor.fit(ds)
    model = LogisticModel(np.array([2.0, 1.0, 0.0, 1.5, 0.0]), -1.0)
    return ds, pre, model


X0 = {"a": -1.0, "b": -1.0, "c": "no", "age": 33.0}
W = ObjectiveWeights(0.5, 0.5, 0.5, proximity_mode=WEIGHTED_L1)


class TestFindCounterfactual:
    def test_basic(self):
        ds, pre, model = toy_problem()
        r = find_counterfactual(model, None, X0, DesiredOutcome(1), W, GAConfig(seed=3), pre, train=ds)
        assert r.valid
        assert r.counterfactual["age"] == 33.0
        assert r.factual == X0
        for name in ("a", "b"):
            assert ds.frame[name].min() <= r.counterfactual[name] <= ds.frame[name].max()
        assert r.counterfactual["c"] in ("no", "yes")
        assert all(b <= a for a, b in zip(r.best_history, r.best_history[1:]))

    def test_deterministic_records(self):
        ds, pre, model = toy_problem()
        a = find_counterfactual(model, None, X0, DesiredOutcome(1), W, GAConfig(), pre, train=ds, seed=9)
        b = find_counterfactual(model, None, X0, DesiredOutcome(1), W, GAConfig(), pre, train=ds, seed=9)
        assert a.to_record() == b.to_record()

    def test_already_desired(self):
        ds, pre, model = toy_problem()
        with pytest.raises(AlreadyDesiredError):
            find_counterfactual(model, None, X0, DesiredOutcome(0), W, GAConfig(), pre, train=ds)

    def test_zero_iterations(self):
        ds, pre, model = toy_problem()
        r = find_counterfactual(model, None, X0, DesiredOutcome(1), W, GAConfig(max_iterations=0), pre, train=ds)
        assert r.generations_used == 0 and len(r.best_history) == 1

    def test_patience_stops_early(self):
        ds, pre, model = toy_problem()
        r = find_counterfactual(model, None, X0, DesiredOutcome(1), W,
                                GAConfig(max_iterations=500, patience=3), pre, train=ds)
        assert r.generations_used < 500

    @given(st.integers(0, 10_000))
    def test_frozen_never_changes(self, seed):
        ds, pre, model = toy_problem()
        cfg = GAConfig(population_size=10, max_iterations=5, seed=seed)
        objective = Objective(model, pre.to_search(X0)[0], DesiredOutcome(1), W, pre)
        z, _, _ = run_search(objective, pre.to_search(ds.frame), cfg, seed)
        assert z[3] == pre.to_search(X0)[0][3]


def test_config_validation():
    with pytest.raises(ConfigurationError):
        GAConfig(population_size=1)
    with pytest.raises(ConfigurationError):
        GAConfig(mutation_rate=1.5)
    with pytest.raises(ConfigurationError):
        GAConfig(patience=0)
