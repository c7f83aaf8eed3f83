"""Genetic search for a single counterfactual.

Candidates live in search space (standardized continuous values, integer
category codes). Each generation keeps the better half of the population by
total objective, refills it with uniform-crossover children of random
survivor pairs, and mutates the children with range-clipped Gaussian steps
and uniform category swaps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .coherence import CoherenceReport
from .data import Dataset, Preprocessor, as_frame, iter_rows
from .diffusion import DiffusionMap
from .errors import AlreadyDesiredError, ConfigurationError
from .objective import CandidateEvaluation, DesiredOutcome, Objective, ObjectiveWeights

IMPROVEMENT_TOL = 1e-9


@dataclass(frozen=True)
class GAConfig:
    population_size: int = 60
    max_iterations: int = 200
    mutation_rate: float = 0.3
    mutation_scale: float = 0.3
    crossover_rate: float = 0.5
    init_fraction_sampled: float = 0.5
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise ConfigurationError("population_size must be >= 2")
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")
        if self.max_iterations < 0:
            raise ConfigurationError("max_iterations must be >= 0")
        for name in ("mutation_rate", "crossover_rate", "init_fraction_sampled"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        if self.mutation_scale < 0:
            raise ConfigurationError("mutation_scale must be >= 0")


class SearchSpace:
    """Per-feature bookkeeping shared by the genetic operators."""

    def __init__(self, preprocessor: Preprocessor, x: np.ndarray):
        schema = preprocessor.schema
        self.x = np.asarray(x, dtype=float).reshape(-1)
        self.frozen = schema.frozen_mask
        self.categorical = np.array([f.is_categorical for f in schema])
        self.n_categories = np.array([len(f.categories) for f in schema])
        self.lower = preprocessor.search_lower
        self.upper = preprocessor.search_upper
        self.mutable_cont = ~self.categorical & ~self.frozen
        self.mutable_cat = self.categorical & ~self.frozen

    @property
    def d(self) -> int:
        return len(self.x)

    def clip(self, Z: np.ndarray) -> np.ndarray:
        Z = np.where(self.categorical[None, :], Z, np.clip(Z, self.lower, self.upper))
        Z[:, self.frozen] = self.x[self.frozen]
        return Z


def crossover(a: np.ndarray, b: np.ndarray, rate: float, rng: np.random.Generator, space: SearchSpace) -> np.ndarray:
    """Uniform crossover: each gene from ``b`` with probability ``rate``.

    ``a`` and ``b`` may be single rows or aligned batches of rows.
    """
    a2, b2 = np.atleast_2d(a), np.atleast_2d(b)
    take_b = rng.random(a2.shape) < rate
    child = np.where(take_b, b2, a2)
    child[:, space.frozen] = space.x[space.frozen]
    return child[0] if np.ndim(a) == 1 else child


def mutate(c: np.ndarray, config: GAConfig, rng: np.random.Generator, space: SearchSpace) -> np.ndarray:
    """Gaussian steps on continuous genes (clipped to the training range) and
    swaps to a uniformly chosen other category, each with probability
    ``mutation_rate``."""
    Z = np.array(np.atleast_2d(c), dtype=float)
    hit = rng.random(Z.shape) < config.mutation_rate
    noise = rng.normal(0.0, 1.0, Z.shape) * config.mutation_scale
    cont_hit = hit & space.mutable_cont[None, :]
    Z[cont_hit] += noise[cont_hit]
    cat_hit = hit & space.mutable_cat[None, :]
    if cat_hit.any():
        sizes = np.broadcast_to(space.n_categories, Z.shape)
        shift = rng.integers(1, np.maximum(sizes, 2))
        Z[cat_hit] = (Z[cat_hit] + shift[cat_hit]) % sizes[cat_hit]
    Z = space.clip(Z)
    return Z[0] if np.ndim(c) == 1 else Z


def init_population(space: SearchSpace, pool: np.ndarray, config: GAConfig, rng: np.random.Generator) -> np.ndarray:
    """Mix of desired-outcome training rows and perturbed copies of ``x``.

    ``pool`` holds training rows (search space) already predicted as the
    desired outcome; an empty pool yields an all-perturbation population.
    """
    size = config.population_size
    n_sampled = int(round(config.init_fraction_sampled * size)) if len(pool) else 0
    parts = []
    if n_sampled:
        idx = rng.choice(len(pool), size=n_sampled, replace=n_sampled > len(pool))
        sampled = np.array(pool[idx], dtype=float)
        sampled[:, space.frozen] = space.x[space.frozen]
        parts.append(sampled)
    n_pert = size - n_sampled
    if n_pert:
        Z = np.repeat(space.x[None, :], n_pert, axis=0)
        mutable = space.mutable_cont | space.mutable_cat
        hit = (rng.random(Z.shape) < config.mutation_rate) & mutable[None, :]
        if mutable.any():
            # every perturbed member changes at least one mutable gene
            choices = np.flatnonzero(mutable)
            empty = ~hit.any(axis=1)
            hit[np.flatnonzero(empty), rng.choice(choices, size=int(empty.sum()))] = True
        noise = rng.normal(0.0, 1.0, Z.shape) * config.mutation_scale
        cont_hit = hit & space.mutable_cont[None, :]
        Z[cont_hit] += noise[cont_hit]
        cat_hit = hit & space.mutable_cat[None, :]
        if cat_hit.any():
            sizes = np.broadcast_to(space.n_categories, Z.shape)
            shift = rng.integers(1, np.maximum(sizes, 2))
            Z[cat_hit] = (Z[cat_hit] + shift[cat_hit]) % sizes[cat_hit]
        parts.append(space.clip(Z))
    return np.vstack(parts)


def select_survivors(fitness: np.ndarray) -> np.ndarray:
    """Indices of the best ceil(n/2) members, stable on ties."""
    keep = math.ceil(len(fitness) / 2)
    return np.argsort(fitness, kind="stable")[:keep]


def step(population: np.ndarray, fitness: np.ndarray, config: GAConfig, rng: np.random.Generator,
         space: SearchSpace) -> tuple[np.ndarray, np.ndarray]:
    """One generation: returns (survivors, offspring). Survivors come first,
    best member at index 0, unmodified."""
    surv = population[select_survivors(fitness)]
    n_off = len(population) - len(surv)
    parents = rng.integers(0, len(surv), size=(n_off, 2))
    children = crossover(surv[parents[:, 0]], surv[parents[:, 1]], config.crossover_rate, rng, space)
    return surv, mutate(children, config, rng, space)


@dataclass
class CounterfactualResult:
    counterfactual: dict[str, Any]
    valid: bool
    evaluation: CandidateEvaluation
    coherence: CoherenceReport
    generations_used: int
    seed: int
    factual: dict[str, Any] = field(default_factory=dict)
    search_vector: np.ndarray | None = field(default=None, repr=False)
    best_history: list[float] = field(default_factory=list, repr=False)

    def to_record(self) -> dict[str, Any]:
        return {
            "input": self.factual,
            "counterfactual": self.counterfactual,
            "valid": self.valid,
            "evaluation": self.evaluation.to_dict(),
            "coherence": self.coherence.to_dict(),
            "generations_used": self.generations_used,
            "seed": self.seed,
            "best_history": list(self.best_history),
        }


def desired_pool(model, preprocessor: Preprocessor, train, desired: DesiredOutcome) -> np.ndarray:
    """Training rows (search space) whose prediction meets ``desired``."""
    if train is None:
        return np.empty((0, len(preprocessor.schema)))
    Z = preprocessor.to_search(train.frame) if isinstance(train, Dataset) else np.asarray(train, dtype=float)
    return Z[desired.satisfied(model, preprocessor.encode_search(Z))]


def run_search(objective: Objective, pool: np.ndarray, config: GAConfig, seed: int):
    """Genetic loop in search space.

    Returns the chosen row, the best-of-generation history and the number of
    generations run. The lowest-total valid row seen at any point is
    preferred; without one, the overall best is returned.
    """
    rng = np.random.default_rng(seed)
    space = SearchSpace(objective.pre, objective.x)
    pop = init_population(space, pool, config, rng)
    fit, valid = objective.totals(pop)

    best_valid, best_valid_total = None, np.inf

    def archive(Z, f, v):
        nonlocal best_valid, best_valid_total
        if v.any():
            i = np.flatnonzero(v)[np.argmin(f[v])]
            if f[i] < best_valid_total:
                best_valid, best_valid_total = Z[i].copy(), f[i]

    archive(pop, fit, valid)
    history = [float(fit.min())]
    stale, generations = 0, 0
    for it in range(1, config.max_iterations + 1):
        keep = select_survivors(fit)
        surv, children = step(pop, fit, config, rng, space)
        cf, cv = objective.totals(children)
        pop = np.vstack([surv, children])
        fit = np.concatenate([fit[keep], cf])
        valid = np.concatenate([valid[keep], cv])
        archive(children, cf, cv)
        best = float(fit.min())
        stale = stale + 1 if history[-1] - best < IMPROVEMENT_TOL else 0
        history.append(best)
        generations = it
        if stale >= config.patience:
            break
    chosen = best_valid if best_valid is not None else pop[np.argmin(fit)]
    return chosen, history, generations


def find_counterfactual(model, dm: DiffusionMap | None, x, desired: DesiredOutcome, weights: ObjectiveWeights,
                        config: GAConfig, preprocessor: Preprocessor, train=None,
                        seed: int | None = None, pool: np.ndarray | None = None) -> CounterfactualResult:
    """Search for a counterfactual of the original-unit row ``x``.

    ``train`` (a Dataset or search-space matrix) seeds part of the initial
    population with rows already predicted as the desired outcome; a
    precomputed ``pool`` of such rows may be passed instead.

    Raises
    ------
    AlreadyDesiredError
        If ``x`` already achieves the desired outcome.
    """
    seed = config.seed if seed is None else int(seed)
    zx = preprocessor.to_search(x)[0]
    if desired.satisfied(model, preprocessor.encode_search(zx))[0]:
        raise AlreadyDesiredError("instance already satisfies desired outcome")
    objective = Objective(model, zx, desired, weights, preprocessor, dm)
    if pool is None:
        pool = desired_pool(model, preprocessor, train, desired)
    z, history, generations = run_search(objective, pool, config, seed)
    # with lambda3 = 0 the penalty is reported but contributes nothing to total
    evaluation = objective.evaluate(z, with_coherence=True)
    report = objective.probe.report(z, weights.coherence_mode)
    factual = as_frame(preprocessor.schema, x)
    cf_frame = preprocessor.from_search(z)
    # untouched genes keep the caller's exact values rather than a round trip
    same = [name for name, a, b in zip(preprocessor.schema.names, z, zx) if a == b]
    cf_frame[same] = factual[same].to_numpy()
    cf_row = next(iter_rows(cf_frame))
    x_row = next(iter_rows(factual))
    return CounterfactualResult(
        counterfactual=cf_row,
        valid=bool(desired.satisfied(model, preprocessor.encode_search(z))[0]),
        evaluation=evaluation,
        coherence=report,
        generations_used=generations,
        seed=seed,
        factual=x_row,
        search_vector=z,
        best_history=history,
    )
