"""Batch protocols: benchmark, ablation and lambda trade-off sweep.

An :class:`Experiment` bundles everything a search needs (split data,
preprocessor, trained model, diffusion map). The runners pick the first
eligible test rows, search each one with a per-instance seed and reduce the
valid results to one table row per method.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import diffusion
from .data import CLASSIFICATION, Dataset, Preprocessor
from .errors import ConfigurationError
from .metrics import PCA, diffusion_metric, l0_categorical, weighted_l1
from .model import Predictor
from .objective import DIFFUSION, WEIGHTED_L1, DesiredOutcome, ObjectiveWeights, sparsity
from .search import GAConfig, desired_pool, find_counterfactual

OPPOSITE = "opposite"
STATS = ("diffusion", "l1", "l0_cat", "dcoherence", "sparsity", "coherence_penalty")
TABLE_COLUMNS = (
    "method", "validity",
    "diffusion_mean", "diffusion_std",
    "l1_mean", "l1_std",
    "l0_cat_mean", "l0_cat_std",
    "dcoherence_mean", "dcoherence_std",
    "sparsity_mean", "sparsity_std",
    "coherence_penalty_mean", "coherence_penalty_std",
    "n_attempted", "n_valid", "seconds_per_instance",
)


@dataclass(frozen=True)
class MethodSpec:
    name: str
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    ga: GAConfig = field(default_factory=GAConfig)


def default_methods(weights: ObjectiveWeights | None = None, ga: GAConfig | None = None) -> list[MethodSpec]:
    """The diffusion-proximity method and its weighted-L1 counterpart."""
    weights = weights or ObjectiveWeights()
    ga = ga or GAConfig()
    return [
        MethodSpec("CoDiCE_diff", replace(weights, proximity_mode=DIFFUSION), ga),
        MethodSpec("CoDiCE_L1", replace(weights, proximity_mode=WEIGHTED_L1), ga),
    ]


@dataclass
class Experiment:
    train: Dataset
    test: Dataset
    preprocessor: Preprocessor
    model: Predictor
    dm: diffusion.DiffusionMap | None
    _pools: dict = field(default_factory=dict, repr=False)

    def pool(self, desired: DesiredOutcome) -> np.ndarray:
        key = json.dumps(desired.to_dict(), sort_keys=True)
        if key not in self._pools:
            self._pools[key] = desired_pool(self.model, self.preprocessor, self.train, desired)
        return self._pools[key]


def fit_diffusion_map(train: Dataset, preprocessor: Preprocessor, k: int = 10, alpha: float = 1.0,
                      t: int = 1, m: int | None = None) -> diffusion.DiffusionMap | None:
    """Diffusion map over the standardized continuous training features."""
    cont = preprocessor.schema.continuous_indices
    if not cont:
        return None
    X = preprocessor.to_search(train.frame)[:, cont]
    return diffusion.fit(X, k=k, alpha=alpha, t=t, m=m)


def instance_seed(seed: int, position: int) -> int:
    """Independent per-instance stream seed; identical whatever the worker count."""
    return int(np.random.SeedSequence([int(seed), int(position)]).generate_state(1)[0])


def desired_for(exp: Experiment, row_index: int, desired: Any = OPPOSITE,
                target_change: tuple[float, float] = (-0.10, -0.05)) -> DesiredOutcome:
    """Desired outcome for one test row.

    Classification: ``'opposite'`` flips a binary prediction, an integer
    names the target class. Regression: the interval is the prediction
    scaled by ``1 + target_change``.
    """
    e = exp.preprocessor.transform(exp.test.frame.iloc[[row_index]])
    pred = np.atleast_1d(exp.model.predict(e))[0]
    if exp.model.task == CLASSIFICATION:
        if desired == OPPOSITE:
            if exp.model.n_classes != 2:
                raise ConfigurationError("'opposite' needs a binary model; name a target class")
            return DesiredOutcome(target_class=1 - int(pred))
        return DesiredOutcome(target_class=int(desired))
    lo, hi = sorted(float(pred) * (1.0 + c) for c in target_change)
    return DesiredOutcome(interval=(lo, hi))


def eligible_instances(exp: Experiment, n_instances: int, desired: Any = OPPOSITE,
                       target_change: tuple[float, float] = (-0.10, -0.05)) -> list[tuple[int, DesiredOutcome]]:
    """First ``n_instances`` test rows, in test-set order, not already at the
    desired outcome."""
    if n_instances < 1:
        raise ConfigurationError("n_instances must be >= 1")
    out = []
    E = exp.preprocessor.transform(exp.test.frame)
    for i in range(len(exp.test)):
        d = desired_for(exp, i, desired, target_change)
        if not d.satisfied(exp.model, E[i])[0]:
            out.append((i, d))
            if len(out) == n_instances:
                break
    if not out:
        raise ConfigurationError("no eligible test instances")
    return out


def _nan_to_none(v):
    return None if isinstance(v, float) and math.isnan(v) else v


def explain_instance(exp: Experiment, method: MethodSpec, row_index: int, desired: DesiredOutcome,
                     seed: int) -> dict[str, Any]:
    """Search one test row and return its structured record with metrics."""
    x = exp.test.frame.iloc[[row_index]]
    seed = int(seed)
    start = time.perf_counter()
    result = find_counterfactual(exp.model, exp.dm, x, desired, method.weights, method.ga,
                                 exp.preprocessor, seed=seed, pool=exp.pool(desired))
    seconds = time.perf_counter() - start
    pre = exp.preprocessor
    cf = result.counterfactual
    metrics = {
        "diffusion": diffusion_metric(exp.dm, x, cf, pre) if exp.dm is not None else 0.0,
        "l1": weighted_l1(x, cf, pre),
        "l0_cat": l0_categorical(x, cf, pre.schema, normalized=True),
        "l0_cat_raw": l0_categorical(x, cf, pre.schema),
        "dcoherence": result.coherence.score,
        "sparsity": sparsity(pre.to_search(x)[0], result.search_vector, pre.schema),
        "coherence_penalty": result.coherence.penalty,
    }
    record = result.to_record()
    record.update(method=method.name, test_index=row_index, desired=desired.to_dict(),
                  metrics=metrics, seconds=seconds)
    return record


_WORKER_EXP: Experiment | None = None


def _init_worker(exp: Experiment) -> None:
    global _WORKER_EXP
    _WORKER_EXP = exp


def _worker_task(args):
    method, row_index, desired, seed = args
    return explain_instance(_WORKER_EXP, method, row_index, desired, seed)


def run_method(exp: Experiment, method: MethodSpec, instances: Sequence[tuple[int, DesiredOutcome]],
               seed: int = 0, workers: int | None = 1) -> list[dict[str, Any]]:
    """Records for every instance, in instance order."""
    tasks = [(method, i, d, instance_seed(seed, pos)) for pos, (i, d) in enumerate(instances)]
    if not workers or workers <= 1 or len(tasks) == 1:
        return [explain_instance(exp, *t) for t in tasks]
    for _, d in instances:
        exp.pool(d)
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(exp,)) as ex:
        return list(ex.map(_worker_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


@dataclass(frozen=True)
class BenchmarkRow:
    """One method's aggregate. Statistics cover valid results only and are
    NaN when a method produced none (``flagged`` is then True)."""

    method: str
    validity: float
    n_attempted: int
    n_valid: int
    stats: dict[str, tuple[float, float]]
    seconds_per_instance: float
    params: dict[str, Any] = field(default_factory=dict)

    @property
    def flagged(self) -> bool:
        return self.n_valid == 0

    def mean(self, name: str) -> float:
        return self.stats[name][0]

    def as_table_row(self) -> dict[str, Any]:
        row: dict[str, Any] = {"method": self.method, "validity": self.validity}
        for name in STATS:
            row[f"{name}_mean"], row[f"{name}_std"] = self.stats[name]
        row.update(n_attempted=self.n_attempted, n_valid=self.n_valid,
                   seconds_per_instance=self.seconds_per_instance)
        row.update(self.params)
        return row


def aggregate(name: str, records: Sequence[dict[str, Any]], params: dict[str, Any] | None = None) -> BenchmarkRow:
    if not records:
        raise ConfigurationError("no results to aggregate")
    valid = [r for r in records if r["valid"]]
    stats = {}
    for s in STATS:
        vals = np.array([r["metrics"][s] for r in valid], dtype=float)
        stats[s] = (float(vals.mean()), float(vals.std())) if len(vals) else (math.nan, math.nan)
    return BenchmarkRow(
        method=name,
        validity=100.0 * len(valid) / len(records),
        n_attempted=len(records),
        n_valid=len(valid),
        stats=stats,
        seconds_per_instance=float(np.mean([r["seconds"] for r in records])),
        params=dict(params or {}),
    )


@dataclass(frozen=True)
class BenchmarkReport:
    rows: tuple[BenchmarkRow, ...]
    records: tuple[dict[str, Any], ...] = field(default=(), repr=False)

    def row(self, method: str) -> BenchmarkRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def columns(self) -> list[str]:
        extra = []
        for r in self.rows:
            extra += [k for k in r.params if k not in extra]
        return [*extra, *TABLE_COLUMNS] if extra else list(TABLE_COLUMNS)

    def write_csv(self, path: str | Path) -> None:
        cols = self.columns()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for r in self.rows:
                d = r.as_table_row()
                w.writerow({c: _csv_cell(d.get(c)) for c in cols})

    def write_records(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(jsonable(rec), sort_keys=True) + "\n")

    def format_table(self) -> str:
        head = ["method", "validity", "diffusion", "L1 cont", "L0 cat", "dcoherence", "sparsity", "s/inst"]
        lines = ["  ".join(f"{h:>18}" for h in head)]
        for r in self.rows:
            cells = [r.method, f"{r.validity:.0f}%"]
            for s in ("diffusion", "l1", "l0_cat", "dcoherence", "sparsity"):
                m, sd = r.stats[s]
                cells.append("n/a" if math.isnan(m) else f"{m:.2f} ± {sd:.2f}")
            cells.append(f"{r.seconds_per_instance:.2f}")
            lines.append("  ".join(f"{c:>18}" for c in cells))
        return "\n".join(lines)


def _csv_cell(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return _nan_to_none(obj.item())
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    return _nan_to_none(obj)


def run_benchmark(exp: Experiment, methods: Sequence[MethodSpec], n_instances: int = 100, seed: int = 0,
                  workers: int | None = 1, desired: Any = OPPOSITE,
                  target_change: tuple[float, float] = (-0.10, -0.05)) -> BenchmarkReport:
    """Search the first ``n_instances`` eligible test rows with each method."""
    instances = eligible_instances(exp, n_instances, desired, target_change)
    rows, records = [], []
    for m in methods:
        recs = run_method(exp, m, instances, seed, workers)
        rows.append(aggregate(m.name, recs))
        records.extend(recs)
    return BenchmarkReport(tuple(rows), tuple(records))


ABLATIONS = (
    ("lambda2,lambda3 inactive", ("lambda2", "lambda3")),
    ("lambda1,lambda3 inactive", ("lambda1", "lambda3")),
    ("lambda1,lambda2 inactive", ("lambda1", "lambda2")),
)


def run_ablation(exp: Experiment, base: MethodSpec, n_instances: int = 100, seed: int = 0,
                 workers: int | None = 1, desired: Any = OPPOSITE,
                 target_change: tuple[float, float] = (-0.10, -0.05)) -> BenchmarkReport:
    """Three runs, each keeping a single weighted term of ``base`` active.

    Rows are ordered proximity-only, sparsity-only, coherence-only.
    """
    methods = [
        MethodSpec(label, replace(base.weights, **{k: 0.0 for k in off}), base.ga)
        for label, off in ABLATIONS
    ]
    return run_benchmark(exp, methods, n_instances, seed, workers, desired, target_change)


def run_tradeoff_sweep(exp: Experiment, base: MethodSpec, grid: Iterable[float], lambda2: float = 0.5,
                       n_instances: int = 100, seed: int = 0, workers: int | None = 1, desired: Any = OPPOSITE,
                       target_change: tuple[float, float] = (-0.10, -0.05)) -> BenchmarkReport:
    """One benchmark row per lambda1 in ``grid`` with lambda3 = 1 - lambda1."""
    grid = [float(g) for g in grid]
    if len(grid) < 3:
        raise ConfigurationError("trade-off sweep needs at least 3 grid points")
    if any(not 0 <= g <= 1 for g in grid):
        raise ConfigurationError("lambda1 grid values must lie in [0, 1]")
    instances = eligible_instances(exp, n_instances, desired, target_change)
    rows, records = [], []
    for lam1 in grid:
        w = replace(base.weights, lambda1=lam1, lambda2=lambda2, lambda3=1.0 - lam1)
        m = MethodSpec(f"{base.name}[lambda1={lam1:g}]", w, base.ga)
        recs = run_method(exp, m, instances, seed, workers)
        rows.append(aggregate(m.name, recs, {"lambda1": lam1, "lambda2": lambda2, "lambda3": 1.0 - lam1}))
        records.extend(recs)
    return BenchmarkReport(tuple(rows), tuple(records))


def export_coordinates(exp: Experiment, records: Sequence[dict[str, Any]], path: str | Path,
                       kind: str = "pca", dims: int = 2) -> None:
    """Write training points, inputs and counterfactuals as one coordinate table.

    ``kind='pca'`` projects standardized continuous features onto the top
    principal axes of the training set; ``kind='diffusion'`` writes the
    leading diffusion coordinates.
    """
    pre = exp.preprocessor
    cont = pre.schema.continuous_indices
    Ztrain = pre.to_search(exp.train.frame)[:, cont]
    inputs = [exp.test.frame.iloc[[r["test_index"]]] for r in records]
    cfs = [r["counterfactual"] for r in records]
    Zin = np.vstack([pre.to_search(x)[:, cont] for x in inputs]) if records else np.empty((0, len(cont)))
    Zcf = np.vstack([pre.to_search(c)[:, cont] for c in cfs]) if records else np.empty((0, len(cont)))
    if kind == "pca":
        dims = min(dims, len(cont))
        pca = PCA(dims).fit(Ztrain)
        Ctrain, Cin, Ccf = pca.transform(Ztrain), pca.transform(Zin), pca.transform(Zcf)
    elif kind == "diffusion":
        if exp.dm is None:
            raise ConfigurationError("no diffusion map to export")
        dims = min(dims, exp.dm.n_components)
        Ctrain = exp.dm.coords[:, :dims]
        Cin = exp.dm.extend(Zin)[:, :dims] if len(Zin) else np.empty((0, dims))
        Ccf = exp.dm.extend(Zcf)[:, :dims] if len(Zcf) else np.empty((0, dims))
    else:
        raise ConfigurationError(f"unknown coordinate kind {kind!r}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["point_id", "role", "method", "test_index", *(f"c{j + 1}" for j in range(dims))])
        for i, c in enumerate(Ctrain):
            w.writerow([f"train-{i}", "train", "", "", *map(repr, c.tolist())])
        for i, (r, a, b) in enumerate(zip(records, Cin, Ccf)):
            w.writerow([f"input-{i}", "input", r["method"], r["test_index"], *map(repr, a.tolist())])
            w.writerow([f"cf-{i}", "counterfactual", r["method"], r["test_index"], *map(repr, b.tolist())])
