"""``codice`` command-line interface.

Exit status: 0 on success (or a valid counterfactual), 1 on any error,
2 when no valid counterfactual was found or the instance already has the
desired outcome.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

import yaml

from . import diffusion
from .config import RunConfig, SyntheticConfig, dump_config, load_config, resolve
from .data import (REGRESSION, Dataset, Preprocessor, load_csv, make_s_curve, make_swiss_roll,
                   train_test_split)
from .errors import AlreadyDesiredError, CodiceError
from .harness import (Experiment, MethodSpec, default_methods, desired_for, explain_instance, export_coordinates,
                      fit_diffusion_map, jsonable, run_ablation, run_benchmark, run_tradeoff_sweep)
from .model import accuracy, load_model, save_model, train_knn_prob, train_linear_regression, train_logistic

log = logging.getLogger("codice")

EXIT_OK, EXIT_ERROR, EXIT_NO_VALID = 0, 1, 2
EFFECTIVE_CONFIG = "effective_config.yaml"
FINGERPRINT = "artifacts.json"


def _fingerprint(cfg: RunConfig) -> str:
    doc = {k: cfg.to_document()[k] for k in ("dataset", "model", "diffusion")}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def load_dataset(cfg: RunConfig, base: Path | None = None) -> Dataset:
    d = cfg.dataset
    if d.csv is not None:
        return load_csv(resolve(d.csv, base), d.schema(base), d.target, d.task, d.classes)
    syn = d.synthetic or SyntheticConfig()
    make = make_s_curve if syn.shape == "s_curve" else make_swiss_roll
    return make(syn.n, syn.noise, d.seed)


def train_model(cfg: RunConfig, train: Dataset, pre: Preprocessor):
    m = cfg.model
    X = pre.transform(train.frame)
    if train.task == REGRESSION:
        return train_linear_regression(X, train.target, m.l2_penalty)
    if m.kind == "logistic":
        return train_logistic(X, train.target, m.l2_penalty, m.max_iter, m.tol)
    if m.kind == "knn":
        return train_knn_prob(X, train.target, m.k, train.n_classes)
    raise CodiceError(f"model kind {m.kind!r} does not fit a classification task")


def build_experiment(cfg: RunConfig, base: Path | None = None, artifacts: Path | None = None) -> Experiment:
    """Split, preprocess, train and fit the diffusion map per ``cfg``.

    Artifacts previously written by ``codice fit`` into ``artifacts`` are
    reused when their fingerprint matches the config.
    """
    data = load_dataset(cfg, base)
    train, test = train_test_split(data, cfg.dataset.test_fraction, cfg.dataset.seed)
    if artifacts is not None and _artifacts_match(artifacts, cfg):
        pre = Preprocessor.from_dict(json.loads((artifacts / "preprocessor.json").read_text()))
        model = load_model(artifacts / "model.json", pre.schema.digest())
        dm_path = artifacts / "diffusion.npz"
        dm = diffusion.DiffusionMap.load(dm_path) if dm_path.exists() else None
        log.info("reusing fitted artifacts from %s", artifacts)
        return Experiment(train, test, pre, model, dm)
    pre = Preprocessor.fit(train)
    model = train_model(cfg, train, pre)
    dc = cfg.diffusion
    dm = fit_diffusion_map(train, pre, dc.k, dc.alpha, dc.t, dc.m)
    return Experiment(train, test, pre, model, dm)


def _artifacts_match(directory: Path, cfg: RunConfig) -> bool:
    f = directory / FINGERPRINT
    if not f.exists():
        return False
    return json.loads(f.read_text()).get("fingerprint") == _fingerprint(cfg)


def save_experiment(exp: Experiment, cfg: RunConfig, out: Path) -> dict[str, Any]:
    out.mkdir(parents=True, exist_ok=True)
    (out / "preprocessor.json").write_text(json.dumps(exp.preprocessor.to_dict()))
    save_model(exp.model, out / "model.json", exp.preprocessor.schema.digest())
    if exp.dm is not None:
        exp.dm.save(out / "diffusion.npz")
    summary: dict[str, Any] = {"fingerprint": _fingerprint(cfg), "n_train": len(exp.train), "n_test": len(exp.test)}
    if exp.model.task != REGRESSION:
        X = exp.preprocessor.transform(exp.test.frame)
        summary["test_accuracy"] = accuracy(exp.model, X, exp.test.target)
    if exp.dm is not None:
        summary["diffusion_components"] = exp.dm.n_components
    (out / FINGERPRINT).write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def methods_from(cfg: RunConfig) -> list[MethodSpec]:
    ga = cfg.ga.ga(cfg.seed)
    if cfg.benchmark.methods:
        return [MethodSpec(m.name, m.weights(cfg.objective), ga) for m in cfg.benchmark.methods]
    return default_methods(cfg.objective.weights(), ga)


def _workers(cfg: RunConfig) -> int:
    if cfg.workers:
        return cfg.workers
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # not available on every platform
        return os.cpu_count() or 1


def _desired_arg(text: str | None):
    if text is None:
        return None
    return int(text) if text.lstrip("-").isdigit() else text


# commands ------------------------------------------------------------------------------------------

def cmd_synth(args) -> int:
    make = make_s_curve if args.shape == "s_curve" else make_swiss_roll
    ds = make(args.n, args.noise, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{args.shape}.csv"
    frame = ds.frame.copy()
    frame["class"] = ds.target
    frame.to_csv(csv_path, index=False, float_format="%.17g", lineterminator="\n")
    schema_path = out / f"{args.shape}.schema.yaml"
    schema_path.write_text(yaml.safe_dump(ds.schema.to_dict(), sort_keys=False), encoding="utf-8")
    print(f"wrote {len(ds)} rows to {csv_path} and schema to {schema_path}")
    return EXIT_OK


def _setup(args) -> tuple[RunConfig, Path, Path | None]:
    overrides = {
        "seed": args.seed,
        "workers": getattr(args, "workers", None),
        "output.directory": args.output,
        "objective.lambda1": getattr(args, "lambda1", None),
        "objective.lambda2": getattr(args, "lambda2", None),
        "objective.lambda3": getattr(args, "lambda3", None),
        "objective.proximity_mode": getattr(args, "proximity_mode", None),
        "benchmark.n_instances": getattr(args, "n_instances", None),
    }
    cfg = load_config(args.config, overrides)
    base = Path(args.config).resolve().parent if args.config else None
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / EFFECTIVE_CONFIG)
    return cfg, out, base


def cmd_fit(args) -> int:
    cfg, out, base = _setup(args)
    exp = build_experiment(cfg, base)
    summary = save_experiment(exp, cfg, out)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_explain(args) -> int:
    cfg, out, base = _setup(args)
    exp = build_experiment(cfg, base, artifacts=out)
    desired_spec = _desired_arg(args.desired)
    if args.row is not None:
        row = json.loads(args.row)
        test = Dataset(exp.test.schema, [row], [0] if exp.model.task != REGRESSION else [0.0], exp.test.task)
        exp = replace(exp, test=test, _pools={})
        index = 0
    else:
        index = args.index
        if not 0 <= index < len(exp.test):
            raise CodiceError(f"--index {index} outside test set of {len(exp.test)} rows")
    if desired_spec is None:
        desired_spec = cfg.benchmark.desired
    desired = desired_for(exp, index, desired_spec, tuple(cfg.benchmark.target_change))
    method = MethodSpec("CoDiCE", cfg.objective.weights(), cfg.ga.ga(cfg.seed))
    record = explain_instance(exp, method, index, desired, cfg.seed)
    text = json.dumps(jsonable(record), sort_keys=True)
    (out / "explanation.jsonl").write_text(text + "\n", encoding="utf-8")
    shown = {k: v for k, v in jsonable(record).items() if k != "best_history"}
    print(json.dumps(shown, indent=2, sort_keys=True))
    return EXIT_OK if record["valid"] else EXIT_NO_VALID


def _emit(report, out: Path, stem: str, exp: Experiment, cfg: RunConfig) -> None:
    report.write_csv(out / f"{stem}.csv")
    report.write_records(out / f"{stem}_records.jsonl")
    if cfg.output.coordinates != "none" and (cfg.output.coordinates == "pca" or exp.dm is not None):
        export_coordinates(exp, report.records, out / f"{stem}_coords.csv", cfg.output.coordinates)
    print(report.format_table())


def _bench_kwargs(cfg: RunConfig) -> dict[str, Any]:
    return dict(n_instances=cfg.benchmark.n_instances, seed=cfg.seed, workers=_workers(cfg),
                desired=cfg.benchmark.desired, target_change=tuple(cfg.benchmark.target_change))


def cmd_benchmark(args) -> int:
    cfg, out, base = _setup(args)
    exp = build_experiment(cfg, base, artifacts=out)
    report = run_benchmark(exp, methods_from(cfg), **_bench_kwargs(cfg))
    _emit(report, out, "benchmark", exp, cfg)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg, out, base = _setup(args)
    exp = build_experiment(cfg, base, artifacts=out)
    base_method = MethodSpec("CoDiCE", cfg.objective.weights(), cfg.ga.ga(cfg.seed))
    report = run_ablation(exp, base_method, **_bench_kwargs(cfg))
    _emit(report, out, "ablation", exp, cfg)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg, out, base = _setup(args)
    exp = build_experiment(cfg, base, artifacts=out)
    base_method = MethodSpec("CoDiCE", cfg.objective.weights(), cfg.ga.ga(cfg.seed))
    report = run_tradeoff_sweep(exp, base_method, cfg.sweep.grid, cfg.sweep.lambda2, **_bench_kwargs(cfg))
    _emit(report, out, "sweep", exp, cfg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="codice", description="Coherent diffusion-based counterfactual search")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic manifold dataset")
    p.add_argument("--shape", choices=["s_curve", "swiss_roll"], default="s_curve")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_synth)

    def common(p, lambdas=True, bench=False):
        p.add_argument("--config", help="YAML or JSON run config")
        p.add_argument("--seed", type=int)
        p.add_argument("--output", help="output directory")
        if lambdas:
            p.add_argument("--lambda1", type=float)
            p.add_argument("--lambda2", type=float)
            p.add_argument("--lambda3", type=float)
            p.add_argument("--proximity-mode", choices=["diffusion", "weighted_l1"])
        if bench:
            p.add_argument("--workers", type=int)
            p.add_argument("--n-instances", type=int)

    p = sub.add_parser("fit", help="train the model and fit the diffusion map")
    common(p, lambdas=False)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("explain", help="search a counterfactual for one instance")
    common(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--index", type=int, default=0, help="test-set row index")
    g.add_argument("--row", help="inline row as a JSON object")
    p.add_argument("--desired", help="target class index, or 'opposite'")
    p.set_defaults(func=cmd_explain)

    for name, func, text in (("benchmark", cmd_benchmark, "compare methods on the first eligible test rows"),
                             ("ablate", cmd_ablate, "single-term ablation runs"),
                             ("sweep", cmd_sweep, "lambda1 / lambda3 trade-off sweep")):
        p = sub.add_parser(name, help=text)
        common(p, bench=True)
        p.set_defaults(func=func)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except AlreadyDesiredError as e:
        print(f"codice: {e}", file=sys.stderr)
        return EXIT_NO_VALID
    except (CodiceError, ValueError, OSError) as e:
        print(f"codice: error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
