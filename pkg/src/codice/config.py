"""Run configuration document.

One YAML or JSON file describes a full run. Every field has a default and
unknown keys are rejected. Precedence is command-line flags over the file
over defaults; two environment variables (``CODICE_OUTPUT_DIR`` and
``CODICE_WORKERS``) sit between flags and the file.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Literal, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .data import CLASSIFICATION, FeatureSchema
from .errors import ConfigurationError
from .coherence import RATIO
from .objective import DIFFUSION, ObjectiveWeights
from .search import GAConfig

ENV_OUTPUT = "CODICE_OUTPUT_DIR"
ENV_WORKERS = "CODICE_WORKERS"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FeatureConfig(_Section):
    name: str
    kind: Literal["continuous", "categorical"] = "continuous"
    categories: list[str] = Field(default_factory=list)
    frozen: bool = False
    marginal_override: Literal["increase", "decrease"] | None = None


class SyntheticConfig(_Section):
    shape: Literal["s_curve", "swiss_roll"] = "s_curve"
    n: int = Field(2000, ge=2)
    noise: float = Field(0.1, ge=0)


class DatasetConfig(_Section):
    csv: str | None = None
    synthetic: SyntheticConfig | None = None
    features: list[FeatureConfig] | None = None
    schema_file: str | None = None
    target: str = "target"
    task: Literal["classification", "regression"] = CLASSIFICATION
    classes: list[str] | None = None
    test_fraction: float = Field(0.2, gt=0, lt=1)
    seed: int = 0

    @model_validator(mode="after")
    def _one_source(self):
        if self.csv is not None and self.synthetic is not None:
            raise ValueError("give either csv or synthetic, not both")
        if self.csv is not None and self.features is None and self.schema_file is None:
            raise ValueError("a csv dataset needs features or schema_file")
        if self.features is not None and self.schema_file is not None:
            raise ValueError("give either features or schema_file, not both")
        return self

    def schema(self, base: Path | None = None) -> FeatureSchema:
        if self.schema_file is not None:
            path = resolve(self.schema_file, base)
            return FeatureSchema.from_dict(read_document(path))
        if self.features is None:
            raise ConfigurationError("dataset has no feature schema")
        return FeatureSchema.from_dict({"features": [f.model_dump() for f in self.features]})


class ModelConfig(_Section):
    kind: Literal["logistic", "knn", "linear"] = "logistic"
    l2_penalty: float = Field(1e-3, ge=0)
    max_iter: int = Field(5000, ge=0)
    tol: float = Field(1e-6, gt=0)
    k: int = Field(10, ge=1)


class DiffusionConfig(_Section):
    k: int = Field(10, ge=1)
    alpha: float = Field(1.0, ge=0)
    t: int = Field(1, ge=1)
    m: int | None = Field(None, ge=1)


class ObjectiveConfig(_Section):
    lambda1: float = Field(0.5, ge=0)
    lambda2: float = Field(0.5, ge=0)
    lambda3: float = Field(0.5, ge=0)
    proximity_mode: Literal["diffusion", "weighted_l1"] = DIFFUSION
    coherence_mode: Literal["ratio", "signed"] = RATIO

    def weights(self) -> ObjectiveWeights:
        return ObjectiveWeights(**self.model_dump())


class GASection(_Section):
    population_size: int = Field(60, ge=2)
    max_iterations: int = Field(200, ge=0)
    mutation_rate: float = Field(0.3, ge=0, le=1)
    mutation_scale: float = Field(0.3, ge=0)
    crossover_rate: float = Field(0.5, ge=0, le=1)
    init_fraction_sampled: float = Field(0.5, ge=0, le=1)
    patience: int = Field(20, ge=1)

    def ga(self, seed: int) -> GAConfig:
        return GAConfig(**self.model_dump(), seed=seed)


class ObjectiveOverrides(_Section):
    lambda1: float | None = Field(None, ge=0)
    lambda2: float | None = Field(None, ge=0)
    lambda3: float | None = Field(None, ge=0)
    proximity_mode: Literal["diffusion", "weighted_l1"] | None = None
    coherence_mode: Literal["ratio", "signed"] | None = None


class MethodConfig(_Section):
    """A named method; unset objective fields inherit the top-level objective."""

    name: str
    objective: ObjectiveOverrides = Field(default_factory=ObjectiveOverrides)

    def weights(self, base: ObjectiveConfig) -> ObjectiveWeights:
        merged = {**base.model_dump(), **self.objective.model_dump(exclude_none=True)}
        return ObjectiveWeights(**merged)


class BenchmarkConfig(_Section):
    n_instances: int = Field(100, ge=1)
    desired: Union[Literal["opposite"], int] = "opposite"
    target_change: tuple[float, float] = (-0.10, -0.05)
    methods: list[MethodConfig] | None = None


class SweepConfig(_Section):
    grid: list[float] = Field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
    lambda2: float = Field(0.5, ge=0)

    @field_validator("grid")
    @classmethod
    def _grid(cls, v):
        if len(v) < 3:
            raise ValueError("grid needs at least 3 points")
        if any(not 0 <= g <= 1 for g in v):
            raise ValueError("grid values must lie in [0, 1]")
        return v


class OutputConfig(_Section):
    directory: str = "runs/latest"
    coordinates: Literal["pca", "diffusion", "none"] = "pca"


class RunConfig(_Section):
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    diffusion: DiffusionConfig = Field(default_factory=DiffusionConfig)
    objective: ObjectiveConfig = Field(default_factory=ObjectiveConfig)
    ga: GASection = Field(default_factory=GASection)
    benchmark: BenchmarkConfig = Field(default_factory=BenchmarkConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)
    seed: int = 0
    workers: int | None = Field(None, ge=1)

    def to_document(self) -> dict[str, Any]:
        return self.model_dump(mode="json")


def read_document(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"cannot read {path}: {e.strerror}") from None
    try:
        doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigurationError(f"{path}: not a valid document ({e})") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return doc


def resolve(p: str | Path, base: Path | None) -> Path:
    p = Path(p)
    return p if p.is_absolute() or base is None else base / p


def _set(doc: dict, dotted: str, value) -> None:
    *parents, leaf = dotted.split(".")
    node = doc
    for key in parents:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"cannot override {dotted}: {key} is not a section")
    node[leaf] = value


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None,
                environ: dict[str, str] | None = None) -> RunConfig:
    """Build the effective config.

    ``overrides`` maps dotted keys (``"objective.lambda1"``) to values;
    ``None`` values are ignored so unset flags fall through.
    """
    doc = read_document(path) if path is not None else {}
    env = os.environ if environ is None else environ
    if env.get(ENV_OUTPUT):
        _set(doc, "output.directory", env[ENV_OUTPUT])
    if env.get(ENV_WORKERS):
        try:
            _set(doc, "workers", int(env[ENV_WORKERS]))
        except ValueError:
            raise ConfigurationError(f"{ENV_WORKERS} must be an integer, got {env[ENV_WORKERS]!r}") from None
    for key, value in (overrides or {}).items():
        if value is not None:
            _set(doc, key, value)
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as e:
        raise ConfigurationError(_describe(e)) from None


def _describe(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "invalid config: " + "; ".join(parts)


def dump_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_document(), sort_keys=False), encoding="utf-8")


__all__ = ["ENV_OUTPUT", "ENV_WORKERS", "RunConfig", "dump_config", "load_config", "read_document"]
