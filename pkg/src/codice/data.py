"""Feature schemas, tabular datasets, preprocessing and synthetic manifolds."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import RowError, SchemaError

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
CLASSIFICATION = "classification"
REGRESSION = "regression"


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str = CONTINUOUS
    categories: tuple[str, ...] = ()
    frozen: bool = False
    marginal_override: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise SchemaError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if len(set(self.categories)) < 2:
                raise SchemaError(f"feature {self.name!r}: categorical needs >= 2 distinct categories")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"feature {self.name!r}: duplicate categories")
        elif self.categories:
            raise SchemaError(f"feature {self.name!r}: continuous feature cannot list categories")
        if self.marginal_override not in (None, "increase", "decrease"):
            raise SchemaError(
                f"feature {self.name!r}: marginal_override must be 'increase' or 'decrease'"
            )
        if self.marginal_override is not None and self.kind == CATEGORICAL:
            raise SchemaError(f"feature {self.name!r}: marginal_override needs an ordered (continuous) feature")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature declarations.

    Categorical features carry their vocabulary; any feature may be frozen
    (never changed by the search) or carry a user-declared marginal direction
    that replaces the model-probed one when scoring coherence.
    """

    features: tuple[Feature, ...]

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if not self.features:
            raise SchemaError("schema declares no features")
        names = [f.name for f in self.features]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise SchemaError(f"duplicate feature names: {dupes}")

    def __len__(self) -> int:
        return len(self.features)

    def __iter__(self):
        return iter(self.features)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def continuous_indices(self) -> list[int]:
        return [i for i, f in enumerate(self.features) if not f.is_categorical]

    @property
    def categorical_indices(self) -> list[int]:
        return [i for i, f in enumerate(self.features) if f.is_categorical]

    @property
    def continuous_names(self) -> list[str]:
        return [self.features[i].name for i in self.continuous_indices]

    @property
    def frozen_mask(self) -> np.ndarray:
        return np.array([f.frozen for f in self.features], dtype=bool)

    def index(self, name: str) -> int:
        for i, f in enumerate(self.features):
            if f.name == name:
                return i
        raise SchemaError(f"unknown feature {name!r}")

    def __getitem__(self, name: str) -> Feature:
        return self.features[self.index(name)]

    def to_dict(self) -> dict[str, Any]:
        out = []
        for f in self.features:
            d: dict[str, Any] = {"name": f.name, "kind": f.kind}
            if f.categories:
                d["categories"] = list(f.categories)
            if f.frozen:
                d["frozen"] = True
            if f.marginal_override:
                d["marginal_override"] = f.marginal_override
            out.append(d)
        return {"features": out}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "FeatureSchema":
        try:
            entries = doc["features"]
        except (KeyError, TypeError):
            raise SchemaError("schema document needs a 'features' list") from None
        allowed = {"name", "kind", "categories", "frozen", "marginal_override"}
        features = []
        for entry in entries:
            unknown = set(entry) - allowed
            if unknown:
                raise SchemaError(f"unknown schema keys {sorted(unknown)} in {entry.get('name')!r}")
            features.append(Feature(**entry))
        return cls(tuple(features))

    def digest(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def as_frame(schema: FeatureSchema, rows: Any) -> pd.DataFrame:
    """Coerce a row, a mapping, a sequence of rows or a DataFrame into a
    schema-ordered DataFrame (continuous as float, categorical as str)."""
    if isinstance(rows, pd.DataFrame):
        missing = [n for n in schema.names if n not in rows.columns]
        if missing:
            raise SchemaError(f"missing columns {missing}")
        frame = rows[schema.names].copy()
    elif isinstance(rows, pd.Series):
        frame = pd.DataFrame([rows[schema.names].tolist()], columns=schema.names)
    elif isinstance(rows, Mapping):
        frame = pd.DataFrame([[rows[n] for n in schema.names]], columns=schema.names)
    else:
        arr = list(rows)
        if arr and not isinstance(arr[0], (list, tuple, np.ndarray, Mapping, pd.Series)):
            arr = [arr]
        if arr and isinstance(arr[0], Mapping):
            arr = [[r[n] for n in schema.names] for r in arr]
        for r in arr:
            if len(r) != len(schema):
                raise SchemaError(f"row has {len(r)} values, schema has {len(schema)} features")
        frame = pd.DataFrame([list(r) for r in arr], columns=schema.names)
    for i, f in enumerate(schema.features):
        col = frame.columns[i]
        if f.is_categorical:
            frame[col] = frame[col].astype(str).astype(object)
        else:
            frame[col] = frame[col].astype(float)
    return frame.reset_index(drop=True)


def validate_frame(schema: FeatureSchema, frame: pd.DataFrame) -> None:
    for f in schema.features:
        values = frame[f.name]
        if f.is_categorical:
            bad = ~values.isin(f.categories)
        else:
            bad = ~np.isfinite(values.to_numpy(dtype=float))
        if bad.any():
            r = int(np.flatnonzero(bad.to_numpy())[0])
            raise RowError(r, f"invalid value {values.iloc[r]!r} for feature {f.name!r}")


@dataclass(frozen=True)
class Dataset:
    schema: FeatureSchema
    frame: pd.DataFrame
    target: np.ndarray
    task: str = CLASSIFICATION
    classes: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.task not in (CLASSIFICATION, REGRESSION):
            raise SchemaError(f"unknown task {self.task!r}")
        frame = as_frame(self.schema, self.frame)
        validate_frame(self.schema, frame)
        target = np.asarray(self.target)
        if len(frame) < 1:
            raise SchemaError("dataset is empty")
        if target.shape != (len(frame),):
            raise SchemaError("target length does not match number of rows")
        if self.task == CLASSIFICATION:
            if not np.all(np.equal(np.mod(target, 1), 0)) or np.any(target < 0):
                raise SchemaError("classification targets must be non-negative integers")
            target = target.astype(np.int64)
            if self.classes is not None and target.size and target.max() >= len(self.classes):
                raise SchemaError("class index outside declared classes")
        else:
            target = target.astype(float)
        object.__setattr__(self, "frame", frame)
        object.__setattr__(self, "target", target)

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def n_classes(self) -> int:
        if self.task != CLASSIFICATION:
            raise SchemaError("regression dataset has no classes")
        if self.classes is not None:
            return len(self.classes)
        return int(self.target.max()) + 1

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(
            self.schema,
            self.frame.iloc[idx].reset_index(drop=True),
            self.target[idx],
            self.task,
            self.classes,
        )

    def continuous_values(self) -> np.ndarray:
        return self.frame[self.schema.continuous_names].to_numpy(dtype=float)


def load_csv(
    path: str | Path,
    schema: FeatureSchema,
    target_column: str,
    task: str = CLASSIFICATION,
    classes: Sequence[str] | None = None,
) -> Dataset:
    """Read a comma-separated UTF-8 file with a header row.

    For classification, target labels are mapped to indices through
    ``classes`` when given, otherwise they must already be integer labels.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for name in [*schema.names, target_column]:
            if name not in header:
                raise SchemaError(f"{path}: missing column {name!r}")
        cols = [header.index(n) for n in schema.names]
        tcol = header.index(target_column)
        records, targets = [], []
        for r, line in enumerate(reader):
            if not line or all(not cell.strip() for cell in line):
                continue
            if len(line) != len(header):
                raise RowError(r, f"expected {len(header)} fields, got {len(line)}")
            rec = []
            for f, c in zip(schema.features, cols):
                cell = line[c].strip()
                if f.is_categorical:
                    if cell not in f.categories:
                        raise RowError(r, f"category {cell!r} not in vocabulary of {f.name!r}")
                    rec.append(cell)
                else:
                    try:
                        value = float(cell)
                    except ValueError:
                        raise RowError(r, f"cannot parse {cell!r} as a number for {f.name!r}") from None
                    if not math.isfinite(value):
                        raise RowError(r, f"non-finite value for {f.name!r}")
                    rec.append(value)
            records.append(rec)
            targets.append(_parse_target(line[tcol].strip(), r, task, classes))
    if not records:
        raise SchemaError(f"{path}: no data rows")
    frame = pd.DataFrame(records, columns=schema.names)
    return Dataset(schema, frame, np.array(targets), task, tuple(classes) if classes else None)


def _parse_target(cell: str, r: int, task: str, classes: Sequence[str] | None):
    if task == REGRESSION:
        try:
            return float(cell)
        except ValueError:
            raise RowError(r, f"cannot parse target {cell!r}") from None
    if classes is not None:
        if cell not in classes:
            raise RowError(r, f"target {cell!r} not among classes {list(classes)}")
        return list(classes).index(cell)
    try:
        value = float(cell)
    except ValueError:
        raise RowError(r, f"target {cell!r} is not an integer label; declare classes") from None
    if value != int(value) or value < 0:
        raise RowError(r, f"target {cell!r} is not a non-negative integer label")
    return int(value)


def write_csv(dataset: Dataset, path: str | Path, target_column: str = "target") -> None:
    frame = dataset.frame.copy()
    if dataset.task == CLASSIFICATION and dataset.classes:
        frame[target_column] = [dataset.classes[t] for t in dataset.target]
    else:
        frame[target_column] = dataset.target
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def _mad(values: np.ndarray) -> np.ndarray:
    return np.median(np.abs(values - np.median(values, axis=0)), axis=0)


@dataclass(frozen=True)
class Preprocessor:
    """Standardization for continuous features and one-hot encoding for
    categorical ones.

    Three representations are in play:

    * original rows (DataFrame, category labels),
    * *search* vectors: standardized continuous values and integer category
      codes, one slot per feature (what the genetic search manipulates),
    * *encoded* vectors: standardized continuous values plus one-hot blocks
      (what models consume).

    Zero standard deviations and zero MADs are stored as 1.0.
    """

    schema: FeatureSchema
    mean: np.ndarray
    std: np.ndarray
    mad: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    _layout: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n_cont = len(self.schema.continuous_indices)
        for name in ("mean", "std", "mad", "lower", "upper"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if arr.shape != (n_cont,):
                raise SchemaError(f"{name} must have one entry per continuous feature")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.std <= 0) or np.any(self.mad <= 0):
            raise SchemaError("std and MAD must be positive")
        # encoded column offset and width per feature
        layout, offset = [], 0
        for f in self.schema.features:
            width = len(f.categories) if f.is_categorical else 1
            layout.append((offset, width))
            offset += width
        object.__setattr__(self, "_layout", (tuple(layout), offset))

    @classmethod
    def fit(cls, dataset: Dataset) -> "Preprocessor":
        values = dataset.continuous_values()
        std = values.std(axis=0)
        mad = _mad(values)
        return cls(
            dataset.schema,
            mean=values.mean(axis=0),
            std=np.where(std == 0, 1.0, std),
            mad=np.where(mad == 0, 1.0, mad),
            lower=values.min(axis=0),
            upper=values.max(axis=0),
        )

    @classmethod
    def passthrough(cls, schema: FeatureSchema, lower=None, upper=None) -> "Preprocessor":
        """Identity standardization with unit MADs (rows already scaled)."""
        n = len(schema.continuous_indices)
        return cls(
            schema,
            np.zeros(n),
            np.ones(n),
            np.ones(n),
            np.full(n, -np.inf) if lower is None else lower,
            np.full(n, np.inf) if upper is None else upper,
        )

    @property
    def n_encoded(self) -> int:
        return self._layout[1]

    @property
    def search_lower(self) -> np.ndarray:
        """Per-feature lower bounds in search space (categorical: code 0)."""
        lo = np.zeros(len(self.schema))
        lo[self.schema.continuous_indices] = (self.lower - self.mean) / self.std
        return lo

    @property
    def search_upper(self) -> np.ndarray:
        hi = np.array([len(f.categories) - 1 if f.is_categorical else 0 for f in self.schema], dtype=float)
        hi[self.schema.continuous_indices] = (self.upper - self.mean) / self.std
        return hi

    @property
    def l1_scale(self) -> np.ndarray:
        """Multiplier turning standardized differences into MAD units."""
        return self.std / self.mad

    # original <-> search
    def to_search(self, rows: Any) -> np.ndarray:
        frame = as_frame(self.schema, rows)
        validate_frame(self.schema, frame)
        out = np.empty((len(frame), len(self.schema)))
        cont = self.schema.continuous_indices
        out[:, cont] = (frame.iloc[:, cont].to_numpy(dtype=float) - self.mean) / self.std
        for i in self.schema.categorical_indices:
            cats = self.schema.features[i].categories
            lookup = {c: k for k, c in enumerate(cats)}
            out[:, i] = [lookup[v] for v in frame.iloc[:, i]]
        return out

    def from_search(self, Z: np.ndarray) -> pd.DataFrame:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        cont = self.schema.continuous_indices
        data: dict[str, Any] = {}
        for i, f in enumerate(self.schema.features):
            if f.is_categorical:
                data[f.name] = [f.categories[int(round(c))] for c in Z[:, i]]
            else:
                k = cont.index(i)
                data[f.name] = Z[:, i] * self.std[k] + self.mean[k]
        return pd.DataFrame(data, columns=self.schema.names)

    def encode_search(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != len(self.schema):
            raise SchemaError(f"expected {len(self.schema)} search columns, got {Z.shape[1]}")
        layout, width = self._layout
        out = np.zeros((Z.shape[0], width))
        rows = np.arange(Z.shape[0])
        for i, f in enumerate(self.schema.features):
            off, w = layout[i]
            if f.is_categorical:
                out[rows, off + Z[:, i].round().astype(int)] = 1.0
            else:
                out[:, off] = Z[:, i]
        return out

    def decode_to_search(self, E: np.ndarray) -> np.ndarray:
        E = np.atleast_2d(np.asarray(E, dtype=float))
        layout, width = self._layout
        if E.shape[1] != width:
            raise SchemaError(f"expected {width} encoded columns, got {E.shape[1]}")
        Z = np.empty((E.shape[0], len(self.schema)))
        for i, f in enumerate(self.schema.features):
            off, w = layout[i]
            Z[:, i] = np.argmax(E[:, off:off + w], axis=1) if f.is_categorical else E[:, off]
        return Z

    # original <-> encoded
    def transform(self, rows: Any) -> np.ndarray:
        """Encode rows; a single row gives a 1-D vector."""
        single = not isinstance(rows, pd.DataFrame) and _is_single_row(rows)
        E = self.encode_search(self.to_search(rows))
        return E[0] if single else E

    def inverse_transform(self, encoded: np.ndarray) -> pd.DataFrame:
        """Decode one-hot blocks by argmax and undo standardization."""
        return self.from_search(self.decode_to_search(encoded))

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": self.schema.to_dict(),
            **{k: getattr(self, k).tolist() for k in ("mean", "std", "mad", "lower", "upper")},
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "Preprocessor":
        return cls(FeatureSchema.from_dict(doc["schema"]), doc["mean"], doc["std"], doc["mad"], doc["lower"], doc["upper"])


def _is_single_row(rows: Any) -> bool:
    if isinstance(rows, (Mapping, pd.Series)):
        return True
    if isinstance(rows, np.ndarray):
        return rows.ndim == 1
    rows = list(rows)
    return bool(rows) and not isinstance(rows[0], (list, tuple, np.ndarray, Mapping, pd.Series))


def fit_preprocessor(dataset: Dataset) -> Preprocessor:
    return Preprocessor.fit(dataset)


def _manifold_dataset(X: np.ndarray, t: np.ndarray) -> Dataset:
    schema = FeatureSchema(tuple(Feature(n) for n in ("x", "y", "z")))
    labels = (t > np.median(t)).astype(np.int64)
    return Dataset(schema, pd.DataFrame(X, columns=schema.names), labels, CLASSIFICATION)


def make_s_curve(n: int = 2000, noise: float = 0.1, seed: int = 0) -> Dataset:
    """3-D S-shaped surface split into two classes at the median of the
    curve parameter."""
    from sklearn.datasets import make_s_curve as _s_curve

    if n < 2:
        raise ValueError("n must be >= 2")
    X, t = _s_curve(n_samples=n, noise=noise, random_state=seed)
    return _manifold_dataset(X, t)


def make_swiss_roll(n: int = 2000, noise: float = 0.1, seed: int = 0) -> Dataset:
    """Swiss roll (x = t cos t, z = t sin t, y uniform) split into two
    classes at the median of t."""
    from sklearn.datasets import make_swiss_roll as _swiss_roll

    if n < 2:
        raise ValueError("n must be >= 2")
    X, t = _swiss_roll(n_samples=n, noise=noise, random_state=seed)
    return _manifold_dataset(X, t)


def train_test_split(dataset: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded shuffle split; the test partition keeps the shuffled order."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    n = len(dataset)
    n_test = math.ceil(n * test_fraction - 1e-9)
    if n_test < 1 or n_test >= n:
        raise ValueError(f"split of {n} rows at {test_fraction} leaves an empty partition")
    order = np.random.default_rng(seed).permutation(n)
    return dataset.subset(order[n_test:]), dataset.subset(order[:n_test])


def iter_rows(frame: pd.DataFrame) -> Iterable[dict[str, Any]]:
    for _, row in frame.iterrows():
        yield {k: (v.item() if hasattr(v, "item") else v) for k, v in row.items()}
