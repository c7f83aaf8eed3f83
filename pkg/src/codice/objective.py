"""Counterfactual fitness: outcome loss plus weighted proximity, sparsity
and directional-coherence penalties."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from .coherence import RATIO, SIGNED, CoherenceProbe, coherence_score
from .data import CLASSIFICATION, FeatureSchema, Preprocessor
from .diffusion import DiffusionMap
from .errors import ConfigurationError

DIFFUSION = "diffusion"
WEIGHTED_L1 = "weighted_l1"
PROBA_CLAMP = 1e-12
CHANGE_TOL = 1e-9


@dataclass(frozen=True)
class ObjectiveWeights:
    lambda1: float = 0.5
    lambda2: float = 0.5
    lambda3: float = 0.5
    proximity_mode: str = DIFFUSION
    coherence_mode: str = RATIO

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigurationError(f"{name} must be finite and >= 0, got {v}")
        if self.proximity_mode not in (DIFFUSION, WEIGHTED_L1):
            raise ConfigurationError(f"unknown proximity_mode {self.proximity_mode!r}")
        if self.coherence_mode not in (RATIO, SIGNED):
            raise ConfigurationError(f"unknown coherence_mode {self.coherence_mode!r}")


@dataclass(frozen=True)
class DesiredOutcome:
    """Either a target class or a target interval of regression values."""

    target_class: int | None = None
    interval: tuple[float, float] | None = None

    def __post_init__(self):
        if (self.target_class is None) == (self.interval is None):
            raise ConfigurationError("give exactly one of target_class or interval")
        if self.interval is not None:
            lo, hi = map(float, self.interval)
            if lo > hi:
                raise ConfigurationError(f"empty target interval [{lo}, {hi}]")
            object.__setattr__(self, "interval", (lo, hi))

    @property
    def is_classification(self) -> bool:
        return self.target_class is not None

    def satisfied(self, model, E: np.ndarray) -> np.ndarray:
        pred = np.atleast_1d(model.predict(np.atleast_2d(E)))
        if self.is_classification:
            return pred == self.target_class
        lo, hi = self.interval
        return (pred >= lo) & (pred <= hi)

    def coherence_target(self, model, e_factual: np.ndarray):
        """Class index, or the regression direction from the factual
        prediction towards the interval."""
        if self.is_classification:
            return self.target_class
        base = float(np.atleast_1d(model.predict(np.atleast_2d(e_factual)))[0])
        return "decrease" if sum(self.interval) / 2 < base else "increase"

    def to_dict(self) -> dict[str, Any]:
        if self.is_classification:
            return {"target_class": self.target_class}
        return {"interval": list(self.interval)}


@dataclass(frozen=True)
class CandidateEvaluation:
    total: float
    loss_term: float
    proximity_term: float
    categorical_term: float
    sparsity_term: float
    coherence_penalty: float
    valid: bool

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def hinge_from_proba(p: np.ndarray) -> np.ndarray:
    """``max(0, 1 - logit(p))`` with ``p`` clamped away from 0 and 1."""
    p = np.clip(np.asarray(p, dtype=float), PROBA_CLAMP, 1 - PROBA_CLAMP)
    return np.maximum(0.0, 1.0 - np.log(p / (1 - p)))


def hinge_loss(model, E, desired_class: int):
    """Hinge on the logit of the desired-class probability of encoded rows."""
    E = np.asarray(E, dtype=float)
    p = np.atleast_2d(model.predict_proba(np.atleast_2d(E)))[:, desired_class]
    out = hinge_from_proba(p)
    return float(out[0]) if E.ndim == 1 else out


def interval_sq_loss(pred, interval) -> np.ndarray:
    lo, hi = interval
    pred = np.asarray(pred, dtype=float)
    return np.where(pred < lo, (lo - pred) ** 2, np.where(pred > hi, (pred - hi) ** 2, 0.0))


def mse_loss(model, E, interval):
    """Squared distance from the prediction to the target interval."""
    E = np.asarray(E, dtype=float)
    out = interval_sq_loss(np.atleast_1d(model.predict(np.atleast_2d(E))), interval)
    return float(out[0]) if E.ndim == 1 else out


def _changed(x: np.ndarray, Z: np.ndarray, schema: FeatureSchema) -> np.ndarray:
    cont = np.array([not f.is_categorical for f in schema])
    diff = np.abs(np.atleast_2d(Z) - np.asarray(x)[None, :])
    return np.where(cont[None, :], diff > CHANGE_TOL, diff != 0)


def sparsity(x, Z, schema: FeatureSchema):
    """Fraction of features changed (search-space rows)."""
    out = _changed(x, Z, schema).mean(axis=1)
    return float(out[0]) if np.ndim(Z) == 1 else out


def dist_cat(x, Z, schema: FeatureSchema):
    """Fraction of categorical features whose category differs."""
    cat = schema.categorical_indices
    Zs = np.atleast_2d(Z)
    if not cat:
        out = np.zeros(len(Zs))
    else:
        out = (Zs[:, cat] != np.asarray(x)[None, cat]).mean(axis=1)
    return float(out[0]) if np.ndim(Z) == 1 else out


class Objective:
    """Fitness of candidate rows (search space) for one factual row.

    Coherence probes run only when ``lambda3 > 0`` or when explicitly asked
    for, so ``probe.n_probes`` stays 0 for coherence-free objectives.
    """

    def __init__(self, model, x, desired: DesiredOutcome, weights: ObjectiveWeights,
                 preprocessor: Preprocessor, dm: DiffusionMap | None = None):
        if weights.proximity_mode == DIFFUSION and dm is None and preprocessor.schema.continuous_indices:
            raise ConfigurationError("diffusion proximity needs a fitted diffusion map")
        if desired.is_classification != (model.task == CLASSIFICATION):
            raise ConfigurationError("desired outcome does not match the model task")
        self.model = model
        self.pre = preprocessor
        self.schema = preprocessor.schema
        self.x = np.asarray(x, dtype=float).reshape(-1)
        self.desired = desired
        self.weights = weights
        self.dm = dm
        self._cont = self.schema.continuous_indices
        self.probe = CoherenceProbe(model, preprocessor, self.x,
                                    desired.coherence_target(model, preprocessor.encode_search(self.x)))
        self._x_coords = dm.extend(self.x[self._cont]) if dm is not None and self._cont else None

    def proximity(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(Z)
        if not self._cont:
            return np.zeros(len(Z))
        if self.weights.proximity_mode == WEIGHTED_L1:
            return self.weighted_l1(Z)
        return self.diffusion(Z)

    def weighted_l1(self, Z: np.ndarray) -> np.ndarray:
        d = np.abs(np.atleast_2d(Z)[:, self._cont] - self.x[None, self._cont])
        return d @ self.pre.l1_scale

    def diffusion(self, Z: np.ndarray) -> np.ndarray:
        cz = self.dm.extend(np.atleast_2d(Z)[:, self._cont])
        return np.linalg.norm(cz - self._x_coords[None, :], axis=1)

    def loss(self, E: np.ndarray) -> np.ndarray:
        if self.desired.is_classification:
            return hinge_from_proba(self.model.predict_proba(E)[:, self.desired.target_class])
        return interval_sq_loss(self.model.predict(E), self.desired.interval)

    def terms(self, Z: np.ndarray, with_coherence: bool | None = None) -> dict[str, np.ndarray]:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        w = self.weights
        E = self.pre.encode_search(Z)
        out = {
            "loss_term": self.loss(E),
            "proximity_term": self.proximity(Z),
            "categorical_term": dist_cat(self.x, Z, self.schema),
            "sparsity_term": sparsity(self.x, Z, self.schema),
        }
        if with_coherence is None:
            with_coherence = w.lambda3 > 0
        if with_coherence:
            out["coherence_penalty"] = 1.0 - coherence_score(self.probe.signs(Z), w.coherence_mode)
        else:
            out["coherence_penalty"] = np.zeros(len(Z))
        out["total"] = (
            out["loss_term"]
            + w.lambda1 * (out["proximity_term"] + out["categorical_term"])
            + w.lambda2 * out["sparsity_term"]
            + w.lambda3 * out["coherence_penalty"]
        )
        out["valid"] = self.desired.satisfied(self.model, E)
        return out

    def totals(self, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        t = self.terms(Z)
        return t["total"], t["valid"]

    def evaluate(self, z: np.ndarray, with_coherence: bool | None = None) -> CandidateEvaluation:
        t = self.terms(np.asarray(z, dtype=float)[None, :], with_coherence)
        return CandidateEvaluation(
            total=float(t["total"][0]),
            loss_term=float(t["loss_term"][0]),
            proximity_term=float(t["proximity_term"][0]),
            categorical_term=float(t["categorical_term"][0]),
            sparsity_term=float(t["sparsity_term"][0]),
            coherence_penalty=float(t["coherence_penalty"][0]),
            valid=bool(t["valid"][0]),
        )


def evaluate(model, dm, x, candidate, desired: DesiredOutcome, weights: ObjectiveWeights,
             preprocessor: Preprocessor) -> CandidateEvaluation:
    """Evaluate one candidate; ``x`` and ``candidate`` are original-unit rows."""
    zx = preprocessor.to_search(x)[0]
    zc = preprocessor.to_search(candidate)[0]
    return Objective(model, zx, desired, weights, preprocessor, dm).evaluate(zc)
