"""Directional coherence of a counterfactual move.

For every feature a *control* row is built from the factual row with only
that feature set to its counterfactual value. The sign of the resulting
change in the desired-class probability (or, for regression, in the
prediction oriented by the desired direction) tells whether the joint move
agrees with the model's marginal response on that feature.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .data import CLASSIFICATION, Preprocessor

CHANGE_TOL = 1e-9
RATIO = "ratio"
SIGNED = "signed"


@dataclass(frozen=True)
class CoherenceReport:
    score: float
    incoherent_features: tuple[str, ...]
    per_feature_signs: dict[str, int] = field(default_factory=dict)

    @property
    def penalty(self) -> float:
        return 1.0 - self.score

    def to_dict(self) -> dict[str, Any]:
        return {
            "score": self.score,
            "incoherent_features": list(self.incoherent_features),
            "per_feature_signs": dict(self.per_feature_signs),
        }


def coherence_score(signs: np.ndarray, mode: str = RATIO) -> np.ndarray:
    """Score rows of a sign matrix.

    ``ratio`` counts features whose sign is not -1 (unchanged features are
    coherent); ``signed`` averages the signs, so it lies in [-1, 1].
    """
    signs = np.atleast_2d(signs)
    n = signs.shape[1]
    if mode == RATIO:
        return (signs != -1).sum(axis=1) / n
    if mode == SIGNED:
        return signs.sum(axis=1) / n
    raise ValueError(f"unknown coherence mode {mode!r}")


def _as_direction(desired) -> int:
    if desired in ("increase", 1, 1.0):
        return 1
    if desired in ("decrease", -1, -1.0):
        return -1
    raise ValueError(f"regression direction must be 'increase' or 'decrease', got {desired!r}")


class CoherenceProbe:
    """Marginal-sign oracle for one factual row.

    Control predictions are memoized per (feature, value), so repeated
    candidates sharing a gene cost nothing. ``n_probes`` counts control rows
    actually sent to the model.

    Parameters
    ----------
    model : Predictor
    preprocessor : Preprocessor
    x : (d,) array
        Factual row in search space.
    desired
        Target class index (classification) or ``'increase'`` /
        ``'decrease'`` (regression).
    """

    def __init__(self, model, preprocessor: Preprocessor, x: np.ndarray, desired):
        self.model = model
        self.preprocessor = preprocessor
        self.schema = preprocessor.schema
        self.x = np.asarray(x, dtype=float).reshape(-1)
        self.classification = model.task == CLASSIFICATION
        if self.classification:
            self.desired = int(desired)
            self.direction = 1
        else:
            self.desired = None
            self.direction = _as_direction(desired)
        self.base = self._response(self.x[None, :])[0]
        self._cache: dict[tuple[int, float], int] = {}
        self.n_probes = 0
        self._cont = np.array([not f.is_categorical for f in self.schema])
        overrides = [f.marginal_override for f in self.schema]
        self._override = np.array([{"increase": 1, "decrease": -1}.get(o, 0) for o in overrides])

    def _response(self, Z: np.ndarray) -> np.ndarray:
        E = self.preprocessor.encode_search(Z)
        if self.classification:
            return self.model.predict_proba(E)[:, self.desired]
        return np.asarray(self.model.predict(E), dtype=float)

    def changed(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(Z)
        diff = np.abs(Z - self.x[None, :])
        return np.where(self._cont[None, :], diff > CHANGE_TOL, diff != 0)

    def signs(self, Z: np.ndarray) -> np.ndarray:
        """Per-feature marginal signs for each candidate row of ``Z``."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        changed = self.changed(Z)
        out = np.zeros(Z.shape, dtype=np.int64)
        delta = Z - self.x[None, :]
        has_override = self._override != 0
        ov = changed & has_override[None, :]
        out[ov] = (np.sign(delta) * self._override[None, :])[ov].astype(np.int64)

        probe = changed & ~has_override[None, :]
        rows, cols = np.nonzero(probe)
        if rows.size:
            keys = [(int(c), float(Z[r, c])) for r, c in zip(rows, cols)]
            missing = list(dict.fromkeys(k for k in keys if k not in self._cache))
            if missing:
                controls = np.repeat(self.x[None, :], len(missing), axis=0)
                for i, (c, v) in enumerate(missing):
                    controls[i, c] = v
                resp = self._response(controls)
                self.n_probes += len(missing)
                for key, value in zip(missing, resp):
                    self._cache[key] = int(np.sign(value - self.base)) * self.direction
            out[rows, cols] = [self._cache[k] for k in keys]
        return out

    def report(self, z: np.ndarray, mode: str = RATIO) -> CoherenceReport:
        s = self.signs(np.asarray(z, dtype=float)[None, :])[0]
        names = self.schema.names
        return CoherenceReport(
            score=float(coherence_score(s[None, :], mode)[0]),
            incoherent_features=tuple(n for n, v in zip(names, s) if v == -1),
            per_feature_signs={n: int(v) for n, v in zip(names, s)},
        )


def marginal_pred_sign(model, x, x_cf, feature: str, desired, preprocessor: Preprocessor) -> int:
    """Sign of the model's response to moving only ``feature`` from its
    factual to its counterfactual value (rows in original units)."""
    j = preprocessor.schema.index(feature)
    zx, zc = preprocessor.to_search(x)[0], preprocessor.to_search(x_cf)[0]
    probe = CoherenceProbe(model, preprocessor, zx, desired)
    return int(probe.signs(zc[None, :])[0, j])


def directional_coherence(model, x, x_cf, desired, preprocessor: Preprocessor, mode: str = RATIO) -> CoherenceReport:
    zx, zc = preprocessor.to_search(x)[0], preprocessor.to_search(x_cf)[0]
    return CoherenceProbe(model, preprocessor, zx, desired).report(zc, mode)
