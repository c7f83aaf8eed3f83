"""Evaluation metrics for counterfactuals and a small PCA for exports."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .data import FeatureSchema, Preprocessor, as_frame
from .diffusion import DiffusionMap, diffusion_distance


def validity(results: Sequence) -> float:
    """Percentage of results whose ``valid`` flag is set."""
    if len(results) == 0:
        raise ValueError("no results to score")
    return 100.0 * sum(bool(r.valid) for r in results) / len(results)


def weighted_l1(x, x_cf, preprocessor: Preprocessor) -> float:
    """Sum over continuous features of |x_i - x'_i| / MAD_i, original units."""
    names = preprocessor.schema.continuous_names
    a = as_frame(preprocessor.schema, x)[names].to_numpy(dtype=float)[0]
    b = as_frame(preprocessor.schema, x_cf)[names].to_numpy(dtype=float)[0]
    return float(np.sum(np.abs(a - b) / preprocessor.mad))


def l0_categorical(x, x_cf, schema: FeatureSchema, normalized: bool = False):
    """Number (or fraction, when ``normalized``) of categorical features changed."""
    names = [schema.features[i].name for i in schema.categorical_indices]
    if not names:
        return 0.0 if normalized else 0
    a = as_frame(schema, x)[names].iloc[0].tolist()
    b = as_frame(schema, x_cf)[names].iloc[0].tolist()
    count = sum(u != v for u, v in zip(a, b))
    return count / len(names) if normalized else count


def diffusion_metric(dm: DiffusionMap, x, x_cf, preprocessor: Preprocessor) -> float:
    """Diffusion distance between two original-unit rows (continuous part)."""
    cont = preprocessor.schema.continuous_indices
    za = preprocessor.to_search(x)[0][cont]
    zb = preprocessor.to_search(x_cf)[0][cont]
    return diffusion_distance(dm, za, zb)


class PCA:
    """Principal axes of a centered matrix, signs fixed so the
    largest-magnitude loading of each axis is positive."""

    def __init__(self, dims: int):
        self.dims = dims

    def fit(self, X) -> "PCA":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n, d = X.shape
        if n < 2:
            raise ValueError("PCA needs at least 2 rows")
        if not 1 <= self.dims <= d:
            raise ValueError(f"dims={self.dims} must lie in [1, {d}]")
        self.mean_ = X.mean(axis=0)
        cov = np.cov(X - self.mean_, rowvar=False, bias=False).reshape(d, d)
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1][: self.dims]
        comps = evecs[:, order]
        idx = np.argmax(np.abs(comps), axis=0)
        signs = np.sign(comps[idx, np.arange(self.dims)])
        signs[signs == 0] = 1.0
        self.components_ = comps * signs
        self.explained_variance_ = np.clip(evals[order], 0.0, None)
        return self

    def transform(self, X) -> np.ndarray:
        return (np.atleast_2d(np.asarray(X, dtype=float)) - self.mean_) @ self.components_


def pca_project(X, dims: int = 2) -> np.ndarray:
    return PCA(dims).fit(X).transform(X)
