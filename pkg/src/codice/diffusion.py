"""Self-tuning diffusion maps.

Pipeline: k-th-neighbour local scales, locally scaled Gaussian affinities
``exp(-|x - y|^2 / (s_x s_y))``, density correction with exponent ``alpha``
followed by row normalization into a Markov matrix ``P``, and a spectral
decomposition of ``P`` through its symmetric conjugate.

Eigenvectors are normalized so that ``sum_i pi_i V_ij^2 = 1`` with ``pi`` the
stationary distribution of ``P``. With that normalization the Euclidean
distance between diffusion coordinates ``lambda_j^t V_ij`` equals the
diffusion distance ``sum_z (P^t[x, z] - P^t[y, z])^2 / pi_z`` once the whole
spectrum is kept.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .errors import ConfigurationError, EigenSolverError

DENSE_THRESHOLD = 2000
MAX_DEFAULT_COMPONENTS = 10
EIGEN_GAP = 1e-3
TINY_EIGENVALUE = 1e-12


def _positive_fallback(sigma: np.ndarray, reference: np.ndarray | None = None) -> np.ndarray:
    ref = sigma if reference is None else reference
    positive = ref[ref > 0]
    floor = positive.min() if positive.size else 1e-12
    return np.where(sigma > 0, sigma, floor)


def local_scales(X, k: int) -> np.ndarray:
    """Distance from each row to its k-th nearest other row.

    Zero scales (duplicates) are replaced by the smallest positive scale.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = len(X)
    if not 1 <= k < n:
        raise ValueError(f"k={k} must satisfy 1 <= k < n={n}")
    D = squareform(pdist(X))
    np.fill_diagonal(D, np.inf)
    sigma = np.partition(D, k - 1, axis=1)[:, k - 1]
    return _positive_fallback(sigma)


def affinity_matrix(X, sigma) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("local scales must be positive")
    sq = squareform(pdist(X, "sqeuclidean"))
    return np.exp(-sq / np.outer(sigma, sigma))


def _normalize(K: np.ndarray, alpha: float):
    q = K.sum(axis=1)
    qa = q ** alpha
    Kt = K / np.outer(qa, qa)
    degree = Kt.sum(axis=1)
    if np.any(degree <= 0) or not np.all(np.isfinite(degree)):
        raise ValueError("affinity matrix has a zero row sum")
    return Kt / degree[:, None], degree, q


def transition_matrix(K, alpha: float = 1.0) -> np.ndarray:
    """Density-corrected (``K / (q_i^a q_j^a)``), then row-stochastic."""
    P, _, _ = _normalize(np.asarray(K, dtype=float), alpha)
    return P


def stationary_distribution(P, tol: float = 1e-15, max_iter: int = 100_000) -> np.ndarray:
    """Power iteration ``pi <- pi P`` from the uniform distribution."""
    P = np.asarray(P, dtype=float)
    pi = np.full(len(P), 1.0 / len(P))
    for _ in range(max_iter):
        nxt = pi @ P
        nxt /= nxt.sum()
        if np.abs(nxt - pi).max() < tol:
            return nxt
        pi = nxt
    return pi


def _sign_fix(V: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def _subspace_iteration(S: np.ndarray, n_vectors: int, tol: float = 1e-10, max_iter: int = 10_000, seed: int = 0,
                        deflate: np.ndarray | None = None):
    """Top eigenpairs of a symmetric PSD matrix by orthogonal iteration with
    Rayleigh-Ritz steps, optionally restricted to the orthogonal complement
    of the unit vector ``deflate``."""
    n = len(S)
    block = min(n - (deflate is not None), n_vectors + 8)
    rng = np.random.default_rng(seed)
    u = None if deflate is None else deflate / np.linalg.norm(deflate)

    def project(M):
        return M if u is None else M - np.outer(u, u @ M)

    Q, _ = np.linalg.qr(project(rng.standard_normal((n, block))))
    residual = np.inf
    for it in range(1, max_iter + 1):
        Q, _ = np.linalg.qr(project(S @ Q))
        H = Q.T @ S @ Q
        theta, W = np.linalg.eigh((H + H.T) / 2)
        order = np.argsort(theta)[::-1]
        theta, Q = theta[order], Q @ W[:, order]
        R = S @ Q[:, :n_vectors] - Q[:, :n_vectors] * theta[:n_vectors]
        residual = float(np.abs(R).max())
        if residual < tol:
            return theta[:n_vectors], Q[:, :n_vectors]
    raise EigenSolverError("orthogonal iteration did not converge", max_iter, residual)


def _default_components(evals_nontrivial: np.ndarray, n: int) -> int:
    lead = evals_nontrivial[0] if evals_nontrivial.size else 0.0
    if lead <= 0:
        return 1
    count = int(np.sum(evals_nontrivial / lead >= EIGEN_GAP))
    return max(1, min(n - 1, MAX_DEFAULT_COMPONENTS, count))


def diffusion_coords(P, m: int | None = None, t: int = 1, degree=None, dense_threshold: int = DENSE_THRESHOLD):
    """Spectral decomposition of a reversible Markov matrix.

    Parameters
    ----------
    P : (n, n) array
        Row-stochastic transition matrix.
    m : int, optional
        Number of nontrivial components kept. Defaults to
        ``min(n - 1, 10, #{j : lambda_j / lambda_1 >= 1e-3})``.
    t : int
        Diffusion time.
    degree : (n,) array, optional
        Row sums of the density-corrected kernel; proportional to the
        stationary distribution. Estimated by power iteration when absent.

    Returns
    -------
    coords : (n, m) array
        ``lambda_j^t V_ij`` for the nontrivial components.
    eigenvalues : (m,) array
    eigenvectors : (n, m) array
    """
    P = np.asarray(P, dtype=float)
    n = len(P)
    if t < 1 or int(t) != t:
        raise ValueError("diffusion time t must be a positive integer")
    if m is not None and not 1 <= m <= n - 1:
        raise ValueError(f"m={m} must satisfy 1 <= m <= n-1={n - 1}")
    pi = stationary_distribution(P) if degree is None else np.asarray(degree, dtype=float)
    pi = pi / pi.sum()
    root = np.sqrt(pi)
    S = root[:, None] * P / root[None, :]
    S = (S + S.T) / 2
    # sqrt(pi) is the trivial eigenvector of S; solving on its orthogonal
    # complement keeps it out even when lambda = 1 is degenerate
    # (disconnected graphs)
    if n <= dense_threshold:
        Q = np.linalg.qr(root[:, None], mode="complete")[0][:, 1:]
        evals, W = np.linalg.eigh(Q.T @ S @ Q)
        evals, U = evals[::-1], (Q @ W)[:, ::-1]
    else:
        want = m if m is not None else MAX_DEFAULT_COMPONENTS
        evals, U = _subspace_iteration(S, min(want, n - 1), deflate=root)
    if m is None:
        m = _default_components(evals, n)
    evals = evals[:m]
    V = _sign_fix(U[:, :m] / root[:, None])
    return V * evals ** t, evals, V


def _hash_matrix(X: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(X, dtype=float).tobytes()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class DiffusionMap:
    """A fitted diffusion map over standardized continuous features."""

    X_train: np.ndarray
    k: int
    alpha: float
    t: int
    sigma: np.ndarray
    q: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    coords: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("X_train", "sigma", "q", "eigenvalues", "eigenvectors", "coords"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_components(self) -> int:
        return len(self.eigenvalues)

    @property
    def training_hash(self) -> str:
        return _hash_matrix(self.X_train)

    def transition_matrix(self) -> np.ndarray:
        return transition_matrix(affinity_matrix(self.X_train, self.sigma), self.alpha)

    def extend(self, X_new, return_flags: bool = False):
        """Nystrom extension of new points into the diffusion coordinates.

        A query's local scale is its distance to the k-th nearest training
        row, skipping one exact match, so extending a training row reproduces
        its stored coordinates. Points whose kernel row underflows to zero
        map to the origin and are flagged; so are coordinates whose
        eigenvalue is below 1e-12.
        """
        X_new = np.asarray(X_new, dtype=float)
        single = X_new.ndim == 1
        X_new = np.atleast_2d(X_new)
        d2 = cdist(X_new, self.X_train, "sqeuclidean")
        dist = np.sqrt(d2)
        kk = min(self.k + 1, dist.shape[1])
        part = np.partition(dist, kk - 1, axis=1)[:, :kk]
        part.sort(axis=1)
        skip = (part[:, 0] == 0.0).astype(int)
        sigma_new = part[np.arange(len(part)), np.minimum(self.k - 1 + skip, kk - 1)]
        sigma_new = _positive_fallback(sigma_new, self.sigma)
        kern = np.exp(-d2 / (sigma_new[:, None] * self.sigma[None, :]))
        kern /= self.q[None, :] ** self.alpha
        mass = kern.sum(axis=1)
        flags = ~(mass > 0)
        p = kern / np.where(flags, 1.0, mass)[:, None]
        lam = self.eigenvalues
        tiny = np.abs(lam) < TINY_EIGENVALUE
        scale = np.where(tiny, 0.0, lam ** (self.t - 1))
        out = (p @ self.eigenvectors) * scale
        out[flags] = 0.0
        flags = flags | tiny.any()
        if single:
            return (out[0], bool(flags[0])) if return_flags else out[0]
        return (out, flags) if return_flags else out

    def distance(self, a, b) -> float:
        """Diffusion distance between two raw (standardized) points."""
        ca, cb = self.extend(np.vstack([np.asarray(a, float), np.asarray(b, float)]))
        return float(np.linalg.norm(ca - cb))

    def distances_from(self, x, Z) -> np.ndarray:
        """Diffusion distances from raw point ``x`` to every row of ``Z``."""
        cx = self.extend(np.asarray(x, dtype=float))
        cz = self.extend(np.atleast_2d(np.asarray(Z, dtype=float)))
        return np.linalg.norm(cz - cx[None, :], axis=1)

    def save(self, path: str | Path) -> None:
        np.savez(
            path,
            X_train=self.X_train,
            sigma=self.sigma,
            q=self.q,
            eigenvalues=self.eigenvalues,
            eigenvectors=self.eigenvectors,
            coords=self.coords,
            config=np.array([self.k, self.alpha, self.t], dtype=float),
            training_hash=np.array(self.training_hash),
        )

    @classmethod
    def load(cls, path: str | Path, expected_hash: str | None = None) -> "DiffusionMap":
        with np.load(path) as z:
            k, alpha, t = z["config"]
            dm = cls(z["X_train"], int(k), float(alpha), int(t), z["sigma"], z["q"],
                     z["eigenvalues"], z["eigenvectors"], z["coords"])
            stored = str(z["training_hash"])
        if stored != dm.training_hash:
            raise ConfigurationError(f"{path}: artifact is corrupted (training hash mismatch)")
        if expected_hash is not None and stored != expected_hash:
            raise ConfigurationError(f"{path}: diffusion map was fitted on different data")
        return dm


def fit(X_train, k: int = 10, alpha: float = 1.0, t: int = 1, m: int | None = None,
        dense_threshold: int = DENSE_THRESHOLD) -> DiffusionMap:
    X = np.atleast_2d(np.asarray(X_train, dtype=float))
    if len(X) < 3:
        raise ValueError("need at least 3 rows to fit a diffusion map")
    sigma = local_scales(X, k)
    K = affinity_matrix(X, sigma)
    P, degree, q = _normalize(K, alpha)
    coords, evals, V = diffusion_coords(P, m, t, degree=degree, dense_threshold=dense_threshold)
    return DiffusionMap(X, k, alpha, int(t), sigma, q, evals, V, coords)


def diffusion_distance(dm: DiffusionMap, a, b, coords: bool = False) -> float:
    """Euclidean distance in diffusion space; ``coords=True`` when ``a`` and
    ``b`` already are diffusion coordinates."""
    if coords:
        return float(np.linalg.norm(np.asarray(a, float) - np.asarray(b, float)))
    return dm.distance(a, b)
