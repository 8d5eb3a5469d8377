"""Gaussian, Gaussian-mixture and empirical distributions plus PSD utilities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidDistributionError, InvalidMatrixError
from .rng import make_rng, standard_normal

SYM_RTOL = 1e-12
PSD_ATOL = 1e-10


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


def _psd_eig(M: np.ndarray, err=InvalidMatrixError) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric PSD matrix with tiny negatives clamped."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise err(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise err("matrix has non-finite entries")
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    if np.abs(M - M.T).max(initial=0.0) > SYM_RTOL * scale:
        raise err("matrix is not symmetric")
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    if w.size and w.min() < -PSD_ATOL * scale:
        raise err(f"matrix is indefinite (min eigenvalue {w.min():.3e})")
    return np.clip(w, 0.0, None), V


def matrix_sqrt_psd(M) -> np.ndarray:
    """Symmetric PSD square root.

    Negative eigenvalues down to ``-1e-10`` (relative to the largest entry when
    that exceeds one) are treated as rounding noise and clamped to zero, as are
    eigenvalues below the eigensolver's own error level ``d * eps * max|w|``.
    The square root amplifies such noise to ``sqrt(noise)``, so dropping it
    gives exact zeros on singular input without costing accuracy elsewhere.

    Args:
        M: Symmetric positive semi-definite matrix.

    Returns:
        The unique symmetric PSD ``S`` with ``S @ S == M``.

    Raises:
        InvalidMatrixError: If ``M`` is asymmetric or indefinite.
    """
    w, V = _psd_eig(M)
    if w.size:
        w = np.where(w <= w.size * np.finfo(float).eps * w.max(), 0.0, w)
    S = (V * np.sqrt(w)) @ V.T
    return 0.5 * (S + S.T)


def psd_factor(M, err=InvalidMatrixError) -> np.ndarray:
    """Return ``F`` with ``F @ F.T == M``; works for singular ``M``."""
    w, V = _psd_eig(M, err)
    return V * np.sqrt(w)


@dataclass(frozen=True)
class GaussianDist:
    """Multivariate normal law ``N(mean, cov)``; ``cov`` may be singular."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise InvalidDistributionError(
                f"mean shape {mean.shape} incompatible with cov shape {cov.shape}")
        if not np.all(np.isfinite(mean)):
            raise InvalidDistributionError("mean has non-finite entries")
        _psd_eig(cov, InvalidDistributionError)
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "cov", _frozen(0.5 * (cov + cov.T)))

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def standard(cls, d: int) -> "GaussianDist":
        return cls(np.zeros(d), np.eye(d))


@dataclass(frozen=True)
class GmmDist:
    """Finite Gaussian mixture ``sum_k w_k N(m_k, S_k)``."""

    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        comps = tuple(self.components)
        if len(comps) == 0 or w.size != len(comps):
            raise InvalidDistributionError("need one weight per component and at least one component")
        if np.any(w <= 0) or np.any(w > 1):
            raise InvalidDistributionError("weights must lie in (0, 1]")
        if abs(w.sum() - 1.0) > 1e-12:
            raise InvalidDistributionError(f"weights sum to {w.sum()!r}, not 1")
        if len({c.dim for c in comps}) != 1:
            raise InvalidDistributionError("components have different dimensions")
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[float, GaussianDist]]) -> "GmmDist":
        return cls([p[0] for p in pairs], tuple(p[1] for p in pairs))

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def means(self) -> np.ndarray:
        return np.stack([c.mean for c in self.components])

    @property
    def covs(self) -> np.ndarray:
        return np.stack([c.cov for c in self.components])


@dataclass(frozen=True)
class ParticleSet:
    """An ``n x d`` array of sample points."""

    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if p.ndim != 2:
            raise InvalidDistributionError(f"points must be 2-D, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise InvalidDistributionError("points contain NaN or Inf")
        object.__setattr__(self, "points", _frozen(p))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.n


def as_points(x) -> np.ndarray:
    """Accept a ``ParticleSet`` or array-like and return a 2-D float array."""
    if isinstance(x, ParticleSet):
        return x.points
    a = np.asarray(x, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def gaussian_sample(dist: GaussianDist, n: int, seed) -> ParticleSet:
    """Draw ``n`` i.i.d. samples from ``dist``.

    Standard normals are drawn with the chunked Philox split rule of
    :mod:`rectiflow.rng` and mapped through the eigen-factor of the
    covariance, so degenerate covariances are fine.

    Raises:
        InvalidDistributionError: If ``n < 1`` or the covariance is not PSD.
    """
    if int(n) < 1:
        raise InvalidDistributionError("n must be at least 1")
    F = psd_factor(dist.cov, InvalidDistributionError)
    z = standard_normal(int(n), dist.dim, seed)
    return ParticleSet(dist.mean + z @ F.T)


def gmm_sample(dist: GmmDist, n: int, seed, balanced: bool = False) -> tuple[ParticleSet, np.ndarray]:
    """Draw ``n`` samples from a mixture.

    Args:
        dist: The mixture.
        n: Number of draws.
        seed: Integer seed.
        balanced: If true, component counts are ``round(n * w_k)`` (largest
            remainder) instead of multinomial, which removes count noise.

    Returns:
        The samples and the component label of every row.
    """
    rng = make_rng(seed)
    w = dist.weights
    if balanced:
        raw = n * w
        counts = np.floor(raw).astype(int)
        rem = n - counts.sum()
        counts[np.argsort(-(raw - counts), kind="stable")[:rem]] += 1
        labels = np.repeat(np.arange(w.size), counts)
        labels = labels[rng.permutation(n)]
    else:
        labels = rng.choice(w.size, size=n, p=w)
    z = rng.standard_normal((n, dist.dim))
    out = np.empty((n, dist.dim))
    for k, comp in enumerate(dist.components):
        idx = labels == k
        out[idx] = comp.mean + z[idx] @ psd_factor(comp.cov, InvalidDistributionError).T
    return ParticleSet(out), labels


def gaussian_log_density(mean, cov, x) -> np.ndarray:
    """Log density of ``N(mean, cov)`` at rows of ``x`` via Cholesky."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    mean = np.asarray(mean, dtype=float)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise InvalidDistributionError("component covariance is singular") from exc
    d = mean.size
    sol = np.linalg.solve(L, (x - mean).T)
    maha = np.sum(sol * sol, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (maha + logdet + d * np.log(2.0 * np.pi))


def gmm_log_density(dist: GmmDist, x):
    """Log density of a Gaussian mixture, accumulated by log-sum-exp.

    Args:
        dist: Mixture with strictly positive definite component covariances.
        x: A single point of shape ``(d,)`` or a batch ``(m, d)``.

    Returns:
        A float for a single point, else an array of shape ``(m,)``.

    Raises:
        InvalidDistributionError: If any component covariance is singular.
    """
    xa = np.asarray(x, dtype=float)
    single = xa.ndim <= 1 and not (dist.dim == 1 and xa.ndim == 1 and xa.size > 1)
    pts = xa.reshape(-1, dist.dim)
    comps = np.stack([
        np.log(w) + gaussian_log_density(c.mean, c.cov, pts)
        for w, c in zip(dist.weights, dist.components)
    ])
    out = logsumexp(comps, axis=0)
    return float(out[0]) if single else out
