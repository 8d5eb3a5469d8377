"""Couplings ``(X0, X1)``: closed-form Gaussian and mixture laws, particle pairs,
map-defined pairings, interpolation, affine transformations and smoothing.

Covariance block convention: the joint covariance of ``(X0, X1)`` is

    [[sigma0,   sigma01.T],
     [sigma01,  sigma1  ]]

so ``sigma01 = Cov(X1, X0)`` and ``sigma10 = sigma01.T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np

from .distributions import (
    GaussianDist,
    GmmDist,
    ParticleSet,
    _frozen,
    _psd_eig,
    as_points,
    gaussian_sample,
    gmm_sample,
)
from .errors import DomainError, InvalidArgumentError, InvalidDistributionError
from .rng import standard_normal

PARTICLE_HEADER = "rectiflow-particles v1"


@dataclass(frozen=True)
class GaussianJointCoupling:
    """Jointly Gaussian pair with explicit means and covariance blocks.

    Attributes:
        mean0, mean1: Marginal means.
        sigma0, sigma1: Marginal covariances.
        sigma01: Cross covariance ``Cov(X1, X0)``.
        require_pd: Demand strictly positive definite marginals. Mixture
            components switch this off to allow point masses.
    """

    mean0: np.ndarray
    mean1: np.ndarray
    sigma0: np.ndarray
    sigma1: np.ndarray
    sigma01: np.ndarray
    require_pd: bool = field(default=True, compare=False)

    def __post_init__(self):
        m0 = np.atleast_1d(np.asarray(self.mean0, dtype=float))
        d = m0.size
        m1 = np.atleast_1d(np.asarray(self.mean1, dtype=float))
        blocks = [np.asarray(b, dtype=float).reshape(d, d)
                  for b in (self.sigma0, self.sigma1, self.sigma01)]
        if m1.shape != (d,):
            raise InvalidDistributionError("mean0 and mean1 differ in dimension")
        s0, s1, s01 = blocks
        joint = np.block([[s0, s01.T], [s01, s1]])
        _psd_eig(0.5 * (joint + joint.T), InvalidDistributionError)
        if self.require_pd:
            for name, s in (("sigma0", s0), ("sigma1", s1)):
                w = np.linalg.eigvalsh(0.5 * (s + s.T))
                if w.min() <= 1e-12 * max(1.0, w.max()):
                    raise InvalidDistributionError(f"{name} is not strictly positive definite")
        object.__setattr__(self, "mean0", _frozen(m0))
        object.__setattr__(self, "mean1", _frozen(m1))
        object.__setattr__(self, "sigma0", _frozen(0.5 * (s0 + s0.T)))
        object.__setattr__(self, "sigma1", _frozen(0.5 * (s1 + s1.T)))
        object.__setattr__(self, "sigma01", _frozen(s01))

    @property
    def dim(self) -> int:
        return self.mean0.size

    @property
    def sigma10(self) -> np.ndarray:
        return self.sigma01.T

    def joint_mean(self) -> np.ndarray:
        return np.concatenate([self.mean0, self.mean1])

    def joint_cov(self) -> np.ndarray:
        return np.block([[self.sigma0, self.sigma10], [self.sigma01, self.sigma1]])

    def marginal0(self) -> GaussianDist:
        return GaussianDist(self.mean0, self.sigma0)

    def marginal1(self) -> GaussianDist:
        return GaussianDist(self.mean1, self.sigma1)

    @classmethod
    def independent(cls, g0: GaussianDist, g1: GaussianDist) -> "GaussianJointCoupling":
        return cls(g0.mean, g1.mean, g0.cov, g1.cov, np.zeros((g0.dim, g0.dim)))

    def to_particles(self, n: int, seed) -> "ParticleCoupling":
        """Sample ``n`` pairs from the joint law."""
        joint = GaussianDist(self.joint_mean(), 0.5 * (self.joint_cov() + self.joint_cov().T))
        z = gaussian_sample(joint, n, seed).points
        d = self.dim
        return ParticleCoupling(z[:, :d], z[:, d:])


@dataclass(frozen=True)
class GmmJointCoupling:
    """Mixture ``sum_k pi_k N(m^k, Sigma^k)`` of jointly Gaussian pairs."""

    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        comps = tuple(self.components)
        if len(comps) == 0 or len(comps) != w.size:
            raise InvalidDistributionError("need one weight per component")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidDistributionError("weights must be positive and sum to 1")
        if len({c.dim for c in comps}) != 1:
            raise InvalidDistributionError("components differ in dimension")
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_blocks(cls, weights, blocks) -> "GmmJointCoupling":
        """Build from ``(m0, m1, s0, s1, s01)`` tuples; point masses allowed."""
        comps = tuple(GaussianJointCoupling(*b, require_pd=False) for b in blocks)
        return cls(weights, comps)

    @classmethod
    def independent(cls, g0: GaussianDist, mix1: GmmDist) -> "GmmJointCoupling":
        """Independent coupling of a Gaussian source and a mixture target."""
        z = np.zeros((g0.dim, g0.dim))
        return cls.from_blocks(
            mix1.weights,
            [(g0.mean, c.mean, g0.cov, c.cov, z) for c in mix1.components])

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def marginal1(self) -> GmmDist:
        return GmmDist(self.weights, tuple(c.marginal1() for c in self.components))

    def marginal0(self) -> GmmDist:
        return GmmDist(self.weights, tuple(c.marginal0() for c in self.components))

    def to_particles(self, n: int, seed) -> "ParticleCoupling":
        joint = GmmDist(self.weights, tuple(
            GaussianDist(c.joint_mean(), 0.5 * (c.joint_cov() + c.joint_cov().T))
            for c in self.components))
        z, _ = gmm_sample(joint, n, seed)
        d = self.dim
        return ParticleCoupling(z.points[:, :d], z.points[:, d:])


@dataclass(frozen=True)
class ParticleCoupling:
    """Paired samples: row ``i`` of ``x0`` is coupled with row ``i`` of ``x1``."""

    x0: np.ndarray
    x1: np.ndarray

    def __post_init__(self):
        x0 = as_points(self.x0)
        x1 = as_points(self.x1)
        if x0.shape != x1.shape:
            raise InvalidArgumentError(f"x0 shape {x0.shape} differs from x1 shape {x1.shape}")
        if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(x1))):
            raise InvalidArgumentError("coupling contains NaN or Inf")
        object.__setattr__(self, "x0", _frozen(x0))
        object.__setattr__(self, "x1", _frozen(x1))

    @property
    def n(self) -> int:
        return self.x0.shape[0]

    @property
    def d(self) -> int:
        return self.x0.shape[1]

    def __len__(self) -> int:
        return self.n

    @property
    def displacement(self) -> np.ndarray:
        return self.x1 - self.x0

    def to_particles(self, n: int | None = None, seed=None) -> "ParticleCoupling":
        return self


@dataclass(frozen=True)
class MapCoupling:
    """Deterministic pairing ``X1 = T(X0)``.

    ``map`` must accept an ``(n, d)`` array and return an array of equal shape.
    ``source`` is a ``GaussianDist``, ``GmmDist``, ``ParticleSet`` or a
    callable ``(n, seed) -> (n, d) array``.
    """

    source: object
    map: Callable[[np.ndarray], np.ndarray]

    def sample_source(self, n: int, seed) -> np.ndarray:
        src = self.source
        if isinstance(src, ParticleSet):
            return src.points
        if isinstance(src, GaussianDist):
            return gaussian_sample(src, n, seed).points
        if isinstance(src, GmmDist):
            return gmm_sample(src, n, seed)[0].points
        if callable(src):
            return as_points(src(n, seed))
        raise InvalidArgumentError(f"unsupported source type {type(src).__name__}")

    def to_particles(self, n: int, seed) -> ParticleCoupling:
        x0 = self.sample_source(n, seed)
        return ParticleCoupling(x0, np.asarray(self.map(x0), dtype=float).reshape(x0.shape))


AnyCoupling = Union[GaussianJointCoupling, GmmJointCoupling, ParticleCoupling, MapCoupling]


def _check_t(t: float) -> float:
    t = float(t)
    if not (0.0 <= t <= 1.0):
        raise DomainError(f"t={t} is outside [0, 1]")
    return t


def interpolate(coupling: ParticleCoupling, t: float, noise_eps: float = 0.0,
                seed=None) -> ParticleSet:
    """Linear interpolation ``X_t = (1-t) X0 + t X1``, optionally noised.

    With ``noise_eps > 0`` the bridge noise ``sqrt(eps t (1-t)) Z`` is added
    (``Z`` standard normal, drawn from ``seed``).

    Raises:
        DomainError: If ``t`` is outside ``[0, 1]`` or ``noise_eps < 0``.
    """
    t = _check_t(t)
    if noise_eps < 0:
        raise DomainError("noise_eps must be non-negative")
    xt = (1.0 - t) * coupling.x0 + t * coupling.x1
    if noise_eps > 0:
        if seed is None:
            raise InvalidArgumentError("a seed is required when noise_eps > 0")
        z = standard_normal(coupling.n, coupling.d, seed)
        xt = xt + np.sqrt(noise_eps * t * (1.0 - t)) * z
    return ParticleSet(xt)


def interp_cov(coupling: GaussianJointCoupling, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact mean and covariance of ``X_t`` for a jointly Gaussian pair."""
    t = float(t)
    s = 1.0 - t
    mean = s * coupling.mean0 + t * coupling.mean1
    cross = coupling.sigma01 + coupling.sigma10
    cov = s * s * coupling.sigma0 + s * t * cross + t * t * coupling.sigma1
    return mean, 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class Both:
    """Transform both sides: ``(A X0 + b, A X1 + b)``."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if A.shape[0] != A.shape[1] or b.shape != (A.shape[0],):
            raise InvalidArgumentError("A must be square and match b")
        if not np.all(np.isfinite(A)) or np.linalg.cond(A) > 1e12:
            raise InvalidArgumentError("A is singular")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "b", _frozen(b))


@dataclass(frozen=True)
class Shift1:
    """Shift the target only: ``(X0, X1 + b)``."""

    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "b", _frozen(np.atleast_1d(np.asarray(self.b, dtype=float))))


@dataclass(frozen=True)
class Scale1:
    """Scale the target only: ``(X0, c X1)`` with ``c > 0``."""

    c: float

    def __post_init__(self):
        if not (float(self.c) > 0 and np.isfinite(self.c)):
            raise InvalidArgumentError("scale c must be positive")


AffineMode = Union[Both, Shift1, Scale1]


def affine_transform(coupling, mode: AffineMode):
    """Apply an affine transformation to a coupling in closed form.

    Supported inputs are ``ParticleCoupling``, ``GaussianJointCoupling`` and
    ``GmmJointCoupling``; the output has the same kind.
    """
    if isinstance(coupling, GmmJointCoupling):
        return GmmJointCoupling(coupling.weights,
                                tuple(affine_transform(c, mode) for c in coupling.components))
    if isinstance(coupling, ParticleCoupling):
        x0, x1 = coupling.x0, coupling.x1
        if isinstance(mode, Both):
            return ParticleCoupling(x0 @ mode.A.T + mode.b, x1 @ mode.A.T + mode.b)
        if isinstance(mode, Shift1):
            return ParticleCoupling(x0, x1 + mode.b)
        if isinstance(mode, Scale1):
            return ParticleCoupling(x0, float(mode.c) * x1)
        raise InvalidArgumentError(f"unknown mode {mode!r}")
    if isinstance(coupling, GaussianJointCoupling):
        g = coupling
        kw = dict(require_pd=g.require_pd)
        if isinstance(mode, Both):
            A, b = mode.A, mode.b
            return GaussianJointCoupling(A @ g.mean0 + b, A @ g.mean1 + b,
                                         A @ g.sigma0 @ A.T, A @ g.sigma1 @ A.T,
                                         A @ g.sigma01 @ A.T, **kw)
        if isinstance(mode, Shift1):
            return GaussianJointCoupling(g.mean0, g.mean1 + mode.b, g.sigma0, g.sigma1,
                                         g.sigma01, **kw)
        if isinstance(mode, Scale1):
            c = float(mode.c)
            return GaussianJointCoupling(g.mean0, c * g.mean1, g.sigma0, c * c * g.sigma1,
                                         c * g.sigma01, **kw)
        raise InvalidArgumentError(f"unknown mode {mode!r}")
    raise InvalidArgumentError(f"unsupported coupling type {type(coupling).__name__}")


def smooth_coupling(coupling: ParticleCoupling, c: float, variant: str = "variance_preserving",
                    seed=None) -> ParticleCoupling:
    """Perturb the source side of a coupling with fresh Gaussian noise.

    Args:
        coupling: Pairs to perturb; ``x1`` is left untouched.
        c: Noise level.
        variant: ``"additive"`` gives ``x0 + c W``; ``"variance_preserving"``
            gives ``sqrt(1-c) x0 + sqrt(c) W``.
        seed: Seed for ``W``.

    Raises:
        DomainError: If ``c`` is out of range for the variant.
    """
    c = float(c)
    if variant == "variance_preserving":
        if not (0.0 <= c < 1.0):
            raise DomainError(f"c={c} must lie in [0, 1)")
    elif variant == "additive":
        if c < 0:
            raise DomainError(f"c={c} must be non-negative")
    else:
        raise InvalidArgumentError(f"unknown smoothing variant {variant!r}")
    if c == 0.0:
        return coupling
    w = standard_normal(coupling.n, coupling.d, seed)
    if variant == "additive":
        x0 = coupling.x0 + c * w
    else:
        x0 = np.sqrt(1.0 - c) * coupling.x0 + np.sqrt(c) * w
    return ParticleCoupling(x0, coupling.x1)


def to_particles(coupling: AnyCoupling, n: int, seed) -> ParticleCoupling:
    """Convert any coupling kind to ``n`` particle pairs."""
    return coupling.to_particles(n, seed)


def save_particles(coupling: ParticleCoupling, path) -> None:
    """Write a coupling in the text particle format.

    Layout: the header line ``rectiflow-particles v1 n=<n> d=<d>``, then ``n``
    comma-separated rows of ``x0``, then ``n`` rows of ``x1``. Values use 17
    significant digits, so a save/load round trip is lossless.
    """
    n, d = coupling.n, coupling.d
    with open(Path(path), "w", encoding="ascii") as fh:
        fh.write(f"{PARTICLE_HEADER} n={n} d={d}\n")
        np.savetxt(fh, coupling.x0, delimiter=",", fmt="%.17g")
        np.savetxt(fh, coupling.x1, delimiter=",", fmt="%.17g")


def load_particles(path) -> ParticleCoupling:
    """Read a coupling written by :func:`save_particles`."""
    with open(Path(path), "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        parts = header.split()
        if len(parts) != 4 or " ".join(parts[:2]) != PARTICLE_HEADER:
            raise InvalidArgumentError(f"not a particle file: header {header!r}")
        try:
            n = int(parts[2].removeprefix("n="))
            d = int(parts[3].removeprefix("d="))
        except ValueError as exc:
            raise InvalidArgumentError(f"malformed header {header!r}") from exc
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape != (2 * n, d):
        raise InvalidArgumentError(f"expected {2 * n} rows of width {d}, found {data.shape}")
    return ParticleCoupling(data[:n], data[n:])
