"""Velocity fields ``v_t(x) = E[X1 - X0 | X_t = x]`` and their transformations.

All evaluators are vectorized: they take a time ``t`` and an ``(m, d)`` batch
of states and return an ``(m, d)`` batch of velocities.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from . import _kernels
from .couplings import (
    Both,
    GaussianJointCoupling,
    GmmJointCoupling,
    ParticleCoupling,
    Scale1,
    Shift1,
    interp_cov,
)
from .distributions import as_points
from .errors import (
    DomainError,
    EvaluationError,
    InvalidArgumentError,
    OutOfSupportError,
    SingularCovarianceError,
    SingularTimeError,
)

#: Condition number above which ``Sigma_t`` counts as singular.
COND_MAX = 1e12
#: Distance from a singular time treated as hitting it.
SINGULAR_TOL = 1e-12
#: Largest log kernel weight below which a query is out of support.
LOG_TINY = float(np.log(np.finfo(float).tiny))


@dataclass(frozen=True)
class VelocityField:
    """A time-dependent vector field with a declared time domain.

    Attributes:
        evaluator: Batch evaluator ``(t, (m, d) array) -> (m, d) array``.
        dim: Spatial dimension, or ``None`` if any dimension is accepted.
        t_domain: Closed interval of admissible times.
        singular_times: Times inside ``t_domain`` where evaluation is refused.
        flagged: Optional evaluator returning ``(v, ok)`` where ``ok`` marks
            rows evaluated inside the field's support. Used by the loss
            estimator to count failures instead of aborting.
        name: Label used in reports.
    """

    evaluator: Callable[[float, np.ndarray], np.ndarray]
    dim: int | None = None
    t_domain: tuple[float, float] = (0.0, 1.0)
    singular_times: tuple[float, ...] = ()
    flagged: Callable | None = field(default=None, compare=False)
    name: str = "field"

    def check_time(self, t: float) -> float:
        t = float(t)
        lo, hi = self.t_domain
        if not (lo - SINGULAR_TOL <= t <= hi + SINGULAR_TOL):
            raise DomainError(f"t={t} outside the field's time domain [{lo}, {hi}]")
        for s in self.singular_times:
            if abs(t - s) <= SINGULAR_TOL:
                raise SingularTimeError(f"{self.name}: t={t} is a singular time", t=t)
        return t

    def __call__(self, t: float, x) -> np.ndarray:
        t = self.check_time(t)
        xa = np.asarray(x, dtype=float)
        single = xa.ndim == 1 and (self.dim is None or xa.size == self.dim) and not (
            self.dim == 1 and xa.size > 1)
        batch = xa.reshape(1, -1) if single else as_points(xa)
        if self.dim is not None and batch.shape[1] != self.dim:
            raise InvalidArgumentError(f"expected dimension {self.dim}, got {batch.shape[1]}")
        out = np.asarray(self.evaluator(t, batch), dtype=float)
        return out[0] if single else out

    def evaluate_flagged(self, t: float, x) -> tuple[np.ndarray, np.ndarray]:
        """Evaluate a batch, returning ``(v, ok)`` instead of raising on support."""
        t = self.check_time(t)
        batch = as_points(x)
        if self.flagged is not None:
            return self.flagged(t, batch)
        return self.evaluator(t, batch), np.ones(batch.shape[0], dtype=bool)


def _solve_cond(S: np.ndarray, t: float, ref: float) -> np.ndarray:
    """Inverse of a symmetric matrix with a conditioning guard.

    ``S`` counts as singular when its condition number exceeds
    :data:`COND_MAX`, or when its smallest eigenvalue is below ``ref`` (the
    scale of the coupling's covariances) divided by :data:`COND_MAX`. The
    second test catches isotropic collapse such as ``(1-2t)^2 I``, whose
    condition number stays 1.
    """
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    wmax = float(np.abs(w).max(initial=0.0))
    wmin = float(w.min())
    cond = np.inf if wmin <= 0 else max(wmax, ref) / wmin
    if not np.isfinite(cond) or cond > COND_MAX:
        raise SingularCovarianceError(
            f"Sigma_t is numerically singular at t={t} (condition {cond:.3e})", t=t, cond=cond)
    return (V / w) @ V.T


def _gaussian_parts(g: GaussianJointCoupling, t: float, noise_eps: float):
    mean_t, cov_t = interp_cov(g, t)
    if noise_eps > 0:
        cov_t = cov_t + noise_eps * t * (1.0 - t) * np.eye(g.dim)
    cross = (1.0 - t) * g.sigma01 + t * g.sigma1  # Cov(X1, X_t)
    ref = max(float(np.abs(g.sigma0).max()), float(np.abs(g.sigma1).max()))
    return mean_t, cov_t, cross, ref


def _check_open_time(t: float) -> float:
    t = float(t)
    if not (0.0 <= t <= 1.0):
        raise DomainError(f"t={t} outside [0, 1]")
    if t >= 1.0 - SINGULAR_TOL:
        raise SingularTimeError("velocity is undefined at t=1", t=t)
    return t


def gaussian_velocity(coupling: GaussianJointCoupling, t: float, x, noise_eps: float = 0.0) -> np.ndarray:
    """Closed-form velocity of a jointly Gaussian coupling.

    ``v_t(x) = (E[X1 | X_t = x] - x) / (1 - t)`` with
    ``E[X1 | X_t = x] = m1 + ((1-t) S01 + t S1) S_t^{-1} (x - m_t)``.
    For zero means this is ``(((1-t) S01 + t S1) S_t^{-1} - I) x / (1-t)``.
    With ``noise_eps > 0`` the interpolant covariance gains
    ``noise_eps * t * (1-t) * I`` and the result is the drift of the noisy
    bridge SDE.

    Args:
        coupling: The Gaussian pair.
        t: Time in ``[0, 1)``.
        x: A point ``(d,)`` or batch ``(m, d)``.
        noise_eps: Bridge noise level.

    Raises:
        SingularTimeError: At ``t = 1``.
        SingularCovarianceError: If ``Sigma_t`` has condition number above 1e12.
    """
    t = _check_open_time(t)
    xa = np.asarray(x, dtype=float)
    batch = xa.reshape(-1, coupling.dim)
    mean_t, cov_t, cross, ref = _gaussian_parts(coupling, t, noise_eps)
    M = cross @ _solve_cond(cov_t, t, ref)
    cond_mean = coupling.mean1 + (batch - mean_t) @ M.T
    out = (cond_mean - batch) / (1.0 - t)
    return out.reshape(xa.shape)


def gaussian_field(coupling: GaussianJointCoupling, noise_eps: float = 0.0) -> VelocityField:
    """Wrap :func:`gaussian_velocity` as a :class:`VelocityField`."""
    return VelocityField(
        lambda t, x: gaussian_velocity(coupling, t, x, noise_eps),
        dim=coupling.dim, t_domain=(0.0, 1.0), singular_times=(1.0,), name="gaussian")


def _gmm_terms(coupling: GmmJointCoupling, t: float, batch: np.ndarray, noise_eps: float):
    d = coupling.dim
    K = len(coupling.components)
    logits = np.empty((K, batch.shape[0]))
    cond = np.empty((K,) + batch.shape)
    for k, comp in enumerate(coupling.components):
        mean_t, cov_t, cross, ref = _gaussian_parts(comp, t, noise_eps)
        P = _solve_cond(cov_t, t, ref)
        diff = batch - mean_t
        maha = np.einsum("ij,jk,ik->i", diff, P, diff)
        _, logdet = np.linalg.slogdet(cov_t)
        logits[k] = np.log(coupling.weights[k]) - 0.5 * (maha + logdet + d * np.log(2 * np.pi))
        cond[k] = comp.mean1 + diff @ (cross @ P).T
    return logits, cond


def gmm_weights(coupling: GmmJointCoupling, t: float, x, noise_eps: float = 0.0) -> np.ndarray:
    """Posterior component weights ``alpha^k(x)`` of ``X_t``, shape ``(K, m)``."""
    t = _check_open_time(t)
    batch = np.asarray(x, dtype=float).reshape(-1, coupling.dim)
    logits, _ = _gmm_terms(coupling, t, batch, noise_eps)
    return np.exp(logits - logsumexp(logits, axis=0))


def gmm_velocity(coupling: GmmJointCoupling, t: float, x, noise_eps: float = 0.0) -> np.ndarray:
    """Closed-form velocity of a Gaussian-mixture coupling.

    The field is ``sum_k alpha^k(x) w_t^k(x)`` where ``alpha^k`` are the
    posterior weights of the components of ``X_t`` (normalized in log space)
    and ``w_t^k`` is the recentered Gaussian field of component ``k``.
    Point-mass components are handled through the law of ``X_t`` alone, so no
    joint ``2d x 2d`` inverse is ever formed.

    Raises:
        SingularTimeError: At ``t = 1``.
        SingularCovarianceError: If some component's ``Sigma_t`` is singular.
        EvaluationError: If every component log-likelihood is non-finite.
    """
    t = _check_open_time(t)
    xa = np.asarray(x, dtype=float)
    batch = xa.reshape(-1, coupling.dim)
    logits, cond = _gmm_terms(coupling, t, batch, noise_eps)
    top = logits.max(axis=0)
    if not np.all(np.isfinite(top)):
        bad = int(np.argmin(np.isfinite(top)))
        raise EvaluationError(
            f"all mixture component likelihoods vanish at t={t}, x={batch[bad]}",
            t=t, x=batch[bad], index=bad)
    alpha = np.exp(logits - logsumexp(logits, axis=0))
    cond_mean = np.einsum("km,kmd->md", alpha, cond)
    out = (cond_mean - batch) / (1.0 - t)
    return out.reshape(xa.shape)


def gmm_field(coupling: GmmJointCoupling, noise_eps: float = 0.0) -> VelocityField:
    """Wrap :func:`gmm_velocity` as a :class:`VelocityField`."""
    return VelocityField(
        lambda t, x: gmm_velocity(coupling, t, x, noise_eps),
        dim=coupling.dim, t_domain=(0.0, 1.0), singular_times=(1.0,), name="gmm")


# --------------------------------------------------------------------------
# Nonparametric field


def default_bandwidth(xt: np.ndarray, factor: float = 1.0) -> np.ndarray:
    """Per-coordinate bandwidth ``std(x_t) * n^(-1/(d+4)) * factor``."""
    n, d = xt.shape
    sd = xt.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return sd * n ** (-1.0 / (d + 4)) * float(factor)


def _nw_exact(query, anchors, vals, h, chunk=2048):
    m = query.shape[0]
    out = np.zeros((m, vals.shape[1]))
    oos = np.zeros(m, dtype=bool)
    qs = query / h
    ps = anchors / h
    for lo in range(0, m, chunk):
        hi = min(m, lo + chunk)
        logw = -0.5 * cdist(qs[lo:hi], ps, "sqeuclidean")
        top = logw.max(axis=1)
        bad = top < LOG_TINY
        w = np.exp(logw - top[:, None])
        res = (w @ vals) / w.sum(axis=1, keepdims=True)
        res[bad] = 0.0
        out[lo:hi] = res
        oos[lo:hi] = bad
    return out, oos


def nadaraya_watson(query, anchors, vals, h, method: str = "auto", cutoff: float = 6.0):
    """Gaussian-kernel Nadaraya-Watson regression.

    Args:
        query: ``(m, d)`` evaluation points.
        anchors: ``(n, d)`` regression inputs.
        vals: ``(n, k)`` regression targets.
        h: Scalar or per-coordinate bandwidth.
        method: ``"exact"`` (dense, log-space), ``"grid"`` (truncated at
            ``cutoff`` bandwidths, exact fallback for queries whose nearest
            anchor lies beyond two bandwidths) or ``"auto"``.
        cutoff: Truncation radius in bandwidth units for the grid method.

    Returns:
        ``(estimate, out_of_support)``. Queries whose largest kernel weight
        underflows get a zero estimate and a ``True`` flag.
    """
    query = as_points(query)
    anchors = as_points(anchors)
    vals = as_points(vals)
    h = np.broadcast_to(np.asarray(h, dtype=float), (anchors.shape[1],)).copy()
    if np.any(h <= 0) or not np.all(np.isfinite(h)):
        raise DomainError("bandwidth must be positive")
    n, d = anchors.shape
    if method == "auto":
        use_grid = (d <= 3 and n * query.shape[0] > 4_000_000
                    and _kernels.grid_cells(anchors / h, cutoff) < 5_000_000)
        method = "grid" if use_grid else "exact"
    if method == "exact":
        return _nw_exact(query, anchors, vals, h)
    if method != "grid":
        raise InvalidArgumentError(f"unknown method {method!r}")
    num, den, wmax = _kernels.grid_nw(query, anchors, vals, h, cutoff)
    far = wmax < np.exp(-2.0)
    out = num / np.where(den > 0, den, 1.0)[:, None]
    oos = np.zeros(query.shape[0], dtype=bool)
    if far.any():
        out[far], oos[far] = _nw_exact(query[far], anchors, vals, h)
    return out, oos


def kernel_velocity(coupling: ParticleCoupling, bandwidth, t: float, x,
                    method: str = "auto") -> tuple[np.ndarray, np.ndarray]:
    """Nadaraya-Watson estimate of ``E[X1 - X0 | X_t = x]`` from particle pairs.

    Args:
        coupling: Particle pairs; anchors are ``x_t = (1-t) x0 + t x1``.
        bandwidth: Scalar or per-coordinate Gaussian kernel bandwidth.
        t: Time in ``[0, 1]``.
        x: Query point ``(d,)`` or batch ``(m, d)``.
        method: See :func:`nadaraya_watson`.

    Returns:
        ``(v, out_of_support)``; out-of-support queries get the zero vector.
    """
    t = float(t)
    if not (0.0 <= t <= 1.0):
        raise DomainError(f"t={t} outside [0, 1]")
    xa = np.asarray(x, dtype=float)
    batch = xa.reshape(-1, coupling.d)
    xt = (1.0 - t) * coupling.x0 + t * coupling.x1
    v, oos = nadaraya_watson(batch, xt, coupling.displacement, bandwidth, method)
    if xa.ndim == 1 and xa.size == coupling.d:
        return v[0], oos[:1]
    return v, oos


def kernel_field(coupling: ParticleCoupling, bandwidth=None, bandwidth_factor: float = 1.0,
                 method: str = "auto") -> VelocityField:
    """Kernel-regression velocity field of a particle coupling.

    Args:
        coupling: Particle pairs.
        bandwidth: Fixed bandwidth; if ``None`` it is recomputed at every
            ``t`` by :func:`default_bandwidth` from the spread of ``x_t``.
        bandwidth_factor: Multiplier applied to the default bandwidth.
        method: See :func:`nadaraya_watson`.
    """
    x0 = np.asarray(coupling.x0)
    disp = np.asarray(coupling.displacement)

    def flagged(t, batch):
        xt = x0 + t * disp
        h = default_bandwidth(xt, bandwidth_factor) if bandwidth is None else bandwidth
        v, oos = nadaraya_watson(batch, xt, disp, h, method)
        return v, ~oos

    def evaluator(t, batch):
        return flagged(t, batch)[0]

    return VelocityField(evaluator, dim=coupling.d, t_domain=(0.0, 1.0), flagged=flagged,
                         name="kernel")


def kernel_drift_field(coupling: ParticleCoupling, noise_eps: float, seed: int = 0,
                       bandwidth=None, bandwidth_factor: float = 1.0,
                       method: str = "auto") -> VelocityField:
    """Kernel estimate of the noisy-bridge drift ``(E[X1 | X_t = x] - x) / (1 - t)``.

    Anchors are the noised interpolants
    ``(1-t) x0 + t x1 + sqrt(noise_eps t (1-t)) z`` with one fixed standard
    normal ``z`` per pair (drawn from ``seed``). The drift is singular at
    ``t = 1``.
    """
    from .rng import standard_normal

    x0 = np.asarray(coupling.x0)
    x1 = np.asarray(coupling.x1)
    disp = x1 - x0
    z = standard_normal(coupling.n, coupling.d, seed)

    def flagged(t, batch):
        xt = x0 + t * disp + np.sqrt(noise_eps * t * (1.0 - t)) * z
        h = default_bandwidth(xt, bandwidth_factor) if bandwidth is None else bandwidth
        m1, oos = nadaraya_watson(batch, xt, x1, h, method)
        v = (m1 - batch) / (1.0 - t)
        v[oos] = 0.0
        return v, ~oos

    return VelocityField(lambda t, b: flagged(t, b)[0], dim=coupling.d, t_domain=(0.0, 1.0),
                         singular_times=(1.0,), flagged=flagged, name="kernel-drift")


# --------------------------------------------------------------------------
# Piecewise scenario fields


def _disc_opt(t, x, margin):
    v = np.zeros_like(x)
    left = x[:, 0] < -1.0 + margin
    right = x[:, 0] > 1.0 - margin
    v[left] = (0.0, -2.0)
    v[right] = (0.0, 2.0)
    return v, left | right


def _disc_nonopt(t, x, margin):
    v = np.zeros_like(x)
    low = x[:, 1] < -0.5 + margin
    high = x[:, 1] > 0.5 - margin
    v[low] = (-4.0, 0.0)
    v[high] = (4.0, 0.0)
    return v, low | high


def _gauss_latent(t, x, margin):
    v = np.zeros_like(x)
    left = x[:, 0] < -t + margin
    right = x[:, 0] > t - margin
    v[left] = (-2.0, 2.0)
    v[right] = (2.0, -2.0)
    return v, left | right


def _antipodal(t, x, margin):
    return -2.0 * x / (1.0 - 2.0 * t), np.ones(x.shape[0], dtype=bool)


_SCENARIO_FIELDS = {
    "disconnected-opt": (_disc_opt, ()),
    "disconnected-nonopt": (_disc_nonopt, ()),
    "gauss-latent-fp": (_gauss_latent, ()),
    "antipodal": (_antipodal, (0.5,)),
}


def scenario_field_names() -> list[str]:
    return sorted(_SCENARIO_FIELDS)


def scenario_field(name: str, margin: float = 0.0) -> VelocityField:
    """Exact piecewise field of a named scenario.

    ``disconnected-opt``: ``(0,-2)`` for ``x1 < -1`` and ``(0,2)`` for ``x1 > 1``.
    ``disconnected-nonopt``: ``(-4,0)`` for ``x2 < -0.5`` and ``(4,0)`` for
    ``x2 > 0.5``. ``gauss-latent-fp``: ``(-2,2)`` for ``x1 < -t`` and
    ``(2,-2)`` for ``x1 > t``. ``antipodal``: ``-2x / (1-2t)``, singular at
    ``t = 1/2``.

    States in the gap between the tubes (widened by ``margin`` on each side,
    which must stay below half the gap) raise :class:`OutOfSupportError`.
    """
    if name not in _SCENARIO_FIELDS:
        raise InvalidArgumentError(f"no closed-form field for scenario {name!r}")
    fn, singular = _SCENARIO_FIELDS[name]

    def flagged(t, batch):
        v, ok = fn(t, batch, margin)
        v[~ok] = 0.0
        return v, ok

    def evaluator(t, batch):
        v, ok = fn(t, batch, margin)
        if not ok.all():
            i = int(np.argmin(ok))
            raise OutOfSupportError(
                f"{name}: state {batch[i]} at t={t} lies outside the support tubes")
        return v

    return VelocityField(evaluator, dim=2, t_domain=(0.0, 1.0), singular_times=singular,
                         flagged=flagged, name=name)


def scenario_velocity(name: str, t: float, x, margin: float = 0.0) -> np.ndarray:
    """Evaluate :func:`scenario_field` ``name`` at ``(t, x)``."""
    return scenario_field(name, margin)(t, x)


def constant_field(value, name: str = "constant") -> VelocityField:
    """Spatially and temporally constant field."""
    value = np.atleast_1d(np.asarray(value, dtype=float))
    return VelocityField(lambda t, x: np.broadcast_to(value, x.shape).copy(),
                         dim=value.size, name=name)


def linear_field(matrix_fn: Callable[[float], np.ndarray], dim: int,
                 t_domain=(0.0, 1.0), singular_times=(), name: str = "linear") -> VelocityField:
    """Field ``v_t(x) = A(t) x`` for a matrix-valued function ``A``."""
    return VelocityField(lambda t, x: x @ np.atleast_2d(matrix_fn(t)).T, dim=dim,
                         t_domain=t_domain, singular_times=tuple(singular_times), name=name)


# --------------------------------------------------------------------------
# Affine transformations


def affine_wrap(v: VelocityField, mode) -> VelocityField:
    """Velocity field of an affinely transformed coupling.

    ``Both(A, b)``: ``A v_t(A^{-1}(x - b))``.
    ``Shift1(b)``: ``v_t(x - t b) + b``.
    ``Scale1(c)``: ``c/(1-t+tc) v_r(x/(1-t+tc)) + (c-1)/(1-t+tc) x`` with
    ``r = tc/(1-t+tc)``; singular times are mapped back through ``r``.
    """
    if isinstance(mode, Both):
        A, b = mode.A, mode.b
        Ainv = np.linalg.inv(A)

        def ev(t, x):
            return v.evaluator(t, (x - b) @ Ainv.T) @ A.T

        return VelocityField(ev, dim=v.dim, t_domain=v.t_domain,
                             singular_times=v.singular_times, name=f"{v.name}|both")
    if isinstance(mode, Shift1):
        b = mode.b

        def ev(t, x):
            return v.evaluator(t, x - t * b) + b

        return VelocityField(ev, dim=v.dim, t_domain=v.t_domain,
                             singular_times=v.singular_times, name=f"{v.name}|shift1")
    if isinstance(mode, Scale1):
        c = float(mode.c)

        def ev(t, x):
            s = 1.0 - t + t * c
            r = t * c / s
            v.check_time(r)
            return (c / s) * v.evaluator(r, x / s) + ((c - 1.0) / s) * x

        # r(t) = tc/(1-t+tc) is increasing with inverse t = r/(c - rc + r)
        def back(r):
            return r / (c - r * c + r)

        lo, hi = v.t_domain
        return VelocityField(ev, dim=v.dim, t_domain=(back(lo), back(hi)),
                             singular_times=tuple(back(s) for s in v.singular_times),
                             name=f"{v.name}|scale1")
    raise InvalidArgumentError(f"unknown mode {mode!r}")


# --------------------------------------------------------------------------
# Gradient test


@dataclass(frozen=True)
class SymmetryReport:
    is_gradient_like: bool
    max_asymmetry: float
    worst_index: int


def jacobian_symmetry_check(v: VelocityField, t: float, points, h: float = 1e-4,
                            tol: float = 1e-6) -> SymmetryReport:
    """Test whether a field looks like a gradient via central differences.

    The Jacobian at each point is approximated with step ``h``; the report
    holds the largest entry of ``|J - J^T|`` over all points.

    Raises:
        EvaluationError: If evaluation fails at some stencil point; the
            error carries the offending point index.
    """
    pts = as_points(points)
    m, d = pts.shape
    J = np.empty((m, d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        try:
            plus = v(t, pts + e)
            minus = v(t, pts - e)
        except Exception as exc:  # locate the failing row
            for i in range(m):
                try:
                    v(t, (pts[i] + e)[None])
                    v(t, (pts[i] - e)[None])
                except Exception as inner:
                    raise EvaluationError(
                        f"evaluation failed at point {i}: {inner}", t=t, x=pts[i], index=i) from inner
            raise EvaluationError(f"evaluation failed: {exc}", t=t) from exc
        J[:, :, j] = (plus - minus) / (2.0 * h)
    asym = np.abs(J - np.transpose(J, (0, 2, 1))).reshape(m, -1).max(axis=1)
    worst = int(np.argmax(asym))
    mx = float(asym[worst])
    return SymmetryReport(mx <= tol, mx, worst)
