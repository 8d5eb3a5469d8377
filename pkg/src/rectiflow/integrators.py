"""Fixed-step ODE/SDE integration of velocity fields and collapse detection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial.distance import pdist

from .distributions import as_points
from .errors import DivergenceError, DomainError, EvaluationError, RectiflowError
from .rng import CHUNK_ROWS, split_seed, make_rng
from .velocity import VelocityField

SCHEMES = ("euler", "rk4")


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step integrator settings.

    Attributes:
        scheme: ``"euler"`` or ``"rk4"``.
        steps: Number of uniform steps on ``[0, t_end_clip]``.
        t_end_clip: Integration stops at this time; the state at ``t = 1`` is
            then extrapolated with one step of the last velocity. A value of 1
            disables the extrapolation.
        seed: Seed of the Brownian increments (SDE only).
    """

    scheme: str = "rk4"
    steps: int = 100
    t_end_clip: float = 1.0 - 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise DomainError(f"unknown scheme {self.scheme!r}")
        if int(self.steps) < 1:
            raise DomainError("steps must be at least 1")
        if not (0.0 < float(self.t_end_clip) <= 1.0):
            raise DomainError("t_end_clip must lie in (0, 1]")


@dataclass(frozen=True)
class Trajectory:
    """Recorded states of an integration.

    ``states[k]`` is the state at ``times[k]``; for a batch it has shape
    ``(n, d)``, for a single start shape ``(d,)``.
    """

    times: np.ndarray
    states: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _eval(v: VelocityField, t: float, z: np.ndarray) -> np.ndarray:
    try:
        out = v(t, z)
    except RectiflowError as exc:
        exc.t = t
        exc.state = z
        raise
    except Exception as exc:
        raise EvaluationError(f"velocity evaluation failed at t={t}: {exc}", t=t, x=z) from exc
    return out


def _check_finite(z, t):
    if not np.all(np.isfinite(z)):
        raise DivergenceError(f"non-finite state at t={t}", t=t)


def _step(v, scheme, t, z, dt):
    if scheme == "euler":
        k1 = _eval(v, t, z)
        return z + dt * k1, k1
    k1 = _eval(v, t, z)
    k2 = _eval(v, t + 0.5 * dt, z + (0.5 * dt) * k1)
    k3 = _eval(v, t + 0.5 * dt, z + (0.5 * dt) * k2)
    k4 = _eval(v, t + dt, z + dt * k3)
    return z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), k1


def _grid(config: IntegratorConfig, t_span):
    t0, t1 = (0.0, None) if t_span is None else t_span
    extrapolate = t1 is None
    if extrapolate:
        t1 = float(config.t_end_clip)
        extrapolate = t1 < 1.0
    return np.linspace(float(t0), float(t1), int(config.steps) + 1), extrapolate


def integrate_ode(v: VelocityField, x0, config: IntegratorConfig, t_span=None,
                  record: bool = True,
                  monitor: Callable[[float, np.ndarray], None] | None = None) -> Trajectory:
    """Integrate ``dz/dt = v_t(z)`` from ``z_0 = x0``.

    By default the grid covers ``[0, t_end_clip]`` and the state at ``t = 1``
    is ``z + (1 - t_end_clip) * v(t_end_clip, z)``. Passing ``t_span=(a, b)``
    integrates exactly on ``[a, b]`` without extrapolation.

    Args:
        v: Velocity field.
        x0: Start ``(d,)`` or batch ``(n, d)``.
        config: Scheme and step count.
        t_span: Optional explicit interval.
        record: Keep every grid state (else only the first and last).
        monitor: Called as ``monitor(t, z)`` after every step; may raise.

    Raises:
        EvaluationError: Wrapping unexpected evaluation failures; library
            errors propagate with ``t`` and ``state`` attributes attached.
        DivergenceError: If a state becomes non-finite.
    """
    z = np.array(x0, dtype=float, copy=True)
    times, extrapolate = _grid(config, t_span)
    states = [z.copy()]
    kept = [times[0]]
    if monitor is not None:
        monitor(times[0], z)
    for k in range(len(times) - 1):
        t, dt = times[k], times[k + 1] - times[k]
        z, _ = _step(v, config.scheme, t, z, dt)
        _check_finite(z, times[k + 1])
        if monitor is not None:
            monitor(times[k + 1], z)
        if record:
            states.append(z.copy())
            kept.append(times[k + 1])
    if extrapolate:
        tc = times[-1]
        z = z + (1.0 - tc) * _eval(v, tc, z)
        _check_finite(z, 1.0)
        states.append(z.copy())
        kept.append(1.0)
    elif not record:
        states.append(z.copy())
        kept.append(times[-1])
    return Trajectory(np.asarray(kept), np.stack(states))


def integrate_sde(v: VelocityField, eps: float, x0, config: IntegratorConfig, t_span=None,
                  record: bool = True) -> Trajectory:
    """Euler-Maruyama integration of ``dY = v_t(Y) dt + sqrt(eps) dW``.

    Each step adds Gaussian increments of variance ``eps * dt``. Rows are
    split into blocks of :data:`rectiflow.rng.CHUNK_ROWS`; block ``j`` draws
    its increments from child ``j`` of ``config.seed``, so results do not
    depend on batch scheduling. With ``eps = 0`` this reproduces the Euler
    ODE path bit for bit. The final extrapolation to ``t = 1`` (when
    clipping) is one more Euler-Maruyama step of length ``1 - t_end_clip``.
    """
    if eps < 0:
        raise DomainError("eps must be non-negative")
    z = np.array(x0, dtype=float, copy=True)
    single = z.ndim == 1
    zb = z.reshape(1, -1) if single else z
    times, extrapolate = _grid(config, t_span)
    n = zb.shape[0]
    blocks = [(lo, min(n, lo + CHUNK_ROWS)) for lo in range(0, n, CHUNK_ROWS)]
    rngs = [make_rng(s) for s in split_seed(config.seed, len(blocks))]

    def noise():
        return np.concatenate([g.standard_normal((hi - lo, zb.shape[1]))
                               for g, (lo, hi) in zip(rngs, blocks)])

    grid = list(times) + ([1.0] if extrapolate else [])
    states = [zb.copy()]
    kept = [grid[0]]
    for k in range(len(grid) - 1):
        t, dt = grid[k], grid[k + 1] - grid[k]
        drift = _eval(v, t, zb)
        zb = zb + dt * drift
        if eps > 0:
            zb = zb + np.sqrt(eps * dt) * noise()
        _check_finite(zb, grid[k + 1])
        if record or k == len(grid) - 2:
            states.append(zb.copy())
            kept.append(grid[k + 1])
    st = np.stack(states)
    if single:
        st = st[:, 0, :]
    return Trajectory(np.asarray(kept), st)


def spread(z: np.ndarray, max_points: int = 64) -> float:
    """Largest pairwise distance among at most ``max_points`` evenly chosen rows."""
    z = as_points(z)
    if z.shape[0] > max_points:
        z = z[np.linspace(0, z.shape[0] - 1, max_points).astype(int)]
    if z.shape[0] < 2:
        return 0.0
    return float(pdist(z).max())


@dataclass(frozen=True)
class CollapseReport:
    collapsed: bool
    t_star: float | None
    min_spread: float


def detect_collapse(v: VelocityField, starts, t_grid, radius_tol: float = 1e-2,
                    scheme: str = "rk4", substeps: int = 1,
                    max_points: int = 64) -> CollapseReport:
    """Integrate a cloud of starts and look for trajectories merging.

    The spread of the cloud (largest pairwise distance over at most
    ``max_points`` representative starts) is measured at every grid time.

    Args:
        v: Velocity field.
        starts: Start points ``(n, d)``.
        t_grid: Increasing times; the cloud starts at ``t_grid[0]``.
        radius_tol: Collapse is declared when the spread drops below this.
        scheme: Integration scheme between grid times.
        substeps: Steps per grid interval.
        max_points: Subsample size for the spread.

    Returns:
        ``collapsed``, the grid time ``t_star`` of minimal spread (``None``
        unless collapsed) and the minimal spread itself.
    """
    z = as_points(starts)
    if z.shape[0] > max_points:
        z = z[np.linspace(0, z.shape[0] - 1, max_points).astype(int)]
    z = z.copy()
    grid = np.asarray(t_grid, dtype=float)
    cfg = IntegratorConfig(scheme=scheme, steps=substeps)
    best = spread(z, max_points)
    t_best = float(grid[0])
    for k in range(len(grid) - 1):
        z = integrate_ode(v, z, cfg, t_span=(grid[k], grid[k + 1]), record=False).final
        s = spread(z, max_points)
        if s < best:
            best, t_best = s, float(grid[k + 1])
    collapsed = best < radius_tol
    return CollapseReport(collapsed, t_best if collapsed else None, best)
