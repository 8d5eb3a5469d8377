"""Flow-matching loss, the rectification map and smoothed iterative rectification."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .couplings import (
    GaussianJointCoupling,
    GmmJointCoupling,
    ParticleCoupling,
    smooth_coupling,
)
from .distributions import GaussianDist, as_points
from .errors import (
    DomainError,
    EvaluationError,
    InvalidArgumentError,
    NonRectifiableError,
    SingularCovarianceError,
    SingularTimeError,
)
from .integrators import IntegratorConfig, integrate_ode, integrate_sde, spread
from .ot import (
    bures_wasserstein,
    discrete_ot_exact,
    energy_distance,
    energy_permutation_test,
    quantile_ot_1d,
    transport_cost,
)
from .rng import child_int, make_rng, standard_normal
from .velocity import (
    VelocityField,
    gaussian_field,
    gmm_field,
    kernel_drift_field,
    kernel_field,
    scenario_field,
)

#: Default multiplier of the rule-of-thumb kernel bandwidth used when
#: iterating rectification with the nonparametric field.
DEFAULT_BANDWIDTH_FACTOR = 0.5
#: Largest tolerated share of out-of-support evaluations in a loss estimate.
MAX_FAILURE_SHARE = 0.01


# --------------------------------------------------------------------------
# Noise schedules


@dataclass(frozen=True)
class NoiseSchedule:
    """Noise levels ``c_i`` for smoothed rectification.

    Attributes:
        rule: ``"constant"`` (``c_i = value``), ``"harmonic"``
            (``c_i = value / (i + 1)``) or ``"explicit"`` (``c_i = values[i]``).
        value: Constant level or harmonic numerator ``c0``.
        values: Explicit list for the ``"explicit"`` rule.
    """

    rule: str = "constant"
    value: float = 0.0
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.rule not in ("constant", "harmonic", "explicit"):
            raise DomainError(f"unknown schedule rule {self.rule!r}")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        vals = self.values if self.rule == "explicit" else (float(self.value),)
        for v in vals:
            if not (0.0 <= v < 1.0):
                raise DomainError(f"noise level {v} outside [0, 1)")

    @classmethod
    def constant(cls, c: float) -> "NoiseSchedule":
        return cls("constant", c)

    @classmethod
    def harmonic(cls, c0: float) -> "NoiseSchedule":
        return cls("harmonic", c0)

    @classmethod
    def explicit(cls, values: Sequence[float]) -> "NoiseSchedule":
        return cls("explicit", 0.0, tuple(values))

    def c(self, i: int) -> float:
        if self.rule == "constant":
            return float(self.value)
        if self.rule == "harmonic":
            return float(self.value) / (i + 1)
        if i >= len(self.values):
            raise DomainError(f"explicit schedule has no entry for step {i}")
        return self.values[i]

    def levels(self, K: int) -> np.ndarray:
        return np.array([self.c(i) for i in range(K)])

    def to_dict(self) -> dict:
        return {"rule": self.rule, "value": self.value, "values": list(self.values)}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return cls(d.get("rule", "constant"), float(d.get("value", 0.0)),
                   tuple(d.get("values", ())))


# --------------------------------------------------------------------------
# Field sources


@dataclass(frozen=True)
class ClosedForm:
    """Use an exact field.

    ``model`` is a ``GaussianJointCoupling``, a ``GmmJointCoupling``, a
    scenario name with a known field, or a ready :class:`VelocityField`.
    """

    model: object
    noise_eps: float = 0.0
    margin: float = 0.0

    def build(self, coupling: ParticleCoupling | None = None,
              noise_eps: float | None = None) -> VelocityField:
        eps = self.noise_eps if noise_eps is None else noise_eps
        m = self.model
        if isinstance(m, GaussianJointCoupling):
            return gaussian_field(m, eps)
        if isinstance(m, GmmJointCoupling):
            return gmm_field(m, eps)
        if eps > 0:
            raise InvalidArgumentError("noisy drift needs a Gaussian or mixture model")
        if isinstance(m, VelocityField):
            return m
        if isinstance(m, str):
            return scenario_field(m, self.margin)
        raise InvalidArgumentError(f"cannot build a field from {type(m).__name__}")


@dataclass(frozen=True)
class Kernel:
    """Estimate the field by kernel regression on the current particles.

    ``bandwidth=None`` recomputes the bandwidth at every time from the spread
    of ``x_t`` (rule of thumb times ``factor``).
    """

    bandwidth: float | None = None
    factor: float = DEFAULT_BANDWIDTH_FACTOR
    method: str = "auto"

    def build(self, coupling: ParticleCoupling, noise_eps: float = 0.0,
              seed: int = 0) -> VelocityField:
        if noise_eps > 0:
            return kernel_drift_field(coupling, noise_eps, seed, self.bandwidth, self.factor,
                                      self.method)
        return kernel_field(coupling, self.bandwidth, self.factor, self.method)


FieldSource = Union[ClosedForm, Kernel]


# --------------------------------------------------------------------------
# Loss


@dataclass(frozen=True)
class LossEstimate:
    value: float
    n_evaluated: int
    n_failed: int


def _strata(n: int, time_samples: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Stratified times and the stratum of every particle.

    Stratum ``j`` holds one uniform draw in ``[j/T, (j+1)/T)``. Particles are
    dealt to strata round-robin after a seeded shuffle.
    """
    T = max(1, min(int(time_samples), n))
    rng = make_rng(seed)
    times = (np.arange(T) + rng.random(T)) / T
    perm = rng.permutation(n)
    which = np.empty(n, dtype=np.int64)
    which[perm] = np.arange(n) % T
    return times, which


def loss_eval(v: VelocityField, coupling: ParticleCoupling, time_samples: int = 1000,
              seed: int = 0, details: bool = False):
    """Monte-Carlo flow-matching loss ``int_0^1 E|v_t(X_t) - (X1 - X0)|^2 dt``.

    Times are stratified (one uniform draw per stratum) and every particle
    pair is evaluated at exactly one stratum time, so the estimate costs one
    field evaluation per pair.

    Args:
        v: Velocity field.
        coupling: Particle pairs.
        time_samples: Number of time strata.
        seed: Seed of the time draws and the particle-to-stratum pairing.
        details: Return a :class:`LossEstimate` instead of a float.

    Raises:
        EvaluationError: If more than 1% of evaluations fall outside the
            field's support.
    """
    times, which = _strata(coupling.n, time_samples, seed)
    disp = coupling.displacement
    total = 0.0
    failed = 0
    order = np.argsort(which, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(np.bincount(which, minlength=times.size))])
    for j, t in enumerate(times):
        idx = order[bounds[j]:bounds[j + 1]]
        if idx.size == 0:
            continue
        xt = (1.0 - t) * coupling.x0[idx] + t * coupling.x1[idx]
        val, ok = v.evaluate_flagged(t, xt)
        r = val[ok] - disp[idx][ok]
        total += float(np.sum(r * r))
        failed += int(np.sum(~ok))
    good = coupling.n - failed
    if failed > MAX_FAILURE_SHARE * coupling.n or good == 0:
        raise EvaluationError(
            f"{failed} of {coupling.n} loss evaluations fell outside the field's support")
    est = LossEstimate(total / good, good, failed)
    return est if details else est.value


def kernel_crossfit_loss(coupling: ParticleCoupling, source: Kernel, time_samples: int = 64,
                         seed: int = 0) -> float:
    """Two-fold cross-fitted loss of the kernel field.

    The field is fitted on one half of the pairs and scored on the other, and
    vice versa. This estimates the loss of a fitted field on fresh pairs,
    an upper-biased proxy for the minimal loss, where the in-sample score of
    a narrow-bandwidth smoother would be biased towards zero.
    """
    n = coupling.n
    perm = make_rng(child_int(seed, 0)).permutation(n)
    halves = (np.sort(perm[: n // 2]), np.sort(perm[n // 2:]))
    vals = []
    for k, (fit, score) in enumerate((halves, halves[::-1])):
        fit_c = ParticleCoupling(coupling.x0[fit], coupling.x1[fit])
        score_c = ParticleCoupling(coupling.x0[score], coupling.x1[score])
        est = loss_eval(source.build(fit_c), score_c, time_samples, child_int(seed, k + 1),
                        details=True)
        vals.append((est.value, est.n_evaluated))
    return float(sum(v * m for v, m in vals) / sum(m for _, m in vals))


# --------------------------------------------------------------------------
# Rectification


@dataclass(frozen=True)
class RectifyDiagnostics:
    cost_before: float
    cost_after: float
    loss: float | None
    min_spread: float
    t_min_spread: float


def _field_loss(source, field_, coupling, time_samples, seed):
    if isinstance(source, Kernel):
        return kernel_crossfit_loss(coupling, source, time_samples, seed)
    return loss_eval(field_, coupling, time_samples, seed)


def rectify(coupling: ParticleCoupling, field_source: FieldSource,
            config: IntegratorConfig = IntegratorConfig(), *, seed: int = 0,
            collapse_tol: float = 1e-2, loss_samples: int = 64,
            compute_loss: bool = True,
            noise_eps: float = 0.0) -> tuple[ParticleCoupling, RectifyDiagnostics]:
    """Rectify a coupling: keep ``x0`` and replace ``x1`` by the ODE endpoint.

    The field is built from ``field_source`` (closed form, or kernel
    regression on ``coupling``) and integrated from every ``x0`` row. The
    spread of up to 64 representative trajectories is tracked; if it drops
    below ``collapse_tol`` at an interior time, or the field hits a singular
    time or covariance on the way, the coupling is declared non-rectifiable.

    Args:
        coupling: Input pairs.
        field_source: :class:`ClosedForm` or :class:`Kernel`.
        config: Integrator settings.
        seed: Seed of the loss estimate.
        collapse_tol: Spread threshold for collapse detection.
        loss_samples: Time strata of the loss estimate.
        compute_loss: Skip the loss estimate when false.
        noise_eps: If positive, perform noisy rectification instead: the
            noisy-bridge drift is integrated as ``dY = v dt + sqrt(eps) dW``
            with Euler-Maruyama (seeded by ``config.seed``). No collapse
            monitoring applies and the loss is reported as NaN because the
            noisy regression target has unbounded variance near ``t = 1``.

    Returns:
        The rectified coupling ``(x0, z1)`` and diagnostics.

    Raises:
        NonRectifiableError: On trajectory collapse, naming ``t_star``.
    """
    x0 = np.asarray(coupling.x0)
    if noise_eps > 0:
        if isinstance(field_source, Kernel):
            drift = field_source.build(coupling, noise_eps, seed=child_int(seed, 7))
        else:
            drift = field_source.build(coupling, noise_eps)
        cfg = config if config.scheme == "euler" else IntegratorConfig(
            "euler", config.steps, config.t_end_clip, config.seed)
        y1 = integrate_sde(drift, noise_eps, x0, cfg, record=False).final
        out = ParticleCoupling(x0, y1)
        diag = RectifyDiagnostics(transport_cost(coupling), transport_cost(out), float("nan"),
                                  float("nan"), float("nan"))
        return out, diag
    v = field_source.build(coupling)
    m = x0.shape[0]
    probe = np.linspace(0, m - 1, min(m, 64)).astype(int)
    track = {"min": spread(x0[probe]), "t": 0.0}

    def monitor(t, z):
        s = spread(z[probe])
        if s < track["min"]:
            track["min"], track["t"] = s, float(t)
        if 0.0 < t < 1.0 and s < collapse_tol and m > 1:
            raise NonRectifiableError(
                f"trajectories collapse at t={t:.6g} (spread {s:.3e})", t_star=float(t),
                min_spread=s)

    try:
        traj = integrate_ode(v, x0, config, record=False, monitor=monitor)
    except (SingularTimeError, SingularCovarianceError) as exc:
        t_star = getattr(exc, "t", None)
        raise NonRectifiableError(
            f"field is singular along the trajectories at t={t_star}: {exc}",
            t_star=t_star, min_spread=track["min"]) from exc
    out = ParticleCoupling(x0, traj.final)
    loss = _field_loss(field_source, v, coupling, loss_samples, seed) if compute_loss else None
    diag = RectifyDiagnostics(transport_cost(coupling), transport_cost(out), loss,
                              track["min"], track["t"])
    return out, diag


# --------------------------------------------------------------------------
# Smoothed iteration


@dataclass
class StepRecord:
    """Metrics of one smoothed-rectification step.

    ``loss`` belongs to the smoothed input coupling of the step; costs and
    energy distances describe the rectified output.
    """

    step: int
    c_i: float
    loss: float
    transport_cost: float
    transport_distance: float
    energy_mu0: float
    energy_mu1: float
    seed: int
    null_mu0: float | None = None
    null_mu1: float | None = None


@dataclass
class IterationReport:
    """Per-step records plus the global curves of a smoothed run."""

    steps: list[StepRecord] = field(default_factory=list)
    initial_cost: float = float("nan")
    v1: float = float("nan")
    meta: dict = field(default_factory=dict)
    aborted_at: int | None = None
    final: ParticleCoupling | None = field(default=None, compare=False, repr=False)

    @property
    def losses(self) -> np.ndarray:
        return np.array([s.loss for s in self.steps])

    @property
    def min_loss_curve(self) -> np.ndarray:
        return np.minimum.accumulate(self.losses) if self.steps else np.array([])

    @property
    def c_bar(self) -> np.ndarray:
        c = np.array([s.c_i for s in self.steps])
        return np.cumsum(c) / np.arange(1, c.size + 1) if c.size else c

    @property
    def bound_curve(self) -> np.ndarray:
        """``C/K + (2 + V1) * cbar_K`` for ``K = 1, 2, ...``."""
        if not self.steps:
            return np.array([])
        K = np.arange(1, len(self.steps) + 1)
        return self.initial_cost / K + (2.0 + self.v1) * self.c_bar

    @property
    def transport_distances(self) -> np.ndarray:
        return np.array([s.transport_distance for s in self.steps])


def _check_standard_normal(x0: np.ndarray, seed: int, n_perm: int) -> None:
    sub = x0[: min(x0.shape[0], 2000)]
    ref = standard_normal(sub.shape[0], sub.shape[1], child_int(seed, 99))
    test = energy_permutation_test(sub, ref, n_perm=max(n_perm, 50), seed=child_int(seed, 98))
    if not test.passed:
        warnings.warn(
            f"source marginal does not look standard normal (energy {test.statistic:.4f} > "
            f"null {test.threshold:.4f}); the smoothing guarantee assumes it", stacklevel=3)


def smoothed_rectify_iterate(initial: ParticleCoupling, schedule: NoiseSchedule, K: int,
                             field_source: FieldSource,
                             config: IntegratorConfig = IntegratorConfig(), seed: int = 0,
                             reference0=None, reference1=None, n_perm: int = 0,
                             perm_level: float = 0.95, loss_samples: int = 64,
                             energy_max: int = 10_000, later_source: FieldSource | None = None,
                             noise_eps: float = 0.0) -> IterationReport:
    """Alternate variance-preserving smoothing and rectification ``K`` times.

    Step ``i`` forms ``X0 = sqrt(1-c_i) Z0 + sqrt(c_i) W``, pairs it with the
    current ``Z1``, records the loss of the field on this pair, rectifies,
    and records the output's transport cost and the energy distances of both
    marginals to reference samples.

    Args:
        initial: Starting coupling ``(Z0, Z1)``.
        schedule: Noise levels.
        K: Number of steps.
        field_source: Field used at every step; a :class:`Kernel` source is
            refitted to the current particles each time.
        config: Integrator settings.
        seed: Master seed; step ``i`` uses ``child_int(seed, i)``.
        reference0, reference1: Independent samples of the target marginals
            for the energy distances (default: the initial coupling's sides).
        n_perm: If positive, also store permutation-null thresholds.
        perm_level: Quantile level of the null thresholds.
        loss_samples: Time strata for the loss estimate.
        energy_max: Subsample size for energy distances.
        later_source: Field source for steps after the first (default:
            ``field_source``). Closed forms describe only the initial
            coupling, so iterating them usually means switching to
            :class:`Kernel` here.
        noise_eps: Noisy (bridge SDE) rectification level; 0 for the ODE.

    Returns:
        The report. ``report.final`` holds the last coupling.

    Raises:
        NonRectifiableError: With ``report`` (partial, ``aborted_at`` set)
            and ``step`` attributes.
    """
    if K < 0:
        raise DomainError("K must be non-negative")
    levels = schedule.levels(K)
    ref0 = as_points(initial.x0 if reference0 is None else reference0)
    ref1 = as_points(initial.x1 if reference1 is None else reference1)
    report = IterationReport(
        initial_cost=transport_cost(initial),
        v1=float(np.mean(np.sum(initial.x1 ** 2, axis=1))),
        meta={"K": K, "seed": seed, "schedule": schedule.to_dict(), "noise_eps": noise_eps})
    if np.any(levels > 0):
        _check_standard_normal(np.asarray(initial.x0), seed, n_perm)
    cur = initial
    for i in range(K):
        s = child_int(seed, i)
        c = float(levels[i])
        smoothed = smooth_coupling(cur, c, "variance_preserving", seed=child_int(s, 0))
        try:
            src = field_source if (i == 0 or later_source is None) else later_source
            cfg = IntegratorConfig(config.scheme, config.steps, config.t_end_clip,
                                   child_int(s, 6))
            out, diag = rectify(smoothed, src, cfg, seed=child_int(s, 1),
                                loss_samples=loss_samples, noise_eps=noise_eps)
        except NonRectifiableError as exc:
            report.aborted_at = i
            report.final = cur
            exc.report = report
            exc.step = i
            raise
        cost = diag.cost_after
        e0 = energy_distance(out.x0, ref0, energy_max, seed=child_int(s, 2))
        e1 = energy_distance(out.x1, ref1, energy_max, seed=child_int(s, 3))
        rec = StepRecord(i + 1, c, float(diag.loss), cost, float(np.sqrt(cost)), e0, e1, s)
        if n_perm > 0:
            rec.null_mu0 = energy_permutation_test(out.x0, ref0, n_perm, perm_level,
                                                   seed=child_int(s, 4),
                                                   max_n=energy_max).threshold
            rec.null_mu1 = energy_permutation_test(out.x1, ref1, n_perm, perm_level,
                                                   seed=child_int(s, 5),
                                                   max_n=energy_max).threshold
        report.steps.append(rec)
        cur = out
    report.final = cur
    return report


# --------------------------------------------------------------------------
# Optimality gap


def optimality_gap(coupling: ParticleCoupling, baseline: str = "discrete_exact",
                   marginals: tuple[GaussianDist, GaussianDist] | None = None) -> float:
    """Transport cost of ``coupling`` minus the optimal cost of its marginals.

    Args:
        coupling: Particle pairs.
        baseline: ``"discrete_exact"`` (assignment on the same atoms),
            ``"gaussian_closed_form"`` (Bures-Wasserstein between
            ``marginals`` or, if absent, Gaussian fits of both sides) or
            ``"quantile_1d"`` (sorted pairing, ``d = 1`` only).

    Raises:
        InvalidArgumentError: For unknown or inapplicable baselines.
    """
    cost = transport_cost(coupling)
    if baseline == "discrete_exact":
        opt = discrete_ot_exact(coupling.x0, coupling.x1).cost
    elif baseline == "quantile_1d":
        if coupling.d != 1:
            raise InvalidArgumentError("quantile_1d baseline needs one-dimensional marginals")
        opt = quantile_ot_1d(coupling.x0, coupling.x1).cost
    elif baseline == "gaussian_closed_form":
        if marginals is None:
            marginals = tuple(
                GaussianDist(x.mean(0), np.atleast_2d(np.cov(x, rowvar=False)))
                for x in (coupling.x0, coupling.x1))
        opt = bures_wasserstein(*marginals)
    else:
        raise InvalidArgumentError(f"unknown baseline {baseline!r}")
    return cost - opt
