"""Registry of the concrete couplings used in experiments.

=====================  =====================================================
name                   coupling
=====================  =====================================================
disconnected-opt       source ``1/2 (eta at (-2,1) + eta at (2,-1))``;
                       ``x1 = x0 -/+ (0,2)`` by the sign of the first coordinate
disconnected-nonopt    same source; ``x1 = x0 -/+ (4,0)`` by the sign of the
                       second coordinate
gauss-latent-fp        ``x0 ~ N(0,I)``; ``x1 = x0 + (-2,2)`` if ``x0_1 < 0``
                       else ``x0 - (-2,2)``
gauss-latent-opt       the same marginals re-paired by exact discrete OT
antipodal              ``x0 ~ N(0,I)``, ``x1 = -x0``; optional additive
                       smoothing ``x0 + c W`` (parameter ``c``)
independent-gaussian   independent (or correlated) Gaussian pair
independent-gmm        ``N(0,I)`` source, independent Gaussian-mixture target
custom                 particles loaded from a file or given inline
=====================  =====================================================

``eta`` is the uniform law on the disc of radius ``eta_radius`` (default 0.3).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .couplings import (
    GaussianJointCoupling,
    GmmJointCoupling,
    ParticleCoupling,
    load_particles,
)
from .distributions import GaussianDist, GmmDist, gaussian_sample, gmm_sample
from .errors import ConfigError, RectiflowError
from .ot import bures_wasserstein, discrete_ot_exact
from .rectification import ClosedForm
from .rng import child_int, make_rng, standard_normal

SCENARIOS = (
    "disconnected-opt",
    "disconnected-nonopt",
    "gauss-latent-fp",
    "gauss-latent-opt",
    "antipodal",
    "independent-gaussian",
    "independent-gmm",
    "custom",
)

_DISC_CENTERS0 = np.array([[-2.0, 1.0], [2.0, -1.0]])
_DISC_CENTERS1 = np.array([[-2.0, -1.0], [2.0, 1.0]])
_LATENT_SHIFT = np.array([-2.0, 2.0])

_SCHEMA: dict[str, dict[str, type | tuple]] = {
    "disconnected-opt": {"eta_radius": float, "balanced": bool},
    "disconnected-nonopt": {"eta_radius": float, "balanced": bool},
    "gauss-latent-fp": {},
    "gauss-latent-opt": {},
    "antipodal": {"c": float, "dim": int},
    "independent-gaussian": {"mean0": list, "cov0": list, "mean1": list, "cov1": list,
                             "sigma01": list},
    "independent-gmm": {"weights": list, "means": list, "covs": list},
    "custom": {"path": str, "x0": list, "x1": list},
}

_DEFAULTS: dict[str, dict] = {
    "disconnected-opt": {"eta_radius": 0.3, "balanced": True},
    "disconnected-nonopt": {"eta_radius": 0.3, "balanced": True},
    "gauss-latent-fp": {},
    "gauss-latent-opt": {},
    "antipodal": {"c": 0.0, "dim": 2},
    "independent-gaussian": {"mean0": [0.0, 0.0], "cov0": [[1.0, 0.0], [0.0, 4.0]],
                             "mean1": [0.0, 0.0], "cov1": [[9.0, 0.0], [0.0, 1.0]]},
    "independent-gmm": {"weights": [0.5, 0.5], "means": [[-2.0, 0.0], [2.0, 0.0]],
                        "covs": [[[0.25, 0.0], [0.0, 0.25]], [[0.25, 0.0], [0.0, 0.25]]]},
    "custom": {},
}

_DESCRIPTIONS = {
    "disconnected-opt": "two discs paired vertically; optimal, straight, cost 4",
    "disconnected-nonopt": "two discs paired horizontally; straight fixed point, cost 16",
    "gauss-latent-fp": "standard normal source, sign-dependent shift; straight fixed point, cost 8",
    "gauss-latent-opt": "marginals of gauss-latent-fp re-paired by exact discrete OT",
    "antipodal": "x1 = -x0 for standard normal x0; trajectories collapse at t = 1/2",
    "independent-gaussian": "jointly Gaussian pair (independent by default)",
    "independent-gmm": "standard normal source, independent Gaussian-mixture target",
    "custom": "user-supplied particle pairs",
}


@dataclass(frozen=True)
class ScenarioSpec:
    """Scenario name plus parameters (validated against a per-scenario schema)."""

    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in _SCHEMA:
            raise ConfigError(f"unknown scenario {self.name!r}; known: {', '.join(SCENARIOS)}")
        schema = _SCHEMA[self.name]
        for key, val in self.params.items():
            if key not in schema:
                raise ConfigError(f"scenario {self.name!r} has no parameter {key!r}")
            want = schema[key]
            ok = isinstance(val, want) or (want is float and isinstance(val, int)
                                           and not isinstance(val, bool))
            if not ok:
                raise ConfigError(f"parameter {key!r} of {self.name!r} must be {want.__name__}")
        object.__setattr__(self, "params", dict(self.params))

    def resolved(self) -> dict:
        out = dict(_DEFAULTS[self.name])
        out.update(self.params)
        return out

    def to_dict(self) -> dict:
        return {"name": self.name, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        if isinstance(d, str):
            return cls(d)
        if "name" not in d:
            raise ConfigError("scenario needs a 'name'")
        return cls(d["name"], dict(d.get("params", {})))


@dataclass(frozen=True)
class ScenarioMeta:
    """What is known exactly about a built scenario.

    Attributes:
        name: Scenario name.
        field_source: Exact field (``None`` when no closed form exists).
        optimal_cost: Squared Wasserstein distance of the marginals, if known.
        fixed_point: Whether the coupling is a known fixed point of rectification.
        rectifiable: ``False`` for couplings whose trajectories collapse.
        v1: Second moment ``E|X1|^2`` of the target.
        sample_mu0, sample_mu1: ``(n, seed) -> (n, d)`` fresh marginal samplers.
        model: Closed-form coupling object, when there is one.
    """

    name: str
    field_source: ClosedForm | None
    optimal_cost: float | None
    fixed_point: bool | None
    rectifiable: bool
    v1: float | None
    sample_mu0: Callable | None = field(default=None, repr=False, compare=False)
    sample_mu1: Callable | None = field(default=None, repr=False, compare=False)
    model: object = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "field": None if self.field_source is None else _field_label(self.field_source),
            "optimal_cost": self.optimal_cost,
            "fixed_point": self.fixed_point,
            "rectifiable": self.rectifiable,
            "v1": self.v1,
        }


def _field_label(src: ClosedForm) -> str:
    m = src.model
    return m if isinstance(m, str) else type(m).__name__


def list_scenarios() -> list[tuple[str, str]]:
    """Registered scenario names with one-line descriptions."""
    return [(name, _DESCRIPTIONS[name]) for name in SCENARIOS]


def sample_eta_disc(n: int, radius: float, rng) -> np.ndarray:
    """Uniform samples on the disc of the given radius."""
    r = radius * np.sqrt(rng.random(n))
    a = 2.0 * np.pi * rng.random(n)
    return np.column_stack([r * np.cos(a), r * np.sin(a)])


def _two_disc(centers, n, seed, radius, balanced):
    rng = make_rng(seed)
    if balanced:
        labels = np.arange(n) % 2
        labels = labels[rng.permutation(n)]
    else:
        labels = rng.integers(0, 2, n)
    return centers[labels] + sample_eta_disc(n, radius, rng)


def gauss_latent_map(x0: np.ndarray) -> np.ndarray:
    """Sign-dependent shift of the Gaussian-latent fixed point."""
    sign = np.where(x0[:, :1] < 0, 1.0, -1.0)
    return x0 + sign * _LATENT_SHIFT


def disconnected_map(x0: np.ndarray, optimal: bool) -> np.ndarray:
    """Pairings of the two-disc scenarios (vertical when optimal)."""
    if optimal:
        return x0 + np.where(x0[:, :1] < -1.0, -1.0, 1.0) * np.array([0.0, 2.0])
    return x0 + np.where(x0[:, 1:2] < -0.5, -1.0, 1.0) * np.array([4.0, 0.0])


def _gauss_latent_v1() -> float:
    # E|X0 + s(-2,2)|^2 with s = -sign(X0_1): cross term 2 E[-2 s X0_1] = 4 E|X0_1|
    return 2.0 + 8.0 + 2.0 * 2.0 * np.sqrt(2.0 / np.pi)


def _gaussian_from_params(p: dict) -> GaussianJointCoupling:
    m0 = np.atleast_1d(np.asarray(p["mean0"], dtype=float))
    d = m0.size
    s01 = np.asarray(p.get("sigma01", np.zeros((d, d))), dtype=float).reshape(d, d)
    return GaussianJointCoupling(m0, p["mean1"], np.reshape(p["cov0"], (d, d)),
                                 np.reshape(p["cov1"], (d, d)), s01)


def build_scenario(spec: ScenarioSpec | str, n: int, seed: int) -> tuple[ParticleCoupling, ScenarioMeta]:
    """Sample ``n`` pairs of a registered scenario and describe it.

    Args:
        spec: Scenario spec or bare name.
        n: Number of pairs (ignored by ``custom``).
        seed: Integer seed.

    Returns:
        The particle coupling and its :class:`ScenarioMeta`.

    Raises:
        ConfigError: For unknown scenarios or invalid parameters.
    """
    if isinstance(spec, str):
        spec = ScenarioSpec(spec)
    if int(n) < 1:
        raise ConfigError("n must be at least 1")
    n = int(n)
    p = spec.resolved()
    name = spec.name
    try:
        if name in ("disconnected-opt", "disconnected-nonopt"):
            opt = name == "disconnected-opt"
            rad, bal = float(p["eta_radius"]), bool(p["balanced"])
            if not (0 < rad <= 0.3):
                raise ConfigError("eta_radius must lie in (0, 0.3]")
            x0 = _two_disc(_DISC_CENTERS0, n, seed, rad, bal)
            x1 = disconnected_map(x0, opt)
            v1 = 5.0 + rad * rad / 2.0
            meta = ScenarioMeta(
                name, ClosedForm(name), 4.0, True, True, v1,
                sample_mu0=lambda m, s: _two_disc(_DISC_CENTERS0, m, s, rad, bal),
                sample_mu1=lambda m, s: _two_disc(_DISC_CENTERS1, m, s, rad, bal))
            return ParticleCoupling(x0, x1), meta

        if name in ("gauss-latent-fp", "gauss-latent-opt"):
            x0 = standard_normal(n, 2, seed)
            x1 = gauss_latent_map(x0)
            mu0 = lambda m, s: standard_normal(m, 2, s)
            mu1 = lambda m, s: gauss_latent_map(standard_normal(m, 2, s))
            if name == "gauss-latent-fp":
                meta = ScenarioMeta(name, ClosedForm(name), None, True, True, _gauss_latent_v1(),
                                    sample_mu0=mu0, sample_mu1=mu1)
                return ParticleCoupling(x0, x1), meta
            plan = discrete_ot_exact(x0, x1)
            meta = ScenarioMeta(name, None, plan.cost, None, True, _gauss_latent_v1(),
                                sample_mu0=mu0, sample_mu1=mu1)
            return ParticleCoupling(x0, x1[plan.assignment]), meta

        if name == "antipodal":
            c = float(p["c"])
            d = int(p["dim"])
            if c < 0:
                raise ConfigError("c must be non-negative")
            z = standard_normal(n, d, seed)
            x1 = -z
            x0 = z if c == 0 else z + c * standard_normal(n, d, child_int(seed, 1))
            eye = np.eye(d)
            model = GaussianJointCoupling(np.zeros(d), np.zeros(d), (1.0 + c * c) * eye, eye, -eye)
            w2 = bures_wasserstein(model.marginal0(), model.marginal1())
            src = ClosedForm("antipodal") if (c == 0 and d == 2) else ClosedForm(model)
            meta = ScenarioMeta(
                name, src, w2, None, c > 0, float(d), model=model,
                sample_mu0=lambda m, s: np.sqrt(1.0 + c * c) * standard_normal(m, d, s),
                sample_mu1=lambda m, s: standard_normal(m, d, s))
            return ParticleCoupling(x0, x1), meta

        if name == "independent-gaussian":
            model = _gaussian_from_params(p)
            pc = model.to_particles(n, seed)
            g0, g1 = model.marginal0(), model.marginal1()
            meta = ScenarioMeta(
                name, ClosedForm(model), bures_wasserstein(g0, g1), None, True,
                float(np.trace(g1.cov) + g1.mean @ g1.mean), model=model,
                sample_mu0=lambda m, s: gaussian_sample(g0, m, s).points,
                sample_mu1=lambda m, s: gaussian_sample(g1, m, s).points)
            return pc, meta

        if name == "independent-gmm":
            means = np.asarray(p["means"], dtype=float)
            covs = np.asarray(p["covs"], dtype=float)
            if means.ndim != 2 or covs.shape != (means.shape[0], means.shape[1], means.shape[1]):
                raise ConfigError("means must be (K, d) and covs (K, d, d)")
            d = means.shape[1]
            mix = GmmDist(p["weights"], tuple(GaussianDist(m, S) for m, S in zip(means, covs)))
            model = GmmJointCoupling.independent(GaussianDist.standard(d), mix)
            x0 = standard_normal(n, d, seed)
            x1 = gmm_sample(mix, n, child_int(seed, 1))[0].points
            v1 = float(sum(w * (np.trace(S) + m @ m) for w, m, S in zip(mix.weights, means, covs)))
            meta = ScenarioMeta(
                name, ClosedForm(model), None, None, True, v1, model=model,
                sample_mu0=lambda m, s: standard_normal(m, d, s),
                sample_mu1=lambda m, s: gmm_sample(mix, m, s)[0].points)
            return ParticleCoupling(x0, x1), meta

        if name == "custom":
            if "path" in p:
                pc = load_particles(p["path"])
            elif "x0" in p and "x1" in p:
                pc = ParticleCoupling(np.asarray(p["x0"], dtype=float), np.asarray(p["x1"], dtype=float))
            else:
                raise ConfigError("custom scenario needs 'path' or both 'x0' and 'x1'")
            meta = ScenarioMeta(name, None, None, None, True,
                                float(np.mean(np.sum(pc.x1 ** 2, axis=1))))
            return pc, meta
    except ConfigError:
        raise
    except (RectiflowError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid parameters for scenario {name!r}: {exc}") from exc
    raise ConfigError(f"unknown scenario {name!r}")
