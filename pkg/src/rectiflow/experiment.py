"""Experiment configuration, execution and report files.

Config files are JSON objects with ``"version": 1``; unknown keys are
rejected. Reports are written either as JSON (``meta`` plus a ``steps``
array) or as CSV with the fixed header :data:`CSV_HEADER`.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, NonRectifiableError, RectiflowError
from .integrators import IntegratorConfig
from .ot import discrete_ot_exact
from .rectification import (
    DEFAULT_BANDWIDTH_FACTOR,
    ClosedForm,
    IterationReport,
    Kernel,
    NoiseSchedule,
    StepRecord,
    smoothed_rectify_iterate,
)
from .rng import child_int
from .scenarios import ScenarioSpec, build_scenario

CONFIG_VERSION = 1
CSV_HEADER = "step,c_i,loss,transport_cost,transport_distance,energy_mu0,energy_mu1"
_CSV_FIELDS = CSV_HEADER.split(",")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to replay one run.

    Attributes:
        scenario: Scenario spec.
        n_particles: Number of pairs.
        K: Number of (smoothed) rectification steps.
        schedule: Noise levels for smoothing.
        field_source: ``"closed_form"`` (exact field for the first step,
            kept for later steps only on known fixed points, else kernel) or
            ``"kernel"``.
        bandwidth: Fixed kernel bandwidth, or ``None`` for the adaptive rule.
        bandwidth_factor: Multiplier of the adaptive bandwidth.
        integrator: ODE/SDE integrator settings.
        eps: Noise level of noisy rectification (0 runs the ODE).
        seed: Master seed.
        metrics: Toggles: ``energy`` (default on), ``permutation`` (null
            thresholds, off), ``optimality_gap`` (discrete OT of the final
            coupling, off), ``n_reference`` (reference sample size).
        output: Report path, or ``None`` to skip writing.
        format: ``"json"`` or ``"csv"``.
        loss_samples: Time strata of loss estimates.
    """

    scenario: ScenarioSpec
    n_particles: int = 10_000
    K: int = 1
    schedule: NoiseSchedule = NoiseSchedule()
    field_source: str = "closed_form"
    bandwidth: float | None = None
    bandwidth_factor: float = DEFAULT_BANDWIDTH_FACTOR
    integrator: IntegratorConfig = IntegratorConfig()
    eps: float = 0.0
    seed: int = 0
    metrics: dict = field(default_factory=dict)
    output: str | None = None
    format: str = "json"
    loss_samples: int = 64

    def __post_init__(self):
        if int(self.n_particles) < 1 or int(self.K) < 0:
            raise ConfigError("n_particles must be >= 1 and K >= 0")
        if self.field_source not in ("closed_form", "kernel"):
            raise ConfigError(f"unknown field_source {self.field_source!r}")
        if self.format not in ("json", "csv"):
            raise ConfigError(f"unknown format {self.format!r}")
        if self.eps < 0:
            raise ConfigError("eps must be non-negative")
        if self.bandwidth_factor <= 0 or (self.bandwidth is not None and self.bandwidth <= 0):
            raise ConfigError("bandwidths must be positive")
        unknown = set(self.metrics) - {"energy", "permutation", "optimality_gap", "n_reference"}
        if unknown:
            raise ConfigError(f"unknown metric toggles {sorted(unknown)}")
        if self.output is not None:
            parent = Path(self.output).resolve().parent
            if not parent.is_dir() or not os.access(parent, os.W_OK):
                raise ConfigError(f"output directory {parent} is not writable")

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "scenario": self.scenario.to_dict(),
            "n_particles": self.n_particles,
            "K": self.K,
            "schedule": self.schedule.to_dict(),
            "field_source": self.field_source,
            "bandwidth": self.bandwidth,
            "bandwidth_factor": self.bandwidth_factor,
            "integrator": asdict(self.integrator),
            "eps": self.eps,
            "seed": self.seed,
            "metrics": dict(self.metrics),
            "output": self.output,
            "format": self.format,
            "loss_samples": self.loss_samples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        version = d.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version!r}")
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        if "scenario" not in d:
            raise ConfigError("config needs a 'scenario'")
        try:
            d["scenario"] = ScenarioSpec.from_dict(d["scenario"])
            if "schedule" in d:
                d["schedule"] = NoiseSchedule.from_dict(d["schedule"])
            if "integrator" in d:
                d["integrator"] = IntegratorConfig(**d["integrator"])
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError, RectiflowError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON ({exc})") from exc

    def with_overrides(self, **kw) -> "ExperimentConfig":
        """Return a copy with dotted-key overrides, e.g. ``{"schedule.value": 0.1}``."""
        d = self.to_dict()
        for key, val in kw.items():
            set_dotted(d, key, val)
        return ExperimentConfig.from_dict(d)


def set_dotted(d: dict, key: str, value) -> None:
    """Assign ``value`` at a dotted path inside nested dicts."""
    parts = key.split(".")
    cur = d
    for p in parts[:-1]:
        if not isinstance(cur.get(p), dict):
            cur[p] = {}
        cur = cur[p]
    cur[parts[-1]] = value


def _sources(config: ExperimentConfig, meta):
    kernel = Kernel(config.bandwidth, config.bandwidth_factor)
    if config.field_source == "kernel":
        return kernel, kernel
    if meta.field_source is None:
        raise ConfigError(f"scenario {meta.name!r} has no closed-form field; use 'kernel'")
    src = meta.field_source
    if config.eps > 0 and isinstance(src.model, str):
        if meta.model is None:
            raise ConfigError("noisy rectification with a closed form needs a Gaussian model")
        src = ClosedForm(meta.model)
    later = src if meta.fixed_point and not np.any(config.schedule.levels(config.K) > 0) else kernel
    return src, later


def run_experiment(config: ExperimentConfig) -> IterationReport:
    """Build the scenario, iterate, compute metrics and write the report.

    A non-rectifiable abort still writes the partial report (with
    ``aborted_at`` set) and then re-raises, so the caller sees the failure
    together with the step index and seed needed to replay it.
    """
    coupling, meta = build_scenario(config.scenario, config.n_particles, config.seed)
    src, later = _sources(config, meta)
    metrics = {"energy": True, "permutation": False, "optimality_gap": False}
    metrics.update(config.metrics)
    n_ref = int(metrics.get("n_reference", min(config.n_particles, 10_000)))
    ref0 = ref1 = None
    if meta.sample_mu0 is not None and metrics["energy"]:
        ref0 = meta.sample_mu0(n_ref, child_int(config.seed, 1001))
        ref1 = meta.sample_mu1(n_ref, child_int(config.seed, 1002))
    header = {
        "config": config.to_dict(),
        "scenario": meta.to_dict(),
        "versions": {"rectiflow": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "seeds": {"master": config.seed},
    }
    try:
        report = smoothed_rectify_iterate(
            coupling, config.schedule, config.K, src, config.integrator, seed=config.seed,
            reference0=ref0, reference1=ref1,
            n_perm=200 if metrics["permutation"] else 0,
            loss_samples=config.loss_samples, later_source=later, noise_eps=config.eps)
    except NonRectifiableError as exc:
        report = exc.report if exc.report is not None else IterationReport()
        report.meta.update(header)
        report.meta["error"] = {"type": "NonRectifiableError", "message": str(exc),
                                "t_star": exc.t_star, "step": exc.step,
                                "step_seed": child_int(config.seed, exc.step or 0)}
        if config.output:
            emit_report(report, config.output, config.format)
        raise
    report.meta.update(header)
    report.meta["seeds"]["steps"] = [s.seed for s in report.steps]
    if metrics["optimality_gap"] and report.final is not None:
        opt = meta.optimal_cost
        if opt is None:
            opt = discrete_ot_exact(report.final.x0, report.final.x1).cost
        report.meta["optimal_cost"] = opt
        report.meta["optimality_gap"] = [s.transport_cost - opt for s in report.steps]
    if config.output:
        emit_report(report, config.output, config.format)
    return report


# --------------------------------------------------------------------------
# Report files


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return None if math.isnan(x) else (str(x) if math.isinf(x) else x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    return x


def report_to_dict(report: IterationReport) -> dict:
    return {
        "meta": _clean(report.meta),
        "initial_cost": _clean(report.initial_cost),
        "v1": _clean(report.v1),
        "aborted_at": report.aborted_at,
        "steps": [_clean(asdict(s)) for s in report.steps],
        "min_loss": _clean(report.min_loss_curve),
        "bound": _clean(report.bound_curve),
    }


def _num(x):
    if x is None:
        return float("nan")
    if isinstance(x, str):
        return float(x)
    return float(x)


def report_from_dict(d: dict) -> IterationReport:
    steps = []
    for s in d.get("steps", []):
        s = dict(s)
        for key in ("c_i", "loss", "transport_cost", "transport_distance", "energy_mu0",
                    "energy_mu1"):
            s[key] = _num(s.get(key))
        steps.append(StepRecord(**s))
    return IterationReport(steps=steps, initial_cost=_num(d.get("initial_cost")),
                           v1=_num(d.get("v1")), meta=d.get("meta", {}),
                           aborted_at=d.get("aborted_at"))


def _fmt(x: float) -> str:
    return repr(float(x))


def emit_report(report: IterationReport, path, fmt: str = "json") -> Path:
    """Write a report as JSON or CSV; I/O errors propagate unchanged."""
    path = Path(path)
    if fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report_to_dict(report), fh, indent=2, sort_keys=False)
            fh.write("\n")
    elif fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(CSV_HEADER + "\n")
            for s in report.steps:
                fh.write(",".join([str(s.step)] + [_fmt(getattr(s, k)) for k in _CSV_FIELDS[1:]])
                         + "\n")
    else:
        raise ConfigError(f"unknown report format {fmt!r}")
    return path


def parse_report(path, fmt: str | None = None) -> IterationReport:
    """Read a report written by :func:`emit_report`.

    CSV files carry only the step table; JSON files restore everything.
    """
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix.lower() == ".csv" else "json")
    text = path.read_text(encoding="utf-8")
    if fmt == "json":
        return report_from_dict(json.loads(text))
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or ",".join(rows[0]) != CSV_HEADER:
        raise ConfigError(f"{path}: unexpected CSV header")
    steps = []
    for r in rows[1:]:
        if not r:
            continue
        vals = dict(zip(_CSV_FIELDS, r))
        steps.append(StepRecord(
            int(vals["step"]), float(vals["c_i"]), float(vals["loss"]),
            float(vals["transport_cost"]), float(vals["transport_distance"]),
            float(vals["energy_mu0"]), float(vals["energy_mu1"]), seed=-1))
    return IterationReport(steps=steps)
