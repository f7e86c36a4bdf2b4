"""Experiment plans: strict JSON configuration with field-path diagnostics.

A plan names a registry scenario and a ladder of prelimit resolutions
(particle count, scale separation, step size), plus the reference run and
the metrics to evaluate.  Validation is deliberately strict: unknown keys
are rejected, every diagnostic names the offending field by its path
(``plan.rungs[1].dt``), and stiffness violations come back with the largest
admissible step so configs can be fixed without consulting the code.

Plan schema (JSON object; only ``scenario`` is required)::

    {
      "scenario":  "dawson_rough",
      "rungs":     [{"n_particles": 250, "epsilon": 0.2, "dt": 0.004}, ...],
      "seeds":     [101, 211, 307],
      "reference": {"n_particles": 8000, "dt": 0.0025, "seed": 977},
      "metrics":   ["w2_ladder", "jdg", "gamma_table", "effective_table"],
      "t_end":     1.0,
      "snapshots": 11,
      "rate_basis": 6,
      "threads":   1,
      "out_dir":   "runs"
    }

Omitted rungs default to the standard ladder (250, 0.2), (1000, 0.1),
(4000, 0.05) with dt = eps^2 / 10; an explicit empty list is allowed and
means "produce the manifest and tables only, no particle runs".
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError
from .scenarios import scenario_names

DEFAULT_LADDER = ((250, 0.2), (1000, 0.1), (4000, 0.05))
DEFAULT_SEEDS = (101, 211, 307)
DEFAULT_REFERENCE = {"n_particles": 8000, "dt": 0.0025, "seed": 977}
KNOWN_METRICS = ("w2_ladder", "jdg", "gamma_table", "effective_table")
STIFFNESS_FACTOR = 0.1


def _reject_unknown(mapping: dict, allowed, path: str):
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ValidationError(
            f"{path}.{unknown[0]}: unknown key (allowed: {', '.join(sorted(allowed))})")


def _as_int(value, path: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"{path}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ValidationError(f"{path}: must be >= {minimum}, got {value}")
    return value


def _as_float(value, path: str, positive: bool = True) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{path}: expected a number, got {value!r}")
    value = float(value)
    if positive and value <= 0.0:
        raise ValidationError(f"{path}: must be positive, got {value}")
    return value


def _as_str_choice(value, path: str, choices) -> str:
    if not isinstance(value, str):
        raise ValidationError(f"{path}: expected a string, got {value!r}")
    if value not in choices:
        raise ValidationError(
            f"{path}: {value!r} is not one of {', '.join(sorted(choices))}")
    return value


@dataclass
class Rung:
    """One prelimit resolution: particles, scale separation, step size."""

    n_particles: int
    epsilon: float
    dt: float

    def as_dict(self) -> dict:
        return {"n_particles": self.n_particles, "epsilon": self.epsilon,
                "dt": self.dt}


@dataclass
class ExperimentPlan:
    scenario: str
    rungs: list = field(default_factory=list)
    seeds: tuple = DEFAULT_SEEDS
    reference: dict = field(default_factory=lambda: dict(DEFAULT_REFERENCE))
    metrics: tuple = ("w2_ladder",)
    t_end: float = 1.0
    snapshots: int = 11
    rate_basis: int = 6
    threads: int = 1
    out_dir: str = "runs"

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "rungs": [r.as_dict() for r in self.rungs],
            "seeds": list(self.seeds),
            "reference": dict(self.reference),
            "metrics": list(self.metrics),
            "t_end": self.t_end,
            "snapshots": self.snapshots,
            "rate_basis": self.rate_basis,
            "threads": self.threads,
            "out_dir": self.out_dir,
        }


def _check_step(dt: float, t_end: float, path: str):
    steps = t_end / dt
    if abs(steps - round(steps)) > 1e-6 * max(steps, 1.0):
        raise ValidationError(
            f"{path}: dt={dt!r} does not divide the horizon t_end={t_end!r} "
            f"into whole steps")


def _parse_rung(raw, idx: int, t_end: float) -> Rung:
    path = f"plan.rungs[{idx}]"
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: expected an object, got {raw!r}")
    _reject_unknown(raw, ("n_particles", "epsilon", "dt"), path)
    if "n_particles" not in raw or "epsilon" not in raw:
        raise ValidationError(f"{path}: needs n_particles and epsilon")
    n = _as_int(raw["n_particles"], f"{path}.n_particles", minimum=1)
    eps = _as_float(raw["epsilon"], f"{path}.epsilon")
    limit = STIFFNESS_FACTOR * eps * eps
    dt = _as_float(raw["dt"], f"{path}.dt") if "dt" in raw else limit
    if dt > limit * (1 + 1e-12):
        suggested = float(f"{limit:.6g}")
        if suggested > limit:
            suggested = limit
        raise ValidationError(
            f"{path}.dt: dt={dt!r} violates the stiffness rule "
            f"dt <= {STIFFNESS_FACTOR} * epsilon^2 = {limit:.6g}; "
            f"suggested dt: {suggested!r}")
    _check_step(dt, t_end, f"{path}.dt")
    return Rung(n, eps, dt)


def _parse_reference(raw, t_end: float) -> dict:
    path = "plan.reference"
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: expected an object, got {raw!r}")
    _reject_unknown(raw, ("n_particles", "dt", "seed"), path)
    out = dict(DEFAULT_REFERENCE)
    if "n_particles" in raw:
        out["n_particles"] = _as_int(raw["n_particles"], f"{path}.n_particles", 1)
    if "dt" in raw:
        out["dt"] = _as_float(raw["dt"], f"{path}.dt")
    if "seed" in raw:
        out["seed"] = _as_int(raw["seed"], f"{path}.seed", 0)
    _check_step(out["dt"], t_end, f"{path}.dt")
    return out


_PLAN_KEYS = ("scenario", "rungs", "seeds", "reference", "metrics", "t_end",
              "snapshots", "rate_basis", "threads", "out_dir")


def parse_plan(raw: dict) -> ExperimentPlan:
    """Validate a decoded JSON object into an ExperimentPlan."""
    if not isinstance(raw, dict):
        raise ValidationError(f"plan: expected a JSON object, got {raw!r}")
    _reject_unknown(raw, _PLAN_KEYS, "plan")
    if "scenario" not in raw:
        raise ValidationError("plan.scenario: required")
    scenario = _as_str_choice(raw["scenario"], "plan.scenario", scenario_names())

    t_end = _as_float(raw.get("t_end", 1.0), "plan.t_end")
    snapshots = _as_int(raw.get("snapshots", 11), "plan.snapshots", minimum=2)
    rate_basis = _as_int(raw.get("rate_basis", 6), "plan.rate_basis", minimum=2)
    threads = _as_int(raw.get("threads", 1), "plan.threads", minimum=1)

    out_dir = raw.get("out_dir", "runs")
    if not isinstance(out_dir, str) or not out_dir:
        raise ValidationError(f"plan.out_dir: expected a non-empty string, got {out_dir!r}")

    if "rungs" in raw:
        if not isinstance(raw["rungs"], list):
            raise ValidationError(f"plan.rungs: expected a list, got {raw['rungs']!r}")
        rungs = [_parse_rung(r, i, t_end) for i, r in enumerate(raw["rungs"])]
    else:
        rungs = [_parse_rung({"n_particles": n, "epsilon": e}, i, t_end)
                 for i, (n, e) in enumerate(DEFAULT_LADDER)]

    if "seeds" in raw:
        if not isinstance(raw["seeds"], list) or not raw["seeds"]:
            raise ValidationError(
                f"plan.seeds: expected a non-empty list, got {raw['seeds']!r}")
        seeds = tuple(_as_int(s, f"plan.seeds[{i}]", minimum=0)
                      for i, s in enumerate(raw["seeds"]))
        if len(set(seeds)) != len(seeds):
            raise ValidationError("plan.seeds: seeds must be distinct")
    else:
        seeds = DEFAULT_SEEDS

    if "metrics" in raw:
        if not isinstance(raw["metrics"], list):
            raise ValidationError(f"plan.metrics: expected a list, got {raw['metrics']!r}")
        metrics = tuple(_as_str_choice(m, f"plan.metrics[{i}]", KNOWN_METRICS)
                        for i, m in enumerate(raw["metrics"]))
    else:
        metrics = ("w2_ladder",)

    reference = _parse_reference(raw.get("reference", {}), t_end)

    return ExperimentPlan(scenario=scenario, rungs=rungs, seeds=seeds,
                          reference=reference, metrics=metrics, t_end=t_end,
                          snapshots=snapshots, rate_basis=rate_basis,
                          threads=threads, out_dir=out_dir)


def load_plan(path) -> ExperimentPlan:
    """Read and validate a JSON plan file."""
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"plan: invalid JSON in {path}: {exc}") from None
    return parse_plan(raw)
