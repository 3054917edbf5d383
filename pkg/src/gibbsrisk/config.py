"""Experiment configuration: a single versioned JSON document.

Validation is strict: unknown keys are errors, not warnings, because a
silently ignored field could invalidate a bound verification.  Parsing is
total (every field resolved to a concrete value) and serialization emits a
canonical form, so parse -> serialize -> parse is the identity.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError
from .measures import AtomizedMeasure, atomize_density, make_discrete
from .risk import (
    Dataset,
    ProblemSpec,
    linear_01_problem,
    linear_squared_problem,
    table_problem,
    threshold_01_problem,
)
from .datadist import DatasetDistribution
from .sensitivity import GammaGrid

__all__ = ["ExperimentConfig", "load_config", "parse_config"]

SCHEMA_VERSION = 1

PROBLEM_FAMILIES = ("table", "linear-squared", "threshold-01", "linear-01")

KNOWN_CHECKS = (
    "gibbs_optimality",
    "cumulant_derivatives",
    "normalization_stability",
    "monotone_concentration",
    "vanishing_factor_limit",
    "lambda_search",
    "noncoherent_reference",
    "sensitivity_bound",
    "constrained_min_roundtrip",
    "lautum_bounds",
    "determinism",
)


def _require_keys(obj: dict, allowed: set[str], required: set[str], where: str):
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(
            f"unknown key(s) {sorted(unknown)} (allowed: {sorted(allowed)})", where
        )
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"missing required key(s) {sorted(missing)}", where)


def _as_float_list(value, where: str) -> list[float]:
    if not isinstance(value, list) or not value:
        raise ConfigError("expected a nonempty list of numbers", where)
    out = []
    for i, v in enumerate(value):
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ConfigError(f"entry {i} is not a number", where)
        out.append(float(v))
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment description."""

    version: int
    problem: dict
    reference: dict
    dataset: dict
    lambdas: tuple[float, ...]
    deltas: tuple[float, ...]
    epsilons: tuple[float, ...]
    c_values: tuple[float, ...]
    gamma_grid: GammaGrid
    deviation: dict
    seed: int | None
    output_dir: str
    certified_popoviciu: bool
    monte_carlo_samples: int | None
    find_lambda_tol: float
    constrained_min_tol: float
    checks: tuple[str, ...] | None
    fault_injection: dict = field(default_factory=dict)

    # -- builders ------------------------------------------------------------
    def build_reference(self) -> AtomizedMeasure:
        spec = self.reference
        if "atoms" in spec:
            atoms = spec["atoms"]
            return make_discrete(atoms["masses"], atoms["locations"], atoms["kind"])
        dens = spec["density"]
        return atomize_density(
            box=(dens["box"][0], dens["box"][1]),
            cells_per_axis=dens["cells"],
            density=_named_density(dens["name"]),
        )

    def build_problem(self, reference: AtomizedMeasure) -> ProblemSpec:
        family = self.problem["family"]
        if family == "table":
            locations = self.problem.get("locations")
            if locations is None:
                locations = reference.locations
            return table_problem(locations, self.problem["values"])
        if family == "linear-squared":
            return linear_squared_problem()
        if family == "threshold-01":
            return threshold_01_problem()
        return linear_01_problem()

    def build_dataset(self):
        """The configured dataset source: a Dataset or a DatasetDistribution."""
        spec = self.dataset
        if "inline" in spec:
            rows = np.asarray(spec["inline"], dtype=float)
            return Dataset(patterns=rows[:, :-1], labels=rows[:, -1])
        if "csv" in spec:
            return Dataset.from_csv(spec["csv"])
        dist = spec["distribution"]
        support = np.asarray(dist["support"], dtype=float)
        return DatasetDistribution(
            patterns=support[:, :-2],
            labels=support[:, -2],
            probabilities=support[:, -1],
            n=int(dist["n"]),
            enumeration_budget=int(dist.get("enumeration_budget", 1_000_000)),
        )

    # -- serialization ---------------------------------------------------------
    def to_dict(self) -> dict:
        out: dict[str, Any] = {
            "version": self.version,
            "problem": json.loads(json.dumps(self.problem)),
            "reference": json.loads(json.dumps(self.reference)),
            "dataset": json.loads(json.dumps(self.dataset)),
            "lambdas": list(self.lambdas),
            "gamma_grid": {
                "lo": self.gamma_grid.lo,
                "hi": self.gamma_grid.hi,
                "count": self.gamma_grid.count,
            },
            "deviation": json.loads(json.dumps(self.deviation)),
            "output_dir": self.output_dir,
            "certified_popoviciu": self.certified_popoviciu,
            "find_lambda_tol": self.find_lambda_tol,
            "constrained_min_tol": self.constrained_min_tol,
        }
        if self.deltas:
            out["deltas"] = list(self.deltas)
        if self.epsilons:
            out["epsilons"] = list(self.epsilons)
        if self.c_values:
            out["c_values"] = list(self.c_values)
        if self.seed is not None:
            out["seed"] = self.seed
        if self.monte_carlo_samples is not None:
            out["monte_carlo_samples"] = self.monte_carlo_samples
        if self.checks is not None:
            out["checks"] = list(self.checks)
        if self.fault_injection:
            out["fault_injection"] = json.loads(json.dumps(self.fault_injection))
        return out

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _named_density(name: str):
    if name == "uniform":
        return lambda x: 1.0
    if name == "linear":
        return lambda x: float(x[0])
    match = re.fullmatch(r"gaussian\(\s*([-0-9.eE+]+)\s*,\s*([-0-9.eE+]+)\s*\)", name)
    if match:
        mu, sigma = float(match.group(1)), float(match.group(2))
        if sigma <= 0:
            raise ConfigError("gaussian sigma must be positive", "reference.density.name")
        norm = 1.0 / (sigma * math.sqrt(2.0 * math.pi))

        def gaussian(x):
            return float(np.prod(norm * np.exp(-0.5 * ((x - mu) / sigma) ** 2)))

        return gaussian
    raise ConfigError(
        f"unknown density {name!r} (expected 'uniform', 'linear' or "
        f"'gaussian(mu,sigma)')",
        "reference.density.name",
    )


def _parse_problem(obj, where="problem") -> dict:
    if not isinstance(obj, dict):
        raise ConfigError("expected an object", where)
    _require_keys(obj, {"family", "values", "locations"}, {"family"}, where)
    family = obj.get("family")
    if family not in PROBLEM_FAMILIES:
        raise ConfigError(
            f"unknown family {family!r} (one of {PROBLEM_FAMILIES})", f"{where}.family"
        )
    out: dict[str, Any] = {"family": family}
    if family == "table":
        if "values" not in obj:
            raise ConfigError("table problems need 'values'", f"{where}.values")
        out["values"] = _as_float_list(obj["values"], f"{where}.values")
        if "locations" in obj:
            out["locations"] = obj["locations"]
    elif "values" in obj or "locations" in obj:
        raise ConfigError(
            f"family {family!r} takes no parameters", where
        )
    return out


def _parse_reference(obj, where="reference") -> dict:
    if not isinstance(obj, dict):
        raise ConfigError("expected an object", where)
    _require_keys(obj, {"atoms", "density"}, set(), where)
    if ("atoms" in obj) == ("density" in obj):
        raise ConfigError("provide exactly one of 'atoms' or 'density'", where)
    if "atoms" in obj:
        atoms = obj["atoms"]
        _require_keys(
            atoms, {"masses", "locations", "kind"}, {"masses", "locations", "kind"},
            f"{where}.atoms",
        )
        if atoms["kind"] not in ("probability", "counting", "quadrature_truncation"):
            raise ConfigError(
                f"unknown measure kind {atoms['kind']!r}", f"{where}.atoms.kind"
            )
        return {"atoms": atoms}
    dens = obj["density"]
    _require_keys(dens, {"name", "box", "cells"}, {"name", "box", "cells"}, f"{where}.density")
    _named_density(dens["name"])  # validate the name eagerly
    if not (isinstance(dens["box"], list) and len(dens["box"]) == 2):
        raise ConfigError("box must be [lower, upper]", f"{where}.density.box")
    return {"density": dens}


def _parse_dataset(obj, where="dataset") -> dict:
    if not isinstance(obj, dict):
        raise ConfigError("expected an object", where)
    _require_keys(obj, {"inline", "csv", "distribution"}, set(), where)
    sources = [k for k in ("inline", "csv", "distribution") if k in obj]
    if len(sources) != 1:
        raise ConfigError(
            f"exactly one dataset source required, got {sources or 'none'}", where
        )
    if "distribution" in obj:
        dist = obj["distribution"]
        _require_keys(
            dist, {"support", "n", "enumeration_budget"}, {"support", "n"},
            f"{where}.distribution",
        )
    return {sources[0]: obj[sources[0]]}


def _parse_lambdas(obj, where="lambdas") -> tuple[float, ...]:
    if isinstance(obj, list):
        values = _as_float_list(obj, where)
    elif isinstance(obj, dict):
        _require_keys(obj, {"log_range", "count"}, {"log_range", "count"}, where)
        lo, hi = _as_float_list(obj["log_range"], f"{where}.log_range")
        count = obj["count"]
        if not isinstance(count, int) or count < 1:
            raise ConfigError("count must be a positive integer", f"{where}.count")
        values = np.logspace(lo, hi, count).tolist()
    else:
        raise ConfigError("expected a list or a log_range object", where)
    if any(v <= 0 for v in values):
        raise ConfigError("regularization factors must be positive", where)
    return tuple(values)


def _parse_deviation(obj, where="deviation") -> dict:
    if not isinstance(obj, dict):
        raise ConfigError("expected an object", where)
    _require_keys(obj, {"kind", "weights"}, {"kind"}, where)
    if obj["kind"] == "uniform":
        if "weights" in obj:
            raise ConfigError("uniform deviation takes no weights", where)
        return {"kind": "uniform"}
    if obj["kind"] == "weights":
        return {
            "kind": "weights",
            "weights": _as_float_list(obj.get("weights"), f"{where}.weights"),
        }
    raise ConfigError(f"unknown deviation kind {obj['kind']!r}", f"{where}.kind")


def parse_config(obj: dict, source: str = "<config>") -> ExperimentConfig:
    """Validate a raw JSON object into an :class:`ExperimentConfig`."""
    if not isinstance(obj, dict):
        raise ConfigError("top-level config must be an object", source)
    allowed = {
        "version", "problem", "reference", "dataset", "lambdas", "deltas",
        "epsilons", "c_values", "gamma_grid", "deviation", "seed", "output_dir",
        "certified_popoviciu", "monte_carlo_samples", "find_lambda_tol",
        "constrained_min_tol", "checks", "fault_injection",
    }
    _require_keys(obj, allowed, {"version", "problem", "reference", "dataset"}, source)
    if obj["version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema version {obj['version']!r} "
            f"(this tool reads version {SCHEMA_VERSION})",
            "version",
        )

    seed = obj.get("seed")
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool)):
        raise ConfigError("seed must be an integer", "seed")
    mc = obj.get("monte_carlo_samples")
    if mc is not None:
        if not isinstance(mc, int) or mc < 1:
            raise ConfigError("monte_carlo_samples must be a positive integer",
                              "monte_carlo_samples")
        if seed is None:
            raise ConfigError(
                "a seed is mandatory when monte_carlo_samples is set", "seed"
            )

    grid_obj = obj.get("gamma_grid", {"lo": 1e-3, "hi": 1e6, "count": 64})
    _require_keys(grid_obj, {"lo", "hi", "count"}, {"lo", "hi", "count"}, "gamma_grid")
    try:
        gamma_grid = GammaGrid(
            float(grid_obj["lo"]), float(grid_obj["hi"]), int(grid_obj["count"])
        )
    except ValueError as exc:
        raise ConfigError(str(exc), "gamma_grid") from exc

    checks = obj.get("checks")
    if checks is not None:
        if not isinstance(checks, list):
            raise ConfigError("checks must be a list of check names", "checks")
        for name in checks:
            if name not in KNOWN_CHECKS:
                raise ConfigError(
                    f"unknown check {name!r} (known: {list(KNOWN_CHECKS)})", "checks"
                )
        checks = tuple(checks)

    fault = obj.get("fault_injection", {})
    _require_keys(fault, {"b_squared_zero"}, set(), "fault_injection")

    def grid_field(name: str) -> tuple[float, ...]:
        if name not in obj:
            return ()
        return tuple(_as_float_list(obj[name], name))

    deltas = grid_field("deltas")
    epsilons = grid_field("epsilons")
    if any(e <= 0 or e >= 1 for e in epsilons):
        raise ConfigError("epsilons must lie strictly inside (0, 1)", "epsilons")
    if any(d < 0 for d in deltas):
        raise ConfigError("deltas must be nonnegative", "deltas")
    c_values = grid_field("c_values")
    if any(c <= 0 for c in c_values):
        raise ConfigError("c_values must be positive", "c_values")

    find_tol = float(obj.get("find_lambda_tol", 1e-4))
    cmin_tol = float(obj.get("constrained_min_tol", 1e-8))
    if find_tol <= 0 or cmin_tol <= 0:
        raise ConfigError("tolerances must be positive", "find_lambda_tol")

    config = ExperimentConfig(
        version=SCHEMA_VERSION,
        problem=_parse_problem(obj["problem"]),
        reference=_parse_reference(obj["reference"]),
        dataset=_parse_dataset(obj["dataset"]),
        lambdas=_parse_lambdas(obj.get("lambdas", [1.0])),
        deltas=deltas,
        epsilons=epsilons,
        c_values=c_values,
        gamma_grid=gamma_grid,
        deviation=_parse_deviation(obj.get("deviation", {"kind": "uniform"})),
        seed=seed,
        output_dir=str(obj.get("output_dir", "out")),
        certified_popoviciu=bool(obj.get("certified_popoviciu", False)),
        monte_carlo_samples=mc,
        find_lambda_tol=find_tol,
        constrained_min_tol=cmin_tol,
        checks=checks,
        fault_injection=dict(fault),
    )
    # Cross-validate the buildable parts eagerly so errors surface at load time.
    reference = config.build_reference()
    if config.problem["family"] == "table" and "locations" not in config.problem:
        if len(config.problem["values"]) != reference.n_atoms:
            raise ConfigError(
                f"{len(config.problem['values'])} table values for "
                f"{reference.n_atoms} reference atoms",
                "problem.values",
            )
    config.build_dataset()
    return config


def load_config(path: str | Path) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", str(path)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}", str(path)) from exc
    return parse_config(raw, source=str(path))
