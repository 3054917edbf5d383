"""Experiment runners behind the CLI subcommands.

Each runner is a pure function of (config, output directory, seed override):
identical inputs produce byte-identical data files.  Floats are written with
17 significant digits so report margins survive a round trip through text.
The manifest is the one exception to byte-stability since it records wall
time; it is written last and excluded from determinism comparisons.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .datadist import DatasetDistribution, enumerate_datasets, verify_expected_sensitivity_bounds
from .errors import ConfigError
from .gibbs import cumulant, erm_rer_objective, gibbs_posterior
from .measures import AtomizedMeasure, MeasureOnAtoms
from .optimality import NotAchievable, lambda_search_report
from .risk import Dataset, risk_table
from .sensitivity import certify_bound, constrained_min

__all__ = [
    "run_gibbs",
    "run_lambda_search",
    "run_sensitivity",
    "run_constrained_min",
    "run_lautum",
    "write_manifest",
]


def fmt(value) -> str:
    """Full-precision text form for CSV cells; booleans as 0/1."""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return ""
    v = float(value)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.17g}"


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _assemble(config: ExperimentConfig):
    reference = config.build_reference()
    problem = config.build_problem(reference)
    source = config.build_dataset()
    return reference, problem, source


def _dataset_cells(config: ExperimentConfig, source) -> list[tuple[Dataset, float | None]]:
    """Concrete datasets to run over: a single configured dataset, or the
    enumerated support of a dataset distribution."""
    if isinstance(source, Dataset):
        return [(source, None)]
    return enumerate_datasets(source)


def _deviation_measure(config: ExperimentConfig, reference: AtomizedMeasure) -> MeasureOnAtoms:
    dev = config.deviation
    if dev["kind"] == "uniform":
        weights = (reference.masses > 0).astype(float)
        return MeasureOnAtoms.probability(reference, weights)
    weights = np.asarray(dev["weights"], dtype=float)
    if weights.shape[0] != reference.n_atoms:
        raise ConfigError(
            f"{weights.shape[0]} deviation weights for {reference.n_atoms} atoms",
            "deviation.weights",
        )
    return MeasureOnAtoms.probability(reference, weights)


def write_manifest(out_dir: Path, command: str, config: ExperimentConfig,
                   seed: int | None, started: float) -> None:
    payload = {
        "command": command,
        "config_sha256": hashlib.sha256(
            config.canonical_json().encode()
        ).hexdigest(),
        "seed": seed,
        "tool_version": __version__,
        "wall_time_s": time.monotonic() - started,
    }
    _write_json(out_dir / "manifest.json", payload)


def run_gibbs(config: ExperimentConfig, out_dir: Path, seed: int | None) -> int:
    """Posterior dump per (dataset, factor) cell plus a summary of the
    log-normalizer, the first three cumulants, and the objective value."""
    started = time.monotonic()
    out_dir.mkdir(parents=True, exist_ok=True)
    reference, problem, source = _assemble(config)
    cells = _dataset_cells(config, source)
    for di, (z, prob_z) in enumerate(cells):
        table = risk_table(problem, reference, z)
        for li, lam in enumerate(config.lambdas):
            posterior = gibbs_posterior(reference, table, lam)
            rows = [
                [i, *reference.locations[i].tolist(), reference.masses[i],
                 table.risks[i], posterior.probs[i]]
                for i in range(reference.n_atoms)
            ]
            header = ["atom_id"] + [f"loc_{k}" for k in range(reference.dim)] + [
                "mass", "risk", "prob"]
            _write_csv(out_dir / f"posterior_d{di:03d}_l{li:03d}.csv", header, rows)
            summary = {
                "cumulant_mean": cumulant(posterior, 1),
                "cumulant_second": cumulant(posterior, 2),
                "cumulant_third": cumulant(posterior, 3),
                "dataset_id": table.dataset_id,
                "dataset_probability": prob_z,
                "lambda": lam,
                "log_normalizer": posterior.log_normalizer,
                "n_atoms": reference.n_atoms,
                "objective": erm_rer_objective(
                    posterior.as_measure(), reference, table, lam
                ),
            }
            _write_json(out_dir / f"summary_d{di:03d}_l{li:03d}.json", summary)
    write_manifest(out_dir, "gibbs", config, seed, started)
    return 0


def run_lambda_search(config: ExperimentConfig, out_dir: Path, seed: int | None) -> int:
    started = time.monotonic()
    out_dir.mkdir(parents=True, exist_ok=True)
    reference, problem, source = _assemble(config)
    if not config.deltas or not config.epsilons:
        raise ConfigError("lambda-search needs nonempty 'deltas' and 'epsilons'",
                          "deltas")
    rows = []
    for di, (z, _) in enumerate(_dataset_cells(config, source)):
        table = risk_table(problem, reference, z)
        for delta in config.deltas:
            for eps in config.epsilons:
                result, report = lambda_search_report(
                    reference, table, delta, eps, tol=config.find_lambda_tol
                )
                not_achievable = isinstance(result, NotAchievable)
                rows.append([
                    di, delta, eps,
                    math.nan if not_achievable else result,
                    report.achieved, report.sublevel_prob, report.delta_star,
                    report.coherent, report.consistent, report.iterations,
                    not_achievable,
                    result.limiting_probability if not_achievable else math.nan,
                ])
    _write_csv(
        out_dir / "lambda_search.csv",
        ["dataset", "delta", "epsilon", "lambda", "achieved", "sublevel_prob",
         "delta_star", "coherent", "consistent", "iterations",
         "not_achievable", "limiting_probability"],
        rows,
    )
    write_manifest(out_dir, "lambda-search", config, seed, started)
    return 0


def run_sensitivity(config: ExperimentConfig, out_dir: Path, seed: int | None) -> int:
    started = time.monotonic()
    out_dir.mkdir(parents=True, exist_ok=True)
    reference, problem, source = _assemble(config)
    deviation = _deviation_measure(config, reference)
    rows = []
    for di, (z, _) in enumerate(_dataset_cells(config, source)):
        table = risk_table(problem, reference, z)
        for lam in config.lambdas:
            report = certify_bound(
                reference, table, lam, deviation,
                gamma_grid=config.gamma_grid,
                certified_popoviciu=config.certified_popoviciu,
            )
            rows.append([
                table.dataset_id, lam, report.sensitivity, report.kl_to_gibbs,
                report.b_squared_grid, report.b_squared_popoviciu,
                report.bound, report.holds,
            ])
    _write_csv(
        out_dir / "sensitivity.csv",
        ["instance_id", "lambda", "sensitivity", "kl", "b2_grid",
         "b2_popoviciu", "bound", "holds"],
        rows,
    )
    write_manifest(out_dir, "sensitivity", config, seed, started)
    return 0


def run_constrained_min(config: ExperimentConfig, out_dir: Path, seed: int | None) -> int:
    started = time.monotonic()
    out_dir.mkdir(parents=True, exist_ok=True)
    reference, problem, source = _assemble(config)
    if not config.c_values:
        raise ConfigError("constrained-min needs a nonempty 'c_values'", "c_values")
    rows = []
    for di, (z, _) in enumerate(_dataset_cells(config, source)):
        table = risk_table(problem, reference, z)
        for lam in config.lambdas:
            for c in config.c_values:
                result = constrained_min(
                    reference, table, lam, c, tol=config.constrained_min_tol
                )
                rows.append([
                    table.dataset_id, lam, c, result.omega, result.kl_to_anchor,
                    result.expected_risk, result.saturated, result.iterations,
                ])
    _write_csv(
        out_dir / "constrained_min.csv",
        ["instance_id", "lambda", "c", "omega", "kl", "expected_risk",
         "saturated", "iterations"],
        rows,
    )
    write_manifest(out_dir, "constrained-min", config, seed, started)
    return 0


def run_lautum(config: ExperimentConfig, out_dir: Path, seed: int | None) -> int:
    started = time.monotonic()
    out_dir.mkdir(parents=True, exist_ok=True)
    reference, problem, source = _assemble(config)
    if not isinstance(source, DatasetDistribution):
        raise ConfigError(
            "the lautum subcommand needs a 'distribution' dataset source",
            "dataset",
        )
    effective_seed = seed if seed is not None else config.seed
    if config.monte_carlo_samples is not None and effective_seed is None:
        raise ConfigError("Monte Carlo mode requires a seed", "seed")
    rows = []
    for lam in config.lambdas:
        report = verify_expected_sensitivity_bounds(
            problem, reference, source, lam,
            gamma_grid=config.gamma_grid,
            monte_carlo_samples=config.monte_carlo_samples,
            seed=effective_seed,
        )
        rows.append([
            lam, report.lautum, report.b_squared_global, report.lhs,
            report.rhs_per_dataset, report.rhs_thm, report.holds,
            report.mode, report.seed, report.samples,
        ])
    _write_csv(
        out_dir / "lautum.csv",
        ["lambda", "lautum", "b2_global", "lhs", "rhs_cor2", "rhs_thm4",
         "holds", "mode", "seed", "samples"],
        rows,
    )
    write_manifest(out_dir, "lautum", config, seed, started)
    return 0
