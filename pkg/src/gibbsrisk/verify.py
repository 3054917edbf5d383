"""Named verification checks behind the ``verify`` subcommand.

Each check replays one of the package's mathematical guarantees on a seeded
random corpus at desk scale and reports pass/fail.  Derivative identities
are checked against an extended-precision finite-difference oracle that
shares nothing with the float64 moment path.  A fault-injection flag can
force the variance constant to zero, which must make the deviation-bound
check fail; that negative control proves the harness can actually reject.
"""
from __future__ import annotations

import math
import shutil
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import mpmath as mp
import numpy as np

from .config import ExperimentConfig, KNOWN_CHECKS, parse_config
from .datadist import DatasetDistribution, lautum_information, mixture_posterior, verify_expected_sensitivity_bounds
from .errors import ConfigError
from .gibbs import cumulant, erm_rer_objective, gibbs_posterior, log_partition
from .measures import AtomizedMeasure, MeasureOnAtoms, make_discrete, relative_entropy
from .optimality import (
    NotAchievable,
    check_delta_eps,
    classify_reference,
    delta_star,
    find_lambda,
    sublevel_probability,
)
from .risk import RiskTable, linear_01_problem
from .runners import fmt, run_gibbs, write_manifest, _write_csv, _write_json
from .sensitivity import GammaGrid, b_squared, certify_bound, constrained_min, minimal_risk_conditional

__all__ = ["CheckResult", "run_verify", "fd_log_partition_derivative"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


# ---------------------------------------------------------------------------
# Independent oracles
# ---------------------------------------------------------------------------

def fd_log_partition_derivative(
    masses: np.ndarray, risks: np.ndarray, t: float, order: int, dps: int = 40
) -> float:
    """Central finite difference of the log-partition function at ``t``.

    Evaluated in extended precision so the step is the only error source;
    the step follows the convention h = 1e-5 * max(1, |t|).
    """
    with mp.workdps(dps):
        ms = [mp.mpf(m) for m in masses.tolist()]
        rs = [mp.mpf(r) for r in risks.tolist()]

        def k(tt):
            return mp.log(mp.fsum(m * mp.e**(tt * r) for m, r in zip(ms, rs) if m > 0))

        h = mp.mpf("1e-5") * max(1, abs(mp.mpf(t)))
        t0 = mp.mpf(t)
        if order == 1:
            return float((k(t0 + h) - k(t0 - h)) / (2 * h))
        if order == 2:
            return float((k(t0 + h) - 2 * k(t0) + k(t0 - h)) / h**2)
        raise ValueError(f"order must be 1 or 2, got {order!r}")


def random_instance(
    rng: np.random.Generator,
    min_atoms: int = 2,
    max_atoms: int = 50,
    max_risk: float = 10.0,
    zero_min_risk: bool = False,
) -> tuple[AtomizedMeasure, RiskTable]:
    """A random reference with positive masses and a synthetic risk table."""
    n = int(rng.integers(min_atoms, max_atoms + 1))
    locations = rng.normal(size=(n, 1))
    masses = rng.uniform(0.2, 1.0, size=n)
    masses /= masses.sum()
    reference = make_discrete(masses, locations, "probability")
    risks = rng.uniform(0.0, max_risk, size=n)
    if zero_min_risk:
        risks[int(rng.integers(n))] = 0.0
    table = RiskTable(base=reference, risks=risks, dataset_id="synthetic")
    return reference, table


def random_small_distribution_instance(rng: np.random.Generator):
    """Random finite-support dataset law plus a pointwise loss table problem."""
    support = int(rng.integers(1, 5))
    n = int(rng.integers(1, 5))
    atoms = int(rng.integers(2, 7))
    probs = rng.dirichlet(np.ones(support))
    dist = DatasetDistribution(
        patterns=np.arange(support, dtype=float).reshape(-1, 1),
        labels=np.zeros(support),
        probabilities=probs,
        n=n,
    )
    loss_matrix = rng.uniform(0.0, 4.0, size=(atoms, support))
    locations = np.arange(atoms, dtype=float).reshape(-1, 1)
    masses = rng.dirichlet(np.ones(atoms))
    reference = make_discrete(masses, locations, "probability")

    from .risk import Dataset, ProblemSpec

    def batch(thetas: np.ndarray, z: Dataset) -> np.ndarray:
        atom_idx = np.rint(thetas[:, 0]).astype(int)
        point_idx = np.rint(z.patterns[:, 0]).astype(int)
        return loss_matrix[np.ix_(atom_idx, point_idx)].mean(axis=1)

    spec = ProblemSpec(
        name="loss-matrix",
        predictor=lambda theta, x: float(
            loss_matrix[int(round(theta[0])), int(round(x[0]))]
        ),
        loss=lambda yhat, y: abs(yhat - y),
        batch_risks=batch,
    )
    return spec, reference, dist


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------

def _check_gibbs_optimality(ctx) -> CheckResult:
    rng = np.random.default_rng(ctx.seed)
    worst_gap, worst_identity = math.inf, 0.0
    for _ in range(ctx.scale(80)):
        reference, table = random_instance(rng)
        lam = 10.0 ** rng.uniform(-2, 2)
        posterior = gibbs_posterior(reference, table, lam)
        best = erm_rer_objective(posterior.as_measure(), reference, table, lam)
        worst_identity = max(
            worst_identity,
            abs(best + lam * log_partition(reference, table, -1.0 / lam)),
        )
        for candidate in rng.dirichlet(np.ones(reference.n_atoms), size=20):
            other = MeasureOnAtoms.probability(reference, candidate)
            gap = erm_rer_objective(other, reference, table, lam) - best
            worst_gap = min(worst_gap, gap)
    passed = worst_gap >= -1e-12 and worst_identity <= 1e-9
    return CheckResult(
        "gibbs_optimality", passed,
        f"worst perturbation gap {worst_gap:.3e} (>= -1e-12), "
        f"worst free-energy residual {worst_identity:.3e} (<= 1e-9)",
    )


def _check_cumulant_derivatives(ctx) -> CheckResult:
    rng = np.random.default_rng(ctx.seed + 1)
    worst = 0.0
    nonneg = True
    for _ in range(ctx.scale(40)):
        reference, table = random_instance(rng)
        lam = 10.0 ** rng.uniform(-2, 2)
        posterior = gibbs_posterior(reference, table, lam)
        t = -1.0 / lam
        for order in (1, 2):
            exact = cumulant(posterior, order)
            approx = fd_log_partition_derivative(
                reference.masses, table.risks, t, order
            )
            worst = max(worst, abs(approx - exact) / abs(exact))
        nonneg = nonneg and cumulant(posterior, 2) >= 0.0
    passed = worst <= 1e-5 and nonneg
    return CheckResult(
        "cumulant_derivatives", passed,
        f"worst relative finite-difference mismatch {worst:.3e} (<= 1e-5), "
        f"second cumulant nonnegative: {nonneg}",
    )


def _check_normalization_stability(ctx) -> CheckResult:
    rng = np.random.default_rng(ctx.seed + 2)
    worst = 0.0
    for lam in (1e-6, 1e-3, 1.0, 1e3, 1e6):
        n = ctx.scale(10_000)
        masses = rng.uniform(0.1, 1.0, size=n)
        reference = make_discrete(masses, rng.normal(size=(n, 1)), "counting")
        table = RiskTable(
            base=reference, risks=rng.uniform(0, 1e3, size=n), dataset_id="s"
        )
        posterior = gibbs_posterior(reference, table, lam)
        worst = max(worst, abs(math.fsum(posterior.probs.tolist()) - 1.0))
    passed = worst <= 1e-10
    return CheckResult(
        "normalization_stability", passed,
        f"worst |sum(probs) - 1| = {worst:.3e} (<= 1e-10)",
    )


def _check_monotone_concentration(ctx) -> CheckResult:
    rng = np.random.default_rng(ctx.seed + 3)
    worst = 0.0
    for _ in range(ctx.scale(40)):
        reference, table = random_instance(rng, max_atoms=20)
        delta = float(rng.uniform(0, table.risks.max()))
        lams = np.logspace(-3, 3, 16)
        probs = [
            sublevel_probability(gibbs_posterior(reference, table, lam), table, delta)
            for lam in lams
        ]
        increases = max(
            (probs[i + 1] - probs[i] for i in range(len(probs) - 1)), default=0.0
        )
        worst = max(worst, increases)
    passed = worst <= 1e-12
    return CheckResult(
        "monotone_concentration", passed,
        f"worst sub-level probability increase along growing factors "
        f"{worst:.3e} (<= 1e-12)",
    )


def _check_vanishing_factor_limit(ctx) -> CheckResult:
    rng = np.random.default_rng(ctx.seed + 4)
    worst = 0.0
    for _ in range(ctx.scale(40)):
        reference, table = random_instance(rng, max_atoms=20)
        ds = delta_star(reference, table)
        delta = ds + float(rng.uniform(0.05, 1.0))
        p = sublevel_probability(gibbs_posterior(reference, table, 1e-6), table, delta)
        worst = max(worst, 1.0 - p)
    passed = worst <= 1e-3
    return CheckResult(
        "vanishing_factor_limit", passed,
        f"worst shortfall of the vanishing-factor sub-level probability "
        f"{worst:.3e} (<= 1e-3)",
    )


def _t3():
    reference = make_discrete([1 / 3, 1 / 3, 1 / 3], [[0.0], [1.0], [2.0]],
                              "probability")
    table = RiskTable(base=reference, risks=[0.0, 1.0, 2.0], dataset_id="t3")
    return reference, table


def _check_lambda_search(ctx) -> CheckResult:
    rng = np.random.default_rng(ctx.seed + 5)
    failures = []
    for _ in range(ctx.scale(30)):
        reference, table = random_instance(rng, max_atoms=20, zero_min_risk=True)
        delta = float(rng.uniform(0.05, table.risks.max()))
        eps = float(rng.uniform(0.05, 0.95))
        lam = find_lambda(reference, table, delta, eps)
        if isinstance(lam, NotAchievable):
            failures.append(f"unexpected NotAchievable at delta={delta}")
            continue
        report = check_delta_eps(
            gibbs_posterior(reference, table, lam), table, delta, eps
        )
        if not report.achieved:
            failures.append(f"returned factor {lam} does not achieve")
    reference, table = _t3()
    lam = find_lambda(reference, table, 0.5, 0.2)
    p0 = 1.0 / (1.0 + math.exp(-1.0 / lam) + math.exp(-2.0 / lam))
    if not p0 > 0.8:
        failures.append(f"canonical three-atom search returned {lam}, p0={p0}")
    passed = not failures
    return CheckResult(
        "lambda_search", passed,
        "; ".join(failures) if failures else
        f"random searches achieve; canonical factor {lam:.6g} gives p0={p0:.6f} > 0.8",
    )


def _check_noncoherent_reference(ctx) -> CheckResult:
    reference = make_discrete([0.0, 0.5, 0.5], [[0.0], [1.0], [2.0]], "probability")
    table = RiskTable(base=reference, risks=[0.0, 1.0, 2.0], dataset_id="t3nc")
    ds = delta_star(reference, table)
    coherent, consistent = classify_reference(reference, table)
    zero_probs = [
        gibbs_posterior(reference, table, lam).probs[0]
        for lam in (1e-4, 0.1, 1.0, 10.0, 1e4)
    ]
    result = find_lambda(reference, table, 0.5, 0.1)
    passed = (
        ds == 1.0
        and not coherent and consistent
        and all(p == 0.0 for p in zero_probs)
        and isinstance(result, NotAchievable)
        and result.limiting_probability == 0.0
    )
    return CheckResult(
        "noncoherent_reference", passed,
        f"delta_star={ds}, coherent={coherent}, zero-risk atom probability "
        f"stays 0, search -> {type(result).__name__}",
    )


def _check_sensitivity_bound(ctx) -> CheckResult:
    rng = np.random.default_rng(ctx.seed + 6)
    violations = 0
    count = ctx.scale(500)
    for _ in range(count):
        reference, table = random_instance(rng)
        lam = 10.0 ** rng.uniform(-2, 2)
        deviation = MeasureOnAtoms.probability(
            reference, rng.dirichlet(np.ones(reference.n_atoms))
        )
        posterior = gibbs_posterior(reference, table, lam)
        from .gibbs import expected_risk

        s = expected_risk(deviation, table) - expected_risk(posterior, table)
        kl = relative_entropy(deviation, posterior)
        b2 = 0.0 if ctx.fault_b2_zero else b_squared(reference, table).popoviciu
        if not abs(s) <= math.sqrt(2 * b2 * kl) + 1e-9:
            violations += 1
    reference, table = _t3()
    uniform = MeasureOnAtoms.probability(reference, [1, 1, 1])
    report = certify_bound(reference, table, 1.0, uniform)
    canonical_ok = (
        abs(report.sensitivity - 0.5752103826044415) <= 1e-4
        and abs(report.bound_grid - 0.6418656928840238) <= 1e-4
        and report.holds_grid and report.holds_popoviciu
    )
    two_sided_ok = (
        report.sensitivity >= -report.bound_grid - 1e-9
        and report.sensitivity <= report.bound_grid + 1e-9
    ) == (abs(report.sensitivity) <= report.bound_grid + 1e-9)
    passed = violations == 0 and canonical_ok and two_sided_ok
    return CheckResult(
        "sensitivity_bound", passed,
        f"{violations}/{count} range-cap violations; canonical deviation "
        f"{report.sensitivity:.6f} <= {report.bound_grid:.6f}: {canonical_ok}",
    )


def _check_constrained_min_roundtrip(ctx) -> CheckResult:
    rng = np.random.default_rng(ctx.seed + 7)
    worst = 0.0
    probe_failures = 0
    for _ in range(ctx.scale(30)):
        reference, table = random_instance(rng, max_atoms=20)
        lam = 10.0 ** rng.uniform(-1, 1)
        omega = lam * float(rng.uniform(0.05, 0.95))
        anchor = gibbs_posterior(reference, table, lam)
        target = gibbs_posterior(reference, table, omega)
        c = relative_entropy(target, anchor)
        if c <= 0:
            continue
        result = constrained_min(reference, table, lam, c)
        worst = max(worst, abs(result.omega - omega) / omega)
        # feasible probes must not beat the returned risk
        for _ in range(20):
            raw = MeasureOnAtoms.probability(
                reference, rng.dirichlet(np.ones(reference.n_atoms))
            )
            d = relative_entropy(raw, anchor)
            scale = min(1.0, 0.9 * c / d) if d > 0 else 1.0
            mixed = MeasureOnAtoms.probability(
                reference, (1 - scale) * anchor.probs + scale * raw.weights
            )
            if relative_entropy(mixed, anchor) <= c:
                from .gibbs import expected_risk

                if expected_risk(mixed, table) < result.expected_risk - 1e-9:
                    probe_failures += 1
    passed = worst <= 1e-3 and probe_failures == 0
    return CheckResult(
        "constrained_min_roundtrip", passed,
        f"worst relative factor recovery error {worst:.3e} (<= 1e-3); "
        f"{probe_failures} feasible probes beat the minimizer",
    )


def _check_lautum_bounds(ctx) -> CheckResult:
    rng = np.random.default_rng(ctx.seed + 8)
    failures = []
    for _ in range(ctx.scale(60)):
        spec, reference, dist = random_small_distribution_instance(rng)
        lam = 10.0 ** rng.uniform(-1, 1)
        report = verify_expected_sensitivity_bounds(spec, reference, dist, lam)
        if report.lautum < 0:
            failures.append("negative lautum value")
        if not report.holds:
            failures.append(f"global bound fails: {report.lhs} > {report.rhs_thm}")
        if not report.lhs <= report.rhs_per_dataset + 1e-9:
            failures.append("per-dataset bound fails")
        mix = mixture_posterior(spec, reference, dist, lam)
        if abs(math.fsum(mix.weights.tolist()) - 1.0) > 1e-10:
            failures.append("mixture not normalized")
    spec = linear_01_problem()
    reference = make_discrete([0.5, 0.5], [[0.0], [1.0]], "probability")
    dist = DatasetDistribution(
        patterns=[[0.0], [1.0]], labels=[0.0, 1.0], probabilities=[0.5, 0.5], n=1
    )
    value = lautum_information(spec, reference, dist, 1.0)
    report = verify_expected_sensitivity_bounds(spec, reference, dist, 1.0)
    if abs(value - 0.02922938845710442) > 1e-4:
        failures.append(f"canonical lautum {value}")
    if abs(report.lhs - 0.057764644657501224) > 1e-4 or not report.holds:
        failures.append(f"canonical lhs {report.lhs}")
    passed = not failures
    return CheckResult(
        "lautum_bounds", passed,
        "; ".join(sorted(set(failures))) if failures else
        f"bounds hold on the random corpus; canonical lautum={value:.6f}",
    )


def _check_determinism(ctx) -> CheckResult:
    base = {
        "version": 1,
        "problem": {"family": "table", "values": [0.0, 1.0, 2.0]},
        "reference": {"atoms": {
            "masses": [1 / 3, 1 / 3, 1 / 3],
            "locations": [[0.0], [1.0], [2.0]],
            "kind": "probability",
        }},
        "dataset": {"inline": [[0.0, 0.0]]},
        "lambdas": [0.5, 1.0],
        "seed": ctx.seed,
    }
    config = parse_config(base)
    first, second = ctx.out_dir / "det_a", ctx.out_dir / "det_b"
    for directory in (first, second):
        if directory.exists():
            shutil.rmtree(directory)
        run_gibbs(config, directory, ctx.seed)
    diffs = []
    for path in sorted(first.iterdir()):
        if path.name == "manifest.json":  # carries wall time by design
            continue
        if path.read_bytes() != (second / path.name).read_bytes():
            diffs.append(path.name)
    passed = not diffs
    return CheckResult(
        "determinism", passed,
        f"byte-identical reruns over {sum(1 for _ in first.iterdir()) - 1} "
        f"data files" if passed else f"differing files: {diffs}",
    )


CHECKS: dict[str, Callable] = {
    "gibbs_optimality": _check_gibbs_optimality,
    "cumulant_derivatives": _check_cumulant_derivatives,
    "normalization_stability": _check_normalization_stability,
    "monotone_concentration": _check_monotone_concentration,
    "vanishing_factor_limit": _check_vanishing_factor_limit,
    "lambda_search": _check_lambda_search,
    "noncoherent_reference": _check_noncoherent_reference,
    "sensitivity_bound": _check_sensitivity_bound,
    "constrained_min_roundtrip": _check_constrained_min_roundtrip,
    "lautum_bounds": _check_lautum_bounds,
    "determinism": _check_determinism,
}

assert set(CHECKS) == set(KNOWN_CHECKS)


@dataclass
class _Context:
    seed: int
    out_dir: Path
    fault_b2_zero: bool
    scale_factor: float = 1.0

    def scale(self, n: int) -> int:
        return max(1, int(n * self.scale_factor))


def run_verify(config: ExperimentConfig, out_dir: Path, seed: int | None) -> int:
    """Run the selected checks, write a machine-readable report, and return
    a process exit code (0 all pass, 1 any failure)."""
    started = time.monotonic()
    out_dir.mkdir(parents=True, exist_ok=True)
    effective_seed = seed if seed is not None else config.seed
    if effective_seed is None:
        raise ConfigError("verification runs a stochastic corpus; set a seed", "seed")

    selected = list(config.checks) if config.checks is not None else list(CHECKS)
    results: list[CheckResult] = []
    if not selected:
        print("[verify] warning: empty check selection, nothing to do")
    ctx = _Context(
        seed=effective_seed,
        out_dir=out_dir,
        fault_b2_zero=bool(config.fault_injection.get("b_squared_zero", False)),
    )
    for name in selected:
        results.append(CHECKS[name](ctx))
        status = "ok" if results[-1].passed else "FAIL"
        print(f"[{status}] {name}: {results[-1].detail}")

    _write_json(out_dir / "verify_report.json", {
        "checks": [
            {"name": r.name, "passed": r.passed, "detail": r.detail}
            for r in results
        ],
        "passed": all(r.passed for r in results),
    })
    _write_csv(
        out_dir / "verify_report.csv",
        ["check", "passed", "detail"],
        [[r.name, r.passed, r.detail] for r in results],
    )
    write_manifest(out_dir, "verify", config, seed, started)
    return 0 if all(r.passed for r in results) else 1
