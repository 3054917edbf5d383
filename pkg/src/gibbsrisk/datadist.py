"""Product distributions over datasets, the mixture posterior, lautum
information, and the dataset-independent deviation bounds.

Exact enumeration of the dataset space is the default verification path;
seeded Monte Carlo is the fallback when the space is too large, and its
results are labeled statistical rather than certified.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceeded, DimensionMismatch
from .gibbs import expected_risk, gibbs_posterior
from .measures import AtomizedMeasure, MeasureOnAtoms, relative_entropy
from .risk import Dataset, ProblemSpec, risk_table
from .sensitivity import GammaGrid, BSquaredEstimate, popoviciu_bound, tilted_variances

__all__ = [
    "DatasetDistribution",
    "LautumReport",
    "enumerate_datasets",
    "mixture_posterior",
    "lautum_information",
    "global_b_squared",
    "verify_expected_sensitivity_bounds",
]

HOLDS_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class DatasetDistribution:
    """Finite-support per-sample distribution plus an i.i.d. sample count.

    Describes the product law of datasets of ``n`` points, each drawn
    independently from the weighted support.
    """

    patterns: np.ndarray  # (s, d)
    labels: np.ndarray  # (s,)
    probabilities: np.ndarray  # (s,)
    n: int
    enumeration_budget: int = 1_000_000

    def __post_init__(self):
        patterns = np.asarray(self.patterns, dtype=float)
        if patterns.ndim == 1:
            patterns = patterns.reshape(-1, 1)
        labels = np.asarray(self.labels, dtype=float)
        probs = np.asarray(self.probabilities, dtype=float)
        if not (patterns.shape[0] == labels.shape[0] == probs.shape[0]):
            raise DimensionMismatch("support arrays disagree in length")
        if patterns.shape[0] == 0:
            raise ValueError("support must not be empty")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ValueError("support probabilities must be finite and nonnegative")
        if abs(math.fsum(probs.tolist()) - 1.0) > 1e-10:
            raise ValueError("support probabilities must sum to 1")
        if self.n < 1:
            raise ValueError(f"sample count must be positive, got {self.n!r}")
        patterns.setflags(write=False)
        labels.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "patterns", patterns)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "probabilities", probs)

    @property
    def support_size(self) -> int:
        return self.patterns.shape[0]

    def check_ground_truth(self, spec: ProblemSpec, theta_star) -> None:
        """Verify every support point is labeled by the declared true model."""
        theta = np.atleast_1d(np.asarray(theta_star, dtype=float))
        for j in range(self.support_size):
            predicted = float(spec.predictor(theta, self.patterns[j]))
            if predicted != float(self.labels[j]):
                raise ValueError(
                    f"support point {j} has label {self.labels[j]}, but the "
                    f"declared true model predicts {predicted}"
                )

    def dataset_from_indices(self, indices) -> Dataset:
        idx = np.asarray(indices, dtype=int)
        return Dataset(patterns=self.patterns[idx], labels=self.labels[idx])

    def sample_indices(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.choice(self.support_size, size=(count, self.n), p=self.probabilities)

    def __repr__(self) -> str:
        return (
            f"DatasetDistribution(support={self.support_size}, n={self.n})"
        )


def enumerate_datasets(
    dist: DatasetDistribution,
) -> list[tuple[Dataset, float]]:
    """All ordered datasets of the product law with their probabilities.

    Probabilities are accumulated in log space so long datasets do not
    underflow term by term.
    """
    total = dist.support_size**dist.n
    if total > dist.enumeration_budget:
        raise BudgetExceeded(
            f"{total} datasets exceed the enumeration budget "
            f"{dist.enumeration_budget}; use Monte Carlo mode"
        )
    log_p = np.full(dist.support_size, -math.inf)
    positive = dist.probabilities > 0
    log_p[positive] = np.log(dist.probabilities[positive])
    out = []
    for combo in itertools.product(range(dist.support_size), repeat=dist.n):
        log_prob = math.fsum(log_p[list(combo)].tolist())
        prob = math.exp(log_prob) if log_prob > -math.inf else 0.0
        out.append((dist.dataset_from_indices(combo), prob))
    return out


def _per_dataset(
    spec: ProblemSpec,
    reference: AtomizedMeasure,
    dist: DatasetDistribution,
    lam: float,
    monte_carlo_samples: int | None,
    seed: int | None,
):
    """(dataset, probability/weight, risk table, posterior) rows, either the
    exact enumeration or a seeded equal-weight sample."""
    if monte_carlo_samples is None:
        pairs = enumerate_datasets(dist)
    else:
        if seed is None:
            raise ValueError("Monte Carlo mode requires a seed")
        rng = np.random.default_rng(seed)
        indices = dist.sample_indices(rng, monte_carlo_samples)
        weight = 1.0 / monte_carlo_samples
        pairs = [(dist.dataset_from_indices(row), weight) for row in indices]
    rows = []
    for z, prob in pairs:
        table = risk_table(spec, reference, z)
        rows.append((z, prob, table, gibbs_posterior(reference, table, lam)))
    return rows


def mixture_posterior(
    spec: ProblemSpec,
    reference: AtomizedMeasure,
    dist: DatasetDistribution,
    lam: float,
    monte_carlo_samples: int | None = None,
    seed: int | None = None,
) -> MeasureOnAtoms:
    """Dataset-probability-weighted average of the per-dataset posteriors."""
    rows = _per_dataset(spec, reference, dist, lam, monte_carlo_samples, seed)
    mix = np.zeros(reference.n_atoms)
    for _, prob, _, posterior in rows:
        mix += prob * posterior.probs
    return MeasureOnAtoms.probability(reference, mix)


def lautum_information(
    spec: ProblemSpec,
    reference: AtomizedMeasure,
    dist: DatasetDistribution,
    lam: float,
    monte_carlo_samples: int | None = None,
    seed: int | None = None,
) -> float:
    """Expected divergence of the mixture from each conditional posterior.

    The mixture sits in the first argument, the reverse of the mutual
    information orientation.
    """
    rows = _per_dataset(spec, reference, dist, lam, monte_carlo_samples, seed)
    mix = np.zeros(reference.n_atoms)
    for _, prob, _, posterior in rows:
        mix += prob * posterior.probs
    marginal = MeasureOnAtoms.probability(reference, mix)
    return math.fsum(
        prob * relative_entropy(marginal, posterior)
        for _, prob, _, posterior in rows
        if prob > 0
    )


def global_b_squared(
    spec: ProblemSpec,
    reference: AtomizedMeasure,
    dist: DatasetDistribution,
    gamma_grid: GammaGrid | None = None,
    monte_carlo_samples: int | None = None,
    seed: int | None = None,
) -> BSquaredEstimate:
    """Largest per-dataset variance supremum across the dataset space."""
    grid = gamma_grid or GammaGrid()
    gammas = grid.values()
    if monte_carlo_samples is None:
        pairs = enumerate_datasets(dist)
    else:
        if seed is None:
            raise ValueError("Monte Carlo mode requires a seed")
        rng = np.random.default_rng(seed)
        indices = dist.sample_indices(rng, monte_carlo_samples)
        pairs = [(dist.dataset_from_indices(row), None) for row in indices]
    best_sup, best_gamma, best_pop = 0.0, float(gammas[0]), 0.0
    for z, _ in pairs:
        table = risk_table(spec, reference, z)
        variances = tilted_variances(reference, table, gammas)
        i = int(np.argmax(variances))
        if variances[i] > best_sup:
            best_sup, best_gamma = float(variances[i]), float(gammas[i])
        best_pop = max(best_pop, popoviciu_bound(reference, table))
    return BSquaredEstimate(
        grid_sup=best_sup, argmax_gamma=best_gamma, popoviciu=best_pop, grid=grid
    )


@dataclass(frozen=True)
class LautumReport:
    """Expected-deviation bound check against the dataset distribution.

    ``lhs`` is the expected absolute deviation of the mixture posterior;
    ``rhs_thm`` bounds it through the global variance constant and the
    lautum information; ``rhs_per_dataset`` bounds it dataset by dataset.
    The two right-hand sides are not ordered relative to each other, so
    ``holds`` refers to the global form only.
    """

    lautum: float
    b_squared_global: float
    b_squared_global_popoviciu: float
    lhs: float
    rhs_thm: float
    rhs_per_dataset: float
    holds: bool
    mode: str
    seed: int | None
    samples: int | None


def verify_expected_sensitivity_bounds(
    spec: ProblemSpec,
    reference: AtomizedMeasure,
    dist: DatasetDistribution,
    lam: float,
    gamma_grid: GammaGrid | None = None,
    monte_carlo_samples: int | None = None,
    seed: int | None = None,
) -> LautumReport:
    """Check the expected absolute deviation of the mixture posterior against
    both the per-dataset and the lautum-information bounds."""
    grid = gamma_grid or GammaGrid()
    gammas = grid.values()
    rows = _per_dataset(spec, reference, dist, lam, monte_carlo_samples, seed)

    mix = np.zeros(reference.n_atoms)
    for _, prob, _, posterior in rows:
        mix += prob * posterior.probs
    marginal = MeasureOnAtoms.probability(reference, mix)

    lhs_terms, rhs_terms, lautum_terms = [], [], []
    b2_global, b2_global_pop = 0.0, 0.0
    for _, prob, table, posterior in rows:
        variances = tilted_variances(reference, table, gammas)
        b2_z = float(np.max(variances))
        b2_global = max(b2_global, b2_z)
        b2_global_pop = max(b2_global_pop, popoviciu_bound(reference, table))
        if prob <= 0:
            continue
        deviation = expected_risk(marginal, table) - expected_risk(posterior, table)
        kl = relative_entropy(marginal, posterior)
        lhs_terms.append(prob * abs(deviation))
        rhs_terms.append(prob * math.sqrt(2.0 * b2_z * kl))
        lautum_terms.append(prob * kl)

    lautum = math.fsum(lautum_terms)
    lhs = math.fsum(lhs_terms)
    rhs_thm = math.sqrt(2.0 * b2_global * lautum)
    return LautumReport(
        lautum=lautum,
        b_squared_global=b2_global,
        b_squared_global_popoviciu=b2_global_pop,
        lhs=lhs,
        rhs_thm=rhs_thm,
        rhs_per_dataset=math.fsum(rhs_terms),
        holds=lhs <= rhs_thm + HOLDS_SLACK,
        mode="exact_enumeration" if monte_carlo_samples is None else "monte_carlo",
        seed=seed,
        samples=monte_carlo_samples,
    )
