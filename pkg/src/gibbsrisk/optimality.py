"""Reference classification, sub-level-set probabilities, and the search for
a regularization factor that concentrates the posterior on low-risk models.

A posterior is (delta, eps)-good when it puts probability strictly above
1 - eps on the atoms whose risk is at most delta.  Shrinking the
regularization factor tilts the posterior monotonically toward low risks,
so a bisection on the log factor finds the achievability boundary whenever
the target level is attainable at all.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import BaseMismatch, EmptySupport, NonConvergence
from .gibbs import GibbsPosterior, PosteriorLike, _probability_vector, gibbs_posterior
from .measures import AtomizedMeasure
from .risk import RiskTable

__all__ = [
    "OptimalityReport",
    "NotAchievable",
    "sublevel_probability",
    "delta_star",
    "classify_reference",
    "check_delta_eps",
    "find_lambda",
    "lambda_search_report",
]

BRACKET_LO = 1e-6
BRACKET_HI = 1e6
BRACKET_EXPANSION = 1e3
MAX_EXPANSIONS = 2
MAX_ITERATIONS = 200


@dataclass(frozen=True)
class OptimalityReport:
    """Outcome of a concentration check at one (delta, eps, lam) triple."""

    delta: float
    epsilon: float
    lam: float
    sublevel_prob: float
    achieved: bool
    delta_star: float
    coherent: bool
    consistent: bool
    iterations: int = 0


@dataclass(frozen=True)
class NotAchievable:
    """Returned when no regularization factor can reach the target level.

    Carries the limiting sub-level probability as the factor shrinks to
    zero, which is the supremum over all factors; the target is out of
    reach exactly when that limit does not exceed 1 - eps.
    """

    delta: float
    epsilon: float
    delta_star: float
    limiting_probability: float

    @property
    def message(self) -> str:
        return (
            f"risk level {self.delta} lies below the least positive-mass "
            f"risk {self.delta_star}; the sub-level probability approaches "
            f"{self.limiting_probability} < {1 - self.epsilon}"
        )


def sublevel_probability(
    p: PosteriorLike, risks: RiskTable, delta: float
) -> float:
    """Probability of the closed sub-level set {risk <= delta}."""
    if delta < 0:
        raise ValueError(f"risk level must be nonnegative, got {delta!r}")
    base, weights = _probability_vector(p)
    if not base.same_atoms(risks.base):
        raise BaseMismatch("measure and risk table live on different atoms")
    selected = weights[risks.risks <= delta]
    return math.fsum(selected.tolist())


def delta_star(reference: AtomizedMeasure, risks: RiskTable) -> float:
    """Least risk value carried by a positive-mass atom."""
    if not reference.same_atoms(risks.base):
        raise BaseMismatch("reference and risk table live on different atoms")
    positive = reference.masses > 0
    if not np.any(positive):
        raise EmptySupport("reference has no positive-mass atom")
    return float(np.min(risks.risks[positive]))


def classify_reference(
    reference: AtomizedMeasure, risks: RiskTable
) -> tuple[bool, bool]:
    """(coherent, consistent) flags for a reference against a risk table.

    On a finite atomization, every positive risk sub-level set has positive
    mass exactly when some positive-mass atom attains risk 0, so coherence
    reduces to the least positive-mass risk being 0; the infimum is always
    attained, so the consistency mass is computed literally but can only be
    positive here.  A continuum reference could be coherent without
    attaining risk 0, which is why both flags are kept separate.
    """
    ds = delta_star(reference, risks)
    level_mass = math.fsum(reference.masses[risks.risks == ds].tolist())
    return ds == 0.0, level_mass > 0.0


def check_delta_eps(
    posterior: GibbsPosterior,
    risks: RiskTable,
    delta: float,
    epsilon: float,
    iterations: int = 0,
) -> OptimalityReport:
    """Fill a report for one posterior; achievement uses a strict inequality,
    so probability exactly equal to 1 - eps does not count."""
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    prob = sublevel_probability(posterior, risks, delta)
    ds = delta_star(posterior.base, risks)
    coherent, consistent = classify_reference(posterior.base, risks)
    return OptimalityReport(
        delta=float(delta),
        epsilon=float(epsilon),
        lam=posterior.lam,
        sublevel_prob=prob,
        achieved=prob > 1.0 - epsilon,
        delta_star=ds,
        coherent=coherent,
        consistent=consistent,
        iterations=iterations,
    )


def _limiting_probability(
    reference: AtomizedMeasure, risks: RiskTable, delta: float
) -> float:
    """Sub-level probability in the vanishing-regularization limit.

    The posterior concentrates on the positive-mass atoms of least risk, so
    the limit is 1 when the level covers them and 0 otherwise.
    """
    return 1.0 if delta >= delta_star(reference, risks) else 0.0


def _search(
    reference: AtomizedMeasure,
    risks: RiskTable,
    delta: float,
    epsilon: float,
    tol: float,
) -> tuple[Union[float, NotAchievable], int]:
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    if delta < 0:
        raise ValueError(f"risk level must be nonnegative, got {delta!r}")
    if tol <= 0:
        raise ValueError(f"tolerance must be positive, got {tol!r}")

    limit = _limiting_probability(reference, risks, delta)
    if not limit > 1.0 - epsilon:
        return (
            NotAchievable(
                delta=float(delta),
                epsilon=float(epsilon),
                delta_star=delta_star(reference, risks),
                limiting_probability=limit,
            ),
            0,
        )

    def achieves(lam: float) -> bool:
        posterior = gibbs_posterior(reference, risks, lam)
        return sublevel_probability(posterior, risks, delta) > 1.0 - epsilon

    iterations = 0
    hi = BRACKET_HI
    if achieves(hi):
        return hi, iterations  # every factor in the bracket works
    lo = BRACKET_LO
    expansions = 0
    while not achieves(lo):
        iterations += 1
        if expansions >= MAX_EXPANSIONS:
            raise NonConvergence(
                f"no achieving factor found down to {lo:g} although the "
                f"limit is {limit}"
            )
        lo /= BRACKET_EXPANSION
        expansions += 1

    # p(lam) is nonincreasing in lam: keep lo achieving, hi failing.
    while hi / lo > 1.0 + tol:
        iterations += 1
        if iterations > MAX_ITERATIONS:
            raise NonConvergence(
                f"bisection did not close the bracket within {MAX_ITERATIONS} "
                f"iterations"
            )
        mid = math.sqrt(lo * hi)
        if achieves(mid):
            lo = mid
        else:
            hi = mid
    return lo, iterations


def find_lambda(
    reference: AtomizedMeasure,
    risks: RiskTable,
    delta: float,
    epsilon: float,
    tol: float = 1e-4,
) -> Union[float, NotAchievable]:
    """Largest regularization factor (up to ``tol`` relative) whose posterior
    clears the target level, or :class:`NotAchievable` when none exists.

    Bisection on the log factor is exact here because the sub-level
    probability is nonincreasing in the factor (the tilt has a monotone
    likelihood ratio).  Out-of-reach targets are detected up front from the
    vanishing-factor limit rather than by a failed search.
    """
    result, _ = _search(reference, risks, delta, epsilon, tol)
    return result


def lambda_search_report(
    reference: AtomizedMeasure,
    risks: RiskTable,
    delta: float,
    epsilon: float,
    tol: float = 1e-4,
) -> tuple[Union[float, NotAchievable], OptimalityReport]:
    """Run the factor search and evaluate the concentration check at the
    returned factor (reporting the limit diagnostics when out of reach)."""
    result, iterations = _search(reference, risks, delta, epsilon, tol)
    if isinstance(result, NotAchievable):
        coherent, consistent = classify_reference(reference, risks)
        report = OptimalityReport(
            delta=float(delta),
            epsilon=float(epsilon),
            lam=math.nan,
            sublevel_prob=result.limiting_probability,
            achieved=False,
            delta_star=result.delta_star,
            coherent=coherent,
            consistent=consistent,
            iterations=iterations,
        )
        return result, report
    posterior = gibbs_posterior(reference, risks, result)
    report = check_delta_eps(posterior, risks, delta, epsilon, iterations=iterations)
    return result, report
