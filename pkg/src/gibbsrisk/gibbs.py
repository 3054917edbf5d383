"""Log-partition function, Gibbs posteriors, cumulants, and the free-energy
objective.

On an atomized reference every integral is an exact finite sum, so the only
numerical hazards are overflow (removed by max-shift before exponentiation)
and cancellation (removed by compensated summation).  Cumulants come from
tilted moments, never from numerical differentiation; finite differences
live in the verification suite as an independent oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import BaseMismatch, EmptySupport
from .measures import (
    AtomizedMeasure,
    MeasureKind,
    MeasureOnAtoms,
    _coerce_weights,
    relative_entropy,
)
from .risk import RiskTable

__all__ = [
    "GibbsPosterior",
    "FinitenessDomain",
    "log_partition",
    "finiteness_domain",
    "gibbs_posterior",
    "expected_risk",
    "cumulant",
    "erm_rer_objective",
    "sample",
]


def _check_table(reference: AtomizedMeasure, risks: RiskTable) -> None:
    if not reference.same_atoms(risks.base):
        raise BaseMismatch("risk table does not live on the reference's atoms")


def _log_masses(reference: AtomizedMeasure) -> np.ndarray:
    out = np.full(reference.n_atoms, -math.inf)
    positive = reference.masses > 0
    out[positive] = np.log(reference.masses[positive])
    return out


def log_partition(reference: AtomizedMeasure, risks: RiskTable, t: float) -> float:
    """log of sum_i mass_i * exp(t * risk_i), max-shift stabilized.

    An exact finite sum, hence finite for every real ``t`` and monotone
    nondecreasing in ``t``.
    """
    _check_table(reference, risks)
    exponents = _log_masses(reference) + t * risks.risks
    shift = float(np.max(exponents))
    mantissa = math.fsum(np.exp(exponents - shift).tolist())
    return shift + math.log(mantissa)


@dataclass(frozen=True)
class FinitenessDomain:
    """The set of regularization factors with a finite log-partition value.

    For a finite atomization the sum is always finite, so the domain is the
    whole positive axis.  ``truncation_flagged`` marks references that stand
    in for an infinite parent measure, where the parent's own domain may be
    smaller than reported here.
    """

    lower: float
    upper: float
    exact_finite_sum: bool
    probability_reference: bool
    truncation_flagged: bool
    note: str

    def contains(self, lam: float) -> bool:
        return self.lower < lam < self.upper


def finiteness_domain(
    reference: AtomizedMeasure, risks: RiskTable
) -> FinitenessDomain:
    """Domain of regularization factors for this reference and risk table."""
    _check_table(reference, risks)
    is_prob = reference.kind is MeasureKind.PROBABILITY
    if is_prob:
        note = (
            "probability reference: the domain is the full positive axis "
            "even before atomization"
        )
    elif reference.kind is MeasureKind.QUADRATURE_TRUNCATION:
        note = (
            "finite truncation of an infinite parent: the sum is finite for "
            "every factor, but the parent's domain may be smaller"
        )
    else:
        note = "finite atomization: exact finite sum for every factor"
    return FinitenessDomain(
        lower=0.0,
        upper=math.inf,
        exact_finite_sum=True,
        probability_reference=is_prob,
        truncation_flagged=reference.kind is MeasureKind.QUADRATURE_TRUNCATION,
        note=note,
    )


@dataclass(frozen=True, eq=False)
class GibbsPosterior:
    """The minimizer of expected risk plus scaled divergence to a reference.

    Atom probabilities are proportional to mass_i * exp(-risk_i / lam);
    ``log_normalizer`` is the log-partition value at -1/lam.  Mutual absolute
    continuity with the reference holds up to floating-point underflow of
    extreme tilts (an atom whose exponent lies ~700 nats below the maximum
    collapses to exactly 0).
    """

    base: AtomizedMeasure
    risk_table: RiskTable
    lam: float
    log_normalizer: float
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.shape != (self.base.n_atoms,):
            raise BaseMismatch("probability vector does not match the atom count")
        total = math.fsum(probs.tolist())
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"posterior sums to {total!r}, expected 1")
        if np.any(probs[self.base.masses == 0] != 0.0):
            raise ValueError("posterior puts mass outside the reference support")
        probs = np.ascontiguousarray(probs)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def n_atoms(self) -> int:
        return self.base.n_atoms

    def as_measure(self) -> MeasureOnAtoms:
        return MeasureOnAtoms(base=self.base, weights=self.probs, normalized=True)

    def __repr__(self) -> str:
        return (
            f"GibbsPosterior(n_atoms={self.n_atoms}, lam={self.lam:.6g}, "
            f"log_normalizer={self.log_normalizer:.6g})"
        )


def gibbs_posterior(
    reference: AtomizedMeasure, risks: RiskTable, lam: float
) -> GibbsPosterior:
    """Tilt the reference by exp(-risk/lam) and normalize."""
    _check_table(reference, risks)
    if not (lam > 0 and math.isfinite(lam)):
        raise ValueError(f"regularization factor must be positive, got {lam!r}")
    if not np.any(reference.masses > 0):
        raise EmptySupport("reference has no positive-mass atom")
    exponents = _log_masses(reference) - risks.risks / lam
    shift = float(np.max(exponents))
    unnormalized = np.exp(exponents - shift)
    mantissa = math.fsum(unnormalized.tolist())
    return GibbsPosterior(
        base=reference,
        risk_table=risks,
        lam=float(lam),
        log_normalizer=shift + math.log(mantissa),
        probs=unnormalized / mantissa,
    )


PosteriorLike = Union[GibbsPosterior, MeasureOnAtoms]


def _probability_vector(p: PosteriorLike) -> tuple[AtomizedMeasure, np.ndarray]:
    base, weights = _coerce_weights(p)
    total = math.fsum(weights.tolist())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"expected a probability vector, sums to {total!r}")
    return base, weights


def expected_risk(p: PosteriorLike, risks: RiskTable) -> float:
    """Mean risk under a probability vector over the table's atoms."""
    base, weights = _probability_vector(p)
    if not base.same_atoms(risks.base):
        raise BaseMismatch("measure and risk table live on different atoms")
    return math.fsum((weights * risks.risks).tolist())


def cumulant(posterior: GibbsPosterior, order: int) -> float:
    """Mean, variance, or third central moment of the risk under the posterior.

    For atomized references these coincide exactly with the first three
    derivatives of the log-partition function at -1/lam.
    """
    if order not in (1, 2, 3):
        raise ValueError(f"order must be 1, 2 or 3, got {order!r}")
    weights = posterior.probs
    risks = posterior.risk_table.risks
    mean = math.fsum((weights * risks).tolist())
    if order == 1:
        return mean
    centered = risks - mean
    if order == 2:
        return math.fsum((weights * centered**2).tolist())
    return math.fsum((weights * centered**3).tolist())


def erm_rer_objective(
    p: PosteriorLike,
    reference: AtomizedMeasure,
    risks: RiskTable,
    lam: float,
) -> float:
    """Expected risk plus lam times divergence to the (possibly unnormalized)
    reference.

    +inf when ``p`` is not absolutely continuous with respect to the
    reference.  The unique minimizer over probability vectors is the Gibbs
    posterior, where the value equals -lam * log_partition(-1/lam).
    """
    if lam <= 0:
        raise ValueError(f"regularization factor must be positive, got {lam!r}")
    _check_table(reference, risks)
    base, _ = _probability_vector(p)
    if not base.same_atoms(reference):
        raise BaseMismatch("measure and reference live on different atoms")
    divergence = relative_entropy(p, reference)
    if math.isinf(divergence):
        return math.inf
    return expected_risk(p, risks) + lam * divergence


def sample(posterior: GibbsPosterior, seed: int, count: int) -> np.ndarray:
    """Draw atom ids by inverse-CDF sampling; deterministic given the seed."""
    if count < 1:
        raise ValueError(f"count must be positive, got {count!r}")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(posterior.probs)
    cdf[-1] = 1.0
    draws = rng.random(count)
    return np.searchsorted(cdf, draws, side="right").astype(np.int64)
