"""Finite atomizations of reference measures and relative entropy between them.

A reference measure over the model space is represented as a finite list of
weighted atoms.  Measures with infinite total mass (Lebesgue on a box,
counting on a large set) enter only through an explicit truncation: either a
hand-written atom list or midpoint quadrature of a density on a grid.  Every
downstream integral then becomes an exact finite sum, so inequality checks
are confounded only by the declared discretization, never by quadrature
error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence, Union

import numpy as np

from .errors import (
    BaseMismatch,
    BudgetExceeded,
    DimensionMismatch,
    EmptySupport,
    NegativeDensity,
)

__all__ = [
    "MeasureKind",
    "AtomizedMeasure",
    "MeasureOnAtoms",
    "make_discrete",
    "atomize_density",
    "relative_entropy",
    "require_same_atoms",
]


class MeasureKind(str, Enum):
    PROBABILITY = "probability"
    COUNTING = "counting"
    QUADRATURE_TRUNCATION = "quadrature_truncation"


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AtomizedMeasure:
    """A nonnegative measure supported on finitely many atoms.

    Atoms are indexed 0..N-1 in construction order.  ``total_mass`` is the
    cached sum of masses and need not be 1; ``kind`` records whether the
    measure is a probability, a counting measure, or the truncation of an
    infinite parent, in which case ``truncation_note`` describes the parent.

    Instances are immutable (arrays are frozen) and safe to share across
    threads.
    """

    locations: np.ndarray  # (n_atoms, dim)
    masses: np.ndarray  # (n_atoms,)
    kind: MeasureKind
    truncation_note: str | None = None
    total_mass: float = field(init=False)

    def __post_init__(self):
        locations = np.asarray(self.locations, dtype=float)
        if locations.ndim == 1:
            locations = locations.reshape(-1, 1)
        if locations.ndim != 2:
            raise DimensionMismatch(
                f"locations must be a 2-d array, got ndim={locations.ndim}"
            )
        masses = np.asarray(self.masses, dtype=float)
        if masses.ndim != 1 or masses.shape[0] != locations.shape[0]:
            raise DimensionMismatch(
                f"{masses.shape[0] if masses.ndim == 1 else masses.shape} masses "
                f"for {locations.shape[0]} locations"
            )
        if masses.shape[0] == 0:
            raise EmptySupport("a measure needs at least one atom")
        if not np.all(np.isfinite(masses)) or np.any(masses < 0):
            raise ValueError("masses must be finite and nonnegative")
        if not np.any(masses > 0):
            raise EmptySupport("all atom masses are zero")
        if len({tuple(row) for row in locations}) != locations.shape[0]:
            raise ValueError("atom locations must be unique")
        total = math.fsum(masses.tolist())
        kind = MeasureKind(self.kind)
        if kind is MeasureKind.PROBABILITY and abs(total - 1.0) > 1e-9:
            raise ValueError(
                f"probability measure has total mass {total!r}, expected 1"
            )
        object.__setattr__(self, "locations", _readonly(locations))
        object.__setattr__(self, "masses", _readonly(masses))
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "total_mass", total)

    @property
    def n_atoms(self) -> int:
        return self.masses.shape[0]

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    @property
    def atom_ids(self) -> np.ndarray:
        return np.arange(self.n_atoms)

    @property
    def support(self) -> np.ndarray:
        """Boolean mask of atoms carrying positive mass."""
        return self.masses > 0

    def same_atoms(self, other: "AtomizedMeasure") -> bool:
        """True when both measures live on the identical atom list.

        Masses may differ; only the atom ids and locations must agree.
        """
        if other is self:
            return True
        return self.n_atoms == other.n_atoms and np.array_equal(
            self.locations, other.locations
        )

    def as_weights(self) -> "MeasureOnAtoms":
        """View this measure as a weight vector over its own atoms."""
        return MeasureOnAtoms(
            base=self,
            weights=self.masses,
            normalized=abs(self.total_mass - 1.0) <= 1e-9,
        )

    def __repr__(self) -> str:
        return (
            f"AtomizedMeasure(n_atoms={self.n_atoms}, dim={self.dim}, "
            f"kind={self.kind.value}, total_mass={self.total_mass:.6g})"
        )


@dataclass(frozen=True, eq=False)
class MeasureOnAtoms:
    """A measure expressed as nonnegative weights over an atom base.

    Absolute continuity with respect to the base is part of the type: a
    weight may be positive only where the base mass is positive.  When
    ``normalized`` is set, the weights must sum to 1.
    """

    base: AtomizedMeasure
    weights: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.shape[0] != self.base.n_atoms:
            raise DimensionMismatch(
                f"{w.shape} weights for {self.base.n_atoms} atoms"
            )
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        if np.any((w > 0) & (self.base.masses == 0)):
            raise ValueError(
                "weights put mass outside the support of the base measure"
            )
        total = math.fsum(w.tolist())
        if self.normalized and abs(total - 1.0) > 1e-9:
            raise ValueError(f"normalized measure sums to {total!r}, expected 1")
        object.__setattr__(self, "weights", _readonly(w))

    @classmethod
    def probability(
        cls, base: AtomizedMeasure, weights: Sequence[float] | np.ndarray
    ) -> "MeasureOnAtoms":
        """Normalize ``weights`` into a probability measure over ``base``."""
        w = np.asarray(weights, dtype=float)
        total = math.fsum(w.tolist())
        if total <= 0:
            raise EmptySupport("cannot normalize an all-zero weight vector")
        return cls(base=base, weights=w / total, normalized=True)

    @property
    def total_weight(self) -> float:
        return math.fsum(self.weights.tolist())

    def __repr__(self) -> str:
        return (
            f"MeasureOnAtoms(n_atoms={self.base.n_atoms}, "
            f"normalized={self.normalized})"
        )


def make_discrete(
    masses: Sequence[float] | np.ndarray,
    locations: Sequence[Sequence[float]] | np.ndarray,
    kind: MeasureKind | str = MeasureKind.COUNTING,
    truncation_note: str | None = None,
) -> AtomizedMeasure:
    """Build an atomized measure from explicit masses and locations.

    Atoms keep the input order.  Scalar locations are promoted to
    one-dimensional vectors.
    """
    try:
        loc = np.asarray(locations, dtype=float)
    except (TypeError, ValueError) as exc:
        raise DimensionMismatch(f"ragged or non-numeric locations: {exc}") from exc
    if loc.dtype == object or loc.ndim > 2:
        raise DimensionMismatch("locations must be a flat list of equal-length vectors")
    return AtomizedMeasure(
        locations=loc,
        masses=np.asarray(masses, dtype=float),
        kind=MeasureKind(kind),
        truncation_note=truncation_note,
    )


def atomize_density(
    box: tuple[Sequence[float], Sequence[float]],
    cells_per_axis: Sequence[int] | int,
    density: Callable[[np.ndarray], float],
    atom_budget: int = 250_000,
) -> AtomizedMeasure:
    """Midpoint quadrature of a density over an axis-aligned box.

    One atom per grid cell, placed at the cell midpoint and carrying
    ``density(midpoint) * cell_volume``.  The result is flagged as the
    truncation of the continuous parent measure it discretizes.
    """
    lower = np.atleast_1d(np.asarray(box[0], dtype=float))
    upper = np.atleast_1d(np.asarray(box[1], dtype=float))
    if lower.shape != upper.shape or lower.ndim != 1:
        raise DimensionMismatch("box bounds must be two vectors of equal length")
    if not np.all(lower < upper):
        raise ValueError("box lower bounds must be strictly below upper bounds")
    dim = lower.shape[0]
    cells = np.atleast_1d(np.asarray(cells_per_axis, dtype=int))
    if cells.shape == (1,) and dim > 1:
        cells = np.repeat(cells, dim)
    if cells.shape != (dim,) or np.any(cells < 1):
        raise ValueError("cells_per_axis must hold a positive count per axis")
    n_cells = int(np.prod(cells))
    if n_cells > atom_budget:
        raise BudgetExceeded(f"{n_cells} cells exceed the atom budget {atom_budget}")

    widths = (upper - lower) / cells
    cell_volume = float(np.prod(widths))
    axes = [lower[k] + widths[k] * (np.arange(cells[k]) + 0.5) for k in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    midpoints = np.stack([m.reshape(-1) for m in mesh], axis=1)

    masses = np.empty(n_cells)
    for i in range(n_cells):
        value = float(density(midpoints[i]))
        if not math.isfinite(value):
            raise NegativeDensity(f"density is not finite at {midpoints[i]}")
        if value < 0:
            raise NegativeDensity(f"density is {value} < 0 at {midpoints[i]}")
        masses[i] = value * cell_volume

    return AtomizedMeasure(
        locations=midpoints,
        masses=masses,
        kind=MeasureKind.QUADRATURE_TRUNCATION,
        truncation_note=(
            f"midpoint quadrature on {cells.tolist()} cells over "
            f"[{lower.tolist()}, {upper.tolist()}]"
        ),
    )


MeasureLike = Union[AtomizedMeasure, MeasureOnAtoms]


def _coerce_weights(m) -> tuple[AtomizedMeasure, np.ndarray]:
    """Extract (base, weight vector) from any measure-like object."""
    if isinstance(m, MeasureOnAtoms):
        return m.base, m.weights
    if isinstance(m, AtomizedMeasure):
        return m, m.masses
    base = getattr(m, "base", None)
    probs = getattr(m, "probs", None)
    if base is not None and probs is not None:  # duck-typed posterior
        return base, np.asarray(probs, dtype=float)
    raise TypeError(f"not a measure over atoms: {type(m).__name__}")


def require_same_atoms(a, b, what: str = "operands") -> None:
    """Raise :class:`BaseMismatch` unless both live on the same atom list."""
    base_a, _ = _coerce_weights(a) if not isinstance(a, AtomizedMeasure) else (a, None)
    base_b, _ = _coerce_weights(b) if not isinstance(b, AtomizedMeasure) else (b, None)
    if not base_a.same_atoms(base_b):
        raise BaseMismatch(f"{what} live on different atom sets")


def relative_entropy(p: MeasureLike, r: MeasureLike) -> float:
    """Divergence sum(p_i * log(p_i / r_i)) over shared atoms.

    ``p`` must be a probability vector; ``r`` may be any nonnegative weight
    vector (in particular an unnormalized reference), in which case the
    result can be negative.  Conventions: terms with p_i = 0 contribute 0,
    and any p_i > 0 with r_i = 0 makes the divergence +inf.  Terms are
    accumulated with compensated summation, and the ratio p_i/r_i is formed
    before the log so the self-divergence is exactly 0.
    """
    base_p, pw = _coerce_weights(p)
    base_r, rw = _coerce_weights(r)
    if not base_p.same_atoms(base_r):
        raise BaseMismatch("relative entropy needs both measures on the same atoms")
    total = math.fsum(pw.tolist())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"first argument must be normalized, sums to {total!r}")
    terms = []
    for pi, ri in zip(pw.tolist(), rw.tolist()):
        if pi <= 0.0:
            continue
        if ri <= 0.0:
            return math.inf
        terms.append(pi * math.log(pi / ri))
    return math.fsum(terms)
