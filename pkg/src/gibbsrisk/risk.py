"""Model/pattern/label spaces, loss functions, datasets, and risk tables.

The empirical risk of a model location is the mean per-point loss over a
dataset; a risk table caches that value for every atom of a reference
measure so downstream operations reduce to weighted sums over atoms.
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import BaseMismatch, DimensionMismatch, NonFiniteLoss
from .measures import AtomizedMeasure, _readonly

__all__ = [
    "Dataset",
    "ProblemSpec",
    "RiskTable",
    "empirical_risk",
    "risk_table",
    "table_problem",
    "linear_squared_problem",
    "threshold_01_problem",
    "linear_01_problem",
]


@dataclass(frozen=True, eq=False)
class Dataset:
    """A sequence of labeled patterns.

    ``patterns`` is (n, d); ``labels`` is (n,); reals throughout, with
    classification labels encoded as {0, 1}.
    """

    patterns: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        patterns = np.asarray(self.patterns, dtype=float)
        if patterns.ndim == 1:
            patterns = patterns.reshape(-1, 1)
        labels = np.asarray(self.labels, dtype=float)
        if patterns.ndim != 2 or labels.ndim != 1:
            raise DimensionMismatch("patterns must be (n, d) and labels (n,)")
        if patterns.shape[0] != labels.shape[0]:
            raise DimensionMismatch(
                f"{patterns.shape[0]} patterns vs {labels.shape[0]} labels"
            )
        if patterns.shape[0] < 1:
            raise ValueError("a dataset needs at least one point")
        if not (np.all(np.isfinite(patterns)) and np.all(np.isfinite(labels))):
            raise ValueError("patterns and labels must be finite")
        object.__setattr__(self, "patterns", _readonly(patterns))
        object.__setattr__(self, "labels", _readonly(labels))

    @property
    def n(self) -> int:
        return self.patterns.shape[0]

    @property
    def dim(self) -> int:
        return self.patterns.shape[1]

    @classmethod
    def from_points(cls, points: Iterable[tuple[Sequence[float], float]]) -> "Dataset":
        pts = list(points)
        return cls(
            patterns=np.asarray([np.atleast_1d(x) for x, _ in pts], dtype=float),
            labels=np.asarray([y for _, y in pts], dtype=float),
        )

    @classmethod
    def from_csv(cls, path: str | Path) -> "Dataset":
        """Parse a dataset file with header ``x_0,...,x_{d-1},y``."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise ValueError(f"{path}: empty dataset file")
            expected = [f"x_{k}" for k in range(len(header) - 1)] + ["y"]
            if [h.strip() for h in header] != expected:
                raise ValueError(
                    f"{path}: header {header} does not match {expected}"
                )
            rows = [[float(v) for v in row] for row in reader if row]
        if not rows:
            raise ValueError(f"{path}: no data rows")
        data = np.asarray(rows, dtype=float)
        return cls(patterns=data[:, :-1], labels=data[:, -1])

    def append(self, pattern: Sequence[float], label: float) -> "Dataset":
        """A new dataset with one extra point (datasets are immutable)."""
        return Dataset(
            patterns=np.vstack([self.patterns, np.atleast_1d(pattern)]),
            labels=np.append(self.labels, label),
        )

    def content_id(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.patterns.tobytes())
        digest.update(self.labels.tobytes())
        return digest.hexdigest()[:12]

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, dim={self.dim})"


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """A predictor together with a per-point loss.

    ``predictor(theta, x)`` assigns a label to pattern ``x`` under model
    location ``theta``; ``loss(predicted, observed)`` is nonnegative and
    zero on correct labels.  ``batch_risks``, when provided, computes the
    whole empirical-risk vector for an (m, d) block of model locations at
    once and must agree with the pointwise path.
    """

    name: str
    predictor: Callable[[np.ndarray, np.ndarray], float]
    loss: Callable[[float, float], float]
    batch_risks: Callable[[np.ndarray, Dataset], np.ndarray] | None = None

    def check_labels(self, z: Dataset) -> None:
        """Spot-check that every dataset label is zero-loss against itself."""
        for y in np.unique(z.labels):
            value = float(self.loss(float(y), float(y)))
            if value != 0.0:
                raise ValueError(
                    f"problem {self.name!r}: loss({y}, {y}) = {value}, expected 0"
                )

    def __repr__(self) -> str:
        return f"ProblemSpec({self.name!r})"


@dataclass(frozen=True, eq=False)
class RiskTable:
    """Empirical risks of every atom of a reference measure, for one dataset."""

    base: AtomizedMeasure
    risks: np.ndarray
    dataset_id: str

    def __post_init__(self):
        risks = np.asarray(self.risks, dtype=float)
        if risks.ndim != 1 or risks.shape[0] != self.base.n_atoms:
            raise BaseMismatch(
                f"{risks.shape} risks for {self.base.n_atoms} atoms"
            )
        if not np.all(np.isfinite(risks)):
            raise NonFiniteLoss("risk table contains non-finite entries")
        if np.any(risks < 0):
            raise ValueError("risks must be nonnegative")
        object.__setattr__(self, "risks", _readonly(risks))

    @property
    def n_atoms(self) -> int:
        return self.risks.shape[0]

    def __repr__(self) -> str:
        return f"RiskTable(n_atoms={self.n_atoms}, dataset_id={self.dataset_id!r})"


def empirical_risk(spec: ProblemSpec, theta: Sequence[float], z: Dataset) -> float:
    """Mean per-point loss of model location ``theta`` over dataset ``z``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    losses = []
    for i in range(z.n):
        predicted = spec.predictor(theta, z.patterns[i])
        value = float(spec.loss(float(predicted), float(z.labels[i])))
        if not math.isfinite(value):
            raise NonFiniteLoss(
                f"loss at point {i} of dataset is {value!r} for theta={theta.tolist()}"
            )
        losses.append(value)
    return math.fsum(losses) / z.n


def risk_table(
    spec: ProblemSpec,
    reference: AtomizedMeasure,
    z: Dataset,
    chunk: int = 4096,
) -> RiskTable:
    """Evaluate the empirical risk at every atom of ``reference``.

    Uses the problem's batch evaluator when present, in atom-id chunks to
    bound memory; each entry is independent so the result does not depend on
    evaluation order.
    """
    spec.check_labels(z)
    n = reference.n_atoms
    if spec.batch_risks is not None:
        out = np.empty(n)
        for start in range(0, n, chunk):
            block = reference.locations[start : start + chunk]
            out[start : start + chunk] = spec.batch_risks(block, z)
        bad = ~np.isfinite(out)
        if np.any(bad):
            atom = int(np.argmax(bad))
            raise NonFiniteLoss(f"non-finite risk at atom_id {atom}")
        return RiskTable(base=reference, risks=out, dataset_id=z.content_id())
    risks = np.empty(n)
    for i in range(n):
        try:
            risks[i] = empirical_risk(spec, reference.locations[i], z)
        except NonFiniteLoss as exc:
            raise NonFiniteLoss(f"atom_id {i}: {exc}") from exc
    return RiskTable(base=reference, risks=risks, dataset_id=z.content_id())


# ---------------------------------------------------------------------------
# Built-in problem families
# ---------------------------------------------------------------------------

def table_problem(
    locations: Sequence[Sequence[float]] | np.ndarray,
    values: Sequence[float] | np.ndarray,
) -> ProblemSpec:
    """Risk landscape given directly as values at model locations.

    The predictor returns the tabulated value at the nearest location and
    the loss is the absolute difference, so against a zero-labeled dataset
    the empirical risk of an atom is exactly its table entry.  Used for
    hand-constructed worked instances.
    """
    loc = np.asarray(locations, dtype=float)
    if loc.ndim == 1:
        loc = loc.reshape(-1, 1)
    vals = np.asarray(values, dtype=float)
    if vals.ndim != 1 or vals.shape[0] != loc.shape[0]:
        raise DimensionMismatch("one table value per location required")
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise ValueError("table values must be finite and nonnegative")

    def lookup(theta: np.ndarray) -> float:
        d2 = np.sum((loc - theta.reshape(1, -1)) ** 2, axis=1)
        return float(vals[int(np.argmin(d2))])

    def predictor(theta, x):
        return lookup(np.atleast_1d(theta))

    def batch(thetas: np.ndarray, z: Dataset) -> np.ndarray:
        d2 = ((loc[None, :, :] - thetas[:, None, :]) ** 2).sum(axis=2)
        v = vals[np.argmin(d2, axis=1)]
        return np.abs(v[:, None] - z.labels[None, :]).mean(axis=1)

    return ProblemSpec(
        name="table",
        predictor=predictor,
        loss=lambda yhat, y: abs(yhat - y),
        batch_risks=batch,
    )


def linear_squared_problem() -> ProblemSpec:
    """Inner-product predictor with squared loss."""

    def batch(thetas: np.ndarray, z: Dataset) -> np.ndarray:
        pred = thetas @ z.patterns.T
        return ((pred - z.labels[None, :]) ** 2).mean(axis=1)

    return ProblemSpec(
        name="linear-squared",
        predictor=lambda theta, x: float(np.dot(theta, x)),
        loss=lambda yhat, y: (yhat - y) ** 2,
        batch_risks=batch,
    )


def threshold_01_problem() -> ProblemSpec:
    """Halfspace indicator predictor with exact-match zero-one loss."""

    def batch(thetas: np.ndarray, z: Dataset) -> np.ndarray:
        pred = (thetas @ z.patterns.T >= 0).astype(float)
        return (pred != z.labels[None, :]).mean(axis=1)

    return ProblemSpec(
        name="threshold-01",
        predictor=lambda theta, x: 1.0 if float(np.dot(theta, x)) >= 0 else 0.0,
        loss=lambda yhat, y: 0.0 if yhat == y else 1.0,
        batch_risks=batch,
    )


def linear_01_problem() -> ProblemSpec:
    """Inner-product predictor with exact-match zero-one loss."""

    def batch(thetas: np.ndarray, z: Dataset) -> np.ndarray:
        pred = thetas @ z.patterns.T
        return (pred != z.labels[None, :]).mean(axis=1)

    return ProblemSpec(
        name="linear-01",
        predictor=lambda theta, x: float(np.dot(theta, x)),
        loss=lambda yhat, y: 0.0 if yhat == y else 1.0,
        batch_risks=batch,
    )
