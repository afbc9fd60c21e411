"""Dataset container, validation and overlap diagnostics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np


class ValidationError(ValueError):
    """Raised when input records do not form a valid dataset."""


class EstimationError(RuntimeError):
    """Numerical failure during nuisance fitting or estimation."""


class EmptyArmError(EstimationError, ValueError):
    """An arm has too few units (usually none) for the requested operation."""


@dataclass(frozen=True)
class PairIndex:
    """Canonically ordered pair of arm labels (``j < j_prime``)."""

    j: int
    j_prime: int

    def __post_init__(self):
        if self.j == self.j_prime:
            raise ValueError("pair arms must differ")
        if self.j > self.j_prime:
            raise ValueError(f"pair must be ordered j < j', got ({self.j}, {self.j_prime})")

    def __str__(self):
        return f"tau_{self.j}{self.j_prime}"


def canonical_pairs(n_arms: int) -> list[PairIndex]:
    return [PairIndex(j, k) for j in range(1, n_arms + 1) for k in range(j + 1, n_arms + 1)]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed data ``(X, Z, Y)`` for ``n`` units and ``J`` arms.

    Treatments are stored as integers ``1..J``. ``labels[j - 1]`` is the
    external label of arm ``j`` and is used only for reporting.
    """

    covariates: np.ndarray
    treatments: np.ndarray
    outcomes: np.ndarray
    n_arms: int
    labels: tuple = ()
    covariate_names: tuple = ()

    def __post_init__(self):
        X = np.array(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        Z = np.asarray(self.treatments)
        Y = np.array(self.outcomes, dtype=float)
        if self.n_arms < 2:
            raise ValidationError("at least two arms required")
        n = Y.shape[0]
        if n < 1:
            raise ValidationError("dataset must contain at least one unit")
        if X.ndim != 2 or X.shape[0] != n or Z.shape != (n,) or Y.ndim != 1:
            raise ValidationError(
                f"length mismatch: covariates {X.shape}, treatments {Z.shape}, outcomes {Y.shape}")
        if not np.all(np.isfinite(X)):
            raise ValidationError("non-finite covariate")
        if not np.all(np.isfinite(Y)):
            raise ValidationError("non-finite outcome")
        if not np.issubdtype(Z.dtype, np.integer):
            if not np.all(np.asarray(Z, dtype=float) == np.round(np.asarray(Z, dtype=float))):
                raise ValidationError("treatment labels must be integers 1..J")
        Z = np.asarray(Z, dtype=np.int64)
        if Z.min() < 1 or Z.max() > self.n_arms:
            bad = Z[(Z < 1) | (Z > self.n_arms)][0]
            raise ValidationError(f"label {bad} outside 1..{self.n_arms}")
        for arr in (X, Z, Y):
            arr.setflags(write=False)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "treatments", Z)
        object.__setattr__(self, "outcomes", Y)
        if not self.labels:
            object.__setattr__(self, "labels", tuple(range(1, self.n_arms + 1)))
        elif len(self.labels) != self.n_arms:
            raise ValidationError("label dictionary must have one entry per arm")
        if not self.covariate_names:
            object.__setattr__(self, "covariate_names",
                               tuple(f"x{i + 1}" for i in range(X.shape[1])))

    @property
    def n(self) -> int:
        return self.outcomes.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def indicators(self) -> np.ndarray:
        """``n x J`` 0/1 matrix with entry ``(i, j-1) = 1{Z_i = j}``."""
        return (self.treatments[:, None] == np.arange(1, self.n_arms + 1)[None, :]).astype(float)

    def decode(self, codes) -> list:
        """Map internal arm codes back to external labels."""
        return [self.labels[int(c) - 1] for c in np.atleast_1d(codes)]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.covariates[idx], self.treatments[idx], self.outcomes[idx],
                       self.n_arms, self.labels, self.covariate_names)

    def with_outcomes(self, outcomes) -> "Dataset":
        return Dataset(self.covariates, self.treatments, outcomes, self.n_arms,
                       self.labels, self.covariate_names)


def _is_intlike(v: Any) -> bool:
    if isinstance(v, (bool, np.bool_)):
        return False
    if isinstance(v, (int, np.integer)):
        return True
    if isinstance(v, (float, np.floating)):
        return math.isfinite(v) and float(v).is_integer()
    if isinstance(v, str):
        try:
            int(v.strip())
        except ValueError:
            return False
        return True
    return False


def encode_labels(raw_labels: Sequence, n_arms: int) -> tuple[np.ndarray, tuple]:
    """Encode treatment labels as integers ``1..J``.

    Integer-like labels are taken at face value and must already lie in
    ``1..J``. Any other labels are sorted and numbered in that order.
    """
    raw = list(raw_labels)
    if all(_is_intlike(v) for v in raw):
        codes = np.array([int(v.strip()) if isinstance(v, str) else int(v) for v in raw],
                         dtype=np.int64)
        bad = codes[(codes < 1) | (codes > n_arms)]
        if bad.size:
            raise ValidationError(f"label {bad[0]} outside 1..{n_arms}")
        return codes, tuple(range(1, n_arms + 1))
    keys = [str(v) for v in raw]
    levels = sorted(set(keys))
    if len(levels) > n_arms:
        raise ValidationError(
            f"found {len(levels)} distinct treatment labels but n_arms={n_arms}; "
            f"label {levels[n_arms]!r} outside 1..{n_arms}")
    lookup = {lab: k + 1 for k, lab in enumerate(levels)}
    codes = np.array([lookup[k] for k in keys], dtype=np.int64)
    # arms beyond the observed levels get placeholder names
    labels = tuple(levels) + tuple(f"arm{k}" for k in range(len(levels) + 1, n_arms + 1))
    return codes, labels


def validate_dataset(raw: Mapping[str, Sequence] | Sequence[Mapping[str, Any]], n_arms: int,
                     treatment: str = "treatment", outcome: str = "outcome",
                     covariates: Sequence[str] | None = None) -> Dataset:
    """Build a validated :class:`Dataset` from tabular records.

    Parameters
    ----------
    raw : mapping of column name to values, or sequence of row mappings
        Parsed records. Columns other than ``treatment`` and ``outcome``
        are covariates in their original order unless ``covariates`` is given.
    n_arms : int
        Number of treatment arms ``J >= 2``.
    """
    if n_arms < 2:
        raise ValidationError("at least two arms required")
    if isinstance(raw, Mapping):
        columns = {k: list(v) for k, v in raw.items()}
    else:
        rows = list(raw)
        if not rows:
            raise ValidationError("no records")
        names = list(rows[0].keys())
        columns = {k: [r[k] for r in rows] for k in names}
    for col in (treatment, outcome):
        if col not in columns:
            raise ValidationError(f"missing column {col!r}")
    lengths = {k: len(v) for k, v in columns.items()}
    if len(set(lengths.values())) > 1:
        raise ValidationError(f"length mismatch between columns: {lengths}")
    cov_names = list(covariates) if covariates is not None else [
        k for k in columns if k not in (treatment, outcome)]
    n = lengths[outcome]
    try:
        y = np.array(columns[outcome], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"outcome column is not numeric: {exc}") from None
    if not np.all(np.isfinite(y)):
        i = int(np.flatnonzero(~np.isfinite(y))[0])
        raise ValidationError(f"non-finite outcome (row {i})")
    if cov_names:
        try:
            X = np.column_stack([np.asarray(columns[c], dtype=float) for c in cov_names])
        except KeyError as exc:
            raise ValidationError(f"missing covariate column {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"covariate column is not numeric: {exc}") from None
    else:
        X = np.empty((n, 0))
    if not np.all(np.isfinite(X)):
        i, c = np.argwhere(~np.isfinite(X))[0]
        raise ValidationError(f"non-finite covariate {cov_names[c]!r} (row {i})")
    codes, labels = encode_labels(columns[treatment], n_arms)
    d = Dataset(X, codes, y, n_arms, labels, tuple(cov_names))
    empty = np.flatnonzero(np.bincount(codes, minlength=n_arms + 1)[1:] == 0) + 1
    if empty.size:
        warnings.warn(f"arms with no units: {empty.tolist()}", stacklevel=2)
    return d


@dataclass(frozen=True)
class ArmSummary:
    counts: np.ndarray
    means: np.ndarray  # nan where the arm is empty

    @property
    def empty(self) -> np.ndarray:
        return self.counts == 0


def arm_counts(d: Dataset) -> ArmSummary:
    counts = np.bincount(d.treatments - 1, minlength=d.n_arms)
    sums = np.bincount(d.treatments - 1, weights=d.outcomes, minlength=d.n_arms)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return ArmSummary(counts, means)


@dataclass(frozen=True)
class PositivityReport:
    xi: float
    arm_min: np.ndarray
    arm_max: np.ndarray
    n_violations: int
    violating_units: np.ndarray = field(repr=False)

    @property
    def overlap_concern(self) -> bool:
        return self.n_violations > 0

    def to_dict(self) -> dict:
        return {"xi": self.xi, "arm_min": self.arm_min.tolist(), "arm_max": self.arm_max.tolist(),
                "n_violations": self.n_violations, "overlap_concern": self.overlap_concern}

    def __str__(self):
        lines = [f"positivity check (xi={self.xi:g}): {self.n_violations} unit(s) outside "
                 f"[{self.xi:g}, {1 - self.xi:g}]"]
        for j, (lo, hi) in enumerate(zip(self.arm_min, self.arm_max), start=1):
            lines.append(f"  arm {j}: min e={lo:.4g}  max e={hi:.4g}")
        if self.overlap_concern:
            lines.append("  WARNING: overlap concern")
        return "\n".join(lines)


def positivity_diagnostic(e_hat, xi: float) -> PositivityReport:
    """Summarise fitted propensities against the overlap bound ``xi``.

    ``e_hat`` is an ``n x J`` matrix or any object with an ``e_hat``
    attribute. Pass unclipped propensities to see the raw fit.
    """
    if not 0.0 < xi < 0.5:
        raise ValueError("xi must lie in (0, 0.5)")
    e = np.asarray(getattr(e_hat, "e_raw", getattr(e_hat, "e_hat", e_hat)), dtype=float)
    bad = np.any((e < xi) | (e > 1.0 - xi), axis=1)
    return PositivityReport(xi, e.min(axis=0), e.max(axis=0), int(bad.sum()), np.flatnonzero(bad))
