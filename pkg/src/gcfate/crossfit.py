"""Fold construction and out-of-fold nuisance predictions.

Units and folds are indexed from zero; arms keep their ``1..J`` labels.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import Dataset, EmptyArmError
from .nuisance import (DEFAULT_OUTCOME, DEFAULT_PROPENSITY, LearnerSpec, clip_propensity,
                       fit_outcome, fit_propensity)


@dataclass(frozen=True, eq=False)
class FoldPlan:
    n_folds: int
    assignment: np.ndarray
    seed: int | None = None
    stratified: bool = True

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        if self.n_folds < 2:
            raise ValueError("need at least two folds")
        if a.ndim != 1 or a.size == 0 or a.min() < 0 or a.max() >= self.n_folds:
            raise ValueError("fold assignment must be a vector of labels in 0..K-1")
        if np.any(np.bincount(a, minlength=self.n_folds) == 0):
            raise ValueError("every fold must be non-empty")
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)

    @property
    def n(self) -> int:
        return self.assignment.size

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_folds)

    def indices(self, k: int) -> np.ndarray:
        """Units in fold ``k``."""
        return np.flatnonzero(self.assignment == k)

    def complement(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != k)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["unit", "fold"])
            w.writerows(enumerate(self.assignment.tolist()))


def make_folds(d: Dataset, n_folds: int = 3, seed: int | None = 0,
               stratified: bool = True) -> FoldPlan:
    """Random partition into ``n_folds`` near-equal folds.

    With ``stratified=True`` units are shuffled within each arm and dealt
    round-robin across folds (continuing the rotation from arm to arm), so
    every fold holds a near-equal share of every arm and overall fold sizes
    differ by at most one.
    """
    n = d.n
    if not 2 <= n_folds <= n:
        raise ValueError(f"need 2 <= K <= n, got K={n_folds}, n={n}")
    rng = np.random.default_rng(seed)
    if stratified:
        counts = np.bincount(d.treatments - 1, minlength=d.n_arms)
        small = np.flatnonzero(counts < n_folds) + 1
        if small.size:
            raise EmptyArmError(f"stratified folds need >= K={n_folds} units per arm; "
                                 f"arm(s) {small.tolist()} too small")
        order = np.concatenate([rng.permutation(np.flatnonzero(d.treatments == j))
                                for j in range(1, d.n_arms + 1)])
    else:
        order = rng.permutation(n)
    labels = rng.permutation(n_folds)
    assignment = np.empty(n, dtype=np.int64)
    assignment[order] = labels[np.arange(n) % n_folds]
    return FoldPlan(n_folds, assignment, seed, stratified)


def fold_of(plan: FoldPlan, i: int) -> int:
    if not 0 <= i < plan.n:
        raise IndexError(f"unit index {i} out of range 0..{plan.n - 1}")
    return int(plan.assignment[i])


@dataclass(frozen=True, eq=False)
class NuisancePredictions:
    """Per-unit nuisance values used by the doubly robust summands.

    ``mu_hat[i, j-1]`` and ``e_hat[i, j-1]`` are the arm-``j`` outcome
    regression and (clipped) propensity at ``X_i``. For cross-fitted
    predictions they come from models trained without unit ``i``'s fold.
    ``e_raw`` holds the propensities before clipping.
    """

    mu_hat: np.ndarray
    e_hat: np.ndarray
    e_raw: np.ndarray | None = None
    clipped: np.ndarray | None = None

    def __post_init__(self):
        mu = np.asarray(self.mu_hat, dtype=float)
        e = np.asarray(self.e_hat, dtype=float)
        if mu.shape != e.shape or mu.ndim != 2:
            raise ValueError("mu_hat and e_hat must be matching n x J matrices")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(e))):
            raise ValueError("non-finite nuisance predictions")
        if np.any(np.abs(e.sum(axis=1) - 1.0) > 1e-10) or np.any(e < 0):
            raise ValueError("propensity rows must lie on the simplex")
        object.__setattr__(self, "mu_hat", mu)
        object.__setattr__(self, "e_hat", e)
        if self.e_raw is None:
            object.__setattr__(self, "e_raw", e)
        if self.clipped is None:
            object.__setattr__(self, "clipped", np.zeros(mu.shape[0], dtype=bool))

    @classmethod
    def from_raw(cls, mu_hat, e_raw, xi: float | None) -> "NuisancePredictions":
        e_raw = np.asarray(e_raw, dtype=float)
        e = clip_propensity(e_raw, xi) if xi is not None else e_raw
        return cls(mu_hat, e, e_raw, np.any(e != e_raw, axis=1))


def fit_full_sample(d: Dataset, outcome: LearnerSpec = DEFAULT_OUTCOME,
                    propensity: LearnerSpec = DEFAULT_PROPENSITY):
    """Fit both nuisance models on every unit (no sample splitting)."""
    om = fit_outcome(outcome, d.covariates, d.treatments, d.outcomes, d.n_arms)
    pm = fit_propensity(propensity, d.covariates, d.treatments, d.n_arms)
    return om, pm


def fit_out_of_fold(d: Dataset, plan: FoldPlan, outcome: LearnerSpec = DEFAULT_OUTCOME,
                    propensity: LearnerSpec = DEFAULT_PROPENSITY,
                    xi: float | None = 1e-3) -> NuisancePredictions:
    """Cross-fitted nuisance predictions.

    For each fold ``k`` both models are trained on the complement of ``k``
    and evaluated on the units of ``k``; estimated propensities are then
    clipped with ``xi``.
    """
    if plan.n != d.n:
        raise ValueError("fold plan and dataset sizes differ")
    mu = np.empty((d.n, d.n_arms))
    e = np.empty((d.n, d.n_arms))
    for k in range(plan.n_folds):
        test = plan.indices(k)
        train = plan.complement(k)
        counts = np.bincount(d.treatments[train] - 1, minlength=d.n_arms)
        if np.any(counts == 0):
            arm = int(np.flatnonzero(counts == 0)[0]) + 1
            raise EmptyArmError(f"arm {arm} has no units in the training complement of fold {k}")
        Xtr, Ztr = d.covariates[train], d.treatments[train]
        om = fit_outcome(outcome, Xtr, Ztr, d.outcomes[train], d.n_arms)
        pm = fit_propensity(propensity, Xtr, Ztr, d.n_arms)
        mu[test] = om.predict(d.covariates[test])
        e[test] = pm.predict(d.covariates[test])
    return NuisancePredictions.from_raw(mu, e, xi)
