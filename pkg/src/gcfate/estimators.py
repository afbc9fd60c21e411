"""Pairwise ATE estimators: DIF, GAIPW, cross-fitted GCF and the oracle.

All doubly robust variants share one construction. For arm ``j`` the
per-unit summand is

    g_ij = mu_j(X_i) + 1{Z_i = j} (Y_i - mu_j(X_i)) / e_j(X_i)

and the pair summand is ``S_i = g_ij - g_ij'``. The point estimate is the
mean of ``S``, its variance the sample variance of ``S`` (``N - 1``
denominator), and the Wald interval half-width is
``z * sqrt(V / N)``. The methods differ only in where ``mu`` and ``e``
come from.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from math import comb

import numpy as np

from ._normal import norm_ppf
from .crossfit import FoldPlan, NuisancePredictions
from .data import Dataset, EmptyArmError, PairIndex, arm_counts, canonical_pairs
from .nuisance import clip_propensity

SCHEMA_VERSION = 1
METHODS = ("DIF", "GAIPW", "GCF", "ORACLE")


@dataclass(frozen=True, eq=False)
class AteEstimate:
    """Pairwise effects for all ordered arm pairs.

    ``estimates[j-1, k-1]`` estimates ``E[Y(j) - Y(k)]``. ``variance`` is on
    the asymptotic scale (``Var(sqrt(N) * tau_hat)``), so the standard
    error is ``sqrt(variance / n_used)``.
    """

    method: str
    estimates: np.ndarray
    variance: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    alpha: float
    n_used: int
    simultaneous: bool = True
    arm_means: np.ndarray | None = None
    labels: tuple = ()

    @property
    def n_arms(self) -> int:
        return self.estimates.shape[0]

    def pairs(self) -> list[PairIndex]:
        return canonical_pairs(self.n_arms)

    def __getitem__(self, pair) -> float:
        j, k = (pair.j, pair.j_prime) if isinstance(pair, PairIndex) else pair
        return float(self.estimates[j - 1, k - 1])

    def std_error(self, j: int, k: int) -> float:
        return float(np.sqrt(self.variance[j - 1, k - 1] / self.n_used))

    def rows(self) -> list[dict]:
        out = []
        for pr in self.pairs():
            a, b = pr.j - 1, pr.j_prime - 1
            out.append({
                "pair": f"{pr.j}-{pr.j_prime}",
                "arms": [self._label(pr.j), self._label(pr.j_prime)],
                "estimate": float(self.estimates[a, b]),
                "variance": float(self.variance[a, b]),
                "std_error": self.std_error(pr.j, pr.j_prime),
                "ci_lower": float(self.ci_lower[a, b]),
                "ci_upper": float(self.ci_upper[a, b]),
            })
        return out

    def _label(self, j):
        lab = self.labels[j - 1] if self.labels else j
        return lab.item() if isinstance(lab, np.generic) else lab

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "method": self.method, "alpha": self.alpha,
                "simultaneous": self.simultaneous, "n_used": self.n_used,
                "n_arms": self.n_arms, "pairs": self.rows()}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def to_table(self) -> str:
        level = f"{100 * (1 - self.alpha):g}%" + (" simultaneous" if self.simultaneous else "")
        head = f"{'pair':<10}{'estimate':>12}{'std.err':>12}{'ci_lower':>12}{'ci_upper':>12}  method"
        lines = [f"{self.method} ({level} CI, n={self.n_used})", head]
        for r in self.rows():
            lines.append(f"{r['pair']:<10}{r['estimate']:>12.4f}{r['std_error']:>12.4f}"
                         f"{r['ci_lower']:>12.4f}{r['ci_upper']:>12.4f}  {self.method}")
        return "\n".join(lines)


def ci_multiplier(n_arms: int, alpha: float, simultaneous: bool = True) -> float:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    m = comb(n_arms, 2) if simultaneous else 1
    return norm_ppf(1.0 - alpha / (2.0 * m))


def simultaneous_ci(tau_hat: float, v_hat: float, n: int, n_arms: int, alpha: float = 0.05,
                    simultaneous: bool = True) -> tuple[float, float]:
    """Bonferroni-adjusted Wald interval for one pair.

    With ``simultaneous=False`` the plain per-pair ``1 - alpha`` interval
    is returned instead.
    """
    if v_hat < 0:
        raise ValueError("variance must be non-negative")
    half = ci_multiplier(n_arms, alpha, simultaneous) * np.sqrt(v_hat) / np.sqrt(n)
    return tau_hat - half, tau_hat + half


def variance_estimate(s, tau_hat: float) -> float:
    """``sum((s_i - tau_hat)^2) / (N - 1)``."""
    s = np.asarray(s, dtype=float)
    if s.size < 2:
        raise ValueError("variance needs at least two units")
    r = s - tau_hat
    return float(r @ r / (s.size - 1))


def arm_summands(d: Dataset, mu: np.ndarray, e: np.ndarray) -> np.ndarray:
    """``n x J`` matrix of per-arm doubly robust summands ``g_ij``."""
    mu = np.asarray(mu, dtype=float)
    e = np.asarray(e, dtype=float)
    if mu.shape != (d.n, d.n_arms) or e.shape != (d.n, d.n_arms):
        raise ValueError(f"nuisance arrays must be {d.n} x {d.n_arms}")
    D = d.indicators()
    used = e[D.astype(bool)]
    assert np.all(used > 0), "zero propensity in a denominator"
    resid = d.outcomes[:, None] - mu
    return mu + np.divide(D * resid, e, out=np.zeros_like(mu), where=D.astype(bool))


def pseudo_outcome(d: Dataset, nuis: NuisancePredictions, pair: PairIndex,
                   binary_style_denominator: bool = False) -> np.ndarray:
    """Per-unit summands ``S_i`` for one arm pair.

    ``binary_style_denominator=True`` divides the second arm's residual by
    ``1 - e_j'`` instead of ``e_j'``; this only agrees with the usual
    summand for two arms and is kept for audits of that form.
    """
    j, k = pair.j - 1, pair.j_prime - 1
    mu, e = nuis.mu_hat, nuis.e_hat
    y, z = d.outcomes, d.treatments
    in_j = z == pair.j
    in_k = z == pair.j_prime
    den_k = 1.0 - e[:, k] if binary_style_denominator else e[:, k]
    assert np.all(e[in_j, j] > 0) and np.all(den_k[in_k] > 0), "zero propensity in a denominator"
    s = mu[:, j] - mu[:, k]
    s = s + np.where(in_j, (y - mu[:, j]) / np.where(in_j, e[:, j], 1.0), 0.0)
    s = s - np.where(in_k, (y - mu[:, k]) / np.where(in_k, den_k, 1.0), 0.0)
    return s


def _pair_matrices(method, d, pair_values, alpha, simultaneous, arm_means=None):
    J = d.n_arms
    est = np.zeros((J, J))
    var = np.zeros((J, J))
    for (j, k), (tau, v) in pair_values.items():
        est[j - 1, k - 1], est[k - 1, j - 1] = tau, -tau
        var[j - 1, k - 1] = var[k - 1, j - 1] = v
    half = ci_multiplier(J, alpha, simultaneous) * np.sqrt(var) / np.sqrt(d.n)
    return AteEstimate(method, est, var, est - half, est + half, alpha, d.n, simultaneous,
                       arm_means, d.labels)


def _from_summands(method, d, G, alpha, simultaneous, fold_weights=None):
    values = {}
    for pr in canonical_pairs(d.n_arms):
        s = G[:, pr.j - 1] - G[:, pr.j_prime - 1]
        tau = float(s.mean())
        if fold_weights is not None:
            tau = _check_fold_route(s, tau, fold_weights)
        values[(pr.j, pr.j_prime)] = (tau, variance_estimate(s, tau))
    return _pair_matrices(method, d, values, alpha, simultaneous, G.mean(axis=0))


def _check_fold_route(s, pooled, plan: FoldPlan) -> float:
    """Size-weighted fold means; must equal the pooled mean."""
    fold_means = np.bincount(plan.assignment, weights=s, minlength=plan.n_folds) / plan.sizes
    weighted = float(np.sum(plan.sizes / plan.n * fold_means))
    if not np.isclose(weighted, pooled, rtol=1e-12, atol=1e-12):
        raise AssertionError(f"fold-weighted mean {weighted!r} != pooled mean {pooled!r}")
    return weighted


def dif_estimate(d: Dataset, alpha: float = 0.05, simultaneous: bool = True) -> AteEstimate:
    """Difference in arm means with a two-sample variance.

    The variance is ``n * (s_j^2 / n_j + s_k^2 / n_k)`` so the common
    interval routine applies; single-unit arms contribute zero spread.
    """
    summary = arm_counts(d)
    if np.any(summary.empty):
        raise EmptyArmError(f"empty arm(s): {(np.flatnonzero(summary.empty) + 1).tolist()}")
    s2 = np.array([np.var(d.outcomes[d.treatments == j], ddof=1) if c > 1 else 0.0
                   for j, c in enumerate(summary.counts, start=1)])
    values = {}
    for pr in canonical_pairs(d.n_arms):
        a, b = pr.j - 1, pr.j_prime - 1
        tau = float(summary.means[a] - summary.means[b])
        v = d.n * (s2[a] / summary.counts[a] + s2[b] / summary.counts[b])
        values[(pr.j, pr.j_prime)] = (tau, float(v))
    return _pair_matrices("DIF", d, values, alpha, simultaneous, summary.means)


def gcf_estimate(d: Dataset, plan: FoldPlan, nuis: NuisancePredictions, alpha: float = 0.05,
                 simultaneous: bool = True, binary_style_denominator: bool = False) -> AteEstimate:
    """Cross-fitted doubly robust estimate from out-of-fold predictions.

    Each pair is computed as the fold-size weighted average of per-fold
    means of ``S_i``; that value is checked against the pooled mean.
    """
    if plan.n != d.n or nuis.mu_hat.shape != (d.n, d.n_arms):
        raise ValueError("dataset, fold plan and predictions disagree in size")
    if not binary_style_denominator:
        G = arm_summands(d, nuis.mu_hat, nuis.e_hat)
        return _from_summands("GCF", d, G, alpha, simultaneous, fold_weights=plan)
    values = {}
    for pr in canonical_pairs(d.n_arms):
        s = pseudo_outcome(d, nuis, pr, binary_style_denominator=True)
        tau = _check_fold_route(s, float(s.mean()), plan)
        values[(pr.j, pr.j_prime)] = (tau, variance_estimate(s, tau))
    return _pair_matrices("GCF", d, values, alpha, simultaneous)


def gaipw_estimate(d: Dataset, om, pm, alpha: float = 0.05, xi: float | None = 1e-3,
                   simultaneous: bool = True) -> AteEstimate:
    """Doubly robust estimate with models fitted on the full sample.

    ``om`` and ``pm`` are fitted outcome / propensity models (anything with
    a ``predict(X)`` returning an ``n x J`` matrix).
    """
    mu = om.predict(d.covariates)
    e = pm.predict(d.covariates)
    if xi is not None:
        e = clip_propensity(e, xi)
    return _from_summands("GAIPW", d, arm_summands(d, mu, e), alpha, simultaneous)


def oracle_gaipw(d: Dataset, true_mu, true_e, alpha: float = 0.05,
                 simultaneous: bool = True) -> AteEstimate:
    """Infeasible estimator using the true nuisance functions (no clipping)."""
    true_e = np.asarray(true_e, dtype=float)
    if np.any(true_e <= 0) or np.any(np.abs(true_e.sum(axis=1) - 1.0) > 1e-10):
        raise ValueError("true propensity rows must lie on the open simplex")
    return _from_summands("ORACLE", d, arm_summands(d, true_mu, true_e), alpha, simultaneous)
