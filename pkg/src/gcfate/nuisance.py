"""Outcome regressions and generalized propensity score models.

Both nuisance functions sit behind a small learner contract so other
models can be plugged in through :func:`register_learner`:

* outcome learners: ``fit(X, Z, Y, n_arms, spec) -> obj`` with
  ``obj.predict(X) -> (m, J)`` arm-wise conditional means;
* propensity learners: ``fit(X, Z, n_arms, spec) -> obj`` with
  ``obj.predict(X) -> (m, J)`` rows on the probability simplex.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import EmptyArmError, EstimationError


class SingularSystemError(EstimationError):
    pass


class ConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class LearnerSpec:
    """Learner choice plus its hyperparameters.

    ``ridge`` penalises slopes only, never the intercept.
    """

    kind: str
    ridge: float = 0.0
    max_iter: int = 100
    tol: float = 1e-8
    options: dict = field(default_factory=dict, hash=False, compare=False)

    def __post_init__(self):
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "ridge": self.ridge, "max_iter": self.max_iter,
                "tol": self.tol, "options": dict(self.options)}


DEFAULT_OUTCOME = LearnerSpec("linear", ridge=0.0)
DEFAULT_PROPENSITY = LearnerSpec("multinomial-logit", ridge=1e-8, max_iter=100, tol=1e-8)


def add_intercept(features) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.hstack([np.ones((X.shape[0], 1)), X])


# ---------------------------------------------------------------------------
# outcome regression
# ---------------------------------------------------------------------------

def fit_ols(features, targets, ridge: float = 0.0) -> np.ndarray:
    """Least squares with an unpenalised intercept.

    Minimises ``||y - b0 - X b||^2 + ridge * ||b||^2`` through an SVD-based
    solve of the (row-augmented) design. Returns ``(b0, b_1, ..., b_p)``.
    """
    Xt = add_intercept(features)
    y = np.asarray(targets, dtype=float)
    m, q = Xt.shape
    if m < 1 or y.shape != (m,):
        raise ValueError("features and targets must have the same number of rows (>= 1)")
    if not (np.all(np.isfinite(Xt)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite input to fit_ols")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    if ridge > 0 and q > 1:
        pen = np.hstack([np.zeros((q - 1, 1)), np.sqrt(ridge) * np.eye(q - 1)])
        A = np.vstack([Xt, pen])
        b = np.concatenate([y, np.zeros(q - 1)])
    else:
        A, b = Xt, y
    coef, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if rank < q:
        raise SingularSystemError("singular system; set ridge > 0")
    return coef


@dataclass(frozen=True)
class OutcomeModel:
    """Separate linear regression per arm; ``coef[j-1]`` is arm ``j``."""

    coef: np.ndarray
    resid_var: np.ndarray
    n_train: np.ndarray

    def predict(self, features) -> np.ndarray:
        return add_intercept(features) @ self.coef.T

    def to_dict(self) -> dict:
        return {"kind": "linear", "coef": self.coef.tolist(),
                "resid_var": self.resid_var.tolist(), "n_train": self.n_train.tolist()}


def fit_outcome_model(features, labels, targets, n_arms: int,
                      spec: LearnerSpec = DEFAULT_OUTCOME) -> OutcomeModel:
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    Z = np.asarray(labels)
    y = np.asarray(targets, dtype=float)
    q = X.shape[1] + 1
    coef = np.empty((n_arms, q))
    resid_var = np.empty(n_arms)
    counts = np.empty(n_arms, dtype=int)
    for j in range(1, n_arms + 1):
        mask = Z == j
        counts[j - 1] = mask.sum()
        if not counts[j - 1]:
            raise EmptyArmError(f"empty arm {j} in outcome training data")
        coef[j - 1] = fit_ols(X[mask], y[mask], spec.ridge)
        resid = y[mask] - add_intercept(X[mask]) @ coef[j - 1]
        dof = max(counts[j - 1] - q, 1)
        resid_var[j - 1] = resid @ resid / dof
    return OutcomeModel(coef, resid_var, counts)


# ---------------------------------------------------------------------------
# generalized propensity score
# ---------------------------------------------------------------------------

def _softmax_ref(eta: np.ndarray) -> np.ndarray:
    """Softmax over ``[eta, 0]`` (reference arm last)."""
    full = np.concatenate([eta, np.zeros(eta.shape[:-1] + (1,))], axis=-1)
    full -= full.max(axis=-1, keepdims=True)
    np.exp(full, out=full)
    full /= full.sum(axis=-1, keepdims=True)
    return full


@dataclass(frozen=True)
class PropensityModel:
    """Multinomial logit with reference arm ``J`` (implicit zero row).

    ``coef`` has shape ``(J-1, p+1)``, intercept first.
    """

    coef: np.ndarray
    n_iter: int = 0
    grad_norm: float = 0.0
    converged: bool = True
    loglik_trace: tuple = ()

    @property
    def n_arms(self) -> int:
        return self.coef.shape[0] + 1

    def predict(self, features) -> np.ndarray:
        return _softmax_ref(add_intercept(features) @ self.coef.T)

    def to_dict(self) -> dict:
        return {"kind": "multinomial-logit", "reference_arm": self.n_arms,
                "coef": self.coef.tolist(), "n_iter": self.n_iter,
                "grad_norm": self.grad_norm, "converged": self.converged}


def predict_propensity(model: PropensityModel, x) -> np.ndarray:
    """Generalized propensity vector for a single covariate vector ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return model.predict(x[None, :])[0]


def _mnl_objective(theta, Xt, D, ridge, mask):
    """Mean penalised log-likelihood, its gradient and the negative Hessian."""
    m, q = Xt.shape
    r = D.shape[1] - 1
    B = theta.reshape(r, q)
    eta = Xt @ B.T
    full = np.concatenate([eta, np.zeros((m, 1))], axis=1)
    mx = full.max(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(np.exp(full - mx).sum(axis=1))
    pen = 0.5 * ridge * np.sum((B * mask) ** 2)
    ll = (np.sum(D[:, :r] * eta) - lse.sum()) / m - pen
    P = np.exp(full - lse[:, None])[:, :r]
    grad = ((D[:, :r] - P).T @ Xt) / m - ridge * B * mask
    neg_h = np.empty((r, q, r, q))
    for a in range(r):
        for b in range(a, r):
            w = (P[:, a] * ((a == b) - P[:, b])) / m
            blk = Xt.T @ (w[:, None] * Xt)
            neg_h[a, :, b, :] = blk
            neg_h[b, :, a, :] = blk.T
    neg_h = neg_h.reshape(r * q, r * q)
    neg_h[np.diag_indices_from(neg_h)] += ridge * np.tile(mask[0], r)
    return ll, grad.ravel(), neg_h


def fit_multinomial_logit(features, labels, spec: LearnerSpec = DEFAULT_PROPENSITY,
                          n_arms: int | None = None) -> PropensityModel:
    """Penalised maximum likelihood for the multinomial logit by Newton/IRLS.

    Each Newton step is halved until the penalised log-likelihood does not
    decrease, so the recorded trace is monotone. Iteration stops once the
    max-norm of the (per-observation) gradient is below ``spec.tol``.
    Hitting ``spec.max_iter`` sets ``converged=False`` and warns.
    """
    Xt = add_intercept(features)
    Z = np.asarray(labels).astype(int)
    J = int(n_arms if n_arms is not None else Z.max())
    m, q = Xt.shape
    counts = np.bincount(Z, minlength=J + 1)[1:J + 1]
    if np.any(counts == 0) or Z.min() < 1 or Z.max() > J:
        missing = (np.flatnonzero(counts == 0) + 1).tolist()
        raise EmptyArmError(f"empty arm in training fold: arm(s) {missing}")
    D = (Z[:, None] == np.arange(1, J + 1)[None, :]).astype(float)
    mask = np.ones((1, q))
    mask[0, 0] = 0.0

    theta = np.zeros((J - 1) * q)
    ll, grad, neg_h = _mnl_objective(theta, Xt, D, spec.ridge, mask)
    trace = [ll]
    gnorm = float(np.max(np.abs(grad)))
    it = 0
    while gnorm >= spec.tol and it < spec.max_iter:
        it += 1
        try:
            step = np.linalg.solve(neg_h, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(neg_h, grad, rcond=None)[0]
        t = 1.0
        for _ in range(60):
            cand = theta + t * step
            ll_new, g_new, h_new = _mnl_objective(cand, Xt, D, spec.ridge, mask)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-15 * abs(ll):
                break
            t *= 0.5
        else:
            break
        assert ll_new >= ll - 1e-12 * max(1.0, abs(ll)), "log-likelihood decreased"
        theta, ll, grad, neg_h = cand, ll_new, g_new, h_new
        trace.append(ll)
        gnorm = float(np.max(np.abs(grad)))
    converged = gnorm < spec.tol
    if not converged:
        warnings.warn(f"multinomial logit did not converge in {it} iterations "
                      f"(gradient max-norm {gnorm:.3g})", ConvergenceWarning, stacklevel=2)
    coef = theta.reshape(J - 1, q)
    if not np.all(np.isfinite(coef)):
        raise EstimationError("non-finite multinomial logit coefficients")
    return PropensityModel(coef, it, gnorm, converged, tuple(trace))


def clip_propensity(e, xi: float) -> np.ndarray:
    """Bound propensities to ``[xi, 1 - xi]`` while keeping rows on the simplex.

    Components below ``xi`` are pinned to ``xi`` and the remaining mass is
    shared among the other components in proportion to their current
    values; this repeats until nothing falls below ``xi``. A row on the
    simplex with every entry at least ``xi`` has every entry at most
    ``1 - xi``, so the upper bound needs no separate step. Rows already
    inside the bounds are returned untouched, so the map is idempotent.
    Works on a single vector or an ``(n, J)`` matrix.
    """
    if not 0.0 < xi < 0.5:
        raise ValueError("xi must lie in (0, 0.5)")
    arr = np.array(e, dtype=float)
    single = arr.ndim == 1
    E = np.atleast_2d(arr)
    J = E.shape[1]
    if J * xi > 1.0:
        raise ValueError(f"xi={xi} infeasible for {J} arms")
    rows = np.flatnonzero(np.any((E < xi) | (E > 1.0 - xi), axis=1))
    for i in rows:
        v = E[i].copy()
        fixed = np.zeros(J, dtype=bool)
        for _ in range(J):
            below = ~fixed & (v < xi)
            if not below.any():
                break
            v[below] = xi
            fixed |= below
            free = ~fixed
            s = v[free].sum()
            v[free] = v[free] * ((1.0 - xi * fixed.sum()) / s)
        E[i] = v
    return E[0] if single else E


# ---------------------------------------------------------------------------
# learner registry
# ---------------------------------------------------------------------------

def _fit_linear(X, Z, Y, n_arms, spec):
    return fit_outcome_model(X, Z, Y, n_arms, spec)


def _fit_mnl(X, Z, n_arms, spec):
    return fit_multinomial_logit(X, Z, spec, n_arms=n_arms)


OUTCOME_LEARNERS: dict[str, Callable] = {"linear": _fit_linear}
PROPENSITY_LEARNERS: dict[str, Callable] = {"multinomial-logit": _fit_mnl}


def register_learner(role: str, name: str, fit: Callable) -> None:
    """Register an external learner under ``role`` ('outcome' or 'propensity')."""
    registry = {"outcome": OUTCOME_LEARNERS, "propensity": PROPENSITY_LEARNERS}[role]
    registry[name] = fit


def fit_outcome(spec: LearnerSpec, X, Z, Y, n_arms):
    try:
        fit = OUTCOME_LEARNERS[spec.kind]
    except KeyError:
        raise ValueError(f"unknown outcome learner {spec.kind!r}; "
                         f"known: {sorted(OUTCOME_LEARNERS)}") from None
    return fit(X, Z, Y, n_arms, spec)


def fit_propensity(spec: LearnerSpec, X, Z, n_arms):
    try:
        fit = PROPENSITY_LEARNERS[spec.kind]
    except KeyError:
        raise ValueError(f"unknown propensity learner {spec.kind!r}; "
                         f"known: {sorted(PROPENSITY_LEARNERS)}") from None
    return fit(X, Z, n_arms, spec)
