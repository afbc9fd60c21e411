"""Monte Carlo harness for the three-covariate-family linear/logit design.

Covariates per unit: ``(X1, X2, X3)`` trivariate normal, ``X4 ~ U[-3, 3]``,
``X5 ~ chi2(1)``, ``X6 ~ Bernoulli(0.5)``. Arm membership follows a
multinomial logit in ``(1, X)`` with coefficient rows ``betas`` and
potential outcomes are ``(1, X) @ alphas[j] + N(0, noise_sd^2)``.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .crossfit import fit_full_sample, fit_out_of_fold, make_folds
from .data import Dataset, EstimationError, canonical_pairs
from .estimators import dif_estimate, gaipw_estimate, gcf_estimate, oracle_gaipw
from .nuisance import DEFAULT_OUTCOME, DEFAULT_PROPENSITY, ConvergenceWarning, LearnerSpec

MVN_MEAN = np.array([2.0, 1.0, 1.0])
MVN_COV = np.array([[2.0, 1.0, -1.0],
                    [1.0, 1.0, -0.5],
                    [-1.0, -0.5, 1.0]])
# E[(1, X1..X6)]: normal means, U[-3,3] -> 0, chi2(1) -> 1, Bernoulli(.5) -> .5
COVARIATE_MEAN = np.array([1.0, 2.0, 1.0, 1.0, 0.0, 1.0, 0.5])
N_COVARIATES = 6

if not np.isclose(np.linalg.det(MVN_COV), 0.5):
    raise RuntimeError("covariance of the normal block has unexpected determinant")
_MVN_CHOL = np.linalg.cholesky(MVN_COV)  # raises LinAlgError unless positive definite

ESTIMATORS = ("DIF", "GAIPW", "GCF", "ORACLE")


@dataclass(frozen=True)
class SimulationDesign:
    """Parameters of one simulation study.

    ``alphas`` and ``betas`` are ``J x 7`` (intercept first). ``simultaneous``
    selects Bonferroni intervals; the default reports per-pair ``1 - alpha``
    Wald intervals, which is what the coverage tables measure.
    """

    name: str
    alphas: np.ndarray
    betas: np.ndarray
    n: int = 1500
    reps: int = 2000
    n_folds: int = 3
    estimators: tuple = ("DIF", "GAIPW", "GCF")
    seed: int = 0
    noise_sd: float = 1.0
    alpha: float = 0.05
    simultaneous: bool = False
    xi: float = 1e-3
    stratified: bool = True
    outcome: LearnerSpec = DEFAULT_OUTCOME
    propensity: LearnerSpec = DEFAULT_PROPENSITY

    def __post_init__(self):
        a = np.array(self.alphas, dtype=float)
        b = np.array(self.betas, dtype=float)
        if a.ndim != 2 or a.shape != b.shape or a.shape[1] != N_COVARIATES + 1:
            raise ValueError(f"alphas and betas must both be J x {N_COVARIATES + 1}")
        if a.shape[0] < 2:
            raise ValueError("at least two arms required")
        if self.n < 50:
            raise ValueError("n must be >= 50")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators {sorted(unknown)}; choose from {ESTIMATORS}")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "estimators", tuple(self.estimators))

    @property
    def n_arms(self) -> int:
        return self.alphas.shape[0]

    def replace(self, **changes) -> "SimulationDesign":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {"name": self.name, "n_arms": self.n_arms, "n": self.n, "reps": self.reps,
                "n_folds": self.n_folds, "estimators": list(self.estimators), "seed": self.seed,
                "noise_sd": self.noise_sd, "alpha": self.alpha,
                "simultaneous": self.simultaneous, "xi": self.xi, "stratified": self.stratified,
                "alphas": self.alphas.tolist(), "betas": self.betas.tolist(),
                "outcome": self.outcome.to_dict(), "propensity": self.propensity.to_dict()}


_ALPHA_J3 = [[-1.5, 1, 1, 1, 1, 1, 1],
             [-2, 2, 3, 1, 2, 2, 2],
             [2, 3, 1, 2, -1, -1, -1]]


def _rows(*pairs):
    return [list(np.multiply(scale, row)) for scale, row in pairs]


# The six-arm listing repeats some subscripts; rows are taken in listed order.
DESIGNS: dict[str, SimulationDesign] = {
    "design1-adequate": SimulationDesign(
        "design1-adequate", _ALPHA_J3,
        _rows((0, [0] * 7), (0.3, [0, 1, 1, 1, -1, 1, 1]), (0.1, [0, 1, 1, 1, 1, 1, 1]))),
    "design2-lack": SimulationDesign(
        "design2-lack", _ALPHA_J3,
        _rows((0, [0] * 7), (0.9, [0, 1, 1, 1, -1, 1, 1]), (0.1, [0, 1, 1, 1, 1, 1, 1]))),
    "design3-j6": SimulationDesign(
        "design3-j6",
        [[-1.5, 1, 1, 1, 1, 1, 1],
         [-3, 2, 3, 1, 2, 2, 2],
         [3, 3, 1, 2, -1, -1, 4],
         [2.5, 4, 1, 2, -1, -1, -3],
         [2, 5, 1, 2, -1, -1, -2],
         [1.5, 6, 1, 2, -1, -1, -1]],
        _rows((0, [0] * 7),
              (0.2, [0, 1, 1, 2, 1, 1, 1]),
              (0.3, [0, 1, 1, 1, 1, 1, -5]),
              (0.4, [0, 1, 1, 1, 1, 1, 5]),
              (0.5, [0, 1, 1, 1, -2, 1, 1]),
              (0.6, [0, 1, 1, 1, -2, -1, 1]))),
}


def get_design(name: str, **overrides) -> SimulationDesign:
    try:
        base = DESIGNS[name]
    except KeyError:
        raise KeyError(f"unknown design {name!r}; valid names: {', '.join(DESIGNS)}") from None
    return base.replace(**overrides) if overrides else base


def design_from_dict(cfg: Mapping) -> SimulationDesign:
    """Build a design from a parsed config mapping.

    ``base`` names a built-in design to start from; any other key
    overrides the matching field. Learner specs are given as mappings.
    """
    cfg = dict(cfg)
    base = cfg.pop("base", None)
    for key in ("outcome", "propensity"):
        if isinstance(cfg.get(key), Mapping):
            cfg[key] = LearnerSpec(**cfg[key])
    if "folds" in cfg:
        cfg["n_folds"] = cfg.pop("folds")
    if "estimators" in cfg:
        cfg["estimators"] = tuple(str(e).upper() for e in cfg["estimators"])
    fields = {f.name for f in dataclasses.fields(SimulationDesign)}
    unknown = set(cfg) - fields
    if unknown:
        raise ValueError(f"unknown design keys: {sorted(unknown)}")
    if base is not None:
        return get_design(base, **cfg)
    cfg.setdefault("name", "custom")
    return SimulationDesign(**cfg)


# ---------------------------------------------------------------------------
# data generation and truth
# ---------------------------------------------------------------------------

def sample_covariates(n: int, rng: np.random.Generator) -> np.ndarray:
    """``n x 6`` covariate draws from the fixed mixture law."""
    normal = MVN_MEAN + rng.standard_normal((n, 3)) @ _MVN_CHOL.T
    unif = rng.uniform(-3.0, 3.0, n)
    chi2 = rng.standard_normal(n) ** 2
    bern = (rng.random(n) < 0.5).astype(float)
    return np.column_stack([normal, unif, chi2, bern])


def true_propensity(design: SimulationDesign, X: np.ndarray) -> np.ndarray:
    eta = np.column_stack([np.ones(len(X)), X]) @ design.betas.T
    eta -= eta.max(axis=1, keepdims=True)
    e = np.exp(eta)
    return e / e.sum(axis=1, keepdims=True)


def true_outcome_means(design: SimulationDesign, X: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(len(X)), X]) @ design.alphas.T


def generate_dataset(design: SimulationDesign, seed) -> tuple[Dataset, np.ndarray, np.ndarray]:
    """Draw one sample; returns the dataset with true ``mu`` and ``e`` matrices."""
    rng = np.random.default_rng(seed)
    X = sample_covariates(design.n, rng)
    e = true_propensity(design, X)
    # inverse-CDF draw of one category per row
    u = rng.random(design.n)
    cum = np.cumsum(e, axis=1)
    z = np.minimum((u[:, None] > cum).sum(axis=1), design.n_arms - 1) + 1
    mu = true_outcome_means(design, X)
    y = mu[np.arange(design.n), z - 1] + design.noise_sd * rng.standard_normal(design.n)
    d = Dataset(X, z, y, design.n_arms,
                covariate_names=tuple(f"x{i}" for i in range(1, N_COVARIATES + 1)))
    return d, mu, e


def true_ate(design: SimulationDesign) -> np.ndarray:
    """``J x J`` matrix of ``E[Y(j) - Y(k)]`` from the analytic covariate means."""
    arm = design.alphas @ COVARIATE_MEAN
    return arm[:, None] - arm[None, :]


def efficiency_bound(design: SimulationDesign, n_draws: int = 10**6, seed=12345,
                     chunk: int = 250_000) -> np.ndarray:
    """Monte Carlo evaluation of the asymptotic variance for every pair.

    ``V_jk = Var(mu_j - mu_k) + E[s^2 / e_j] + E[s^2 / e_k]`` with ``s`` the
    noise sd. Returned as a symmetric ``J x J`` matrix (zero diagonal).
    """
    rng = np.random.default_rng(seed)
    J = design.n_arms
    s_mu = np.zeros(J)
    s_mumu = np.zeros((J, J))
    s_inv = np.zeros(J)
    done = 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        X = sample_covariates(m, rng)
        mu = true_outcome_means(design, X)
        mu -= design.alphas @ COVARIATE_MEAN  # centre for numerical accuracy
        s_mu += mu.sum(axis=0)
        s_mumu += mu.T @ mu
        s_inv += (1.0 / true_propensity(design, X)).sum(axis=0)
        done += m
    mean = s_mu / n_draws
    cov = (s_mumu - n_draws * np.outer(mean, mean)) / (n_draws - 1)
    diffvar = np.diag(cov)[:, None] + np.diag(cov)[None, :] - 2 * cov
    inv = design.noise_sd ** 2 * s_inv / n_draws
    V = diffvar + inv[:, None] + inv[None, :]
    np.fill_diagonal(V, 0.0)
    return V


# ---------------------------------------------------------------------------
# replications
# ---------------------------------------------------------------------------

def replication_seed(base_seed: int, rep_index: int) -> np.random.SeedSequence:
    """Independent stream for replication ``rep_index`` (counter-based mix)."""
    return np.random.SeedSequence([int(base_seed), int(rep_index)])


def run_replication(design: SimulationDesign, rep_index: int) -> dict:
    """One simulated dataset pushed through every requested estimator."""
    ss = replication_seed(design.seed, rep_index)
    data_seed, fold_seed = ss.spawn(2)
    d, mu, e = generate_dataset(design, data_seed)
    out = {}
    kw = {"alpha": design.alpha, "simultaneous": design.simultaneous}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        if "DIF" in design.estimators:
            out["DIF"] = dif_estimate(d, **kw)
        if "GAIPW" in design.estimators:
            om, pm = fit_full_sample(d, design.outcome, design.propensity)
            out["GAIPW"] = gaipw_estimate(d, om, pm, xi=design.xi, **kw)
        if "GCF" in design.estimators:
            fold_int = int(fold_seed.generate_state(1, dtype=np.uint64)[0])
            plan = make_folds(d, design.n_folds, fold_int, design.stratified)
            nuis = fit_out_of_fold(d, plan, design.outcome, design.propensity, design.xi)
            out["GCF"] = gcf_estimate(d, plan, nuis, **kw)
        if "ORACLE" in design.estimators:
            out["ORACLE"] = oracle_gaipw(d, mu, e, **kw)
    return out


@dataclass
class _Accumulator:
    """Sums per estimator and pair; merging is order independent."""

    n_pairs: int
    count: int = 0
    err: np.ndarray = None
    err2: np.ndarray = None
    covered: np.ndarray = None
    width: np.ndarray = None

    def __post_init__(self):
        for name in ("err", "err2", "covered", "width"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(self.n_pairs))

    def add(self, est, lo, hi, truth):
        e = est - truth
        self.count += 1
        self.err += e
        self.err2 += e * e
        self.covered += (lo <= truth) & (truth <= hi)
        self.width += hi - lo

    def merge(self, other: "_Accumulator") -> "_Accumulator":
        return _Accumulator(self.n_pairs, self.count + other.count, self.err + other.err,
                            self.err2 + other.err2, self.covered + other.covered,
                            self.width + other.width)

    def metrics(self):
        """``(bias, rmse, coverage, mean_width)`` per pair."""
        c = self.count
        return self.err / c, np.sqrt(self.err2 / c), self.covered / c, self.width / c


@dataclass
class MetricsReport:
    design: SimulationDesign
    pairs: list
    truth: np.ndarray
    bias: dict
    rmse: dict
    coverage: dict
    mean_width: dict
    n_ok: int
    failures: list = field(default_factory=list)
    wall_clock: float = 0.0
    draws: dict = field(default_factory=dict, repr=False)

    @property
    def n_failed(self) -> int:
        return len(self.failures)

    @property
    def drop_rate(self) -> float:
        return self.n_failed / (self.n_ok + self.n_failed)

    def rows(self) -> list[dict]:
        out = []
        for m in self.bias:
            for p, pr in enumerate(self.pairs):
                out.append({"design": self.design.name, "n": self.design.n,
                            "estimator": m, "pair": f"{pr.j}-{pr.j_prime}",
                            "truth": float(self.truth[p]),
                            "bias": float(self.bias[m][p]), "rmse": float(self.rmse[m][p]),
                            "coverage": float(self.coverage[m][p]),
                            "mean_ci_width": float(self.mean_width[m][p]),
                            "replications": self.n_ok, "failed": self.n_failed})
        return out

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        rows = self.rows()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                fh.write(text)
        return text

    def to_table(self) -> str:
        names = [f"tau_{pr.j},{pr.j_prime}" for pr in self.pairs]
        colw = max(10, max(len(s) for s in names) + 2)
        level = f"{100 * (1 - self.design.alpha):g}%"
        lines = [f"{self.design.name}: J={self.design.n_arms}, N={self.design.n}, "
                 f"R={self.n_ok} ({self.n_failed} failed), {level} "
                 f"{'simultaneous' if self.design.simultaneous else 'per-pair'} Wald CIs",
                 f"{'Metric':<10}{'':<8}" + "".join(f"{s:>{colw}}" for s in names)]
        rule = "-" * len(lines[-1])
        lines.insert(1, rule)
        lines.append(rule)
        for metric, table, fmt in (("Bias", self.bias, "{:.4f}"), ("RMSE", self.rmse, "{:.4f}"),
                                   ("Coverage", self.coverage, "{:.2%}")):
            for k, m in enumerate(table):
                label = metric if k == 0 else ""
                lines.append(f"{label:<10}{m:<8}" + "".join(
                    f"{fmt.format(v):>{colw}}" for v in table[m]))
            lines.append(rule)
        return "\n".join(lines)


def _run_chunk(args):
    design, reps = args
    pairs = canonical_pairs(design.n_arms)
    results = []
    for r in reps:
        try:
            ests = run_replication(design, r)
        except (EstimationError, np.linalg.LinAlgError, FloatingPointError) as exc:
            results.append((r, None, f"{type(exc).__name__}: {exc}"))
            continue
        packed = {}
        for m, est in ests.items():
            idx = ([p.j - 1 for p in pairs], [p.j_prime - 1 for p in pairs])
            packed[m] = (est.estimates[idx], est.variance[idx], est.ci_lower[idx],
                         est.ci_upper[idx])
        results.append((r, packed, None))
    return results


def run_monte_carlo(design: SimulationDesign, threads: int = 1,
                    progress: bool = False) -> MetricsReport:
    """Run ``design.reps`` replications and aggregate bias, RMSE and coverage.

    Replications are independent and seeded by index, so the report does
    not depend on ``threads`` or scheduling. Failed replications are
    dropped and listed in ``report.failures``.
    """
    t0 = time.perf_counter()
    pairs = canonical_pairs(design.n_arms)
    tau = true_ate(design)
    truth = np.array([tau[p.j - 1, p.j_prime - 1] for p in pairs])
    reps = list(range(design.reps))
    if threads > 1:
        chunks = [(design, reps[i::threads * 4]) for i in range(threads * 4)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = [r for chunk in pool.map(_run_chunk, chunks) for r in chunk]
    else:
        results = []
        step = max(1, design.reps // 20)
        for i in range(0, design.reps, step):
            results.extend(_run_chunk((design, reps[i:i + step])))
            if progress:
                print(f"  {min(i + step, design.reps)}/{design.reps} replications", flush=True)
    results.sort(key=lambda t: t[0])
    failures = [(r, msg) for r, packed, msg in results if packed is None]
    ok = [packed for _, packed, _ in results if packed is not None]
    if not ok:
        raise EstimationError(f"all {design.reps} replications failed; first: {failures[0][1]}")
    acc = {m: _Accumulator(len(pairs)) for m in ok[0]}
    draws = {m: {"estimate": [], "variance": []} for m in ok[0]}
    for packed in ok:
        for m, (est, var, lo, hi) in packed.items():
            acc[m].add(est, lo, hi, truth)
            draws[m]["estimate"].append(est)
            draws[m]["variance"].append(var)
    bias, rmse, cov, width = {}, {}, {}, {}
    for m, a in acc.items():
        bias[m], rmse[m], cov[m], width[m] = a.metrics()
    draws = {m: {k: np.array(v) for k, v in dd.items()} for m, dd in draws.items()}
    return MetricsReport(design, pairs, truth, bias, rmse, cov, width, len(ok), failures,
                         time.perf_counter() - t0, draws)
