import numpy as np
import pytest

from gcfate import (EstimationError, efficiency_bound, generate_dataset, get_design, run_monte_carlo,
                    run_replication, true_ate)
from gcfate.simulation import (COVARIATE_MEAN, MVN_COV, _Accumulator, design_from_dict,
                               sample_covariates)

import oracles


def test_randomized_design_propensities():
    design = get_design("design1-adequate", n=30_000, betas=np.zeros((3, 7)))
    d, _, e = generate_dataset(design, 1)
    assert np.allclose(e, 1 / 3)
    counts = np.bincount(d.treatments, minlength=4)[1:]
    sd = np.sqrt(design.n * (1 / 3) * (2 / 3))
    assert np.all(np.abs(counts - design.n / 3) < 4 * sd)


def test_identical_arms():
    alphas = np.tile([0.5, 1, -1, 2, 0, 1, 3], (3, 1))
    design = get_design("design1-adequate", n=200, alphas=alphas, noise_sd=0.0)
    d, mu, _ = generate_dataset(design, 2)
    assert np.all(mu[:, [0]] == mu)
    assert np.array_equal(d.outcomes, mu[:, 0])
    assert np.all(true_ate(design) == 0)


def test_covariate_moments():
    X = sample_covariates(100_000, np.random.default_rng(0))
    se = X.std(axis=0) / np.sqrt(len(X))
    assert np.all(np.abs(X.mean(axis=0) - COVARIATE_MEAN[1:]) < 4 * se)
    assert np.allclose(np.cov(X[:, :3].T), MVN_COV, atol=0.05)
    assert X[:, 4].min() >= 0 and set(np.unique(X[:, 5])) == {0.0, 1.0}
    assert X[:, 3].min() >= -3 and X[:, 3].max() <= 3


def test_covariance_factorisation():
    assert np.linalg.det(MVN_COV) == pytest.approx(0.5, abs=1e-12)


def test_design1_effects():
    tau = true_ate(get_design("design1-adequate"))
    for (j, k), v in oracles.DESIGN1_TAU.items():
        assert tau[j - 1, k - 1] == v
    assert tau[1, 2] == tau[0, 2] - tau[0, 1]
    assert np.array_equal(tau, -tau.T)


def test_design1_effects_monte_carlo():
    # smaller draw than the acceptance run; same oracle
    design = get_design("design1-adequate")
    mc, se = oracles.mc_arm_contrast(design.alphas, n_draws=10**6, seed=4)
    tau = true_ate(design)
    assert np.all(np.abs(mc - tau) <= 4 * se + 1e-12)


def test_designs_shapes():
    assert get_design("design3-j6").n_arms == 6
    assert true_ate(get_design("design3-j6")).shape == (6, 6)
    with pytest.raises(KeyError, match="design1-adequate"):
        get_design("design9")


def test_design_from_dict():
    d = design_from_dict({"base": "design2-lack", "n": 500, "folds": 4,
                          "estimators": ["dif", "gcf"], "outcome": {"kind": "linear",
                                                                    "ridge": 0.1}})
    assert (d.n, d.n_folds, d.estimators, d.outcome.ridge) == (500, 4, ("DIF", "GCF"), 0.1)
    assert np.array_equal(d.betas, get_design("design2-lack").betas)
    with pytest.raises(ValueError, match="unknown design keys"):
        design_from_dict({"base": "design1-adequate", "bogus": 1})


def test_replication_determinism():
    design = get_design("design1-adequate", n=300, estimators=("DIF", "GAIPW", "GCF", "ORACLE"))
    a, b = run_replication(design, 5), run_replication(design, 5)
    for m in a:
        assert np.array_equal(a[m].estimates, b[m].estimates)
        assert np.array_equal(a[m].variance, b[m].variance)
    c = run_replication(design, 6)
    assert not np.array_equal(a["GCF"].estimates, c["GCF"].estimates)


def test_dif_only_report():
    rep = run_monte_carlo(get_design("design1-adequate", n=200, reps=5, estimators=("DIF",)))
    assert set(rep.bias) == {"DIF"}
    assert {r["estimator"] for r in rep.rows()} == {"DIF"}
    assert len(rep.rows()) == 3


def test_metrics_constant_truth():
    acc = _Accumulator(2)
    truth = np.array([1.0, -2.0])
    for _ in range(4):
        acc.add(truth.copy(), truth - 0.5, truth + 0.5, truth)
    bias, rmse, cov, width = acc.metrics()
    assert bias.tolist() == [0, 0] and rmse.tolist() == [0, 0] and cov.tolist() == [1, 1]
    assert width.tolist() == [1.0, 1.0]


def test_metrics_alternating():
    acc = _Accumulator(1)
    truth = np.array([3.0])
    for r in range(10):
        est = truth + (-1 if r % 2 else 1)
        acc.add(est, truth - 2, truth + 2, truth)
    bias, rmse, cov, _ = acc.metrics()
    assert bias[0] == 0 and rmse[0] == 1 and cov[0] == 1


def test_merge_order_independent(rng):
    parts = []
    for _ in range(3):
        a = _Accumulator(2)
        for _ in range(5):
            est = rng.normal(size=2)
            a.add(est, est - 1, est + 1, np.zeros(2))
        parts.append(a)
    x = parts[0].merge(parts[1]).merge(parts[2])
    y = parts[2].merge(parts[0].merge(parts[1]))
    for u, v in zip(x.metrics(), y.metrics()):
        np.testing.assert_allclose(u, v, rtol=1e-15)
    assert x.count == 15


def test_report_properties_and_threads():
    design = get_design("design1-adequate", n=300, reps=12)
    one = run_monte_carlo(design)
    two = run_monte_carlo(design, threads=2)
    for m in one.bias:
        assert np.array_equal(one.bias[m], two.bias[m])
        assert np.array_equal(one.coverage[m], two.coverage[m])
        assert np.all(one.rmse[m] >= np.abs(one.bias[m]))
        assert np.all((one.coverage[m] >= 0) & (one.coverage[m] <= 1))
    csv_text = one.to_csv()
    assert csv_text.splitlines()[0].startswith("design,n,estimator,pair")
    assert len(csv_text.splitlines()) == 1 + 9
    assert "Coverage" in one.to_table()


def test_randomized_design_unbiased():
    design = get_design("design1-adequate", n=400, reps=100, betas=np.zeros((3, 7)))
    rep = run_monte_carlo(design)
    for m in ("DIF", "GAIPW", "GCF"):
        assert np.all(np.abs(rep.bias[m]) <= 3 * rep.rmse[m] / np.sqrt(rep.n_ok))


def test_efficiency_bound_shape():
    V = efficiency_bound(get_design("design1-adequate"), n_draws=20_000)
    assert V.shape == (3, 3) and np.allclose(V, V.T) and np.all(np.diag(V) == 0)
    assert np.all(V[~np.eye(3, dtype=bool)] > 0)


def test_failed_replications_are_counted():
    # arm 1 holds ~2% of units, so per-arm OLS on a training fold is often singular
    rep = run_monte_carlo(get_design("design3-j6", n=600, reps=10, estimators=("DIF", "GCF")))
    assert rep.n_failed + rep.n_ok == 10
    assert 1 <= rep.n_failed < 10
    assert rep.drop_rate == rep.n_failed / 10
    assert all("SingularSystemError" in msg for _, msg in rep.failures)
    assert "failed" in rep.to_table().splitlines()[0]


def test_all_failed_raises():
    with pytest.raises(EstimationError, match="all 3 replications failed"):
        run_monte_carlo(get_design("design3-j6", n=300, reps=3, estimators=("GCF",)))
