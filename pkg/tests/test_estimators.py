import json
import statistics

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gcfate import (Dataset, EmptyArmError, FoldPlan, NuisancePredictions, PairIndex,
                    dif_estimate, fit_full_sample, fit_out_of_fold, gaipw_estimate, gcf_estimate,
                    generate_dataset, get_design, make_folds, oracle_gaipw, pseudo_outcome,
                    simultaneous_ci, variance_estimate)
from gcfate.estimators import ci_multiplier

import oracles
from conftest import linear_dataset


class Fixed:
    """Stand-in fitted model returning a fixed prediction matrix."""

    def __init__(self, value):
        self.value = np.asarray(value, dtype=float)

    def predict(self, X):
        return self.value


def _hand(table):
    X, z, y, mu, e, fold = oracles.table_arrays(table)
    return Dataset(X, z, y, 2), mu, e, fold


# -- difference in means ---------------------------------------------------------

def test_dif_two_arms():
    d = Dataset(np.zeros((3, 1)), [1, 1, 2], [1.0, 1.0, 3.0], 2)
    est = dif_estimate(d)
    assert est[1, 2] == -2.0 and est[2, 1] == 2.0
    # single-unit arm contributes no spread; arm 1 has none either
    assert est.variance[0, 1] == 0.0


def test_dif_zero_shift():
    d = Dataset(np.zeros((4, 1)), [1, 2, 1, 2], [1.0, 1.0, 2.0, 2.0], 2)
    assert dif_estimate(d)[1, 2] == 0.0


def test_dif_three_arms():
    d = Dataset(np.zeros((6, 1)), [1, 1, 2, 2, 3, 3], [1.0, 3.0, 4.0, 6.0, 0.0, 2.0], 3)
    est = dif_estimate(d)
    assert est.arm_means.tolist() == [2.0, 5.0, 1.0]
    assert est[2, 3] == 4.0
    assert np.array_equal(est.estimates, -est.estimates.T)
    # n (s1^2 / n1 + s2^2 / n2) with s^2 = 2 in every arm
    assert est.variance[0, 1] == pytest.approx(6 * (2 / 2 + 2 / 2))


def test_dif_empty_arm():
    with pytest.raises(EmptyArmError):
        dif_estimate(Dataset(np.zeros((2, 1)), [1, 1], [0.0, 1.0], 2))


# -- per-unit summands ------------------------------------------------------------------

def test_pseudo_outcome_cases():
    d = Dataset(np.zeros((3, 1)), [1, 2, 3], [2.0, 5.0, 9.0], 3)
    mu = np.array([[1.0, 0.0, 4.0], [1.0, 0.0, 4.0], [1.0, 0.0, 4.0]])
    e = np.full((3, 3), 1 / 3)
    e[0] = [0.5, 0.25, 0.25]
    s = pseudo_outcome(d, NuisancePredictions(mu, e), PairIndex(1, 2))
    assert s[0] == 3.0  # 1 + (2 - 1) / 0.5
    assert s[2] == 1.0  # arm 3 unit: indicator terms vanish
    # perfect predictions leave only mu_j - mu_j'
    perfect = Dataset(np.zeros((3, 1)), [1, 2, 3], [1.0, 0.0, 4.0], 3)
    s = pseudo_outcome(perfect, NuisancePredictions(mu, e), PairIndex(1, 3))
    assert s.tolist() == [-3.0, -3.0, -3.0]


def test_binary_style_denominator():
    d, mu, e, fold = _hand(oracles.HAND_TABLE)
    nuis = NuisancePredictions(mu, e)
    pr = PairIndex(1, 2)
    lit = pseudo_outcome(d, nuis, pr, binary_style_denominator=True)
    std = pseudo_outcome(d, nuis, pr)
    # with two arms 1 - e2 = e1, so only arm-2 units change
    z = d.treatments
    expect = std.copy()
    expect[z == 2] = (mu[:, 0] - mu[:, 1] - (d.outcomes - mu[:, 1]) / e[:, 0])[z == 2]
    assert lit == pytest.approx(expect, abs=1e-14)
    assert not np.allclose(lit, std)
    plan = FoldPlan(2, fold)
    g = gcf_estimate(d, plan, nuis, binary_style_denominator=True)
    assert g[1, 2] == pytest.approx(lit.mean(), abs=1e-14)


# -- hand-evaluated tables ---------------------------------------------------------------

def test_gcf_hand_table():
    d, mu, e, fold = _hand(oracles.HAND_TABLE)
    est = gcf_estimate(d, FoldPlan(2, fold), NuisancePredictions(mu, e))
    assert est[1, 2] == pytest.approx(float(oracles.HAND_TAU), abs=1e-14)
    assert est.variance[0, 1] == pytest.approx(float(oracles.HAND_VAR), abs=1e-14)
    lo, hi = est.ci_lower[0, 1], est.ci_upper[0, 1]
    half = oracles.Z_975 * np.sqrt(float(oracles.HAND_VAR) / 4)
    assert (lo, hi) == pytest.approx((83 / 48 - half, 83 / 48 + half), abs=1e-12)


def test_gaipw_hand_table():
    d, mu, e, _ = _hand(oracles.HAND_TABLE)
    est = gaipw_estimate(d, Fixed(mu), Fixed(e), xi=None)
    assert est[1, 2] == pytest.approx(float(oracles.HAND_TAU), abs=1e-14)


def test_gaipw_two_units():
    d, mu, e, _ = _hand(oracles.TWO_UNIT)
    est = gaipw_estimate(d, Fixed(mu), Fixed(e), xi=None)
    assert est[1, 2] == 1.0
    assert est.variance[0, 1] == 0.0


def test_gaipw_zero_residuals(rng):
    mu = rng.normal(size=(30, 3))
    z = np.tile([1, 2, 3], 10)
    d = Dataset(np.zeros((30, 1)), z, mu[np.arange(30), z - 1], 3)
    e = rng.dirichlet([2, 2, 2], size=30)
    est = gaipw_estimate(d, Fixed(mu), Fixed(e), xi=None)
    for j, k in ((1, 2), (1, 3), (2, 3)):
        assert est[j, k] == pytest.approx((mu[:, j - 1] - mu[:, k - 1]).mean(), abs=1e-12)


def test_gcf_zero_data():
    d = Dataset(np.zeros((6, 1)), [1, 2, 3] * 2, np.zeros(6), 3)
    nuis = NuisancePredictions(np.zeros((6, 3)), np.full((6, 3), 1 / 3))
    est = gcf_estimate(d, make_folds(d, 2, 0), nuis)
    assert np.all(est.estimates == 0) and np.all(est.variance == 0)
    assert np.all(est.ci_lower == est.ci_upper)


# -- oracle -----------------------------------------------------------------------------

def test_true_nuisances_reduce_to_oracle():
    design = get_design("design1-adequate", n=400)
    d, mu, e = generate_dataset(design, 3)
    orc = oracle_gaipw(d, mu, e)
    gcf = gcf_estimate(d, make_folds(d, 3, 1), NuisancePredictions(mu, e))
    gaipw = gaipw_estimate(d, Fixed(mu), Fixed(e), xi=None)
    assert np.max(np.abs(gcf.estimates - orc.estimates)) <= 1e-12
    assert np.max(np.abs(gaipw.estimates - orc.estimates)) <= 1e-12


def test_oracle_noiseless_gives_sample_effect():
    design = get_design("design1-adequate", n=300, noise_sd=0.0)
    d, mu, e = generate_dataset(design, 8)
    orc = oracle_gaipw(d, mu, e)
    assert orc[1, 3] == pytest.approx((mu[:, 0] - mu[:, 2]).mean(), abs=1e-12)


def test_oracle_identical_arms_centres_on_zero():
    alphas = np.tile([1.0, 0.5, -1, 2, 0.3, 1, -2], (3, 1))
    design = get_design("design1-adequate", n=300, alphas=alphas)
    taus = []
    for s in range(200):
        d, mu, e = generate_dataset(design, s)
        taus.append(oracle_gaipw(d, mu, e).estimates[[0, 0, 1], [1, 2, 2]])
    taus = np.array(taus)
    sd = taus.std(axis=0, ddof=1)
    assert np.all(np.abs(taus.mean(axis=0)) < 4 * sd / np.sqrt(200))


def test_oracle_rejects_bad_propensity():
    d = Dataset(np.zeros((2, 1)), [1, 2], [0.0, 1.0], 2)
    with pytest.raises(ValueError):
        oracle_gaipw(d, np.zeros((2, 2)), np.array([[1.0, 0.0], [0.5, 0.5]]))


# -- structural properties --------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 5), st.integers(2, 4))
def test_antisymmetry_and_decomposition(seed, n_arms, k):
    rng = np.random.default_rng(seed)
    d = linear_dataset(rng, n=40 * n_arms, n_arms=n_arms)
    d = Dataset(d.covariates, np.sort(d.treatments), d.outcomes, n_arms)
    plan = make_folds(d, k, seed)
    nuis = fit_out_of_fold(d, plan)
    gcf = gcf_estimate(d, plan, nuis)
    om, pm = fit_full_sample(d)
    for est in (gcf, gaipw_estimate(d, om, pm), dif_estimate(d)):
        assert np.array_equal(est.estimates, -est.estimates.T)
        assert np.all(np.diag(est.estimates) == 0)
        assert np.array_equal(est.variance, est.variance.T)
        assert np.all(est.ci_lower <= est.estimates) and np.all(est.estimates <= est.ci_upper)
    # one-arm functionals, each computed on its own by fold-weighted means
    D = d.indicators()
    for j in range(n_arms):
        g = nuis.mu_hat[:, j] + D[:, j] * (d.outcomes - nuis.mu_hat[:, j]) / nuis.e_hat[:, j]
        arm = sum(plan.sizes[f] / d.n * g[plan.indices(f)].mean() for f in range(k))
        assert arm == pytest.approx(gcf.arm_means[j], abs=1e-12)
    for j in range(n_arms):
        for m in range(n_arms):
            assert abs(gcf.estimates[j, m] - (gcf.arm_means[j] - gcf.arm_means[m])) <= 1e-12


def test_fold_weight_identity_unequal_folds(rng):
    d = linear_dataset(rng, n=101)
    plan = make_folds(d, 4, 2)
    assert len(set(plan.sizes.tolist())) > 1
    nuis = fit_out_of_fold(d, plan)
    s = pseudo_outcome(d, nuis, PairIndex(1, 3))
    weighted = sum(plan.sizes[f] / d.n * s[plan.indices(f)].mean() for f in range(4))
    assert weighted == pytest.approx(s.mean(), abs=1e-12)
    assert gcf_estimate(d, plan, nuis)[1, 3] == pytest.approx(s.mean(), abs=1e-12)


# -- variance and intervals ----------------------------------------------------------------

def test_variance_examples(rng):
    assert variance_estimate([4.0, 4.0, 4.0], 4.0) == 0.0
    assert variance_estimate([0.0, 2.0], 1.0) == 2.0
    s = rng.normal(3, 2, size=100)
    assert variance_estimate(s, s.mean()) == pytest.approx(statistics.variance(s.tolist()),
                                                           abs=1e-10)
    with pytest.raises(ValueError):
        variance_estimate([1.0], 1.0)


def test_interval_multipliers():
    assert ci_multiplier(2, 0.05) == pytest.approx(oracles.Z_975, abs=1e-12)
    assert ci_multiplier(3, 0.05) == pytest.approx(oracles.Z_BONF_J3, abs=1e-12)
    assert ci_multiplier(3, 0.05, simultaneous=False) == ci_multiplier(2, 0.05)
    assert simultaneous_ci(1.5, 0.0, 100, 3) == (1.5, 1.5)
    lo, hi = simultaneous_ci(0.0, 4.0, 100, 2)
    assert (lo, hi) == pytest.approx((-oracles.Z_975 * 0.2, oracles.Z_975 * 0.2), abs=1e-12)
    with pytest.raises(ValueError):
        simultaneous_ci(0.0, -1.0, 10, 2)
    with pytest.raises(ValueError):
        ci_multiplier(2, 1.5)


def test_serialisation(rng):
    d = linear_dataset(rng, n=60)
    est = dif_estimate(d)
    doc = json.loads(est.to_json())
    assert doc["schema_version"] == 1 and len(doc["pairs"]) == 3
    assert doc["pairs"][0]["pair"] == "1-2"
    table = est.to_table().splitlines()
    assert len(table) == 2 + 3
