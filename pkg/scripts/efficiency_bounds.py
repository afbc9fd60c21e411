"""Asymptotic variance per pair and the RMSE it implies at the tabulated sizes.

Also prints the population bias of the difference in means, i.e. the
limit of the DIF row of the bias tables, computed from one large draw.
"""

import argparse

import numpy as np

from gcfate import canonical_pairs, efficiency_bound, get_design, true_ate
from gcfate.simulation import DESIGNS, sample_covariates, true_outcome_means, true_propensity


def dif_limit(design, n_draws, seed):
    rng = np.random.default_rng(seed)
    X = sample_covariates(n_draws, rng)
    e = true_propensity(design, X)
    mu = true_outcome_means(design, X)
    # E[Y | Z = j] = E[e_j mu_j] / E[e_j]
    arm = (e * mu).mean(axis=0) / e.mean(axis=0)
    return arm[:, None] - arm[None, :], e.mean(axis=0)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--draws", type=int, default=10**6)
    ap.add_argument("--seed", type=int, default=12345)
    args = ap.parse_args()
    for name in DESIGNS:
        design = get_design(name)
        V = efficiency_bound(design, n_draws=args.draws, seed=args.seed)
        tau = true_ate(design)
        dif, share = dif_limit(design, args.draws, args.seed + 1)
        print(f"{name}: arm shares {np.round(share, 3).tolist()}")
        print(f"  {'pair':<8}{'tau':>8}{'V':>12}" + "".join(f"{'rmse@' + str(n):>12}"
                                                          for n in (1500, 4500, 6000))
              + f"{'DIF bias':>12}")
        for pr in canonical_pairs(design.n_arms):
            a, b = pr.j - 1, pr.j_prime - 1
            rm = "".join(f"{np.sqrt(V[a, b] / n):>12.4f}" for n in (1500, 4500, 6000))
            print(f"  {pr.j}-{pr.j_prime:<6}{tau[a, b]:>8.2f}{V[a, b]:>12.2f}{rm}"
                  f"{dif[a, b] - tau[a, b]:>12.4f}")


if __name__ == "__main__":
    main()
