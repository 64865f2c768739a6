"""Linearized vs Monte Carlo marginal log-likelihood for a linear network
with Gaussian input covariance, for a range of MC sample counts."""

import argparse

import numpy as np

from uqnet.analytic import CombinedVarianceSpec, gaussian_loglik, linearized_loglik, mc_marginal_loglik
from uqnet.model import Network, NetworkArch


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--rows", type=int, default=40)
    p.add_argument("--seed", type=int, default=3)
    args = p.parse_args()

    rng = np.random.default_rng(args.seed)
    net = Network(NetworkArch.mlp([3, 1], "tanh"), rng.normal(size=4))
    X = rng.normal(size=(args.rows, 3))
    Z = X @ net.weights[:3] + net.weights[3] + rng.normal(0, 0.5, args.rows)
    spec = CombinedVarianceSpec(0.5, 0.2, np.array([0.04, 0.09, 0.01]))
    lin = linearized_loglik(net, X, Z, spec)
    print(f"gaussian (C ignored) {gaussian_loglik(net, X, Z, spec):.4f}")
    print(f"linearized           {lin:.4f}")
    for n_mc in (10**2, 10**3, 10**4, 10**5):
        mc, se = mc_marginal_loglik(net, X, Z, spec, n_mc, seed=5, return_se=True)
        print(f"mc n={n_mc:<7d}         {mc:.4f} +- {se:.4f}  ({(mc - lin) / se:+.2f} SE)")


if __name__ == "__main__":
    main()
