"""Watch the rescaled momentum approach its Gaussian limit law.

Momentum is rescaled by the square root of the mass ratio and time by its
inverse; as the ratio shrinks, the marginal at macroscopic time 1 approaches
the limit-process marginal (mean decays at rate 1/2, variance saturates at
one).  A few thousand paths per ratio are enough to see the
Kolmogorov-Smirnov distance fall.
"""

import math

import numpy as np

from torusgas import ModelParams, OUParams, PotentialSpec, SimConfig, ou_marginal
from torusgas.limits import gaussian_cdf, ks_statistic
from torusgas.sim import run_ensemble

pot = PotentialSpec("cosine", 1.0)
T = 1.0
n_paths = 3000
mean, var = ou_marginal(OUParams(p_hat0=0.0), T)
print(f"limit marginal at t={T}: mean {mean}, variance {var:.4f}\n")
print(f"{'mass ratio':>10} {'KS distance':>12} {'sample var':>11} {'mean |drift|':>13}")
for lam in (0.2, 0.1, 0.05):
    cfg = SimConfig(model=ModelParams(lam), potential=pot, horizon=T / lam,
                    p_hat0=0.0, seed=1)
    ens = run_ensemble(cfg, n_paths)
    sample = math.sqrt(lam) * ens.finals["p"]
    ks = ks_statistic(sample, gaussian_cdf(mean, var))
    drift = float(np.mean(lam ** 0.25 * ens.sups["sup_abs_d"]))
    print(f"{lam:10.2f} {ks:12.4f} {np.var(sample):11.4f} {drift:13.4f}")

print("\nthe scaled drift supremum stays of order one while the KS distance"
      "\nfalls: the potential's push washes out of the limit marginal.")
