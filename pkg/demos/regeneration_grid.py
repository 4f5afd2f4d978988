"""Exact regeneration on the finite surrogate chain.

The continuous dynamics observed at exponential times is a Markov chain;
on a cell grid its transition matrix is estimated once and then treated as
ground truth.  A uniform minorization over the low-energy block certifies an
atom, the split chain is simulated exactly, and the regeneration identities
(cycle length, cycle sums, resolvent differences) hold up to Monte Carlo
error by construction.
"""

import math

import numpy as np

from torusgas import ModelParams, PotentialSpec
from torusgas.grid import (GridSpec, build_grid_chain, chain_reduced_resolvent,
                           ergodicity_report, split_cycle_stats)

model = ModelParams(0.1)
pot = PotentialSpec("cosine", 1.0)
spec = GridSpec(n_x=8, n_p=24, p_max=8.0, samples_per_cell=2000,
                low_row_boost=50)
print("building the surrogate chain (a minute or so)...")
gm = build_grid_chain(model, pot, spec, seed=0).minorize()
print(f"cells: {gm.n_cells};  atom mass: {gm.eps:.4f};  "
      f"leakage: {gm.leakage:.2e}")
print(f"stationary vs Maxwell weight, total variation: "
      f"{gm.stationary_tv_vs_maxwell():.4f}\n")

stats = split_cycle_stats(gm, 20000, seed=1)
exact = 1.0 / float(gm.pi @ gm.h)
mc = stats["steps"].mean()
se = stats["steps"].std(ddof=1) / math.sqrt(stats["steps"].size)
print("expected regeneration-cycle length:")
print(f"  linear algebra 1/pi(h) = {exact:8.2f}")
print(f"  sampled cycles          = {mc:8.2f} +- {se:.2f}\n")

f = gm.ghat["force"][0] - float(gm.pi @ gm.ghat["force"][0])
u = chain_reduced_resolvent(gm, f)
print("reduced resolvent of the force observable: residual",
      float(np.abs(gm.T @ u - u + f).max()))

rep = ergodicity_report(gm)
print(f"\nrelaxation: second eigenvalue modulus {rep['slem']:.4f}, "
      f"total-variation rate {rep['tv_decay_rate']:.4f} "
      f"(spectral prediction {rep['spectral_rate']:.4f})")
print("one-step return floor into the low-energy set:",
      f"{rep['low_set_return_floor']:.2e}")
