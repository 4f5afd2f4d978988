"""Statistical checks of path-functional scaling laws that are not part
of the numbered acceptance criteria: growth of the positive
energy-drift integral and the local-time comparison.  These share one
interpolation table per mass ratio, which dominates their runtime."""

import math

import numpy as np
import pytest

from torusgas.kernel import ModelParams
from torusgas.limits import run_experiment
from torusgas.sim import SimConfig, TrackFlags, run_ensemble


@pytest.mark.slow
def test_positive_drift_integral_grows_like_square_root(cosine_pot):
    """Expected integral of the positive energy-drift part admits a
    square-root-in-time lower envelope with a positive rate."""
    lam = 0.05
    t_grid = (2.0, 5.0, 10.0, 20.0)
    means = []
    for t in t_grid:
        cfg = SimConfig(model=ModelParams(lam), potential=cosine_pot,
                        horizon=t, p0=0.5, seed=3,
                        track=TrackFlags(a_plus=True))
        ens = run_ensemble(cfg, 400)
        means.append(float(np.mean(ens.finals["a_plus_int"])))
    # fit E = a + c sqrt(t); the slope against sqrt(t) must be positive
    roots = np.sqrt(np.asarray(t_grid))
    A = np.vstack([roots, np.ones_like(roots)]).T
    coef, *_ = np.linalg.lstsq(A, np.asarray(means), rcond=None)
    assert coef[0] > 0.0
    assert means == sorted(means)


@pytest.mark.slow
def test_local_time_tracks_positive_drift(cosine_pot):
    """The rescaled low-set local time and positive energy-drift integral
    stay uniformly close, improving as the mass ratio shrinks."""
    rep = run_experiment("local_time", lam_list=(0.1, 0.04), T=1.0,
                         n_paths=200, seed=2, potential=cosine_pot)
    gaps = [r["local_time_gap"] for r in rep.rows]
    assert gaps[1] <= gaps[0] + 0.02
    assert rep.passes["local_time_decreasing"]["passed"]
