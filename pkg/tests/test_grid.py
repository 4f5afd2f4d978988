import math

import numpy as np
import pytest

from torusgas.grid import (GridBuildError, GridModel, GridSpec,
                           atom_visit_chain_check, build_grid_chain,
                           chain_reduced_resolvent, ergodicity_report,
                           fractional_moment_report, lifecycle_martingale_check,
                           load_grid, save_grid, split_cycle_pairs,
                           split_cycle_stats, state_modulated_resolvent)
from torusgas.kernel import ModelParams
from torusgas.potential import PotentialSpec


def test_grid_spec_validation():
    with pytest.raises(ValueError):
        GridSpec(n_x=2)
    with pytest.raises(ValueError):
        GridSpec(n_p=15)
    with pytest.raises(ValueError):
        GridSpec(samples_per_cell=10)


def test_build_invariants(toy_grid):
    gm = toy_grid
    assert np.abs(gm.T.sum(axis=1) - 1.0).max() <= 1e-12
    assert (gm.T >= 0).all()
    assert np.abs(gm.pi @ gm.T - gm.pi).sum() <= 1e-12
    assert (gm.pi >= 0).all() and abs(gm.pi.sum() - 1.0) < 1e-12
    assert gm.leakage <= 0.01
    assert gm.eps > 0
    # exact minorization and valid residual rows
    assert (gm.T >= np.outer(gm.h, gm.nu) - 1e-15).all()
    low = gm.low_cells
    res = (gm.T[low] - gm.eps * gm.nu[None, :]) / (1.0 - gm.eps)
    assert res.min() >= -1e-14
    assert np.abs(res.sum(axis=1) - 1.0).max() <= 1e-12


def test_parity_symmetry(toy_grid):
    assert toy_grid.parity_max_z() <= 5.0


def test_kac_cycle_length(toy_grid):
    gm = toy_grid
    stats = split_cycle_stats(gm, 20_000, seed=1)
    exact = 1.0 / float(gm.pi @ gm.h)
    mc = stats["steps"].mean()
    se = stats["steps"].std(ddof=1) / math.sqrt(stats["steps"].size)
    assert abs(mc - exact) <= 4 * se


def test_cycle_sum_identity(toy_grid):
    gm = toy_grid
    g = np.zeros(gm.n_cells)
    g[int(gm.cell_of(0.4, 2.2))] = 1.0
    stats = split_cycle_stats(gm, 20_000, seed=2, observables={"g": g})
    rhs = float(gm.pi @ g) / float(gm.pi @ gm.h)
    se = stats["g"].std(ddof=1) / math.sqrt(stats["g"].size)
    assert abs(stats["g"].mean() - rhs) <= 4 * se


def test_reduced_resolvent_properties(toy_grid):
    gm = toy_grid
    u0 = chain_reduced_resolvent(gm, np.zeros(gm.n_cells))
    assert np.abs(u0).max() <= 1e-12
    f = gm.ghat["force"][0] - float(gm.pi @ gm.ghat["force"][0])
    u = chain_reduced_resolvent(gm, f)
    assert abs(float(gm.pi @ u)) <= 1e-12
    assert np.abs(gm.T @ u - u + f).max() <= 1e-10


def test_delta_start_difference_identity(toy_grid):
    """Split-chain cycle sums from two point starts differ exactly by the
    reduced-resolvent difference."""
    gm = toy_grid
    f = gm.ghat["force"][0].copy()
    f -= float(gm.pi @ f)
    u = chain_reduced_resolvent(gm, f)
    cells = (int(gm.cell_of(0.1, 0.6)), int(gm.cell_of(0.6, -1.4)))
    means, ses = [], []
    for k, c in enumerate(cells):
        stats = split_cycle_stats(gm, 30_000, seed=5 + k,
                                  observables={"f": f}, start_cell=c)
        means.append(stats["f"].mean())
        ses.append(stats["f"].std(ddof=1) / math.sqrt(stats["f"].size))
    lhs = means[0] - means[1]
    rhs = u[cells[0]] - u[cells[1]]
    assert abs(lhs - rhs) <= 4 * math.hypot(*ses)


def test_cycle_pair_covariance_identity(toy_grid):
    gm = toy_grid
    f = gm.ghat["force"][0].copy()
    f -= float(gm.pi @ f)
    u = chain_reduced_resolvent(gm, f)
    y = split_cycle_pairs(gm, 40_000, seed=3, f=f)
    rhs = float(gm.pi @ (f * u)) / float(gm.pi @ gm.h)
    se = y.std(ddof=1) / math.sqrt(y.size)
    assert abs(y.mean() - rhs) <= 4 * se


def test_state_modulated_resolvent(toy_grid):
    gm = toy_grid
    g = np.abs(gm.ghat["force"][0])
    # full killing truncates the series after one step
    full = state_modulated_resolvent(gm, g, np.ones(gm.n_cells))
    assert np.abs(full - gm.T @ g).max() <= 1e-12
    # against a truncated series at moderate uniform killing
    h_vec = np.full(gm.n_cells, 0.05)
    sol = state_modulated_resolvent(gm, g, h_vec)
    M = gm.T * (1.0 - h_vec)[None, :]
    term = gm.T @ g
    series = term.copy()
    for _ in range(999):
        term = M @ term
        series += term
    assert np.abs(sol - series).max() <= 1e-8
    with pytest.raises(GridBuildError):
        state_modulated_resolvent(gm, g, np.zeros(gm.n_cells))


def test_discounted_occupation_dominates_cycle_sum(toy_grid):
    """The state-modulated resolvent bounds the one-cycle sum from a point
    start, one-sidedly within Monte Carlo error."""
    gm = toy_grid
    g = np.abs(gm.ghat["force"][0]) + 0.05
    sol = state_modulated_resolvent(gm, g, gm.h)
    for cell in (int(gm.cell_of(0.2, 0.9)), int(gm.cell_of(0.8, -1.8))):
        stats = split_cycle_stats(gm, 30_000, seed=11, observables={"g": g},
                                  start_cell=cell)
        # cycle sums here include the start state; the bound concerns the
        # sum over steps 1..n, so subtract the deterministic start term
        mc = stats["g"].mean() - g[cell]
        se = stats["g"].std(ddof=1) / math.sqrt(stats["g"].size)
        assert mc <= sol[cell] + 4 * se


def test_atom_visit_count_identity(toy_grid):
    rep = atom_visit_chain_check(toy_grid, n_steps=25, n_walkers=20_000, seed=6)
    assert abs(rep["z"]) <= 4.0


def test_lifecycle_martingale(toy_grid):
    gm = toy_grid
    f = gm.ghat["force"][0].copy()
    rep = lifecycle_martingale_check(gm, f, n_chains=1200,
                                     cycles_per_chain=16, seed=8)
    assert abs(rep["mean"]) <= 4 * rep["mean_se"]
    for k, entry in rep["var_per_cycle"].items():
        assert abs(entry["value"] - rep["upsilon_exact"]) <= 3 * entry["se"]
    # zero observable gives exactly zero increments
    rep0 = lifecycle_martingale_check(gm, np.zeros(gm.n_cells), n_chains=50,
                                      cycles_per_chain=4, seed=9)
    assert rep0["mean"] == 0.0 and rep0["upsilon_exact"] == 0.0


def test_degenerate_every_state_is_atom():
    """Uniform chain whose whole space is the regeneration set: the atom is
    hit at every step, so every cycle has exactly one state."""
    model = ModelParams(0.1)
    pot = PotentialSpec("cosine", 0.0)
    spec = GridSpec(n_x=4, n_p=4, p_max=1.0, samples_per_cell=100000)
    n = 16
    T = np.full((n, n), 1.0 / n)
    gm = GridModel(model, pot, spec, 1.0, T, np.full(n, 1000), 0.0, {})
    assert gm.low_mask.all()
    gm.minorize()
    assert gm.eps == pytest.approx(1.0, abs=1e-9)
    stats = split_cycle_stats(gm, 500, seed=1)
    assert (stats["steps"] == 1).all()
    assert 1.0 / float(gm.pi @ gm.h) == pytest.approx(1.0, rel=1e-9)


def test_ergodicity_report(toy_grid):
    rep = ergodicity_report(toy_grid, n_tv=150)
    assert 0.0 < rep["slem"] < 1.0
    assert rep["low_set_return_floor"] > 0.0
    assert abs(rep["tv_decay_rate"] - rep["spectral_rate"]) \
        <= 0.3 * rep["spectral_rate"]


def test_save_load_roundtrip(tmp_path, toy_grid):
    save_grid(toy_grid, str(tmp_path / "g"))
    back = load_grid(str(tmp_path / "g"))
    assert np.abs(back.T - toy_grid.T).max() <= 1e-15
    assert np.abs(back.pi - toy_grid.pi).max() <= 1e-12
    assert back.eps == pytest.approx(toy_grid.eps, rel=1e-12)
    assert np.abs(back.ghat["force"][0] - toy_grid.ghat["force"][0]).max() <= 1e-15


def test_fractional_moment_api(toy_grid):
    rep = fractional_moment_report(
        ModelParams, toy_grid.pot, toy_grid.spec, lam_list=(0.1,), alpha=0.4,
        n_cycles=4000, seed=2, grids={0.1: toy_grid})
    row = rep["rows"][0]
    assert abs(row["mc_mean_len"] - row["exact_mean_len"]) <= 4 * row["mc_se_len"]
    assert row["frac_moment"] > 0
    with pytest.raises(ValueError):
        fractional_moment_report(ModelParams, toy_grid.pot, toy_grid.spec,
                                 (0.1,), alpha=0.7, n_cycles=10, seed=0)
