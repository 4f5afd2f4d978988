import math

import numpy as np
import pytest
from scipy.stats import ks_2samp

from torusgas.kernel import ModelParams, escape_rate, jump_drift
from torusgas.potential import PotentialSpec, State
from torusgas.rng import StreamSet
from torusgas.sim import (SimConfig, TrackFlags, TrajectoryResult,
                          companion_path, low_set_measure, next_event,
                          run_ensemble, simulate)


def ks_stat(sample, cdf):
    x = np.sort(sample)
    n = x.size
    F = cdf(x)
    i = np.arange(1, n + 1)
    return max(np.max(np.abs(F - i / n)), np.max(np.abs(F - (i - 1) / n)))


def test_config_validation(free_pot):
    with pytest.raises(ValueError):
        SimConfig(model=ModelParams(0.1), horizon=0.0)
    with pytest.raises(ValueError):
        SimConfig(model=ModelParams(0.1), horizon=5.0, checkpoints=(3.0, 1.0))
    with pytest.raises(ValueError):
        SimConfig(model=ModelParams(0.1), horizon=5.0, checkpoints=(1.0, 6.0))
    with pytest.raises(ValueError):
        SimConfig(model=ModelParams(0.0), potential=free_pot, horizon=1.0,
                  p_hat0=1.0)
    cfg = SimConfig(model=ModelParams(0.04), horizon=1.0, p_hat0=2.0)
    assert cfg.initial_p == pytest.approx(10.0)


def test_poisson_collision_count(free_pot):
    """Idealized model: unit-eighth collision rate, so the count at t = 80
    averages ten."""
    cfg = SimConfig(model=ModelParams(0.0), potential=free_pot,
                    horizon=80.0, seed=7)
    ens = run_ensemble(cfg, 10_000)
    n = ens.finals["N"]
    se = n.std(ddof=1) / math.sqrt(n.size)
    assert abs(n.mean() - 10.0) <= 4 * se


def test_first_waiting_time_law(free_pot):
    """Thinning reproduces the exponential collision clock exactly."""
    cfg = SimConfig(model=ModelParams(0.0), potential=free_pot,
                    horizon=150.0, seed=3)
    ens = run_ensemble(cfg, 100_000)
    t1 = ens.finals["first_jump_t"]
    assert np.isfinite(t1).all()
    stat = ks_stat(t1, lambda t: 1.0 - np.exp(-t / 8.0))
    assert stat <= 1.628 / math.sqrt(t1.size)  # level 0.01
    # momentum-dependent rate at positive mass ratio
    cfg2 = SimConfig(model=ModelParams(0.1), potential=free_pot,
                     horizon=200.0, p0=5.0, seed=4)
    ens2 = run_ensemble(cfg2, 50_000)
    rate = float(escape_rate(ModelParams(0.1), 5.0))
    stat2 = ks_stat(ens2.finals["first_jump_t"],
                    lambda t: 1.0 - np.exp(-rate * t))
    assert stat2 <= 1.628 / math.sqrt(50_000)


def test_collision_rate_with_potential_and_zero_mass(cosine_pot):
    """At zero mass ratio the collision rate is constant even with the
    potential on, which exercises the envelope inflation path."""
    cfg = SimConfig(model=ModelParams(0.0), potential=cosine_pot,
                    horizon=24.0, p0=3.0, seed=11)
    ens = run_ensemble(cfg, 2000)
    n = ens.finals["N"]
    se = n.std(ddof=1) / math.sqrt(n.size)
    assert abs(n.mean() - 3.0) <= 4 * se


def test_momentum_identity_and_energy_rows(cosine_pot):
    cfg = SimConfig(model=ModelParams(0.1), potential=cosine_pot,
                    horizon=30.0, p0=2.0, seed=5,
                    checkpoints=tuple(np.linspace(1.0, 30.0, 30)))
    traj = simulate(cfg)
    p = traj.rows["p"]
    ident = np.abs(p - (cfg.initial_p + traj.rows["D"] + traj.rows["J"]))
    assert ident.max() <= 1e-9
    h_recomputed = cosine_pot.hamiltonian(traj.rows["x"], traj.rows["p"])
    assert np.abs(h_recomputed - traj.rows["H"]).max() <= 1e-9
    assert (np.diff(traj.rows["N"]) >= 0).all()
    assert traj.sups["sup_h"] >= traj.rows["H"].max() - 1e-12


def test_collision_martingale_mean_zero(free_pot):
    """The jump part minus its compensator integral has mean zero."""
    cfg = SimConfig(model=ModelParams(0.1), potential=free_pot,
                    horizon=100.0, seed=21)
    ens = run_ensemble(cfg, 10_000)
    mart = ens.finals["J"] - ens.finals["M_comp"]
    se = mart.std(ddof=1) / math.sqrt(mart.size)
    assert abs(mart.mean()) <= 4 * se


def test_partition_coin_identity(cosine_pot):
    """Expected number of atom coins equals the expected integral of the
    coin rate along the path."""
    cfg = SimConfig(model=ModelParams(0.1), potential=cosine_pot,
                    horizon=10.0, seed=9, track=TrackFlags(coins=True))
    ens = run_ensemble(cfg, 3000)
    heads = ens.coin_counts["heads"].astype(float)
    u_meas = low_set_measure(cosine_pot)
    int_h = 0.5 * u_meas * ens.finals["L"]
    diff = heads - int_h
    se = diff.std(ddof=1) / math.sqrt(diff.size)
    assert abs(diff.mean()) <= 4 * se


def test_companion_homogeneous_decay():
    """With no drive and no jumps, the companion momentum is a pure
    exponential relaxation; checked on a synthetic stationary dense log."""
    lam = 0.2
    pot = PotentialSpec("cosine", 1.0)
    ts = np.linspace(0.0, 12.0, 2001)
    cfg = SimConfig(model=ModelParams(lam), potential=pot, horizon=12.0,
                    p0=5.0, track=TrackFlags(dense=True, events=True))
    traj = TrajectoryResult(cfg=cfg, times=np.array([]), rows={}, finals={},
                            sups={}, event_log=[],
                            dense_log={"t": ts.tolist(),
                                       "x": np.zeros_like(ts).tolist(),
                                       "p": np.zeros_like(ts).tolist()})
    td, comp = companion_path(traj, ModelParams(lam))
    target = 5.0 * np.exp(-0.5 * lam * td)
    assert np.abs(comp - target).max() <= 1e-10


def test_companion_refinement_oracle(cosine_pot):
    """Exponential-integrator companion vs brute-force Euler on a grid 1e4
    times finer, interpolating the trajectory with cubic splines between
    collisions and carrying the jumps over exactly."""
    from scipy.interpolate import CubicSpline
    lam = 0.1
    cfg = SimConfig(model=ModelParams(lam), potential=cosine_pot,
                    horizon=2.0, p0=2.0, seed=13,
                    track=TrackFlags(companion=True, dense=True, events=True))
    traj = simulate(cfg)
    td, comp = companion_path(traj, cfg.model)
    td = np.asarray(td)
    pd = np.asarray(traj.dense_log["p"])
    xd = np.asarray(traj.dense_log["x"])
    jump_times = sorted(e["t"] for e in traj.event_log)
    bounds = [0.0] + jump_times + [float(td[-1])]
    refine = 10_000
    cur = cfg.initial_p
    worst = 0.0
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        sel = np.flatnonzero((td >= lo - 1e-12) & (td <= hi + 1e-12))
        uniq, first = np.unique(td[sel], return_index=True)
        pre = sel[first]            # pre-jump duplicate at each boundary
        if uniq.size < 4:
            continue
        sp_p = CubicSpline(uniq, pd[pre])
        xx = np.unwrap(xd[pre] * 2 * math.pi) / (2 * math.pi)
        sp_x = CubicSpline(uniq, xx)
        n_f = (uniq.size - 1) * refine
        h = (uniq[-1] - uniq[0]) / n_f
        a = 1.0 - 0.5 * lam * h
        log_a = math.log(a)
        acc = 0.0
        for lo_k in range(0, n_f, 2_000_000):
            hi_k = min(lo_k + 2_000_000, n_f)
            ks = np.arange(lo_k, hi_k)
            tf = uniq[0] + h * ks
            fck = -np.asarray(cosine_pot.force(np.mod(sp_x(tf), 1.0))) \
                - np.asarray(jump_drift(cfg.model, sp_p(tf)))
            acc += float(np.exp((n_f - 1 - ks) * log_a) @ fck)
        euler_end = a ** float(n_f) * cur + h * acc
        worst = max(worst, abs(comp[sel[first[-1]]] - euler_end))
        # apply the jump recorded as a duplicated dense node
        dup = sel[np.flatnonzero(td[sel] == uniq[-1])]
        cur = euler_end + (pd[dup[-1]] - pd[dup[0]])
    assert worst <= 1e-6
    assert abs(comp[-1] - traj.finals["companion"]) <= 1e-6


def test_worker_count_invariance(cosine_pot):
    cfg = SimConfig(model=ModelParams(0.1), potential=cosine_pot,
                    horizon=4.0, p0=1.0, seed=2)
    a = run_ensemble(cfg, 600, workers=1)
    b = run_ensemble(cfg, 600, workers=2)
    for key in a.finals:
        assert np.array_equal(a.finals[key], b.finals[key], equal_nan=True)
    for key in a.sups:
        assert np.array_equal(a.sups[key], b.sups[key])


def test_standard_error_scaling_and_seed_independence(free_pot):
    cfg = SimConfig(model=ModelParams(0.1), potential=free_pot,
                    horizon=40.0, seed=31)
    small = run_ensemble(cfg, 500)
    big = run_ensemble(cfg, 1000)
    se_small = small.finals["p"].std(ddof=1) / math.sqrt(500)
    se_big = big.finals["p"].std(ddof=1) / math.sqrt(1000)
    ratio = se_big / se_small
    assert abs(ratio - 1 / math.sqrt(2)) <= 0.2 / math.sqrt(2)
    other = run_ensemble(SimConfig(model=ModelParams(0.1), potential=free_pot,
                                   horizon=40.0, seed=77), 1000)
    assert not np.array_equal(big.finals["p"], other.finals["p"])
    assert ks_2samp(big.finals["p"], other.finals["p"]).pvalue > 0.01


def test_next_event_free_model(free_pot):
    model = ModelParams(0.0)
    streams = StreamSet(5, "next-event", 1)
    dt, pre = next_event(model, free_pot, State(0.0, 2.0), streams)
    assert dt > 0 and pre.p == 2.0
    # with a flat potential the envelope is tight: first proposal accepted,
    # so the elapsed time is a single exponential at the escape rate
    ref = StreamSet(5, "next-event", 1)
    expected = float(ref.exponential()[0]) / float(escape_rate(model, 2.0))
    assert dt == pytest.approx(expected, rel=1e-12)
