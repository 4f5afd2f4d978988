"""Finite surrogate of the resolvent chain, with exact Nummelin splitting.

The continuous dynamics observed at independent mean-one exponential times is
a Markov chain on the torus-momentum phase space.  This module discretizes
phase space into cells, estimates the chain's transition matrix by Monte
Carlo (one short simulation per sample, started at the cell center and run
for an exponential window), and then treats the resulting finite chain as
ground truth: minorization, the split chain, regeneration cycles, reduced
and state-modulated resolvents, and ergodicity diagnostics are all computed
both by linear algebra and by simulation of the *same* finite chain, so the
identity checks are exact up to Monte Carlo error no matter how coarse the
discretization is.  Discretization quality only enters the few comparisons
against continuum objects (the stationary law against the Maxwell weight),
which carry loose tolerances.

Row sampling keeps every landing sample, so drawing from a row reproduces
the empirical distribution exactly; the split chain's residual rows are
sampled by rejection against the row itself, using the minorization bound
as the acceptance floor.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .kernel import ModelParams
from .limits import loglog_slope
from .potential import PotentialSpec
from .rng import StreamSet
from .sim import SimConfig, _Batch, low_energy_cutoff

P_MAX_CAP = 90.0
_WINDOW_BLOCK = 65536


class GridBuildError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Discretization and sampling parameters for the surrogate chain."""
    n_x: int = 32
    n_p: int = 128
    p_max: Optional[float] = None       # default 12 / sqrt(lam), capped
    samples_per_cell: int = 20000
    low_row_boost: int = 10             # extra sampling for minorization rows
    flow_rel_tol: float = 1e-3          # row accuracy is Monte Carlo limited
    envelope_slack: float = 0.05

    def __post_init__(self):
        if self.n_x < 4 or self.n_p < 4:
            raise ValueError("need at least 4 cells per axis")
        if self.n_p % 2:
            raise ValueError("momentum cell count must be even")
        if self.samples_per_cell < 100:
            raise ValueError("too few samples per cell")

    def resolved_p_max(self, lam: float) -> float:
        if self.p_max is not None:
            return float(self.p_max)
        return min(12.0 / math.sqrt(max(lam, 1e-12)), P_MAX_CAP)


class GridModel:
    """Row-stochastic surrogate chain plus splitting data."""

    def __init__(self, model, pot, spec, p_max, T, row_n, leakage, ghat):
        self.model = model
        self.pot = pot
        self.spec = spec
        self.p_max = p_max
        self.n_x = spec.n_x
        self.n_p = spec.n_p
        self.n_cells = spec.n_x * spec.n_p
        self.dx = 1.0 / spec.n_x
        self.dp = 2.0 * p_max / spec.n_p
        self.x_centers = (np.arange(spec.n_x) + 0.5) * self.dx
        self.p_centers = -p_max + (np.arange(spec.n_p) + 0.5) * self.dp
        self.cell_measure = self.dx * self.dp
        self.T = T
        self.row_n = row_n
        self.leakage = leakage
        self.ghat = ghat
        self.pi = self._stationary()
        level = low_energy_cutoff(pot)
        self.low_mask = self.cell_energy() <= level
        self.low_cells = np.flatnonzero(self.low_mask)
        self.h = None
        self.nu = None
        self.eps = None
        self._cdf = None

    # --- geometry -------------------------------------------------------
    def cell_xy(self, cell):
        return cell // self.n_p, cell % self.n_p

    def cell_center(self, cell):
        ix, jp = self.cell_xy(np.asarray(cell))
        return self.x_centers[ix], self.p_centers[jp]

    def cell_energy(self, cell=None):
        if cell is None:
            cell = np.arange(self.n_cells)
        cx, cp = self.cell_center(cell)
        return self.pot.hamiltonian(cx, cp)

    def cell_of(self, x, p):
        """Cell index of (x, p) with momentum clamped into the edge cells."""
        ix = np.minimum((np.mod(x, 1.0) * self.n_x).astype(np.int64), self.n_x - 1)
        jp = np.floor((np.asarray(p) + self.p_max) / self.dp).astype(np.int64)
        jp = np.clip(jp, 0, self.n_p - 1)
        return ix * self.n_p + jp

    def parity_partner(self, cell):
        ix, jp = self.cell_xy(np.asarray(cell))
        return (self.n_x - 1 - ix) * self.n_p + (self.n_p - 1 - jp)

    # --- linear algebra --------------------------------------------------
    def _stationary(self):
        n = self.n_cells
        A = (np.eye(n) - self.T).T
        A[-1, :] = 1.0
        b = np.zeros(n)
        b[-1] = 1.0
        pi = np.linalg.solve(A, b)
        pi = np.where(pi < 0, 0.0, pi)
        pi /= pi.sum()
        resid = float(np.abs(pi @ self.T - pi).sum())
        if resid > 1e-12:
            # polish with power steps; the solve residual is usually ~1e-15
            for _ in range(200):
                pi = pi @ self.T
                pi /= pi.sum()
                resid = float(np.abs(pi @ self.T - pi).sum())
                if resid <= 1e-12:
                    break
        if resid > 1e-12:
            raise GridBuildError(f"stationary solve residual {resid:.2e}")
        return pi

    def maxwell_reference(self):
        """Cell-integrated truncated Maxwell weight exp(-lam H), normalized."""
        w = np.exp(-self.model.lam * self.cell_energy())
        return w / w.sum()

    def stationary_tv_vs_maxwell(self) -> float:
        return 0.5 * float(np.abs(self.pi - self.maxwell_reference()).sum())

    def parity_max_z(self) -> float:
        """Worst z-score between a transition estimate and its parity image."""
        src = np.arange(self.n_cells)
        psrc = self.parity_partner(src)
        Tp = self.T[np.ix_(psrc, psrc)]
        var = (self.T * (1 - self.T) / self.row_n[:, None]
               + Tp * (1 - Tp) / self.row_n[psrc][:, None])
        z = np.abs(self.T - Tp) / np.sqrt(np.maximum(var, 1e-300))
        z[var == 0] = 0.0
        return float(z.max())

    # --- minorization and split-chain sampling ---------------------------
    def minorize(self):
        """Uniform minorization over the low-energy block.

        nu is uniform (by the common cell measure) on the low set; the atom
        mass eps is the largest constant with T >= h nu for h = eps on the
        low set, read off the low-by-low block of the matrix.
        """
        low = self.low_cells
        if low.size == 0:
            raise GridBuildError("low-energy set is empty")
        nu = np.zeros(self.n_cells)
        nu[low] = 1.0 / low.size
        block = self.T[np.ix_(low, low)]
        eps = float(block.min() * low.size)
        if eps <= 0.0:
            raise GridBuildError(
                "zero transition estimate inside the low block; raise "
                "samples_per_cell or low_row_boost")
        eps = min(eps, 1.0 - 1e-12)
        h = np.zeros(self.n_cells)
        h[low] = eps
        self.h, self.nu, self.eps = h, nu, eps
        # residual rows must be probability vectors wherever h > 0
        res = self.T[low] - eps * nu[None, :]
        if res.min() < -1e-12:
            raise GridBuildError("residual row went negative")
        return self

    def _row_cdfs(self):
        if self._cdf is None:
            supports, cdfs, offsets = [], [], [0]
            for i in range(self.n_cells):
                nz = np.flatnonzero(self.T[i])
                supports.append(nz)
                cdfs.append(np.cumsum(self.T[i, nz]))
                offsets.append(offsets[-1] + nz.size)
            self._cdf = (np.concatenate(supports).astype(np.int64),
                         np.concatenate(cdfs),
                         np.asarray(offsets, dtype=np.int64))
        return self._cdf

    def sample_rows(self, states, u):
        """Vector draw: next cell from row ``states[k]`` at uniform ``u[k]``."""
        support, cdf, off = self._row_cdfs()
        lo = off[states]
        hi = off[states + 1]
        target = u * cdf[hi - 1]
        # ragged binary search over each row's cdf slice
        lo = lo.copy()
        hi = hi - 1
        while True:
            unfinished = lo < hi
            if not unfinished.any():
                break
            mid = (lo + hi) // 2
            go_right = cdf[mid] < target
            lo = np.where(unfinished & go_right, mid + 1, lo)
            hi = np.where(unfinished & ~go_right, mid, hi)
        return support[lo]


def _simulate_windows(model, pot, spec, seed, x0, p0, taus, base):
    from .sim import TrackFlags
    cfg = SimConfig(model=model, potential=pot, horizon=1.0, seed=seed,
                    flow_rel_tol=spec.flow_rel_tol,
                    envelope_slack=spec.envelope_slack,
                    track=TrackFlags(compensators=False))
    batch = _Batch(cfg, base, x0.size, table=None,
                   x_init=x0, p_init=p0, horizons=taus)
    batch.run()
    return batch


def build_grid_chain(model: ModelParams, pot: PotentialSpec, spec: GridSpec,
                     seed: int = 0) -> GridModel:
    """Estimate the surrogate chain by per-cell Monte Carlo.

    Each sample runs the full dynamics from the cell center for an
    independent mean-one exponential window and records the landing cell.
    Landings past the momentum truncation are clamped into the edge cells
    and reported as leakage; more than 1% leakage fails the build.  The
    per-window momentum drift and low-set occupation are accumulated on the
    same samples to give the expected pre-partition integrals ("ghat") of
    the force and low-set-indicator observables, with standard errors.
    """
    lam = model.lam
    p_max = spec.resolved_p_max(lam)
    n_x, n_p = spec.n_x, spec.n_p
    n_cells = n_x * n_p
    dx, dp = 1.0 / n_x, 2.0 * p_max / n_p
    x_centers = (np.arange(n_x) + 0.5) * dx
    p_centers = -p_max + (np.arange(n_p) + 0.5) * dp
    level = low_energy_cutoff(pot)
    cell_x = np.repeat(x_centers, n_p)
    cell_p = np.tile(p_centers, n_x)
    low = pot.hamiltonian(cell_x, cell_p) <= level
    row_n = np.full(n_cells, spec.samples_per_cell, dtype=np.int64)
    row_n[low] *= max(1, spec.low_row_boost)
    row_end = np.cumsum(row_n)
    total = int(row_end[-1])
    counts = np.zeros((n_cells, n_cells), dtype=np.int64)
    g_force = np.zeros(n_cells); g_force2 = np.zeros(n_cells)
    g_low = np.zeros(n_cells); g_low2 = np.zeros(n_cells)
    leaked = 0
    for a in range(0, total, _WINDOW_BLOCK):
        b = min(a + _WINDOW_BLOCK, total)
        cells = np.searchsorted(row_end, np.arange(a, b), side="right")
        taus = StreamSet(seed, "grid-window", b - a, base=a).exponential()
        batch = _simulate_windows(model, pot, spec, seed,
                                  cell_x[cells], cell_p[cells], taus, base=a)
        xe, pe = batch.x, batch.p
        leaked += int(np.count_nonzero(np.abs(pe) > p_max))
        jp = np.clip(np.floor((pe + p_max) / dp).astype(np.int64), 0, n_p - 1)
        ix = np.minimum((np.mod(xe, 1.0) * n_x).astype(np.int64), n_x - 1)
        landing = ix * n_p + jp
        np.add.at(counts, (cells, landing), 1)
        u_meas = batch.u_meas
        np.add.at(g_force, cells, batch.D)
        np.add.at(g_force2, cells, batch.D ** 2)
        occ = batch.L * u_meas
        np.add.at(g_low, cells, occ)
        np.add.at(g_low2, cells, occ ** 2)
    leak_frac = leaked / total
    if leak_frac > 0.01:
        raise GridBuildError(f"momentum truncation leaks {leak_frac:.2%}")
    T = counts.astype(float)
    T /= T.sum(axis=1, keepdims=True)
    ghat = {}
    for name, s1, s2 in (("force", g_force, g_force2), ("low_ind", g_low, g_low2)):
        mean = s1 / row_n
        var = np.maximum(s2 / row_n - mean ** 2, 0.0)
        ghat[name] = (mean, np.sqrt(var / row_n))
    return GridModel(model, pot, spec, p_max, T, row_n, leak_frac, ghat)


# --- split-chain simulation ------------------------------------------------

def _bernoulli(streams, idx, prob):
    return streams.uniform(idx) < prob


def _step_split(gm: GridModel, state, z, streams, idx):
    """One split-chain step from (state, z); returns (state', z')."""
    n = state.size
    new = np.empty_like(state)
    from_atom = z
    if from_atom.any():
        k = np.flatnonzero(from_atom)
        u = streams.uniform(idx[k])
        pick = np.minimum((u * gm.low_cells.size).astype(np.int64),
                          gm.low_cells.size - 1)
        new[k] = gm.low_cells[pick]
    k = np.flatnonzero(~from_atom)
    # residual row: rejection against the row with the minorization floor
    while k.size:
        u = streams.uniform(idx[k])
        prop = gm.sample_rows(state[k], u)
        t_val = gm.T[state[k], prop]
        acc_p = 1.0 - gm.h[state[k]] * gm.nu[prop] / t_val
        acc = streams.uniform(idx[k]) < acc_p
        new[k[acc]] = prop[acc]
        k = k[~acc]
    z_new = _bernoulli(streams, idx, gm.h[new])
    return new, z_new


def split_cycle_stats(gm: GridModel, n_cycles: int, seed: int,
                      observables: Optional[dict] = None,
                      start_cell: Optional[int] = None) -> dict:
    """Simulate independent regeneration cycles of the split chain.

    A cycle starts distribution-split (state from nu, or the given fixed
    cell, with the atom flag a coin at the h value) and runs until the atom
    flag comes up; sums of each observable over all cycle states (start and
    atom state inclusive) are returned together with the state count.
    """
    observables = {name: np.asarray(vec, dtype=float)
                   for name, vec in (observables or {}).items()}
    streams = StreamSet(seed, "cycle-walk", n_cycles)
    idx_all = np.arange(n_cycles)
    if start_cell is None:
        u = streams.uniform(idx_all)
        pick = np.minimum((u * gm.low_cells.size).astype(np.int64),
                          gm.low_cells.size - 1)
        state = gm.low_cells[pick]
    else:
        state = np.full(n_cycles, int(start_cell), dtype=np.int64)
    z = _bernoulli(streams, idx_all, gm.h[state])
    sums = {name: vec[state].copy() for name, vec in observables.items()}
    steps = np.ones(n_cycles, dtype=np.int64)
    alive = ~z
    while alive.any():
        k = np.flatnonzero(alive)
        state_k, z_k = _step_split(gm, state[k], np.zeros(k.size, bool),
                                   streams, k)
        state[k] = state_k
        for name, vec in observables.items():
            sums[name][k] += vec[state_k]
        steps[k] += 1
        alive[k] = ~z_k
    out = {"steps": steps}
    out.update(sums)
    return out


def split_cycle_pairs(gm: GridModel, n_pairs: int, seed: int, f) -> np.ndarray:
    """Inclusive-diagonal double cycle sums over consecutive cycle pairs.

    For each independent pair of consecutive cycles, returns
    sum_{n<=n1} f(s_n) * sum_{n<=m<=n2} f(s_m), whose mean equals
    pi(f u)/pi(h) for the centered resolvent solution u."""
    f = np.asarray(f, dtype=float)
    streams = StreamSet(seed, "cycle-pairs", n_pairs)
    idx_all = np.arange(n_pairs)
    u = streams.uniform(idx_all)
    pick = np.minimum((u * gm.low_cells.size).astype(np.int64),
                      gm.low_cells.size - 1)
    state = gm.low_cells[pick]
    z = _bernoulli(streams, idx_all, gm.h[state])
    pref = f[state].copy()
    y = f[state] * pref
    atoms_seen = z.astype(np.int64)
    done = np.zeros(n_pairs, bool)
    while not done.all():
        k = np.flatnonzero(~done)
        state_k, z_k = _step_split(gm, state[k], z[k], streams, k)
        state[k] = state_k
        z[k] = z_k
        fk = f[state_k]
        in_first = atoms_seen[k] == 0
        pref[k] = np.where(in_first, pref[k] + fk, pref[k])
        y[k] += fk * pref[k]
        atoms_seen[k] += z_k
        done[k[atoms_seen[k] >= 2]] = True
    return y


def atom_visit_chain_check(gm: GridModel, n_steps: int, n_walkers: int,
                           seed: int) -> dict:
    """Count atom visits over a fixed number of split-chain steps and compare
    with the linear-algebra value sum_k (mu T^k)(h), mu = nu."""
    streams = StreamSet(seed, "atom-count", n_walkers)
    idx_all = np.arange(n_walkers)
    u = streams.uniform(idx_all)
    pick = np.minimum((u * gm.low_cells.size).astype(np.int64),
                      gm.low_cells.size - 1)
    state = gm.low_cells[pick]
    z = _bernoulli(streams, idx_all, gm.h[state])
    visits = z.astype(np.int64)
    mu = gm.nu.copy()
    expect = float(gm.nu @ gm.h)
    for _ in range(n_steps - 1):
        state, z = _step_split(gm, state, z, streams, idx_all)
        visits += z
        mu = mu @ gm.T
        expect += float(mu @ gm.h)
    mean = visits.mean()
    se = visits.std(ddof=1) / math.sqrt(n_walkers)
    return {"mc_mean": float(mean), "mc_se": float(se), "exact": expect,
            "z": float((mean - expect) / max(se, 1e-300))}


# --- resolvents -------------------------------------------------------------

def chain_reduced_resolvent(gm: GridModel, g_hat) -> np.ndarray:
    """Solve the chain Poisson equation (I - T) u = f, pi(u) = 0, where f is
    the pi-centered input vector."""
    f = np.asarray(g_hat, dtype=float)
    f = f - float(gm.pi @ f)
    n = gm.n_cells
    A = np.eye(n) - gm.T + np.outer(np.ones(n), gm.pi)
    u = np.linalg.solve(A, f)
    u = u - float(gm.pi @ u)
    resid = float(np.abs(gm.T @ u - u + f).max())
    if resid > 1e-10:
        raise GridBuildError(f"reduced-resolvent residual {resid:.2e}")
    return u


def state_modulated_resolvent(gm: GridModel, g, h_vec) -> np.ndarray:
    """Expected discounted sum of g along the chain with state-dependent
    survival 1 - h: returns (I - T diag(1-h))^{-1} T g."""
    g = np.asarray(g, dtype=float)
    h_vec = np.asarray(h_vec, dtype=float)
    if (h_vec < 0).any() or (h_vec > 1).any():
        raise ValueError("killing rates must lie in [0, 1]")
    M = gm.T * (1.0 - h_vec)[None, :]
    rho = _spectral_radius_estimate(M)
    if rho >= 1.0 - 1e-9:
        raise GridBuildError(f"series divergence: spectral radius ~ {rho:.6f}")
    return np.linalg.solve(np.eye(gm.n_cells) - M, gm.T @ g)


def _spectral_radius_estimate(M, iters: int = 300) -> float:
    v = np.full(M.shape[0], 1.0 / math.sqrt(M.shape[0]))
    growth = []
    for k in range(iters):
        w = M @ v
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return 0.0
        growth.append(nrm)
        v = w / nrm
    tail = growth[iters // 2:]
    return float(np.exp(np.mean(np.log(tail))))


def lifecycle_martingale_check(gm: GridModel, f, n_chains: int,
                               cycles_per_chain: int, seed: int) -> dict:
    """Simulate consecutive-cycle martingale increments and verify the
    mean-zero property and the linearity of the variance in the number of
    summed increments.

    The increment for cycle k is the cycle sum of the centered f corrected
    by the reduced-resolvent boundary values at the cycle-start states.
    """
    f = np.asarray(f, dtype=float)
    f = f - float(gm.pi @ f)
    u = chain_reduced_resolvent(gm, f)
    n_cyc = cycles_per_chain + 1
    sums = np.zeros((n_chains, n_cyc))
    starts = np.zeros((n_chains, n_cyc), dtype=np.int64)
    streams = StreamSet(seed, "lifecycle", n_chains)
    idx_all = np.arange(n_chains)
    for c in range(n_cyc):
        u0 = streams.uniform(idx_all)
        pick = np.minimum((u0 * gm.low_cells.size).astype(np.int64),
                          gm.low_cells.size - 1)
        state = gm.low_cells[pick]
        starts[:, c] = state
        z = _bernoulli(streams, idx_all, gm.h[state])
        acc = f[state].copy()
        alive = ~z
        while alive.any():
            k = np.flatnonzero(alive)
            state_k, z_k = _step_split(gm, state[k], np.zeros(k.size, bool),
                                       streams, k)
            state[k] = state_k
            acc[k] += f[state_k]
            alive[k] = ~z_k
        sums[:, c] = acc
    increments = sums[:, :-1] - u[starts[:, :cycles_per_chain]] \
        + u[starts[:, 1:cycles_per_chain + 1]]
    ups = float((2.0 * gm.pi @ (f * u) - gm.pi @ (f * f)) / (gm.pi @ gm.h))
    flat = increments.ravel()
    report = {
        "mean": float(flat.mean()),
        "mean_se": float(flat.std(ddof=1) / math.sqrt(flat.size)),
        "upsilon_exact": ups,
        "var_per_cycle": {},
    }
    for k in (1, 4, 16):
        if k > cycles_per_chain:
            continue
        m = cycles_per_chain // k
        blocks = increments[:, :m * k].reshape(n_chains * m, k).sum(axis=1)
        v = blocks.var(ddof=1) / k
        se = v * math.sqrt(2.0 / (blocks.size - 1))
        report["var_per_cycle"][k] = {"value": float(v), "se": float(se)}
    return report


def fractional_moment_report(model_for, pot, spec, lam_list, alpha: float,
                             n_cycles: int, seed: int,
                             grids: Optional[dict] = None,
                             common_floor: bool = True) -> dict:
    """Cycle-length statistics across a family of mass ratios.

    By default the whole family shares one atom mass, the smallest of the
    per-grid minorization constants: each grid's bound still certifies the
    smaller value, and a mass-ratio-independent atom (the continuum
    convention) is what makes the cycle-length scaling purely a property of
    the stationary low-set weight.  Reports, per lam: the exact expected
    cycle length 1/pi(h), the Monte Carlo mean with its standard error, and
    the alpha-fractional moment of the atom-return index; plus the log-log
    slope of the exact mean return index against lam.
    """
    if not (0.0 < alpha < 0.5):
        raise ValueError("fractional order must be in (0, 1/2)")
    gms = []
    for lam in lam_list:
        gm = (grids or {}).get(lam)
        if gm is None:
            gm = build_grid_chain(model_for(lam), pot, spec, seed=seed).minorize()
        gms.append(gm)
    if common_floor:
        floor = min(gm.eps for gm in gms)
        for gm in gms:
            gm.eps = floor
            gm.h = np.where(gm.low_mask, floor, 0.0)
    rows = []
    for lam, gm in zip(lam_list, gms):
        exact_len = 1.0 / float(gm.pi @ gm.h)
        stats = split_cycle_stats(gm, n_cycles, seed=seed + 1)
        steps = stats["steps"]
        n_tilde = steps - 1
        rows.append({
            "lam": lam,
            "exact_mean_len": exact_len,
            "mc_mean_len": float(steps.mean()),
            "mc_se_len": float(steps.std(ddof=1) / math.sqrt(n_cycles)),
            "frac_moment": float((n_tilde.astype(float) ** alpha).mean()),
            "eps": gm.eps,
        })
    lams = np.asarray([r["lam"] for r in rows])
    means = np.asarray([max(r["exact_mean_len"] - 1.0, 1e-12) for r in rows])
    slope, slope_se = loglog_slope(lams, means)
    return {"rows": rows, "slope": slope, "slope_se": slope_se,
            "alpha": alpha}


def ergodicity_report(gm: GridModel, n_tv: int = 200) -> dict:
    """Spectral and total-variation relaxation diagnostics of the surrogate.

    slem is estimated by the root test on the pi-deflated transition matrix;
    the TV decay rate is fitted on delta-start distributions from the most
    energetic cells; the return floor is the worst one-step probability of
    entering the low-energy set."""
    n = gm.n_cells
    B = gm.T - np.outer(np.ones(n), gm.pi)
    slem = _spectral_radius_estimate(B)
    energies = gm.cell_energy()
    starts = np.argsort(energies)[-3:]
    dists = np.zeros((len(starts), n))
    for i, s in enumerate(starts):
        dists[i, s] = 1.0
    tv = np.zeros((n_tv, len(starts)))
    for k in range(n_tv):
        dists = dists @ gm.T
        tv[k] = 0.5 * np.abs(dists - gm.pi[None, :]).sum(axis=1)
    tvm = tv.max(axis=1)
    mask = tvm > 1e-12
    ks = np.arange(1, n_tv + 1)[mask]
    rate = np.nan
    if mask.sum() >= 10:
        coef = np.polyfit(ks, np.log(tvm[mask]), 1)
        rate = float(-coef[0])
    floor = float(gm.T[:, gm.low_mask].sum(axis=1).min())
    return {"slem": slem, "tv_decay_rate": rate,
            "low_set_return_floor": floor,
            "spectral_rate": float(-math.log(max(slem, 1e-300)))}


# --- serialization ----------------------------------------------------------

def save_grid(gm: GridModel, directory: str):
    """Write the model as a CSV triplet: cells, coordinate matrix, vectors."""
    os.makedirs(directory, exist_ok=True)
    n = gm.n_cells
    with open(os.path.join(directory, "cells.csv"), "w") as fh:
        fh.write("cell,x,p,measure,low,h,nu,pi,row_samples\n")
        cx, cp = gm.cell_center(np.arange(n))
        for i in range(n):
            h_i = float(gm.h[i]) if gm.h is not None else 0.0
            nu_i = float(gm.nu[i]) if gm.nu is not None else 0.0
            fh.write(f"{i},{float(cx[i])!r},{float(cp[i])!r},"
                     f"{float(gm.cell_measure)!r},{int(gm.low_mask[i])},"
                     f"{h_i!r},{nu_i!r},{float(gm.pi[i])!r},"
                     f"{int(gm.row_n[i])}\n")
    with open(os.path.join(directory, "matrix.csv"), "w") as fh:
        fh.write("row,col,value\n")
        rows, cols = np.nonzero(gm.T)
        for r, c in zip(rows, cols):
            fh.write(f"{r},{c},{float(gm.T[r, c])!r}\n")
    with open(os.path.join(directory, "vectors.csv"), "w") as fh:
        fh.write("name,cell,value\n")
        for name, (vals, ses) in gm.ghat.items():
            for i in range(n):
                fh.write(f"ghat_{name},{i},{float(vals[i])!r}\n")
            for i in range(n):
                fh.write(f"ghat_{name}_se,{i},{float(ses[i])!r}\n")
        meta = {"lam": gm.model.lam, "p_max": gm.p_max, "n_x": gm.n_x,
                "n_p": gm.n_p, "leakage": gm.leakage,
                "eps": gm.eps if gm.eps is not None else -1.0,
                "v0": getattr(gm.pot, "v0", 0.0)}
        for k, v in meta.items():
            fh.write(f"meta_{k},0,{float(v)!r}\n")
        fh.write(f"meta_shape,0,{gm.pot.shape}\n")


def load_grid(directory: str) -> GridModel:
    cells = np.genfromtxt(os.path.join(directory, "cells.csv"),
                          delimiter=",", names=True)
    meta = {}
    ghat_acc = {}
    with open(os.path.join(directory, "vectors.csv")) as fh:
        next(fh)
        for line in fh:
            name, cell, value = line.strip().split(",")
            if name.startswith("meta_"):
                meta[name[5:]] = value
            else:
                ghat_acc.setdefault(name, {})[int(cell)] = float(value)
    n_x = int(float(meta["n_x"]))
    n_p = int(float(meta["n_p"]))
    n = n_x * n_p
    T = np.zeros((n, n))
    with open(os.path.join(directory, "matrix.csv")) as fh:
        next(fh)
        for line in fh:
            r, c, v = line.strip().split(",")
            T[int(r), int(c)] = float(v)
    shape = meta["shape"].strip("'\"")
    if shape != "cosine":
        raise ValueError("serialized grids support the cosine family only")
    pot = PotentialSpec(shape, float(meta["v0"]))
    model = ModelParams(float(meta["lam"]))
    spec = GridSpec(n_x=n_x, n_p=n_p, p_max=float(meta["p_max"]),
                    samples_per_cell=max(100, int(cells["row_samples"].min())))
    ghat = {}
    for base in [k[5:] for k in ghat_acc if k.startswith("ghat_")
                 and not k.endswith("_se")]:
        vals = np.array([ghat_acc["ghat_" + base][i] for i in range(n)])
        ses = np.array([ghat_acc["ghat_" + base + "_se"][i] for i in range(n)])
        ghat[base] = (vals, ses)
    row_n = cells["row_samples"].astype(np.int64)
    gm = GridModel(model, pot, spec, float(meta["p_max"]), T, row_n,
                   float(meta["leakage"]), ghat)
    if float(meta["eps"]) > 0:
        gm.minorize()
    return gm
