"""Event-driven simulation of the tracer with exact collision times.

Collisions are generated by thinning: energy is conserved along a flow
segment, so the collision rate is bounded there by its value at momentum
sqrt(2H); proposals arrive at that constant envelope rate and are accepted
with the ratio of the true rate to the envelope, which reproduces the
inhomogeneous collision clock exactly.  Between proposals the Hamiltonian
flow advances with the symplectic integrator from :mod:`torusgas.potential`,
and the path functionals (drift and jump parts of the momentum, the
collision-drift and variance-rate compensator integrals, low-energy
occupation, the positive energy-drift integral, and the companion
linear-friction momentum) accumulate on the substep grid with a
Richardson-corrected trapezoid rule whose error sits orders of magnitude
below every statistical tolerance.

Every path owns counter-based random streams keyed by its absolute index,
so ensembles are bit-identical for any worker count or execution order.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import erf

from .kernel import ModelParams, escape_rate, jump_drift, sample_jump, EnergyDriftTable
from .potential import PotentialSpec, State, substep_rate, MAX_SUBSTEPS, FlowError

from .rng import StreamSet

_CHUNK = 2.0     # max flow-piece duration, keeps the vector loop wide
_BLOCK = 4096    # paths per block; fixed so results never depend on workers
_CBRT2 = 2.0 ** (1.0 / 3.0)
_YW1 = 1.0 / (2.0 - _CBRT2)
_YW0 = -_CBRT2 / (2.0 - _CBRT2)
_SQRT2PI = math.sqrt(2.0 * math.pi)

ATOM_COIN_RATE = 0.5   # h = rate * indicator(H <= cutoff); any value in (0,1)


class ThinningFault(RuntimeError):
    """Envelope violated: proposal rate fell below the true collision rate."""


@dataclass(frozen=True)
class TrackFlags:
    """Optional observables; everything off keeps the hot loop minimal."""
    companion: bool = False    # linear-friction companion momentum
    a_plus: bool = False       # integral of the positive energy-drift part
    coins: bool = False        # Poisson partition times with atom coins
    events: bool = False       # per-event log (single path only)
    dense: bool = False        # per-substep (t, x, p) log (single path only)
    compensators: bool = True  # collision drift/variance integrals and suprema


@dataclass(frozen=True)
class SimConfig:
    model: ModelParams
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    horizon: float = 10.0
    x0: float = 0.0
    p0: Optional[float] = None     # explicit initial momentum, overrides p_hat0
    p_hat0: float = 0.0            # initial momentum in units of lam**-0.5
    checkpoints: tuple = ()
    seed: int = 0
    flow_rel_tol: float = 1e-10
    envelope_slack: Optional[float] = None
    track: TrackFlags = field(default_factory=TrackFlags)

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.envelope_slack is None:
            # the envelope argument sqrt(2H) drifts by the flow's energy
            # tolerance between collisions; a tiny inflation keeps the
            # acceptance ratio a true probability without affecting the law
            slack = 0.0 if self.potential.is_free else 1e3 * self.flow_rel_tol
            object.__setattr__(self, "envelope_slack", slack)
        elif self.envelope_slack < 0:
            raise ValueError("envelope slack must be nonnegative")
        cps = tuple(float(c) for c in self.checkpoints)
        if any(b <= a for a, b in zip(cps, cps[1:])):
            raise ValueError("checkpoints must be strictly increasing")
        if cps and (cps[0] < 0 or cps[-1] > self.horizon):
            raise ValueError("checkpoints must lie in [0, horizon]")
        object.__setattr__(self, "checkpoints", cps)
        if self.p0 is None and self.p_hat0 != 0.0 and self.model.lam == 0.0:
            raise ValueError("p_hat0 scaling needs lam > 0; give p0 explicitly")

    @property
    def initial_p(self) -> float:
        if self.p0 is not None:
            return float(self.p0)
        if self.p_hat0 == 0.0:
            return 0.0
        return float(self.p_hat0) / math.sqrt(self.model.lam)


_FINAL_FIELDS = ("x", "p", "H", "D", "J", "N", "M_comp", "bracket", "L",
                 "occ_low", "a_plus_int", "companion", "first_jump_t")
_SUP_FIELDS = ("sup_h", "sup_abs_d", "max_jump_sq", "sup_brk_dev",
               "sup_abs_pdiff", "sup_abs_lma")
_ROW_FIELDS = ("x", "p", "H", "D", "J", "N", "M_comp", "bracket", "L")


@dataclass
class TrajectoryResult:
    """Single-path output: checkpoint rows, path suprema, optional logs."""
    cfg: SimConfig
    times: np.ndarray
    rows: dict
    finals: dict
    sups: dict
    coin_log: Optional[list] = None
    event_log: Optional[list] = None
    dense_log: Optional[dict] = None

    @property
    def sup_scaled_drift(self) -> float:
        """Path supremum of |lam^(1/4) D|."""
        return self.cfg.model.lam ** 0.25 * self.sups["sup_abs_d"]


@dataclass
class EnsembleResult:
    """Per-path finals and suprema for a batch of paths."""
    cfg: SimConfig
    n_paths: int
    finals: dict
    sups: dict
    coin_counts: Optional[dict] = None

    def summary(self) -> dict:
        out = {}
        for name, arr in list(self.finals.items()) + list(self.sups.items()):
            arr = np.asarray(arr, dtype=float)
            arr = arr[np.isfinite(arr)]  # paths without the event are skipped
            if arr.size == 0:
                out[name] = {"mean": None, "se": None, "var": None, "n": 0}
                continue
            se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
            out[name] = {"mean": float(arr.mean()), "se": se,
                         "var": float(arr.var(ddof=1)) if arr.size > 1 else 0.0,
                         "n": int(arr.size)}
        return out


def low_energy_cutoff(pot: PotentialSpec) -> float:
    """Energy level bounding the regeneration set: 1 + sup V."""
    return 1.0 + pot.sup_v


def low_set_measure(pot: PotentialSpec, cutoff: Optional[float] = None) -> float:
    """Phase-space volume of {H <= cutoff} (default cutoff 1 + sup V)."""
    level = low_energy_cutoff(pot) if cutoff is None else cutoff
    xs = (np.arange(8192) + 0.5) / 8192.0
    width = 2.0 * np.sqrt(np.maximum(2.0 * (level - pot.value(xs)), 0.0))
    return float(width.mean())


def _drift_var(model: ModelParams, p):
    """Collision drift and variance rates sharing one erf evaluation."""
    lam, eta = model.lam, model.eta
    a = lam * p
    w = erf(a / math.sqrt(2.0))
    gpdf = np.exp(-0.5 * a * a) / _SQRT2PI
    esc = (2.0 * eta / (1.0 + lam)) * (2.0 * gpdf + a * w)
    drift = (-2.0 * lam * p / (1.0 + lam)) * esc - (4.0 * eta / (1.0 + lam) ** 2) * w
    pi2 = (8.0 * eta / (1.0 + lam) ** 3) * ((2.0 * a * a + 4.0) * gpdf
                                            + a * (3.0 + a * a) * w)
    return drift, pi2 - drift * drift / esc


class _Batch:
    """Vectorized engine state for one block of paths."""

    def __init__(self, cfg: SimConfig, base: int, n: int,
                 table: Optional[EnergyDriftTable],
                 x_init=None, p_init=None, horizons=None):
        self.cfg = cfg
        self.n = n
        self.model, self.pot = cfg.model, cfg.potential
        self.table = table
        self.l_cut = low_energy_cutoff(self.pot)
        self.u_meas = low_set_measure(self.pot)
        self.t = np.zeros(n)
        self.horizons = (np.full(n, cfg.horizon) if horizons is None
                         else np.asarray(horizons, dtype=float))
        self.x = (np.full(n, float(cfg.x0) % 1.0) if x_init is None
                  else np.mod(np.asarray(x_init, dtype=float), 1.0))
        self.p = (np.full(n, cfg.initial_p) if p_init is None
                  else np.asarray(p_init, dtype=float).copy())
        self.H = self.pot.hamiltonian(self.x, self.p).astype(float)
        self.sqrt2h = np.sqrt(2.0 * self.H)
        self.D = np.zeros(n)
        self.J = np.zeros(n)
        self.N = np.zeros(n, dtype=np.int64)
        self.M_comp = np.zeros(n)
        self.bracket = np.zeros(n)
        self.L = np.zeros(n)
        self.occ_low = np.zeros(n)
        self.a_plus = np.zeros(n)
        self.companion = np.full(n, cfg.initial_p)
        self.sup_h = self.H.copy()
        self.sup_abs_d = np.zeros(n)
        self.max_jump_sq = np.zeros(n)
        self.sup_brk_dev = np.zeros(n)
        self.sup_abs_pdiff = np.zeros(n)
        self.sup_abs_lma = np.zeros(n)
        self.coin_heads = np.zeros(n, dtype=np.int64)
        self.coin_total = np.zeros(n, dtype=np.int64)
        self.first_jump_t = np.full(n, np.nan)
        self.envelope = np.full(n, np.nan)
        self.prop_t = np.full(n, np.nan)
        self.part_t = np.full(n, np.nan)
        self.cp_idx = np.zeros(n, dtype=np.int64)
        self.active = np.ones(n, dtype=bool)
        seed = cfg.seed
        self.s_wait = StreamSet(seed, "collision-wait", n, base)
        self.s_accept = StreamSet(seed, "collision-accept", n, base)
        self.s_jump = StreamSet(seed, "collision-jump", n, base)
        self.s_part = StreamSet(seed, "partition-wait", n, base)
        self.s_coin = StreamSet(seed, "partition-coin", n, base)
        ncp = len(cfg.checkpoints)
        self.row_store = {f: np.zeros((ncp, n)) for f in _ROW_FIELDS} if ncp else {}
        self.f_finals = {f: np.zeros(n) for f in _FINAL_FIELDS}
        self.coin_log = [] if (cfg.track.coins and n == 1) else None
        self.event_log = [] if (cfg.track.events and n == 1) else None
        if cfg.track.dense and n == 1:
            self.dense_log = {"t": [0.0], "x": [float(self.x[0])], "p": [float(self.p[0])]}
        else:
            self.dense_log = None

    def _advance(self, idx, target):
        """Flow paths ``idx`` to absolute times ``target``, accumulating."""
        dt = target - self.t[idx]
        move = dt > 0
        if move.any():
            sub = idx[move]
            if self.pot.is_free:
                self._advance_free(sub, dt[move])
            else:
                self._advance_potential(sub, dt[move])
        self.t[idx] = target

    def _advance_free(self, idx, dt):
        track = self.cfg.track
        lam = self.model.lam
        p = self.p[idx]
        self.x[idx] = np.mod(self.x[idx] + p * dt, 1.0)
        if track.compensators or track.companion:
            fd, fq = _drift_var(self.model, p)
        if track.compensators:
            self.M_comp[idx] += fd * dt
            new_brk = self.bracket[idx] + fq * dt
            self.sup_brk_dev[idx] = np.maximum(
                self.sup_brk_dev[idx], np.abs(new_brk - (self.t[idx] + dt)))
            self.bracket[idx] = new_brk
        chi_l = (self.H[idx] <= self.l_cut).astype(float)
        self.L[idx] += chi_l * dt / self.u_meas
        self.occ_low[idx] += (self.H[idx] <= 1.0) * dt
        if track.a_plus and self.table is not None:
            fa = self.table.a_plus(self.x[idx], p)
            new_a = self.a_plus[idx] + fa * dt
            self.sup_abs_lma[idx] = np.maximum(self.sup_abs_lma[idx],
                                               np.abs(self.L[idx] - new_a))
            self.a_plus[idx] = new_a
        if track.companion:
            if lam > 0:
                decay = np.exp(-0.5 * lam * dt)
                gain = fd * np.expm1(-0.5 * lam * dt) / (0.5 * lam)
            else:
                decay, gain = 1.0, -fd * dt
            comp = decay * self.companion[idx] + gain
            self.sup_abs_pdiff[idx] = np.maximum(self.sup_abs_pdiff[idx],
                                                 np.abs(comp - p))
            self.companion[idx] = comp
        if self.dense_log is not None:
            self.dense_log["t"].append(float(self.t[idx][0] + dt[0]))
            self.dense_log["x"].append(float(self.x[idx][0]))
            self.dense_log["p"].append(float(p[0]))

    def _advance_potential(self, idx, dt):
        cfg = self.cfg
        rate = substep_rate(self.pot, self.sqrt2h[idx], cfg.flow_rel_tol)
        h_in = self.pot.hamiltonian(self.x[idx], self.p[idx])
        dense_mark = None if self.dense_log is None else len(self.dense_log["t"])
        for _ in range(32):
            n_sub = np.maximum(2, np.ceil(dt * rate).astype(np.int64))
            n_sub += n_sub % 2
            if int(n_sub.max(initial=2)) > MAX_SUBSTEPS:
                raise FlowError("substep cap exceeded")
            out = self._flow_piece(idx, dt, n_sub)
            h_out = self.pot.hamiltonian(out["x"], out["p"])
            bad = np.abs(h_out - h_in) > cfg.flow_rel_tol * np.maximum(1.0, h_in)
            if not bad.any():
                break
            rate = np.where(bad, rate * 2.0, rate)
            if dense_mark is not None:
                for key in self.dense_log:
                    del self.dense_log[key][dense_mark:]
        else:
            raise FlowError("energy tolerance unreachable")
        chi_l = (h_in <= self.l_cut).astype(float)
        self.D[idx] += out["p"] - self.p[idx]
        self.x[idx] = out["x"]
        self.p[idx] = out["p"]
        self.M_comp[idx] += out["int_d"]
        self.bracket[idx] += out["int_q"]
        self.L[idx] += chi_l * dt / self.u_meas
        self.occ_low[idx] += (h_in <= 1.0) * dt
        if "int_a" in out:
            self.a_plus[idx] += out["int_a"]
        if "companion" in out:
            self.companion[idx] = out["companion"]
        self.sup_abs_d[idx] = out["sup_d"]
        self.sup_brk_dev[idx] = out["sup_b"]
        self.sup_abs_pdiff[idx] = out["sup_pd"]
        self.sup_abs_lma[idx] = out["sup_la"]

    def _flow_piece(self, idx, dt, n_sub):
        """One flow piece on a per-lane substep grid.

        Integrals of the tracked rates use trapezoid sums at spacings h and
        2h combined by Richardson extrapolation; running suprema update on
        every substep.  Nothing in the batch state is mutated, so a failed
        energy check can simply retry with a finer grid.
        """
        pot, model, track = self.pot, self.model, self.cfg.track
        lam = model.lam
        h = dt / n_sub
        x = self.x[idx].copy()
        p = self.p[idx].copy()
        m = idx.size
        use_q = track.compensators
        use_c = track.companion
        if use_q or use_c:
            fd_prev, fq_prev = _drift_var(model, p)
        if use_q:
            fd_prev2, fq_prev2 = fd_prev.copy(), fq_prev.copy()
            t1d = np.zeros(m); t2d = np.zeros(m)
            t1q = np.zeros(m); t2q = np.zeros(m)
        use_a = track.a_plus and self.table is not None
        if use_a:
            fa_prev = np.asarray(self.table.a_plus(x, p))
            fa_prev2 = fa_prev.copy()
            t1a = np.zeros(m); t2a = np.zeros(m)
        if use_c:
            comp = self.companion[idx].copy()
            fc_prev = -pot.force(x) - fd_prev
            fc_prev2 = fc_prev.copy()
            dpair = np.exp(-lam * h)
            dhalf = np.exp(-0.5 * lam * h)
        c_d = self.D[idx] - p
        c_b = self.bracket[idx] - self.t[idx]
        c_l = self.L[idx]
        c_a = self.a_plus[idx]
        chi_l = (self.H[idx] <= self.l_cut).astype(float)
        sup_d = self.sup_abs_d[idx].copy()
        sup_b = self.sup_brk_dev[idx].copy()
        sup_pd = self.sup_abs_pdiff[idx].copy()
        sup_la = self.sup_abs_lma[idx].copy()
        dense = self.dense_log
        t0 = self.t[idx]
        rem = n_sub.copy()
        k = 0
        while True:
            s = np.flatnonzero(rem > 0)
            if s.size == 0:
                break
            xs, ps, hs = x[s], p[s], h[s]
            # Yoshida-4 with fused interior kicks: 4 force evaluations
            ps = ps - 0.5 * _YW1 * hs * pot.force(xs)
            xs = xs + _YW1 * hs * ps
            ps = ps - 0.5 * (_YW1 + _YW0) * hs * pot.force(xs)
            xs = xs + _YW0 * hs * ps
            ps = ps - 0.5 * (_YW0 + _YW1) * hs * pot.force(xs)
            xs = xs + _YW1 * hs * ps
            force_end = pot.force(xs)
            ps = ps - 0.5 * _YW1 * hs * force_end
            x[s] = xs
            p[s] = ps
            k += 1
            even = (k % 2 == 0)
            if use_q or use_c:
                fdn, fqn = _drift_var(model, ps)
                fd_prev_s = fd_prev[s]
                fd_prev[s] = fdn
            if use_q:
                t1d[s] += 0.5 * hs * (fd_prev_s + fdn)
                t1q[s] += 0.5 * hs * (fq_prev[s] + fqn)
                fq_prev[s] = fqn
                if even:
                    t2d[s] += hs * (fd_prev2[s] + fdn)
                    t2q[s] += hs * (fq_prev2[s] + fqn)
                    fd_prev2[s] = fdn
                    fq_prev2[s] = fqn
            if use_a:
                fan = np.asarray(self.table.a_plus(np.mod(xs, 1.0), ps))
                t1a[s] += 0.5 * hs * (fa_prev[s] + fan)
                fa_prev[s] = fan
                if even:
                    t2a[s] += hs * (fa_prev2[s] + fan)
                    fa_prev2[s] = fan
            if use_c:
                fcn = -force_end - fdn
                if even:
                    comp[s] = dpair[s] * comp[s] + (hs / 3.0) * (
                        fc_prev2[s] * dpair[s] + 4.0 * fc_prev[s] * dhalf[s] + fcn)
                    fc_prev2[s] = fcn
                    sup_pd[s] = np.maximum(sup_pd[s], np.abs(comp[s] - ps))
                fc_prev[s] = fcn
            r_loc = k * hs
            if use_q:
                sup_d[s] = np.maximum(sup_d[s], np.abs(c_d[s] + ps))
                sup_b[s] = np.maximum(sup_b[s], np.abs(c_b[s] + t1q[s] - r_loc))
            if use_a:
                sup_la[s] = np.maximum(sup_la[s], np.abs(
                    c_l[s] + chi_l[s] * r_loc / self.u_meas - (c_a[s] + t1a[s])))
            if dense is not None and s[0] == 0:
                dense["t"].append(float(t0[0] + k * h[0]))
                dense["x"].append(float(np.mod(xs[0], 1.0)))
                dense["p"].append(float(ps[0]))
            rem[s] -= 1
        zero = np.zeros(m)
        out = {"x": np.mod(x, 1.0), "p": p,
               "int_d": (4.0 * t1d - t2d) / 3.0 if use_q else zero,
               "int_q": (4.0 * t1q - t2q) / 3.0 if use_q else zero,
               "sup_d": sup_d, "sup_b": sup_b, "sup_pd": sup_pd, "sup_la": sup_la}
        if use_a:
            out["int_a"] = (4.0 * t1a - t2a) / 3.0
        if use_c:
            out["companion"] = comp
        return out

    def _record_rows(self, idx, slots):
        src = {"x": self.x, "p": self.p, "H": self.H, "D": self.D, "J": self.J,
               "N": self.N, "M_comp": self.M_comp, "bracket": self.bracket,
               "L": self.L}
        for f in _ROW_FIELDS:
            self.row_store[f][slots, idx] = src[f][idx]

    def run(self):
        cfg = self.cfg
        model, pot = self.model, self.pot
        cps = np.asarray(cfg.checkpoints + (np.inf,))
        use_coins = cfg.track.coins
        while self.active.any():
            aidx = np.flatnonzero(self.active)
            need = aidx[np.isnan(self.prop_t[aidx])]
            if need.size:
                env = escape_rate(model, self.sqrt2h[need]) * (1.0 + cfg.envelope_slack)
                self.envelope[need] = env
                self.prop_t[need] = self.t[need] + self.s_wait.exponential(need) / env
            candidates = [self.prop_t[aidx], cps[self.cp_idx[aidx]],
                          self.horizons[aidx], self.t[aidx] + _CHUNK]
            if use_coins:
                needp = aidx[np.isnan(self.part_t[aidx])]
                if needp.size:
                    self.part_t[needp] = self.t[needp] + self.s_part.exponential(needp)
                candidates.append(self.part_t[aidx])
            target = np.minimum.reduce(candidates)
            self._advance(aidx, target)
            now = self.t[aidx]
            hit_cp = aidx[cps[self.cp_idx[aidx]] == now]
            if hit_cp.size:
                self._record_rows(hit_cp, self.cp_idx[hit_cp])
                self.cp_idx[hit_cp] += 1
            if use_coins:
                hit_part = aidx[self.part_t[aidx] == now]
                if hit_part.size:
                    hval = ATOM_COIN_RATE * (self.H[hit_part] <= self.l_cut)
                    z = self.s_coin.uniform(hit_part) < hval
                    self.coin_heads[hit_part] += z
                    self.coin_total[hit_part] += 1
                    if self.coin_log is not None:
                        self.coin_log.append((float(self.t[hit_part][0]),
                                              float(hval[0]), bool(z[0])))
                    self.part_t[hit_part] = np.nan
            hit_prop = aidx[(self.prop_t[aidx] == now) & (now < self.horizons[aidx])]
            if hit_prop.size:
                true_rate = escape_rate(model, self.p[hit_prop])
                ratio = true_rate / self.envelope[hit_prop]
                if (ratio > 1.0 + 1e-12).any():
                    raise ThinningFault("collision envelope violated")
                acc = self.s_accept.uniform(hit_prop) < ratio
                jidx = hit_prop[acc]
                if jidx.size:
                    p_old = self.p[jidx].copy()
                    p_new = sample_jump(model, p_old, self.s_jump, jidx)
                    delta = p_new - p_old
                    self.J[jidx] += delta
                    self.p[jidx] = p_new
                    self.H[jidx] = pot.hamiltonian(self.x[jidx], p_new)
                    self.sqrt2h[jidx] = np.sqrt(2.0 * self.H[jidx])
                    self.sup_h[jidx] = np.maximum(self.sup_h[jidx], self.H[jidx])
                    self.max_jump_sq[jidx] = np.maximum(self.max_jump_sq[jidx],
                                                        delta * delta)
                    self.N[jidx] += 1
                    fresh = jidx[self.N[jidx] == 1]
                    self.first_jump_t[fresh] = self.t[fresh]
                    if cfg.track.companion:
                        self.companion[jidx] += delta
                        self.sup_abs_pdiff[jidx] = np.maximum(
                            self.sup_abs_pdiff[jidx],
                            np.abs(self.companion[jidx] - p_new))
                    if self.dense_log is not None:
                        self.dense_log["t"].append(float(self.t[jidx][0]))
                        self.dense_log["x"].append(float(self.x[jidx][0]))
                        self.dense_log["p"].append(float(p_new[0]))
                    if self.event_log is not None:
                        self.event_log.append({
                            "t": float(self.t[jidx][0]), "kind": "jump",
                            "x": float(self.x[jidx][0]),
                            "p_before": float(p_old[0]),
                            "p_after": float(p_new[0]),
                            "D": float(self.D[jidx][0]),
                            "J": float(self.J[jidx][0]),
                            "M_comp": float(self.M_comp[jidx][0])})
                self.prop_t[hit_prop] = np.nan
            done = aidx[self.t[aidx] >= self.horizons[aidx]]
            if done.size:
                src = {"x": self.x, "p": self.p, "H": self.H, "D": self.D,
                       "J": self.J, "N": self.N, "M_comp": self.M_comp,
                       "bracket": self.bracket, "L": self.L,
                       "occ_low": self.occ_low, "a_plus_int": self.a_plus,
                       "companion": self.companion,
                       "first_jump_t": self.first_jump_t}
                for f in _FINAL_FIELDS:
                    self.f_finals[f][done] = src[f][done]
                self.active[done] = False

    def sups_dict(self):
        return {"sup_h": self.sup_h, "sup_abs_d": self.sup_abs_d,
                "max_jump_sq": self.max_jump_sq,
                "sup_brk_dev": self.sup_brk_dev,
                "sup_abs_pdiff": self.sup_abs_pdiff,
                "sup_abs_lma": self.sup_abs_lma}


_TABLE_CACHE: dict = {}


def _make_table(cfg: SimConfig) -> Optional[EnergyDriftTable]:
    if not cfg.track.a_plus:
        return None
    lam = cfg.model.lam
    p_max = 14.0 / math.sqrt(lam) if lam > 0 else 60.0
    key = (lam, cfg.potential.shape, getattr(cfg.potential, "v0", None),
           cfg.potential.harmonics, round(p_max, 9))
    if key not in _TABLE_CACHE:
        _TABLE_CACHE[key] = EnergyDriftTable(cfg.model, cfg.potential,
                                             p_max=p_max)
    return _TABLE_CACHE[key]


def next_event(model: ModelParams, pot: PotentialSpec, s: State,
               streams: StreamSet):
    """Time to the next accepted collision from ``s`` and the pre-collision
    state, by thinning with the conserved-energy envelope."""
    from .potential import flow
    h0 = float(pot.hamiltonian(s.x, s.p))
    env = float(escape_rate(model, math.sqrt(2.0 * h0)))
    cur = State(s.x, s.p)
    elapsed = 0.0
    for _ in range(1_000_000):
        wait = float(streams.exponential()[0]) / env
        cur, _ = flow(pot, cur, wait)
        elapsed += wait
        ratio = float(escape_rate(model, cur.p)) / env
        if ratio > 1.0 + 1e-12:
            raise ThinningFault("collision envelope violated")
        if float(streams.uniform()[0]) < ratio:
            return elapsed, cur
    raise ThinningFault("thinning loop exceeded its budget")


def _run_block(cfg: SimConfig, base: int, n: int, table=None):
    if table is None:
        table = _make_table(cfg)
    batch = _Batch(cfg, base, n, table)
    batch.run()
    return batch


def simulate(cfg: SimConfig) -> TrajectoryResult:
    """Simulate one trajectory with checkpoint rows and optional logs."""
    batch = _run_block(cfg, 0, 1)
    rows = ({f: batch.row_store[f][:, 0].copy() for f in _ROW_FIELDS}
            if cfg.checkpoints else {})
    finals = {f: float(batch.f_finals[f][0]) for f in _FINAL_FIELDS}
    finals["N"] = int(finals["N"])
    sups = {k: float(v[0]) for k, v in batch.sups_dict().items()}
    return TrajectoryResult(cfg=cfg, times=np.asarray(cfg.checkpoints),
                            rows=rows, finals=finals, sups=sups,
                            coin_log=batch.coin_log, event_log=batch.event_log,
                            dense_log=batch.dense_log)


def _block_task(args):
    cfg, base, n = args
    b = _run_block(cfg, base, n)
    return (base, {f: b.f_finals[f] for f in _FINAL_FIELDS}, b.sups_dict(),
            {"heads": b.coin_heads, "total": b.coin_total})


def run_ensemble(cfg: SimConfig, n_paths: int, workers: int = 1) -> EnsembleResult:
    """Simulate independent paths; block layout is fixed so any worker count
    yields bit-identical results."""
    if n_paths < 1:
        raise ValueError("need at least one path")
    tasks = [(cfg, a, min(_BLOCK, n_paths - a)) for a in range(0, n_paths, _BLOCK)]
    if workers <= 1 or len(tasks) == 1:
        shared = _make_table(cfg)
        parts = []
        for _, a, n in tasks:
            b = _run_block(cfg, a, n, table=shared)
            parts.append((a, {f: b.f_finals[f] for f in _FINAL_FIELDS},
                          b.sups_dict(), {"heads": b.coin_heads,
                                          "total": b.coin_total}))
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_block_task, tasks))
    parts.sort(key=lambda pr: pr[0])
    finals = {f: np.concatenate([pr[1][f] for pr in parts]) for f in _FINAL_FIELDS}
    sups = {f: np.concatenate([pr[2][f] for pr in parts]) for f in _SUP_FIELDS}
    coins = {k: np.concatenate([pr[3][k] for pr in parts]) for k in ("heads", "total")}
    return EnsembleResult(cfg=cfg, n_paths=n_paths, finals=finals, sups=sups,
                          coin_counts=coins)


def companion_path(traj: TrajectoryResult, model: ModelParams):
    """Companion linear-friction momentum from a dense single-path log.

    The dense log stores a node at every integrator substep plus a duplicate
    node at each collision carrying the post-jump momentum, so the linear
    jump equation can be solved exactly piece by piece: exponential decay
    between nodes, trapezoid quadrature of the drive, jumps applied at the
    duplicated nodes.  Returns (times, companion values).
    """
    if traj.dense_log is None:
        raise ValueError("companion reconstruction needs a dense log")
    lam = model.lam
    td = np.asarray(traj.dense_log["t"])
    pd = np.asarray(traj.dense_log["p"])
    xd = np.asarray(traj.dense_log["x"])
    pot = traj.cfg.potential
    fc = -np.asarray(pot.force(xd)) - np.asarray(jump_drift(model, pd))
    comp = np.empty(td.size)
    comp[0] = traj.cfg.initial_p
    # pairwise Simpson on uniform substep runs; trapezoid only at run edges,
    # so the accumulated error is fourth order in the substep
    base = 0
    parity = 0
    for k in range(1, td.size):
        dt = td[k] - td[k - 1]
        if dt <= 0:
            comp[k] = comp[k - 1] + (pd[k] - pd[k - 1])
            base, parity = k, 0
            continue
        decay = math.exp(-0.5 * lam * dt)
        comp[k] = decay * comp[k - 1] + 0.5 * dt * (fc[k - 1] * decay + fc[k])
        if parity == 0:
            parity = 1
        else:
            dt_prev = td[k - 1] - td[k - 2]
            if abs(dt - dt_prev) <= 1e-9 * dt:
                dp = math.exp(-lam * dt)
                dh = math.exp(-0.5 * lam * dt)
                comp[k] = dp * comp[base] + (dt / 3.0) * (
                    fc[k - 2] * dp + 4.0 * fc[k - 1] * dh + fc[k])
            base, parity = k, 0
    return td, comp
