import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.special import erf

from torusgas.kernel import (ETA, ModelParams, EnergyDriftTable, SamplerFault,
                             energy_drift, energy_functionals, escape_rate,
                             idealized_rate, jump_drift, jump_moment,
                             jump_rate, q_variance, sample_jump)
from torusgas.potential import PotentialSpec
from torusgas.rng import StreamSet

LAMS = (1.0, 0.3, 0.1, 0.03, 0.01)
PS = (0.0, 0.5, -1.0, 2.0, -5.0, 10.0, -20.0, 50.0)


def oracle_moment(params, p, m):
    """Independent adaptive quadrature of the defining integral in p'."""
    lam = params.lam
    center = (1 - lam) / (1 + lam) * p
    wide = 60.0 / (1 + lam)
    pts = [p] if abs(p - center) < wide else None
    val, _ = quad(lambda pp: (pp - p) ** m * float(jump_rate(params, p, pp)),
                  center - wide, center + wide, points=pts, limit=300,
                  epsabs=1e-14, epsrel=1e-12)
    return val


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams(-0.1)
    with pytest.raises(ValueError):
        ModelParams(1.5)
    with pytest.raises(ValueError):
        ModelParams(0.1, eta=0.1)
    assert ModelParams(0.0).eta == ETA == math.sqrt(2 * math.pi) / 32


def test_zero_transfer_rate_vanishes():
    assert float(jump_rate(ModelParams(0.5), 0.0, 0.0)) == 0.0


@given(lam=st.sampled_from(LAMS),
       p=st.floats(-30, 30), q=st.floats(-30, 30))
@settings(max_examples=60, deadline=None)
def test_rate_parity(lam, p, q):
    params = ModelParams(lam)
    assert float(jump_rate(params, p, q)) == pytest.approx(
        float(jump_rate(params, -p, -q)), rel=1e-14, abs=1e-300)


def test_weighted_detailed_balance():
    for lam in LAMS:
        params = ModelParams(lam)
        for p in (0.3, -1.2, 4.0):
            for q in (-2.0, 0.7, 6.5):
                lhs = math.exp(-lam * p * p / 2) * float(jump_rate(params, p, q))
                rhs = math.exp(-lam * q * q / 2) * float(jump_rate(params, q, p))
                assert abs(lhs - rhs) <= 1e-12 * max(lhs, rhs)


def test_anchor_values():
    for lam in (1.0, 0.37, 0.1, 0.003, 0.0):
        params = ModelParams(lam)
        assert abs(float(escape_rate(params, 0.0)) * 8 * (1 + lam) - 1) < 1e-12
        assert float(jump_drift(params, 0.0)) == 0.0
        assert abs(float(q_variance(params, 0.0)) * (1 + lam) ** 3 - 1) < 1e-10
    params0 = ModelParams(0.0)
    for p in (0.0, 3.0, -17.0):
        assert abs(float(escape_rate(params0, p)) - 0.125) < 1e-14
        assert abs(float(jump_moment(params0, p, 2)) - 1.0) < 1e-12
        assert abs(float(q_variance(params0, p)) - 1.0) < 1e-10


def test_closed_forms_match_oracle():
    for lam in (0.3, 0.03):
        params = ModelParams(lam)
        for p in PS:
            for m, fn in ((0, escape_rate), (1, jump_drift),
                          (2, lambda mm, pp: jump_moment(mm, pp, 2))):
                ref = oracle_moment(params, p, m)
                ours = float(fn(params, p))
                assert abs(ours - ref) <= 1e-8 * max(abs(ref), 1e-12)


def test_escape_rate_monotone_in_speed():
    ps = np.linspace(0.0, 60.0, 400)
    for lam in LAMS:
        vals = escape_rate(ModelParams(lam), ps)
        assert (np.diff(vals) >= -1e-15).all()


def test_higher_moments_and_caps():
    params = ModelParams(0.1)
    assert float(jump_moment(params, 3.0, 0)) == float(escape_rate(params, 3.0))
    for m in (3, 5, 8):
        ref = oracle_moment(params, 7.0, m)
        assert abs(float(jump_moment(params, 7.0, m)) - ref) <= 1e-9 * abs(ref)
    with pytest.raises(ValueError):
        jump_moment(params, 1.0, 13)
    with pytest.raises(ValueError):
        jump_moment(params, 1.0, -1)


def test_idealized_rate_is_zero_mass_kernel():
    params = ModelParams(0.0)
    for pf, pt in ((0.3, -1.2), (2.0, 2.5), (-4.0, 1.0), (8.0, -8.0)):
        a = float(jump_rate(params, pf, pt))
        b = float(idealized_rate(params, pt - pf))
        assert abs(a - b) <= 1e-12 * max(a, 1e-300)


def test_sampler_moments_and_symmetry():
    n = 200_000
    params = ModelParams(0.1)
    p0 = 5.0
    streams = StreamSet(0, "test-jump", n)
    out = sample_jump(params, np.full(n, p0), streams)
    delta = out - p0
    esc = float(escape_rate(params, p0))
    for m in (1, 2):
        target = float(jump_moment(params, p0, m)) / esc
        se = np.std(delta ** m) / math.sqrt(n)
        assert abs(np.mean(delta ** m) - target) <= 4 * se
    streams = StreamSet(1, "test-jump-sym", n)
    sym = sample_jump(params, np.zeros(n), streams)
    se = np.std(sym ** 3) / math.sqrt(n)
    assert abs(np.mean(sym ** 3)) <= 4 * se


def test_sampler_target_cdf():
    """Post-collision momentum follows the normalized kernel density: exact
    Gaussian-piece cdf in the substituted variable vs the empirical law."""
    n = 100_000
    lam, p0 = 0.3, 2.5
    params = ModelParams(lam)
    streams = StreamSet(4, "test-jump-cdf", n)
    out = sample_jump(params, np.full(n, p0), streams)
    q = 0.5 * (lam + 1) * out + 0.5 * (lam - 1) * p0
    a = lam * p0
    g = lambda u: np.exp(-0.5 * u * u) / math.sqrt(2 * math.pi)
    Phi = lambda u: 0.5 * (1 + erf(u / math.sqrt(2)))

    def mass_below(t):
        # integral of |u - a| g(u) over (-inf, t]
        if t <= a:
            return a * Phi(t) + g(t)
        return 2 * a * Phi(a) + 2 * g(a) - g(t) - a * Phi(t)

    total = 2 * g(a) + a * erf(a / math.sqrt(2))

    def cdf(ts):
        return np.asarray([mass_below(t) for t in np.atleast_1d(ts)]) / total

    xs = np.sort(q)
    F = cdf(xs)
    i = np.arange(1, n + 1)
    ks = max(np.max(np.abs(F - i / n)), np.max(np.abs(F - (i - 1) / n)))
    assert ks <= 1.628 / math.sqrt(n)  # level 0.01


def test_energy_functionals_reduce_when_flat(free_pot):
    params = ModelParams(0.1)
    for p in (0.5, 3.0, -7.0):
        ours = energy_drift(params, free_pot, 0.3, p)
        ref, _ = quad(lambda pp: (abs(pp) - abs(p)) * float(jump_rate(params, p, pp)),
                      -60, 60, points=[p, 0.0, -abs(p), abs(p)], limit=300,
                      epsabs=1e-14, epsrel=1e-12)
        assert abs(ours - ref) <= 1e-8 * abs(ref)


def test_energy_functionals_structure(cosine_pot):
    params = ModelParams(0.1)
    ef = energy_functionals(params, cosine_pot, 0.2, 1.5)
    assert ef.A_plus * ef.A_minus == 0.0
    assert ef.A == pytest.approx(ef.A_plus - ef.A_minus, abs=1e-300)
    assert ef.V_n > 0 and ef.K_n > 0 and ef.K_star_n >= 0
    sym = energy_functionals(params, cosine_pot, 0.2, -1.5)
    assert sym.A == pytest.approx(ef.A, rel=1e-12)
    ef2 = energy_functionals(params, cosine_pot, 0.2, 1.5, n=2)
    esc = float(escape_rate(params, 1.5))
    assert ef.V_n == pytest.approx(2 * ef2.K_n - ef.A ** 2 / esc, rel=1e-9)
    with pytest.raises(ValueError):
        energy_functionals(params, cosine_pot, 0.0, 1.0, n=5)


def test_energy_table_probe_error(cosine_pot):
    table = EnergyDriftTable(ModelParams(0.1), cosine_pot, p_max=30.0)
    assert table.max_probe_error(n_probes=40, seed=3) <= 1e-4
