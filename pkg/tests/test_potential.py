import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from torusgas.potential import (FlowError, PotentialSpec, State, flow,
                                flow_many)
from torusgas.rng import StreamSet


def test_cosine_values_and_force():
    pot = PotentialSpec("cosine", 1.0)
    assert float(pot.value(0.0)) == 0.0
    assert float(pot.value(0.5)) == pytest.approx(1.0, abs=1e-15)
    assert float(pot.force(0.25)) == pytest.approx(math.pi, rel=1e-15)
    assert pot.sup_v == 1.0 and pot.sup_dv == math.pi
    xs = (np.arange(1024) + 0.5) / 1024
    assert abs(np.mean(pot.force(xs))) <= 1e-12
    assert float(pot.value(0.3)) == pytest.approx(float(pot.value(1.3)), abs=1e-12)


def test_harmonics_potential_properties():
    pot = PotentialSpec("harmonics", harmonics=((0.4, 0.1), (-0.15, 0.2)))
    xs = np.linspace(0, 1, 4097)
    vals = pot.value(xs)
    assert vals.min() >= 0.0
    assert abs(vals[0] - vals[-1]) < 1e-12
    assert abs(np.mean(pot.force(xs[:-1] + 0.5 / 4096))) <= 1e-10
    assert pot.stiffness == 2
    with pytest.raises(ValueError):
        PotentialSpec("harmonics")
    with pytest.raises(ValueError):
        PotentialSpec("square")


@given(x0=st.floats(0, 1, exclude_max=True),
       p0=st.floats(-12, 12), dt=st.floats(0.01, 3.0))
@settings(max_examples=15, deadline=None)
def test_flow_conserves_energy(x0, p0, dt):
    pot = PotentialSpec("cosine", 1.0)
    s = State(x0, p0)
    out, dpd = flow(pot, s, dt)
    h0 = float(pot.hamiltonian(s.x, s.p))
    h1 = float(pot.hamiltonian(out.x, out.p))
    assert abs(h1 - h0) <= 1e-10 * max(1.0, h0)
    assert dpd == out.p - s.p


def test_flow_in_a_well_crosses_turning_points():
    pot = PotentialSpec("cosine", 1.0)
    s = State(0.0, math.sqrt(2 * 0.5 * pot.sup_v))  # H = half the barrier
    out, _ = flow(pot, s, 25.0)
    h0 = float(pot.hamiltonian(s.x, s.p))
    assert abs(float(pot.hamiltonian(out.x, out.p)) - h0) <= 1e-10
    # the momentum must have changed sign along the way: sample midpoints
    signs = set()
    cur = State(s.x, s.p)
    for _ in range(16):
        cur, _ = flow(pot, cur, 0.35)
        signs.add(cur.p > 0)
    assert signs == {True, False}


def test_flow_time_reversal():
    pot = PotentialSpec("cosine", 1.0)
    for (x0, p0, dt) in ((0.1, 0.7, 3.3), (0.6, -4.0, 2.0), (0.25, 11.0, 5.5)):
        s = State(x0, p0)
        fwd, _ = flow(pot, s, dt)
        back, _ = flow(pot, State(fwd.x, -fwd.p), dt)
        assert abs(back.x - s.x) <= 1e-9
        assert abs(-back.p - s.p) <= 1e-9


def test_flow_rejects_negative_duration():
    with pytest.raises(FlowError):
        flow(PotentialSpec(), State(0.0, 1.0), -0.1)


def test_free_flow_is_exact_translation():
    pot = PotentialSpec("cosine", 0.0)
    out, dpd = flow(pot, State(0.25, 3.0), 1.5)
    assert out.p == 3.0 and dpd == 0.0
    assert out.x == pytest.approx((0.25 + 4.5) % 1.0, abs=1e-12)


def test_deterministic_drift_bound_fast_particle():
    """At speed well above the barrier the momentum stays within
    2 sup V / |p0| of its initial value, for all times."""
    pot = PotentialSpec("cosine", 1.0)
    p0 = 10.0
    cur = State(0.0, p0)
    worst = 0.0
    for _ in range(40):
        cur, _ = flow(pot, cur, 0.37)
        worst = max(worst, abs(cur.p - p0))
    assert worst <= 2.0 * pot.sup_v / p0


def test_force_integral_matches_potential_difference():
    """The cumulative force integral equals the potential difference over
    the initial momentum up to the stated quadratic-order remainder."""
    pot = PotentialSpec("cosine", 1.0)
    for p0 in (10.0, 30.0, 100.0):
        for t in (1.0, 5.0):
            s = State(0.15, p0)
            out, dpd = flow(pot, s, t)
            force_int = -dpd  # along the flow, dp = -dV/dx dt
            target = (float(pot.value(out.x)) - float(pot.value(s.x))) / p0
            bound = 2 * t * pot.sup_dv * pot.sup_v / p0 ** 2
            assert abs(force_int - target) <= bound


def test_exponential_stopping_uniformizes_position():
    """A fast particle stopped at an exponential time lands nearly uniformly
    on the torus: the mean of a centered observable is within the stated
    first-order bound plus a generous quadratic slack.  (The acceptance
    suite repeats this at the full 1e5-stop budget.)"""
    pot = PotentialSpec("cosine", 1.0)
    n = 20_000
    p0 = 50.0
    taus = StreamSet(17, "uniformization", n).exponential()
    xs, _ = flow_many(pot, np.zeros(n), np.full(n, p0), taus)
    est = float(np.mean(np.cos(2 * math.pi * xs)))
    assert abs(est) <= 1.0 / p0 + 10.0 / p0 ** 2


def test_flow_many_matches_scalar():
    pot = PotentialSpec("cosine", 1.0)
    xs, ps = flow_many(pot, [0.1, 0.6], [0.7, -4.0], [1.2, 2.4])
    for i, (x0, p0, dt) in enumerate(((0.1, 0.7, 1.2), (0.6, -4.0, 2.4))):
        out, _ = flow(pot, State(x0, p0), dt)
        assert abs(out.x - xs[i]) < 1e-9
        assert abs(out.p - ps[i]) < 1e-9
