import math

import numpy as np
import pytest
from scipy.integrate import quad

from torusgas.quadrature import adaptive_quad, fixed_panel_quad, QuadratureError


def test_gaussian_mass():
    val = adaptive_quad(lambda q: np.exp(-0.5 * q * q) / math.sqrt(2 * math.pi),
                        -40, 40, rel_tol=1e-12)
    assert abs(val - 1.0) < 1e-12


def test_kink_with_split_point():
    a = 0.7

    def f(q):
        return np.abs(q - a) * np.exp(-0.5 * q * q)

    ours = adaptive_quad(f, -30, 30, rel_tol=1e-12, points=(a,))
    ref, _ = quad(f, -30, 30, points=[a], epsabs=1e-14, epsrel=1e-13, limit=200)
    assert abs(ours - ref) / abs(ref) < 1e-11


def test_oscillatory_against_scipy():
    def f(q):
        return np.cos(3.3 * q) * np.exp(-q * q)

    ours = adaptive_quad(f, -10, 10, rel_tol=1e-11)
    ref, _ = quad(f, -10, 10, epsabs=1e-14, epsrel=1e-12, limit=400)
    assert abs(ours - ref) <= 1e-10 * abs(ref)


def test_panel_budget_error():
    with pytest.raises(QuadratureError):
        adaptive_quad(lambda q: np.abs(np.sin(200.0 / (np.abs(q) + 1e-3))),
                      0, 1, rel_tol=1e-13, max_panels=8)


def test_fixed_panels_agree_with_adaptive():
    def f(q):
        return np.exp(-q * q) * (q ** 4 + 1)

    edges = np.linspace(-8, 8, 33)
    a = fixed_panel_quad(f, edges)
    b = adaptive_quad(f, -8, 8, rel_tol=1e-12)
    assert abs(a - b) < 1e-10
