import math

import numpy as np
import pytest
from numpy.polynomial import Polynomial

from paraspde.chaos import (FamilyPoint, LambdaVector, NonlinearitySpec, RenormConstants, assumption1_check,
                            chaos_coeffs, d_constants, expansion_coefficients, gauss_nodes, hermite,
                            lambda_vector, tilde_F)
from paraspde.besov import AnalysisParams
from paraspde.grid import Grid, HeatQuadrature, heat_kernel_functional
from paraspde.noise import LatticeCovariance, NoiseSpec, default_dt


def test_low_hermite():
    x = np.linspace(-2, 2, 7)
    assert np.allclose(hermite(0, x, 2.0), 1.0)
    assert np.allclose(hermite(1, x, 2.0), x)
    assert np.allclose(hermite(2, x, 2.0), x**2 - 2.0)


@pytest.mark.parametrize("s2", [0.5, 1.0, 2.0])
def test_hermite_orthogonality(s2):
    x, w = gauss_nodes(40, s2)
    for a in range(10):
        for b in range(10):
            val = np.dot(w, hermite(a, x, s2) * hermite(b, x, s2))
            ref = math.factorial(a) * s2**a if a == b else 0.0
            assert abs(val - ref) <= 1e-8 * math.factorial(max(a, b)) * s2 ** max(a, b)


def test_constant_and_cubic_coefficients():
    c = chaos_coeffs(Polynomial([2.5]), 1.0)
    assert c.coef(0) == pytest.approx(2.5) and abs(c.coef(1)) < 1e-12
    c3 = chaos_coeffs(NonlinearitySpec(1.0, 3), 0.7)
    assert c3.coef(3) == pytest.approx(1.0, abs=1e-9)
    assert c3.coef(1) == pytest.approx(2.1, abs=1e-9)
    assert abs(c3.coef(0)) < 1e-9 and abs(c3.coef(2)) < 1e-9


def test_too_few_nodes_is_an_error():
    with pytest.raises(ArithmeticError):
        chaos_coeffs(NonlinearitySpec(1.0, 5), 1.0, n_nodes=5)


def test_tilde_F_of_cubic_is_H3():
    s2 = 0.8
    tf = tilde_F(NonlinearitySpec(1.0, 3), chaos_coeffs(NonlinearitySpec(1.0, 3), s2))
    x = np.linspace(-3, 3, 11)
    assert np.allclose(tf(x), x**3 - 3 * s2 * x, atol=1e-10)
    lin = NonlinearitySpec(1.0, 1, (0.3,))
    assert tilde_F(lin, chaos_coeffs(lin, s2)).is_zero


def test_tilde_F_is_centered():
    F = NonlinearitySpec(1.0, 5, (0, 0, 0, 0, 0.5))
    s2 = 0.3
    tf = tilde_F(F, chaos_coeffs(F, s2))
    x, w = gauss_nodes(30, s2)
    assert abs(np.dot(w, tf(x))) < 1e-12


def test_even_degree_rejected():
    with pytest.raises(ValueError):
        NonlinearitySpec(1.0, 4)


@pytest.fixture(scope="module")
def profile():
    spec = NoiseSpec()
    g = Grid(1, 64, 8.0)
    return LatticeCovariance(spec, g, 0.5, 1.0, default_dt(spec, 0.5))


def _s2(profile, eps=0.5):
    return eps * float(np.asarray(profile(0.0)).flat[0])


def test_zero_tilde_gives_zero_constants(profile):
    F = NonlinearitySpec(1.0, 1)
    rc = d_constants(chaos_coeffs(F, _s2(profile)), profile, 0.5, 1.0)
    assert all(v == 0 for v in rc.as_dict().values())


def test_pure_cubic_closed_form(profile):
    eps, mu = 0.5, 1.0
    F = NonlinearitySpec(1.0, 3)
    ch = chaos_coeffs(F, _s2(profile))
    rc = d_constants(ch, profile, eps, mu)
    # E[F~' F~'] = 9 f3^2 2! c^2, c = eps C
    ref, _ = heat_kernel_functional(lambda s: 2 * eps**-2 * (eps * np.asarray(profile(s))) ** 2, mu,
                                    profile.grid, quad=HeatQuadrature("lattice", dt=profile.dt))
    assert rc.d22 == pytest.approx(ref, rel=1e-6)
    assert rc.d31 == pytest.approx(0.0, abs=1e-14)


def test_prime_constraint_two_routes(profile):
    F = NonlinearitySpec(1.0, 5, (0, 0, 0, 0, 0.5))
    rc = d_constants(chaos_coeffs(F, _s2(profile)), profile, 0.5, 1.0)
    assert rc.d32_prime_direct == pytest.approx(2 * rc.d31 + 3 * rc.d22, rel=1e-6)


def test_constraint_enforced():
    with pytest.raises(ArithmeticError):
        RenormConstants(1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 4.0)


def test_lambda_vector_literal_cases():
    z = RenormConstants.zero()
    assert lambda_vector(0, 0, 0, 0, z, 0.5).as_tuple() == (0, 0, 0, 0)
    d = RenormConstants(0.25, 1.0, 1 / 9, 0.0, 0.0, 0.0, 1 / 3)
    lam = lambda_vector(0.0, 0.25, 0.0, 2.0, d, 0.25)
    assert lam.lambda1 == pytest.approx(0.0, abs=1e-14)
    assert lam.lambda3 == 2.0


def test_expansion_coefficients_of_pure_power():
    F = NonlinearitySpec(2.0, 5)
    ex = expansion_coefficients(F, 0.5, 4)
    assert ex.b[4] == 2.0 * 5
    assert ex.a[4] == 0.0                  # E[Z] = 0
    assert all(v == 0 for v in ex.c.values())


def _family(G=()):
    pts = []
    for eps in (0.5, 0.25, 0.125):
        F = NonlinearitySpec(1.0, 5, G)
        s2 = 0.1 * eps
        ch = chaos_coeffs(F, s2)
        lam = LambdaVector(0.0, 0.0, ch.coef(2) / math.sqrt(eps), ch.coef(3))
        pts.append(FamilyPoint(eps, F, s2, lam))
    return pts


def test_assumption_holds_for_quintic_family():
    rep = assumption1_check(_family(), AnalysisParams())
    assert rep.checks["shape"]["passed"]
    assert rep.checks["young_inequality"]["passed"]


def test_assumption_fails_with_witness_for_large_G():
    rep = assumption1_check(_family((0, 0, 0, 0, 500.0)), AnalysisParams())
    y = rep.checks["young_inequality"]
    assert not y["passed"] and y["witness_xy"] is not None
