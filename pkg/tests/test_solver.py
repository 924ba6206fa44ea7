import numpy as np
import pytest
from scipy.integrate import solve_ivp

from paraspde.chaos import NonlinearitySpec
from paraspde.grid import Grid, RealField, SpaceTimeField
from paraspde.noise import NoiseSpec, default_dt
from paraspde.solver import (DivergenceError, converge_sweep, restrict, scaled_nonlinearity, simulate_u_eps,
                             solve_classical)

F5 = NonlinearitySpec(1.0, 5)


def _flat(g, dt, n, c=0.0):
    return SpaceTimeField(g, dt, np.full((n + 1,) + g.shape, c))


def _scalar(dt, T=0.5, c=0.8, mu=1.0):
    g = Grid(1, 8, 1.0)
    n = int(round(T / dt))
    u = solve_classical(F5, _flat(g, dt, n), RealField(g, np.full(g.shape, c)), mu)
    return u.times, u.values[:, 0]


def test_zero_data_gives_zero_solution():
    g = Grid(2, 16, 4.0)
    u = solve_classical(F5, _flat(g, 0.01, 20), None, 1.0)
    assert np.all(u.values == 0.0)


def test_scalar_ode_against_adaptive_integrator():
    t, u = _scalar(1e-4)
    ref = solve_ivp(lambda s, y: -y - y**5, (0, t[-1]), [0.8], rtol=1e-12, atol=1e-14, t_eval=t)
    assert np.abs(u - ref.y[0]).max() < 2e-5


def test_first_order_in_dt():
    _, fine = _scalar(0.5 / 3200)
    e1 = abs(_scalar(0.5 / 50)[1][-1] - fine[-1])
    e2 = abs(_scalar(0.5 / 100)[1][-1] - fine[-1])
    assert e1 / e2 == pytest.approx(2.0, rel=0.1)


def test_linear_drift_matches_per_mode_solution():
    g = Grid(1, 32, 2 * np.pi)
    a, mu, dt, n = 0.5, 1.0, 1e-4, 2000
    eta = SpaceTimeField(g, dt, np.broadcast_to(np.cos(3 * g.x1), (n + 1,) + g.shape).copy())
    u = solve_classical(lambda x: a * x, eta, None, mu)
    lam = 9 + mu + a
    T = n * dt
    assert np.allclose(u.values[-1], (1 - np.exp(-lam * T)) / lam * np.cos(3 * g.x1), atol=1e-4)


def test_unit_epsilon_is_classical():
    spec = NoiseSpec()
    g = Grid(1, 64, 8.0)
    tr = simulate_u_eps(1.0, F5, spec, None, 3, 0.25, g)
    again = solve_classical(F5, tr.eta, None, 1.0)
    assert np.abs(tr.u.values - again.values).max() <= 1e-8


def test_scaled_nonlinearity():
    G = scaled_nonlinearity(F5, 0.25)
    assert G(np.array([2.0]))[0] == pytest.approx(0.5**5 * 2**5 / 0.25**1.5)


def test_determinism_and_resolution_guard():
    spec = NoiseSpec()
    g = Grid(1, 64, 8.0)
    a = simulate_u_eps(0.5, F5, spec, None, 11, 0.125, g)
    b = simulate_u_eps(0.5, F5, spec, None, 11, 0.125, g)
    assert np.array_equal(a.u.values, b.u.values)
    with pytest.raises(ValueError):
        simulate_u_eps(0.1, F5, spec, None, 11, 0.125, g)
    with pytest.raises(ValueError):
        simulate_u_eps(1.5, F5, spec, None, 11, 0.125, g)


def test_blowup_raises():
    g = Grid(1, 8, 1.0)
    with pytest.raises(DivergenceError):
        solve_classical(lambda x: -x**3, _flat(g, 0.01, 200), RealField(g, np.full(g.shape, 5.0)), 1.0)


def test_dt_mismatch_rejected():
    g = Grid(1, 8, 1.0)
    with pytest.raises(ValueError):
        solve_classical(F5, _flat(g, 0.01, 5), None, 1.0, dt=0.02)


def test_restrict_keeps_low_modes():
    g = Grid(1, 64, 2 * np.pi)
    f = np.cos(3 * g.x1) + np.cos(20 * g.x1)
    small, coarse = restrict(f, g, 16)
    assert np.allclose(small, np.cos(3 * coarse.x1), atol=1e-12)


def test_cubic_model_against_cubic_reference_is_trivial():
    spec = NoiseSpec()
    res = converge_sweep([0.5, 0.25], lambda x: 2.0 * x**3, [0, 1], spec, 1, 4.0, 0.125, 16,
                         lambda3=lambda e: 2.0, dt_obs=default_dt(spec, 0.5))
    # x^3 is invariant under the epsilon rescaling, so both runs coincide
    assert max(res.medians) < 1e-12
