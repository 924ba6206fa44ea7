import math

import numpy as np
import pytest

from paraspde.chaos import LambdaVector, NonlinearitySpec, RenormConstants, _profile_sigma_sq, chaos_coeffs, d_constants
from paraspde.grid import Grid, RealField, SpaceTimeField
from paraspde.noise import LatticeCovariance, NoiseSpec, default_dt, sample_eta, stationary_Y
from paraspde.trees import (NAMES, HomogeneityTable, b_eps_mc, build_enhancement, limit_enhancement,
                            measure_regularity, reference_trees, decay_stats)


def _setup(F, eps=0.5, n=64, box=8.0, frames=30, seed=0):
    spec, mu = NoiseSpec(), 1.0
    g = Grid(1, n, box)
    dt = default_dt(spec, eps)
    cov = LatticeCovariance(spec, g, eps, mu, dt)
    s2 = _profile_sigma_sq(cov, eps)
    ch = chaos_coeffs(F, s2)
    rc = d_constants(ch, cov, eps, mu, t_cut=frames * dt)
    Y = stationary_Y(sample_eta(spec, g, frames * dt, seed, eps, dt), mu)
    return Y, ch, rc


def test_enhancement_requires_constants():
    F = NonlinearitySpec(1.0, 5)
    Y, ch, _ = _setup(F, frames=4)
    with pytest.raises(ValueError):
        build_enhancement(Y, F, None, 0.5, 1.0, ch)


def test_table_order_and_values():
    t = HomogeneityTable(0.3)
    assert tuple(t.as_dict()) == NAMES
    assert t["I3"] == pytest.approx(0.2) and t["Y2"] == pytest.approx(-1.3)


def test_cubic_trees_are_constant_and_linear():
    F = NonlinearitySpec(1.0, 3)
    eps = 0.5
    Y, ch, rc = _setup(F, eps, frames=10)
    enh = build_enhancement(Y, F, rc, eps, 1.0, ch)
    assert np.allclose(enh.Y0.values, 1.0)
    assert np.allclose(enh.Y1.values, Y.values, atol=1e-12)
    assert np.allclose(enh.Y2bar.values, 0.0)


def test_resonances_are_centered_on_average():
    # ensemble mean of the renormalized resonances at the origin, late frame
    F = NonlinearitySpec(1.0, 5, (0, 0, 0, 0, 0.5))
    eps, frames = 0.5, 30
    vals = {k: [] for k in ("Y31", "Y22", "Y22bar")}
    rc = None
    for seed in range(40):
        Y, ch, rc = _setup(F, eps, frames=frames, seed=seed)
        enh = build_enhancement(Y, F, rc, eps, 1.0, ch)
        for k in vals:
            vals[k].append(getattr(enh, k).values[-1].mean())
    for k, v in vals.items():
        v = np.array(v)
        scale = abs(getattr(rc, {"Y31": "d31", "Y22": "d22", "Y22bar": "d22_bar"}[k])) + v.std()
        assert abs(v.mean()) < 4 * v.std(ddof=1) / math.sqrt(len(v)) + 0.05 * scale


def test_limit_enhancement_scales_reference_trees():
    g = Grid(1, 32, 4.0)
    rng = np.random.default_rng(0)
    X = SpaceTimeField(g, 0.01, rng.standard_normal((5,) + g.shape))
    ref = reference_trees(X, 1.0, 1.0, np.zeros(5))
    enh = limit_enhancement(LambdaVector(0.0, 0.0, 0.5, 2.0), ref)
    assert np.allclose(enh.Y0.values, 2.0)
    assert np.allclose(enh.Y22bar.values, 1.0 * ref.X22.values)
    with pytest.raises(ValueError):
        limit_enhancement(LambdaVector(0, 0, 0, 0.0), ref)


def test_b_eps_mc_shapes():
    g = Grid(1, 16, 4.0)
    rng = np.random.default_rng(1)
    refs = [reference_trees(SpaceTimeField(g, 0.01, rng.standard_normal((4,) + g.shape)), 1.0, 1.0,
                            np.zeros(4)) for _ in range(3)]
    mean, se = b_eps_mc(refs, [1, 3])
    assert mean.shape == se.shape == (2,)


def test_regularity_of_lacunary_series():
    # one mode per dyadic shell with amplitude 2^{-a j}: block sups scale exactly like 2^{-a j}
    g = Grid(1, 1024, 2 * np.pi)
    a = 0.5
    f = sum(2.0 ** (-a * j) * np.cos(3 * 2 ** (j - 1) * g.x1) for j in range(1, 9))
    fit = measure_regularity(RealField(g, f), j_range=range(1, 9))
    assert fit.exponent == pytest.approx(a, abs=0.05)


def test_regularity_rejects_short_range():
    g = Grid(1, 16, 1.0)
    with pytest.raises(ValueError):
        measure_regularity(RealField(g, np.ones(g.shape)))


def test_decay_stats_exact_zero():
    g = Grid(1, 32, 4.0)
    z = SpaceTimeField(g, 0.1, np.zeros((2,) + g.shape))
    one = SpaceTimeField(g, 0.1, np.ones((2,) + g.shape))
    members = [{"epsilon": e, "Y0": [one], "Z2": [z], "lambda3": 1.0} for e in (0.5, 0.25)]
    rep = decay_stats(members)
    assert rep.exact["Y0"] and rep.passed("Z2")
