import numpy as np
import pytest

from paraspde.besov import (UNIT, AnalysisParams, Weight, besov_norm, block_sups, holder_norm, lp_block,
                            partition_for, sup_norm)
from paraspde.grid import Grid, RealField


def test_partition_of_unity():
    g = Grid(2, 32, 5.0)
    p = partition_for(g)
    assert np.allclose(p.theta.sum(axis=0), 1.0, atol=1e-14)


def test_blocks_sum_to_field():
    g = Grid(1, 128, 2 * np.pi)
    f = np.random.default_rng(0).standard_normal(g.shape)
    assert np.allclose(partition_for(g).blocks(f).sum(axis=0), f, atol=1e-12)


def test_single_mode_sits_in_one_block():
    g = Grid(1, 256, 2 * np.pi)
    f = RealField(g, np.cos(20 * g.x1))
    sups = block_sups(f)
    assert np.count_nonzero(sups > 1e-12) <= 2
    j = int(np.argmax(sups)) - 1
    assert lp_block(f, j).values.max() > 0.4


def test_besov_norm_scaling_of_a_mode():
    g = Grid(1, 256, 2 * np.pi)
    f = RealField(g, np.cos(40 * g.x1))
    assert besov_norm(f, 1.0) / besov_norm(f, 0.0) == pytest.approx(
        2.0 ** (int(np.argmax(block_sups(f))) - 1), rel=1e-12)


def test_weight_values_and_product():
    g = Grid(1, 16, 8.0)
    w = Weight(1.0, 2.0) * Weight(1.0, 1.0)
    assert w.power == 3.0
    assert np.allclose(w.values(g), (1 + g.radius**2) ** -1.5)
    with pytest.raises(ValueError):
        Weight(1.0) * Weight(2.0)


def test_holder_norm_bounds_smooth_mode():
    g = Grid(1, 256, 2 * np.pi)
    f = RealField(g, np.sin(g.x1))
    h = holder_norm(f, 0.5)
    assert 1.0 < h < 3.0


def test_sup_norm_weighted():
    g = Grid(1, 16, 8.0)
    f = RealField(g, np.ones(g.shape))
    assert sup_norm(f, UNIT) == 1.0
    assert sup_norm(f, Weight(1.0, 1.0)) == pytest.approx(1.0)


def test_analysis_params_validation():
    AnalysisParams()
    with pytest.raises(ValueError):
        AnalysisParams(m=4)
    with pytest.raises(ValueError):
        AnalysisParams(alpha=0.1)
