"""RM maximal functions, the classic Rademacher maximal function and Lp estimates."""
import numpy as np
import pytest

from dycalc.haar import GridFunction, average
from dycalc.rmf import (RMConfig, RMFError, classic_mr, rm_maximal, rm_maximal_family, rm_ratio, rmf_lp_estimate,
                        rmf_table, weak_type_constant)
from dycalc.spaces import Schatten, SequenceLp, bochner_lift, product_of_scalars
from conftest import cube_at, grid1


def _cfg(J=(1,), v=4, n=3, **kw):
    return RMConfig(product_of_scalars(n + 1), J, v, **kw)


def test_rm_maximal_zero_and_indicator():
    """[TRIVIAL]/[DERIVED] zero input; 1_[0,1/4) gives sup of dyadic averages per point."""
    g = grid1(-2, 0)
    assert np.all(rm_maximal([GridFunction.zeros(g)], _cfg(), g).values == 0)
    f = GridFunction.indicator(g, cube_at(g, 0, -2))
    M = rm_maximal([f], _cfg(), g)
    assert np.allclose(M.values[..., 0], [1, .5, .25, .25])
    assert M.metadata["path"] == "exact"


def test_rm_maximal_monotone_in_family(rng):
    """[TRIVIAL] enlarging the cube family never lowers the value."""
    g = grid1(-3, 0)
    cfg = _cfg()
    f = [GridFunction.random(g, rng=rng)]
    cubes = g.all_cubes()
    small = rm_maximal(f, cfg, g, cubes[: len(cubes) // 2]).values
    big = rm_maximal(f, cfg, g, cubes).values
    assert np.all(small <= big)


def test_integral_lift_path_matches_scalar_for_one_point():
    """[DERIVED] an integral lift over a one-point measure space is the scalar product."""
    g = grid1(-2, 0)
    rng = np.random.default_rng(1)
    f = GridFunction.random(g, rng=rng)
    lift = bochner_lift((4, 4, 4, 4), [1.0])
    a, ex_a = rm_maximal_family([f], g.all_cubes(), lift, (1,), 4)
    b, ex_b = rm_maximal_family([f], g.all_cubes(), product_of_scalars(4), (1,), 4)
    assert ex_a and ex_b and np.allclose(a, b)


def test_classic_mr_examples():
    """[DERIVED]/[TRIVIAL] scalar dyadic maximal function, constants, S^2 single cube."""
    g = grid1(-2, 0)
    f = GridFunction.indicator(g, cube_at(g, 0, -2))
    for power in (1, 2):
        assert np.allclose(classic_mr(f, power=power).values[..., 0], [1, .5, .25, .25])
    c = GridFunction.indicator(g, g.root_cubes()[0], -3.0)
    assert np.allclose(classic_mr(c).values, 3.0)
    X = Schatten(2, 2)
    h = GridFunction.random(g, X, np.random.default_rng(0))
    top = g.root_cubes()[0]
    val = classic_mr(h, family=[top]).values[..., 0]
    assert np.allclose(val, X.norm(average(h, top)))
    with pytest.raises(RMFError):
        classic_mr(f, power=3)


def test_classic_mr_non_hilbert_is_lower_bound_above_single_cube():
    """[DERIVED] estimator path: at least the largest single average norm, labelled as an estimate."""
    g = grid1(-2, 0)
    X = SequenceLp(4, 2)
    h = GridFunction.random(g, X, np.random.default_rng(3))
    M = classic_mr(h, budget=2)
    assert M.metadata["path"] == "estimator"
    for Q in g.all_cubes():
        assert np.all(M.values[g.slices(Q)][..., 0] >= X.norm(average(h, Q)) * (1 - 1e-12))


def test_lp_estimate_properties(rng):
    """[TRIVIAL]/[DERIVED] running max, scaling invariance, single-atom ratio."""
    g = grid1(-3, 0)
    cfg = _cfg(exponents=(2.0,))
    est = rmf_lp_estimate(cfg, g, trials=12, seed=5)
    assert all(a <= b for a, b in zip(est.history, est.history[1:]))
    f = [GridFunction.random(g, rng=rng)]
    assert rm_ratio(f, cfg, (2.0,)) == pytest.approx(rm_ratio([f[0] * 7.5], cfg, (2.0,)), rel=1e-12)
    atom = [GridFunction.indicator(g, cube_at(g, 0, -1))]
    assert rm_ratio(atom, cfg, (2.0,)) >= 1.0


def test_weak_type_constant_scales_correctly(rng):
    """[DERIVED] homogeneous of degree zero in each input."""
    g = grid1(-3, 0)
    cfg = RMConfig(product_of_scalars(5), (1, 2), 3)
    fs = [GridFunction.random(g, rng=rng) for _ in range(2)]
    a = weak_type_constant(fs, cfg)
    b = weak_type_constant([fs[0] * 3.0, fs[1] * 0.25], cfg)
    assert a == pytest.approx(b, rel=1e-12)


def test_rmf_table_lists_every_configuration():
    """[TRIVIAL] n=3: #J=1, v outside J gives 4 * 3 rows."""
    rows = rmf_table(3, grid1(-2, 0), trials=2)
    assert len(rows) == 12 and all(r["exact_path"] for r in rows)


def test_config_validation():
    """[TRIVIAL]"""
    with pytest.raises(RMFError):
        _cfg(J=(1, 2))
    with pytest.raises(RMFError):
        _cfg(exponents=(2.0, 2.0))
