"""Grid geometry: cubes, parents, children, goodness and bad-cube sampling."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dycalc.lattice import (LatticeError, NoChildren, RandomShiftOmega, ScaleOverflow, ScaleWindow, bad_probability,
                            common_parent, default_gamma, good_probability_by_level, make_grid, sample_shift,
                            sublattice, sublattice_levels, Grid)
from conftest import cube_at, grid1, grid2


def _intervals(cubes):
    return sorted((float(Q.bounds()[0][0]), float(Q.bounds()[1][0])) for Q in cubes)


def test_unshifted_three_scale_grid_has_seven_cubes():
    """[TRIVIAL] window [-2,0], omega=0, one root."""
    g = grid1(-2, 0)
    cubes = g.all_cubes()
    assert len(cubes) == 7
    assert _intervals(cubes) == sorted([(0, 1), (0, .5), (.5, 1), (0, .25), (.25, .5), (.5, .75), (.75, 1)])


def test_shift_bit_moves_the_unit_cube_by_half():
    """[DERIVED] offset of [0,1) is the sum of omega bits below side 1 times their sides."""
    w = ScaleWindow(-1, 0)
    g = make_grid(1, w, omega=RandomShiftOmega.from_array([[1]], w))
    (Q,) = g.root_cubes()
    lo, hi = Q.bounds()
    assert (lo[0], hi[0]) == (0.5, 1.5)
    # finest cubes are never shifted, only regrouped
    assert _intervals(g.cubes(-1)) == [(0.5, 1.0), (1.0, 1.5)]


def test_single_scale_square():
    """[TRIVIAL]"""
    g = make_grid(2, ScaleWindow(0, 0))
    assert len(g.all_cubes()) == 1 and g.root_cubes()[0].measure == 1.0


def test_parent_examples():
    """[TRIVIAL] parents of [0,1/2) and [3/4,1); k=0 is the identity."""
    g = grid1(-2, 0)
    Q = cube_at(g, 0, -1)
    assert g.parent(Q, 1) == g.root_cubes()[0]
    assert g.parent(cube_at(g, 0.75, -2), 2) == g.root_cubes()[0]
    assert g.parent(Q, 0) == Q
    with pytest.raises(ScaleOverflow):
        g.parent(Q, 2)


def test_children_examples():
    """[TRIVIAL] halves in d=1, quadrants in d=2, error at the finest scale."""
    g = grid1(-2, 0)
    assert _intervals(g.children(g.root_cubes()[0])) == [(0, .5), (.5, 1)]
    sq = grid2(-1, 0).root_cubes()[0]
    ch = sq.children()
    assert len(ch) == 4 and sum(c.measure for c in ch) == 1.0
    with pytest.raises(NoChildren):
        g.children(cube_at(g, 0, -2))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 2), st.integers(1, 3), st.integers(0, 2 ** 12 - 1))
def test_children_partition_parent_under_any_shift(d, depth, code):
    """[DERIVED] children tile the parent and each child's parent is the cube itself."""
    w = ScaleWindow(-depth, 0)
    bits = ((code >> np.arange(depth * d)) & 1).reshape(depth, d)
    g = make_grid(d, w, omega=RandomShiftOmega.from_array(bits, w))
    for Q in g.all_cubes():
        if Q.level == g.l_min:
            continue
        ch = g.children(Q)
        assert sum(c.units ** d for c in ch) == Q.units ** d
        assert all(Q.contains(c) and g.parent(c) == Q for c in ch)
        for a in range(len(ch)):
            for b in range(a + 1, len(ch)):
                assert not ch[a].intersects(ch[b])


def test_is_good_examples():
    """[DERIVED] [1/4,1/2) against [0,1): boundary distance 1/4 is not above 1/2, so bad."""
    g = grid1(-2, 0)
    Q = cube_at(g, 0.25, -2)
    assert not g.is_good(Q, 0.5, 2)
    # no ancestor 2^r times larger inside the window: vacuously good
    assert g.is_good(Q, 0.5, 3)
    assert g.is_good(g.root_cubes()[0], 0.5, 1)


def test_central_cube_goodness_depends_on_gamma():
    """[DERIVED] a near-central cube: threshold l(Q)^g l(R)^(1-g) tends to l(Q) as g -> 1 and to l(R) as g -> 0."""
    g = grid1(-4, 0)
    Q = cube_at(g, 0.4375, -4)  # [7/16, 1/2): distance 7/16 from the boundary of [0,1)
    assert g.is_good(Q, 0.9, 4)       # 7/16 > 2^(-3.6)
    assert not g.is_good(Q, 0.01, 4)  # 7/16 < 2^(-0.04); no cube is ever that far inside


def test_sublattice_examples():
    """[DERIVED] arithmetic progressions of scales."""
    g = grid1(-2, 0)
    assert sublattice_levels(g, 0, 1) == [-2, 0]
    assert sublattice_levels(g, 1, 1) == [-1]
    assert len(sublattice(g, 0, 0)) == len(g.all_cubes())


def test_common_parent_examples():
    """[TRIVIAL]/[DERIVED] identity, ancestor scan, none across roots."""
    g = grid1(-2, 0)
    Q = cube_at(g, 0, -1)
    assert common_parent(Q, [Q]) == Q
    assert common_parent(cube_at(g, 0, -2), [cube_at(g, 0.5, -2)]) == g.root_cubes()[0]
    g2 = grid1(-2, 0, roots=2)
    assert common_parent(cube_at(g2, 0, -2), [cube_at(g2, 1, -2)]) is None


def test_default_gamma():
    """[TRIVIAL] alpha / (2(dn + alpha))."""
    assert default_gamma(1.0, 1, 2) == pytest.approx(1 / 6)


def test_bad_probability_limits_and_determinism():
    """[DERIVED] gamma near 1 makes every cube bad; r beyond the window is vacuous; seeds repeat."""
    w = ScaleWindow(0, 2)
    assert bad_probability(0.999, 1, window=w, mode="enumerate").value == 1.0
    assert bad_probability(0.3, 5, window=w, mode="enumerate").value == 0.0
    a = bad_probability(0.3, 2, trials=500, seed=4)
    b = bad_probability(0.3, 2, trials=500, seed=4)
    assert a == b


def test_bad_probability_monotone_in_r_for_common_draws():
    """[DERIVED] the same draws serve every r, and larger r checks fewer ancestors."""
    vals = [bad_probability(0.5, r, trials=2000, seed=1).value for r in range(1, 9)]
    assert all(x >= y for x, y in zip(vals, vals[1:]))


def test_good_probability_matches_enumeration():
    """[DERIVED] brute-force count of good cubes over all shifts of a 3-bit window."""
    w = ScaleWindow(-3, 0)
    gamma, r = 0.5, 2
    base = make_grid(1, w)
    p = good_probability_by_level(base, gamma, r)
    L = -3
    # a fixed finest cell [0, 1/8): fraction of shifts in which it is good
    good = 0
    for code in range(8):
        om = RandomShiftOmega.from_array(((code >> np.arange(3)) & 1).reshape(3, 1), w)
        g = Grid(1, w, om, roots=2, root_origin=-1)
        Q = next(c for c in g.cubes(L) if c.corner == (0,))
        good += g.is_good(Q, gamma, r)
    assert p[L] == pytest.approx(good / 8)


def test_sample_shift_and_roundtrip():
    """[TRIVIAL] omega rows per scale, serialisation round trip."""
    w = ScaleWindow(-3, 0)
    om = sample_shift(11, w, 2)
    assert om.array().shape == (3, 2)
    g = make_grid(2, w, omega=om, roots=2)
    assert Grid.from_dict(g.to_dict()) == g
    with pytest.raises(LatticeError):
        ScaleWindow(1, 0)


def test_bad_probability_at_default_gamma_needs_large_r():
    """[DERIVED] gamma = 1/6: every cube is bad for small r, the probability only drops once r*gamma > 1."""
    g = default_gamma(1.0, 1, 2)
    assert bad_probability(g, 1, trials=2000, seed=3).value == 1.0
    assert bad_probability(g, 5, trials=2000, seed=3).value == 1.0
    tail = [bad_probability(g, r, trials=4000, seed=3).value for r in (9, 10, 11, 12)]
    assert all(x >= y for x, y in zip(tail, tail[1:])) and tail[-1] < 0.7
