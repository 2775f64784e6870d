"""Haar functions, averages, martingale differences, expansions and file I/O."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dycalc.haar import (GridFunction, HaarError, average, block_diff, expand, expectation, gram_matrix, haar,
                         martingale_diff, pair, pair_haar, read_gridfunction, reconstruct, write_gridfunction)
from dycalc.lattice import RandomShiftOmega, ScaleWindow, make_grid
from dycalc.spaces import Schatten, SequenceLp
from conftest import cube_at, grid1, grid2


def test_haar_on_unit_interval():
    """[PAPER] h^0 is the normalised indicator, h^1 = 1_left - 1_right on [0,1)."""
    g = grid1(-2, 0)
    I = g.root_cubes()[0]
    assert np.allclose(haar(I, 0).values[..., 0], 1.0)
    assert np.allclose(haar(I, 1).values[..., 0], [1, 1, -1, -1])


def test_haar_square_signature_10():
    """[DERIVED] tensor of the 1-d cases: sign changes along the first axis only."""
    g = grid2(-1, 0)
    h = haar(g.root_cubes()[0], (1, 0)).values[..., 0]
    assert np.allclose(h, [[1, 1], [-1, -1]])


def test_pair_examples():
    """[DERIVED]/[TRIVIAL] quadrature against h^1 on [0,1)."""
    g = grid1(-2, 0)
    I = g.root_cubes()[0]
    f = GridFunction.indicator(g, cube_at(g, 0, -1))
    assert pair(f, haar(I, 1))[0] == pytest.approx(0.5)
    assert pair(GridFunction.indicator(g, I, 3.0), haar(I, 1))[0] == 0.0
    assert pair(haar(I, 1), haar(I, 1))[0] == pytest.approx(1.0)


def test_martingale_difference_examples():
    """[DERIVED] Delta of 1_[0,1/2) on [0,1) is +-1/2; constants have no differences; k=0 block is Delta."""
    g = grid1(-2, 0)
    I = g.root_cubes()[0]
    f = GridFunction.indicator(g, cube_at(g, 0, -1))
    assert np.allclose(martingale_diff(f, I).values[..., 0], [.5, .5, -.5, -.5])
    c = GridFunction.indicator(g, I, 2.0)
    assert all(np.all(martingale_diff(c, Q).values == 0) for Q in g.all_cubes() if Q.level > g.l_min)
    r = GridFunction.random(g, rng=np.random.default_rng(0))
    assert np.allclose(block_diff(r, I, 0).values, martingale_diff(r, I).values)


def test_expectation_is_average_on_cube():
    """[TRIVIAL]"""
    g = grid1(-2, 0)
    f = GridFunction(g, values=np.arange(4.0))
    Q = cube_at(g, 0.5, -1)
    assert np.allclose(expectation(f, Q).values[..., 0], [0, 0, 2.5, 2.5])
    assert average(f, Q)[0] == 2.5


def test_expand_constant_and_single_haar():
    """[TRIVIAL] constants have only a coarse average; h_Q^1 has one coefficient."""
    g = grid1(-3, 0)
    ex = expand(GridFunction.indicator(g, g.root_cubes()[0], 5.0))
    assert all(np.all(c == 0) for c in ex.coeffs.values())
    assert np.allclose(ex.root_averages, 5.0)
    Q = cube_at(g, 0.5, -1)
    ex = expand(haar(Q, 1))
    nz = ex.nonzero(1e-14)
    assert len(nz) == 1 and nz[0][0].cube == Q and nz[0][1][0] == pytest.approx(1.0)
    assert np.allclose(ex.root_averages, 0.0)


def test_expansion_matches_pairings(rng):
    """[DERIVED] fast transform coefficient equals the direct inner product."""
    g = grid2(-2, 0)
    f = GridFunction.random(g, rng=rng)
    ex = expand(f)
    for h, c in ex.items():
        assert np.allclose(c, pair_haar(f, h.cube, h.eta), atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 2), st.integers(0, 2 ** 31), st.sampled_from(["scalar", "lp", "s2"]))
def test_roundtrip_any_space(d, seed, kind):
    """[DERIVED] reconstruct(expand(f)) = f on shifted grids with vector values."""
    rng = np.random.default_rng(seed)
    w = ScaleWindow(-3, 0) if d == 1 else ScaleWindow(-2, 0)
    om = RandomShiftOmega.from_array(rng.integers(0, 2, (w.depth, d)), w)
    g = make_grid(d, w, omega=om, roots=2)
    space = {"scalar": None, "lp": SequenceLp(3, 2), "s2": Schatten(2, 2)}[kind]
    f = GridFunction.random(g, space, rng)
    assert np.max(np.abs(reconstruct(expand(f)).values - f.values)) <= 1e-12


def test_parseval(rng):
    """[DERIVED] orthonormal basis: squared L2 norm equals the coefficient sum."""
    g = grid1(-4, 0)
    f = GridFunction.random(g, rng=rng)
    ex = expand(f)
    energy = sum(float(c[0] ** 2) for _, c in ex.items()) + float(ex.root_averages[0, 0] ** 2) * g.root_cubes()[0].measure
    assert energy == pytest.approx(f.lp_norm(2) ** 2, rel=1e-12)


def test_gram_matrix_identity():
    """[DERIVED]"""
    for g in (grid1(-4, 0, roots=2), grid2(-2, 0)):
        G = gram_matrix(g)
        assert G.shape[0] == g.n_cells
        assert np.max(np.abs(G - np.eye(len(G)))) <= 1e-12


def test_cancellative_haar_needs_coarse_cube():
    """[TRIVIAL]"""
    g = grid1(-2, 0)
    with pytest.raises(HaarError):
        haar(cube_at(g, 0, -2), 1)


@pytest.mark.parametrize("encoding", ["binary", "json"])
def test_file_roundtrip(tmp_path, rng, encoding):
    """[TRIVIAL] header line plus data, grid and space restored."""
    g = grid2(-2, 0, roots=2)
    f = GridFunction.random(g, Schatten(3, 2), rng)
    p = tmp_path / f"f.{encoding}"
    write_gridfunction(p, f, {"tag": 1}, encoding)
    h = read_gridfunction(p)
    assert h.grid == g and h.space == f.space and np.array_equal(h.values, f.values)
    assert h.metadata == {"tag": 1}
