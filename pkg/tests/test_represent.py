"""Discretised forms, pairings, the decomposition and the omega average."""
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dycalc.haar import GridFunction, signatures
from dycalc.represent import (DIAGONAL, INSIDE, NEARBY, SEPARATED, RepresentError, SIOForm, adjoint,
                              average_over_omega, classify_pair, cube_vec, cz_constants, decompose, direct_form,
                              haar_pairing, random_cz_kernel, separable_kernel, step4_check, swap_slots, normalized_members,
                              symmetric_kernel, t1_pairing, x_constant_kernel, zero_kernel)
from dycalc.spaces import Schatten
from conftest import cube_at, grid1, grid2


def _rand(T, rng):
    return [GridFunction.random(T.grid, X, rng) for X in T.slot_spaces]


def test_direct_form_zero_kernel(rng):
    """[TRIVIAL]"""
    T = SIOForm(zero_kernel(2, 1), grid1(-2, 0))
    assert direct_form(T, _rand(T, rng)) == 0


def test_direct_form_separable_against_brute_force(rng):
    """[DERIVED] off-diagonal Riemann sum of phi(x) psi1(y1) psi2(y2) f1 f2 g, written out cell by cell."""
    g = grid1(-2, 0)
    phi = lambda x: 1 + x[:, 0]
    p1 = lambda y: np.cos(y[:, 0])
    p2 = lambda y: y[:, 0] ** 2
    T = SIOForm(separable_kernel(phi, [p1, p2]), g)
    fs = _rand(T, rng)
    c = g.cell_centers().reshape(-1, 1)
    vals = [f.values.ravel() for f in fs]
    h = g.cell_measure
    want = 0.0
    for a, b, x in itertools.product(range(len(c)), repeat=3):
        if a == b == x:
            continue
        want += h ** 3 * phi(c[[x]])[0] * p1(c[[a]])[0] * p2(c[[b]])[0] * vals[0][a] * vals[1][b] * vals[2][x]
    assert direct_form(T, fs) == pytest.approx(want, rel=1e-12)


def test_adjoint_exchanges_slots(rng):
    """[DERIVED] Lambda^{m*}(f1, g, f2) = Lambda(f1, f2, g) for m=2, including operator-valued slots."""
    ins, out = (Schatten(3, 2), Schatten(3, 2)), Schatten(1.5, 2)
    T = SIOForm(random_cz_kernel(2, 1, seed=4, in_spaces=ins, out_space=out), grid1(-2, 0))
    fs = _rand(T, rng)
    A = adjoint(T, 2)
    assert direct_form(A, [fs[0], fs[2], fs[1]]) == pytest.approx(direct_form(T, fs), rel=1e-10)
    assert np.allclose(A.FT, swap_slots(T.FT, 2, 3), rtol=1e-12, atol=1e-14)
    # adjoint twice gives back the original form
    assert np.allclose(adjoint(A, 2).FT, T.FT, rtol=1e-12, atol=1e-14)


def test_symmetric_kernel_is_self_adjoint():
    """[DERIVED]"""
    T = SIOForm(symmetric_kernel(2, 1), grid1(-2, 0))
    for m in (1, 2):
        assert np.allclose(adjoint(T, m).FT, T.FT, rtol=1e-12)


def test_haar_pairing_examples():
    """[TRIVIAL]/[DERIVED] zero kernel, an x-constant kernel kills h_Q, separable kernels factorise."""
    g = grid1(-3, 0)
    Q = cube_at(g, 0, -1)
    R = (cube_at(g, 0.5, -1), cube_at(g, 0, -1))
    assert haar_pairing(SIOForm(zero_kernel(2, 1), g), R, 1, Q).dense().ravel()[0] == 0
    T = SIOForm(x_constant_kernel(2, 1, seed=1), g)
    assert abs(haar_pairing(T, R, 1, Q).dense().ravel()[0]) < 1e-14
    # disjoint Q_1, Q_2 avoid the diagonal; the pairing factorises (slot 2 carries h^0 = 1_Q / |Q|^{1/2})
    phi, p1, p2 = (lambda x: x[:, 0] ** 2), (lambda y: np.exp(y[:, 0])), (lambda y: 1 + y[:, 0])
    T2 = SIOForm(separable_kernel(phi, [p1, p2]), g)
    Rd = (cube_at(g, 0, -1), cube_at(g, 0.5, -1))
    Qx = cube_at(g, 0.5, -2)
    val = haar_pairing(T2, Rd, 1, Qx).dense().ravel()[0]
    c = g.cell_centers().reshape(-1, 1)
    h = g.cell_measure
    want = (h * cube_vec(g, Qx, (1,)) @ phi(c)) * (h * cube_vec(g, Rd[0], (1,)) @ p1(c)) * (h * cube_vec(g, Rd[1], (0,)) @ p2(c))
    assert val == pytest.approx(want, rel=1e-12)


def test_t1_pairing_does_not_depend_on_C(rng):
    """[DERIVED]"""
    g = grid1(-3, 0)
    T = SIOForm(random_cz_kernel(2, 1, seed=2), g)
    Q = cube_at(g, 0.25, -2)
    hq = cube_vec(g, Q, (1,))
    phis = [rng.standard_normal(g.n_cells) for _ in range(2)]
    vals = [t1_pairing(T, phis, hq, Q, C).dense().ravel()[0] for C in (2.0, 3.0, 8.0)]
    assert np.ptp(vals) <= 1e-12 * max(1.0, abs(vals[0]))
    with pytest.raises(RepresentError):
        t1_pairing(T, phis, hq, Q, 1.0)


def test_classify_pair_examples():
    """[DERIVED] diagonal, inside, separated and nearby labels."""
    g = grid1(-4, 0)
    Q = cube_at(g, 0, -4)
    assert classify_pair(Q, (Q, Q), 0.25) == DIAGONAL
    big = cube_at(g, 0, -1)
    assert classify_pair(Q, (big, big), 0.25) == INSIDE
    far = cube_at(g, 0.5, -2)
    assert classify_pair(Q, (far, big), 0.25) == SEPARATED
    near = cube_at(g, 1 / 16, -4)
    assert classify_pair(Q, (near, Q), 0.25) == NEARBY
    with pytest.raises(RepresentError):
        classify_pair(big, (Q, Q), 0.25)


def test_decompose_zero_kernel_is_empty(rng):
    """[TRIVIAL]"""
    T = SIOForm(zero_kernel(2, 1), grid1(-2, 0))
    res = decompose(T)
    fs = _rand(T, rng)
    assert all(v == 0 for v in res.evaluate(fs).values())
    for origin in (SEPARATED, NEARBY, "error", "diagonal-a1", "diagonal-a2"):
        assert all(np.all(op.dense() == 0) for op in normalized_members(res, origin))


@pytest.mark.parametrize("maker,grid", [
    (lambda: random_cz_kernel(2, 1, seed=7), lambda: grid1(-3, 0)),
    (lambda: random_cz_kernel(2, 1, seed=8), lambda: grid1(-2, 0, roots=2)),
    (lambda: random_cz_kernel(2, 2, seed=9), lambda: grid2(-1, 0)),
])
def test_decompose_reconstructs_the_form(maker, grid, rng):
    """[DERIVED] exact finite representation: shifts, paraproducts and remainder sum to Lambda."""
    T = SIOForm(maker(), grid())
    res = decompose(T, r=1)
    for _ in range(2):
        rel, _, _ = res.residual(_rand(T, rng))
        assert rel < 1e-10
    assert res.diagnostics["step3_max_deviation"] <= 1e-12 * max(1.0, res.diagnostics["step3_scale"])


def test_step4_identity(rng):
    """[DERIVED] inside main terms sum to paraproduct minus its root tail."""
    T = SIOForm(random_cz_kernel(2, 1, seed=3), grid1(-3, 0))
    res = decompose(T, r=1)
    lhs, rhs = step4_check(res, _rand(T, rng))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-14)


def test_x_constant_kernel_has_no_last_paraproduct():
    """[DERIVED] K independent of x: <T1, h_Q> vanishes, so the m = n+1 paraproduct is zero."""
    T = SIOForm(x_constant_kernel(2, 1, seed=5), grid1(-3, 0))
    res = decompose(T, r=1)
    coeffs = res.paraproducts[3].coeffs
    assert max(abs(op.dense().ravel()[0]) for op in coeffs.values()) < 1e-14


def test_decompose_rejects_shallow_window():
    """[TRIVIAL]"""
    T = SIOForm(random_cz_kernel(2, 1), grid1(-2, 0))
    with pytest.raises(RepresentError):
        decompose(T, r=3)


def test_average_single_scale_window(rng):
    """[DERIVED] one scale: no Haar levels, the average is the top term which equals Lambda."""
    T = SIOForm(random_cz_kernel(2, 1, seed=1), grid1(0, 0))
    fs = _rand(T, rng)
    res = average_over_omega(T, fs, gamma=0.5, r=1)
    assert res.value == pytest.approx(res.direct, rel=1e-12)


def test_average_over_omega_matches_direct(rng):
    """[DERIVED] with every cube good the reweighting is trivial and all-cube sums equal Lambda."""
    g = grid1(-4, 0)
    T = SIOForm(random_cz_kernel(2, 1, seed=6), g)
    fs = [GridFunction.indicator(g, cube_at(g, 0.25, -2), 1.0) for _ in range(3)]
    fs[2] = GridFunction.random(g, rng=rng)
    res = average_over_omega(T, fs, gamma=0.5, r=3)
    assert res.exact and res.omegas == 2 ** 4
    assert res.all_cubes == pytest.approx(res.direct, rel=1e-9)
    assert all(0 < p <= 1 for L, p in res.p_good.items() if L > g.l_min)


def test_average_over_omega_raises_without_good_cubes(rng):
    """[DERIVED] gamma near zero makes every cube bad on a shallow window."""
    T = SIOForm(random_cz_kernel(2, 1), grid1(-3, 0))
    with pytest.raises(RepresentError):
        average_over_omega(T, _rand(T, rng), gamma=0.01, r=1)


def test_cz_constants_scalar_examples():
    """[TRIVIAL]/[DERIVED] zero kernel gives zeros; a constant times the CZ profile gives |c| as size."""
    g = grid1(-2, 0)
    z = cz_constants(SIOForm(zero_kernel(2, 1), g))
    assert z["size"]["value"] == 0 and z["weak"]["value"] == 0
    assert all(v["value"] == 0 for v in z["bmo"].values())
    K = symmetric_kernel(2, 1)
    K.evaluator = lambda x, ys: (-2.5 / (np.abs(ys[..., 0] - x[:, :1]).sum(axis=1)) ** 2).reshape(-1, 1, 1, 1)
    out = cz_constants(SIOForm(K, g), samples=500)
    assert out["size"]["value"] == pytest.approx(2.5, rel=1e-12)
    assert out["size"]["exact"]


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 16))
def test_form_is_multilinear(seed):
    """[TRIVIAL] linear in each slot."""
    rng = np.random.default_rng(seed)
    T = SIOForm(random_cz_kernel(2, 1, seed=seed % 5), grid1(-2, 0))
    fs = _rand(T, rng)
    h = GridFunction.random(T.grid, rng=rng)
    a, b = rng.standard_normal(2)
    for m in range(3):
        mixed = list(fs)
        mixed[m] = fs[m] * a + h * b
        alt = list(fs)
        alt[m] = h
        want = a * direct_form(T, fs) + b * direct_form(T, alt)
        assert direct_form(T, mixed) == pytest.approx(want, rel=1e-9, abs=1e-12)
