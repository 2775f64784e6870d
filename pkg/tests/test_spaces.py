"""Norms, duals, Rademacher sums, RM norms and R-bound estimators."""
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dycalc.model_ops import MultilinearOperator
from dycalc.spaces import (Bochner, Rad2, Scalar, Schatten, SequenceLp, SpaceError, bochner_lift,
                           contraction_check, dedupe_tuples, hoelder_sequence, kk_holder_check,
                           product_of_scalars, r_bound, rad_norm, rhat_bound, rm_norm, space_from_dict,
                           trace_of_product)


def test_schatten_norms_from_singular_values():
    """[DERIVED] diag(3,4): S^3 = 91^(1/3), S^2 = 5, S^inf = 4; p = 1 is outside the model."""
    A = np.diag([3.0, 4.0]).ravel()
    assert Schatten(3, 2).norm(A) == pytest.approx(91 ** (1 / 3))
    with pytest.raises(SpaceError):
        Schatten(1, 2)
    assert Schatten(2, 2).norm(A) == pytest.approx(5)
    assert Schatten(np.inf, 2).norm(A) == pytest.approx(4)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([1.5, 2.0, 3.0, 4.0]), st.integers(0, 10 ** 6))
def test_hoelder_duality(p, seed):
    """[DERIVED] |<x, y>| <= |x|_X |y|_X* for every space and its dual."""
    rng = np.random.default_rng(seed)
    for X in (SequenceLp(p, 3), Schatten(p, 2), Bochner(p, rng.uniform(0.2, 1.0, 3), SequenceLp(p, 2))):
        x, y = rng.standard_normal(X.dim), rng.standard_normal(X.dim)
        assert abs(X.pair(x, y)) <= X.norm(x) * X.dual().norm(y) * (1 + 1e-12)


def test_space_descriptor_roundtrip():
    """[TRIVIAL]"""
    for X in (Scalar(), SequenceLp(3, 2), Schatten(1.5, 2), Bochner(2.5, [0.5, 0.25]), Rad2(2, Schatten(2, 2))):
        assert space_from_dict(X.to_dict()) == X
    with pytest.raises(SpaceError):
        space_from_dict({"variant": "banach"})


def test_rad_norm_examples():
    """[TRIVIAL] one vector, scalars (3,4) -> 5, orthogonal matrix units in S^2 -> sqrt 2."""
    assert rad_norm([[2.5]]).value == pytest.approx(2.5)
    assert rad_norm([3.0, 4.0]).value == pytest.approx(5.0)
    E11 = np.array([1.0, 0, 0, 0])
    E22 = np.array([0, 0, 0, 1.0])
    r = rad_norm(np.stack([E11, E22]), Schatten(2, 2))
    assert r.value == pytest.approx(np.sqrt(2)) and r.exact


def test_rad_norm_mc_close_to_exact():
    """[DERIVED] Monte Carlo within a few standard errors of enumeration."""
    xs = np.random.default_rng(3).standard_normal((12, 4))
    X = Schatten(1.5, 2)
    ex = rad_norm(xs, X, "exact")
    mc = rad_norm(xs, X, "mc", seed=5)
    assert abs(mc.value - ex.value) <= 5 * mc.stderr + 1e-12


def test_contraction_check_examples():
    """[TRIVIAL]/[DERIVED] all-ones equality, all-zeros, random scalars K=8."""
    rng = np.random.default_rng(1)
    xs = rng.standard_normal(8)
    assert contraction_check(xs, np.ones(8))
    assert contraction_check(xs, np.zeros(8))
    for _ in range(1000):
        assert contraction_check(rng.standard_normal(8), rng.uniform(-1, 1, 8))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 10), st.integers(0, 10 ** 6))
def test_kk_first_moment_below_second(K, seed):
    """[DERIVED] E|S| <= (E|S|^2)^(1/2) in any space."""
    rng = np.random.default_rng(seed)
    assert kk_holder_check(rng.standard_normal((K, 4)), Schatten(1.5, 2))


def test_rm_norm_scalar_example():
    """[PAPER] scalar case: sup_k prod_j |e_jk| = max(2*3, 1*5)."""
    varpi = product_of_scalars(5)
    res = rm_norm([(2.0, 3.0), (1.0, 5.0)], varpi, (1, 2), 3)
    assert res.exact and res.value == 6.0
    assert rm_norm([], varpi, (1, 2), 3).value == 0.0
    assert rm_norm([(2.0, 3.0), (1.0, 5.0), (2.0, 3.0)], varpi, (1, 2), 3).value == 6.0


def test_rm_estimator_matches_closed_form_scalar():
    """[DERIVED] the optimiser cannot beat the closed form and reaches it for scalars."""
    varpi = product_of_scalars(4)
    A = [(1.5,), (-0.5,), (0.7,)]
    est = rm_norm(A, varpi, (1,), 2, budget=6, seed=2, force_estimator=True)
    assert est.value <= 1.5 * (1 + 1e-9)
    assert est.value >= 1.5 * 0.98


def test_integral_lift_exact_path_is_upper_envelope():
    """[DERIVED] for the integral lift the estimator never exceeds the closed form."""
    mu = np.array([0.5, 0.25, 0.25])
    varpi = bochner_lift((4, 4, 4, 4), mu)
    rng = np.random.default_rng(0)
    A = [(rng.standard_normal(3),) for _ in range(3)]
    exact = rm_norm(A, varpi, (1,), 2)
    est = rm_norm(A, varpi, (1,), 2, budget=3, seed=1, force_estimator=True)
    assert exact.exact and est.value <= exact.value * (1 + 1e-9)


def test_rm_rejects_bad_index_sets():
    """[TRIVIAL] #J must lie between 1 and n-2 and v must be outside J."""
    with pytest.raises(SpaceError):
        rm_norm([(1.0, 1.0)], product_of_scalars(4), (1, 2), 3)
    with pytest.raises(SpaceError):
        rm_norm([(1.0,)], product_of_scalars(4), (1,), 1)


def test_dedupe_tuples():
    """[TRIVIAL]"""
    assert len(dedupe_tuples([(1.0, 2.0), (1.0, 2.0), (2.0, 1.0)])) == 2


def test_r_bound_examples():
    """[TRIVIAL]/[DERIVED] zero family, scalar multiplier, closure under negation."""
    assert r_bound([MultilinearOperator.scalar(0.0, 2)]).value == 0.0
    fam = [MultilinearOperator.scalar(-1.7, 2), MultilinearOperator.scalar(0.4, 2)]
    res = r_bound(fam)
    assert res.exact and res.value == pytest.approx(1.7)
    neg = fam + [op.scaled(-1) for op in fam]
    assert r_bound(neg).value == res.value


def test_r_bound_vector_lower_bounds_norms():
    """[DERIVED] the estimator is at least the best single-operator norm it probes (K=1 tests)."""
    ins = (Schatten(3, 2), Schatten(3, 2))
    out = Schatten(3, 2)
    A = np.zeros((4, 4, 4))
    A[0, 0, 0] = 1.0  # E11 x E11 -> E11
    op = MultilinearOperator(A, ins, out)
    res = r_bound([op], budget=4, seed=0)
    assert not res.exact and res.value >= 0.99


def test_rhat_bound_examples():
    """[TRIVIAL]/[DERIVED] zero family, the unit scalar, and rhat >= r on shared seeds."""
    assert rhat_bound([MultilinearOperator.scalar(0.0, 2)]).value == 0.0
    assert rhat_bound([MultilinearOperator.scalar(1.0, 2)], N=1).value == pytest.approx(1.0)
    rng = np.random.default_rng(4)
    ins = (SequenceLp(3, 2), SequenceLp(3, 2))
    fam = [MultilinearOperator(rng.standard_normal((2, 2, 2)), ins, SequenceLp(3, 2)) for _ in range(3)]
    assert rhat_bound(fam, budget=2, seed=9).value >= r_bound(fam, budget=2, seed=9).value


def test_trace_contraction_is_contractive():
    """[DERIVED] |tr(ABC)| <= |A|_3 |B|_3 |C|_3."""
    varpi = trace_of_product((3, 3, 3), 2)
    rng = np.random.default_rng(0)
    for _ in range(100):
        es = [rng.standard_normal(4) for _ in range(3)]
        assert abs(varpi(*es)) <= np.prod([X.norm(e) for X, e in zip(varpi.spaces, es)]) * (1 + 1e-12)


def test_hoelder_sequence_contraction():
    """[DERIVED] Hoelder on l^p with sum 1/p = 1."""
    varpi = hoelder_sequence((2, 4, 4), 3)
    rng = np.random.default_rng(1)
    es = [rng.standard_normal(3) for _ in range(3)]
    assert abs(varpi(*es)) <= np.prod([X.norm(e) for X, e in zip(varpi.spaces, es)]) * (1 + 1e-12)
