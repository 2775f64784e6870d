"""Discretised CZ forms and their exact finite-scale dyadic representation.

A form Lambda(f_1, ..., f_{n+1}) = <T(f_1, ..., f_n), f_{n+1}> is stored as a
dense tensor over finest-cell tuples and space bases,

    FT[c_1, ..., c_n, c_x, b_1, ..., b_n, b_x],

already multiplied by the cell volumes and by the output pairing weights,
so Lambda is a plain contraction.  Cell tuples lying on the full diagonal
(all n+1 cells equal) carry the value 0 unless the kernel supplies a
`diagonal` rule.

The decomposition expands every f_m in Haar functions, sorts the terms by
the first slot m with the smallest scale and then groups each (Q, R) pair
as separated, nearby, inside (rewritten with the T1 identity) or diagonal.
All pieces are finite sums, so the reconstruction is exact up to rounding;
whatever the finite window cannot expand is kept as an explicit remainder.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ._util import derive_seed
from .haar import GridFunction, average, haar_pattern, signatures
from .lattice import (Cube, Grid, LatticeError, RandomShiftOmega, common_parent, cube_distance,
                      default_gamma, good_probability_by_level)
from .model_ops import MultilinearOperator, ParaproductSpec, ShiftSpec, normalization_factor
from .spaces import Scalar, Schatten, Space, SpaceError, product_of_scalars, r_bound, space_from_dict
from .spaces import _maximize


class RepresentError(ValueError):
    pass


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

class KernelSpec:
    """K(x, y_1..y_n) with values in L(X_1 x ... x X_n, Y).

    evaluator(x, ys): x of shape (N, d), ys of shape (N, n, d); returns
    (N, dim_Y, dim_1, ..., dim_n).  diagonal(x), if given, is the value
    assigned to tuples whose points all share one finest cell.
    """

    def __init__(self, n, d, in_spaces=None, out_space=None, alpha=1.0, evaluator: Callable = None,
                 diagonal: Callable = None, name="custom", params=None):
        self.n = int(n)
        self.d = int(d)
        self.in_spaces = tuple(in_spaces) if in_spaces is not None else tuple(Scalar() for _ in range(n))
        self.out_space = out_space if out_space is not None else Scalar()
        if len(self.in_spaces) != self.n:
            raise RepresentError("one input space per slot")
        if not (0 < alpha <= 1):
            raise RepresentError("alpha must lie in (0, 1]")
        self.alpha = float(alpha)
        self.evaluator = evaluator
        self.diagonal = diagonal
        self.name = name
        self.params = dict(params or {})
        # every finite-dimensional space here is reflexive; forming duals must succeed
        try:
            self.out_space.dual()
            for X in self.in_spaces:
                X.dual()
        except Exception as exc:  # pragma: no cover - defensive
            raise RepresentError(f"cannot form the dual spaces: {exc}") from exc

    @property
    def op_shape(self):
        return (self.out_space.dim,) + tuple(X.dim for X in self.in_spaces)

    def __call__(self, x, ys):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ys = np.asarray(ys, dtype=float).reshape(x.shape[0], self.n, self.d)
        return np.asarray(self.evaluator(x, ys)).reshape((x.shape[0],) + self.op_shape)

    def to_dict(self):
        return {"name": self.name, "n": self.n, "d": self.d, "alpha": self.alpha, "params": self.params,
                "in_spaces": [X.to_dict() for X in self.in_spaces], "out_space": self.out_space.to_dict()}


def _swap_form(A, m, w_out, w_new):
    """Operator tensor (N, o, b_1..b_n) of the m-th adjoint."""
    sh = (1, -1) + (1,) * (A.ndim - 2)
    F = A * w_out.reshape(sh)
    F = np.swapaxes(F, 1, m + 1)
    return F / w_new.reshape(sh)


def adjoint_kernel(K: KernelSpec, m):
    """Kernel of T^{m*}: arguments x and y_m exchanged, operator transposed."""
    n = K.n
    if not (1 <= m <= n):
        raise RepresentError("adjoint index must lie in 1..n")
    new_in = list(K.in_spaces)
    new_in[m - 1] = K.out_space.dual()
    new_out = K.in_spaces[m - 1].dual()
    w_out, w_new = K.out_space.weights, new_out.weights

    def ev(x, ys):
        ys2 = ys.copy()
        ys2[:, m - 1] = x
        return _swap_form(K(ys[:, m - 1], ys2), m, w_out, w_new)

    diag = None
    if K.diagonal is not None:
        def diag(x):
            A = np.asarray(K.diagonal(x)).reshape((len(x),) + K.op_shape)
            return _swap_form(A, m, w_out, w_new)
    return KernelSpec(n, K.d, new_in, new_out, K.alpha, ev, diag, f"{K.name}^{m}*", dict(K.params, adjoint=m))


# kernel generators ------------------------------------------------------

def _dist_sum(x, ys):
    return np.linalg.norm(ys - x[:, None, :], axis=-1).sum(axis=1)


def zero_kernel(n=2, d=1, in_spaces=None, out_space=None):
    K = KernelSpec(n, d, in_spaces, out_space, 1.0, None, None, "zero")
    shp = K.op_shape
    K.evaluator = lambda x, ys: np.zeros((len(x),) + shp)
    return K


def random_cz_kernel(n=2, d=1, seed=0, in_spaces=None, out_space=None, alpha=1.0, terms=3, scale=1.0):
    """A(x, y) / (sum_m |x - y_m|)^{dn} with a smooth random tensor field A."""
    K = KernelSpec(n, d, in_spaces, out_space, alpha, None, None, "random_cz",
                   {"seed": int(seed), "terms": terms, "scale": scale})
    rng = np.random.default_rng(seed)
    shp = K.op_shape
    M = rng.standard_normal((terms,) + shp)
    freq = rng.standard_normal((terms, (n + 1) * d)) * 0.7
    phase = rng.uniform(0, 2 * np.pi, terms)
    const = rng.standard_normal(shp)

    def ev(x, ys):
        z = np.concatenate([x, ys.reshape(len(x), -1)], axis=1)
        c = np.cos(z @ freq.T + phase)  # (N, terms)
        A = const + np.tensordot(c, M, axes=(1, 0))
        r = _dist_sum(x, ys) ** (d * n)
        return scale * A / r.reshape((-1,) + (1,) * len(shp))
    K.evaluator = ev
    return K


def separable_kernel(phi, psis, d=1):
    """Scalar K(x, y) = phi(x) prod_m psi_m(y_m) for callables on (N, d) points."""
    n = len(psis)
    K = KernelSpec(n, d, None, None, 1.0, None, None, "separable")

    def ev(x, ys):
        out = np.asarray(phi(x), dtype=float)
        for m, psi in enumerate(psis):
            out = out * np.asarray(psi(ys[:, m]), dtype=float)
        return out.reshape(-1, *(1,) * (n + 1))
    K.evaluator = ev
    return K


def x_constant_kernel(n=2, d=1, seed=0):
    """K(x, y) = B(y) with B smooth; the diagonal rule keeps x-independence."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.5, 1.5, n)
    K = KernelSpec(n, d, None, None, 1.0, None, None, "x_constant", {"seed": int(seed)})

    def B(ys):
        return 1.0 / (1.0 + np.einsum("m,nmd->n", a, ys ** 2))

    K.evaluator = lambda x, ys: B(ys).reshape(-1, *(1,) * (n + 1))
    K.diagonal = lambda x: B(np.repeat(x[:, None, :], n, axis=1)).reshape(-1, *(1,) * (n + 1))
    return K


def symmetric_kernel(n=2, d=1):
    """Scalar kernel symmetric in all n+1 points."""
    K = KernelSpec(n, d, None, None, 1.0, None, None, "symmetric")

    def ev(x, ys):
        pts = np.concatenate([x[:, None, :], ys], axis=1)
        s = 0.0
        for a, b in itertools.combinations(range(n + 1), 2):
            s = s + np.linalg.norm(pts[:, a] - pts[:, b], axis=-1)
        return (1.0 / s ** (d * n)).reshape(-1, *(1,) * (n + 1))
    K.evaluator = ev
    return K


def schatten_spaces(n=2, side=2, ps=None):
    ps = ps or [float(n + 1)] * (n + 1)
    ins = tuple(Schatten(ps[m], side) for m in range(n))
    q = ps[n] / (ps[n] - 1.0)
    return ins, Schatten(q, side)


def kernel_from_dict(dd):
    name = dd.get("name", "random_cz")
    n = int(dd.get("n", 2))
    d = int(dd.get("d", 1))
    ins = dd.get("in_spaces")
    out = dd.get("out_space")
    ins = tuple(space_from_dict(s) for s in ins) if ins else None
    out = space_from_dict(out) if out else None
    if dd.get("schatten"):
        ins, out = schatten_spaces(n, int(dd["schatten"]))
    if name == "zero":
        return zero_kernel(n, d, ins, out)
    if name == "random_cz":
        return random_cz_kernel(n, d, int(dd.get("seed", 0)), ins, out, float(dd.get("alpha", 1.0)))
    if name == "x_constant":
        return x_constant_kernel(n, d, int(dd.get("seed", 0)))
    if name == "symmetric":
        return symmetric_kernel(n, d)
    raise RepresentError(f"unknown kernel generator {name!r}")


# ---------------------------------------------------------------------------
# discretised forms
# ---------------------------------------------------------------------------

def cube_vec(grid: Grid, Q: Cube, eta=None):
    """h_Q^eta (or 1_Q when eta is None) as a flat vector over the box."""
    v = np.zeros(grid.box_shape)
    v[grid.slices(Q)] = 1.0 if eta is None else haar_pattern(Q, eta)
    return v.ravel()


def _flat(f: GridFunction):
    return f.values.reshape(-1, f.space.dim)


class SIOForm:
    def __init__(self, kernel: KernelSpec, grid: Grid, refine=1):
        if grid.d != kernel.d:
            raise RepresentError("kernel and grid dimensions differ")
        if refine < 1:
            raise RepresentError("refinement factor must be >= 1")
        self.kernel = kernel
        self.grid = grid
        self.refine = int(refine)
        self.n = kernel.n
        self._FT = None

    @property
    def slot_spaces(self):
        return tuple(self.kernel.in_spaces) + (self.kernel.out_space.dual(),)

    def _subpoints(self):
        rho, d = self.refine, self.grid.d
        offs = (np.arange(rho) + 0.5) / rho - 0.5
        pts = np.stack(np.meshgrid(*[offs] * d, indexing="ij"), -1).reshape(-1, d)
        return pts * 2.0 ** self.grid.l_min

    def kernel_matrix(self, x_points=None):
        """Cell-averaged kernel W[c_1..c_n, c_x, o, b_1..b_n] (no volume factors).

        x_points, if given, replaces the x-cells by those points (used for
        K(c_Q, y)); the diagonal guard then only applies to y-tuples.
        """
        grid, n, K = self.grid, self.n, self.kernel
        centers = grid.cell_centers().reshape(-1, grid.d)
        C = len(centers)
        sub = self._subpoints()
        S = len(sub)
        xs = centers if x_points is None else np.atleast_2d(x_points)
        X = len(xs)
        idx = np.array(list(itertools.product(range(C), repeat=n)), dtype=np.int64).reshape(-1, n)
        out = np.zeros((len(idx), X) + K.op_shape, dtype=float)
        is_complex = False
        for xi in range(X):
            if x_points is None:
                mask = ~np.all(idx == xi, axis=1)
            else:
                mask = np.ones(len(idx), dtype=bool)
            rows = np.flatnonzero(mask)
            if len(rows) == 0:
                continue
            acc = 0.0
            xsubs = sub if x_points is None else np.zeros((1, grid.d))
            for xs_off in xsubs:
                for ycombo in itertools.product(range(S), repeat=n):
                    ys = centers[idx[rows]] + sub[list(ycombo)][None, :, :]
                    xx = np.broadcast_to(xs[xi] + xs_off, (len(rows), grid.d))
                    acc = acc + K(xx, ys)
            val = acc / (len(xsubs) * S ** n)
            if np.iscomplexobj(val) and not is_complex:
                out = out.astype(complex)
                is_complex = True
            out[rows, xi] = val
            if x_points is None and K.diagonal is not None:
                diag_row = int(np.flatnonzero(np.all(idx == xi, axis=1))[0])
                out[diag_row, xi] = np.asarray(K.diagonal(xs[xi][None])).reshape(K.op_shape)
        return out.reshape((C,) * n + (X,) + K.op_shape)

    @property
    def FT(self):
        if self._FT is None:
            n = self.n
            W = self.kernel_matrix()
            w = self.kernel.out_space.weights
            vol = self.grid.cell_measure ** (n + 1)
            sh = (1,) * (n + 1) + (-1,) + (1,) * n
            F = W * (vol * w).reshape(sh)
            # move the output basis axis to the end: (c.., o, b..) -> (c.., b.., o)
            self._FT = np.moveaxis(F, n + 1, -1)
        return self._FT

    @property
    def n_cells(self):
        return self.grid.n_cells


def eval_form(FT, vecs):
    """Contract the cell axes with one scalar vector per slot; returns the basis tensor."""
    n1 = len(vecs)
    supports = [np.flatnonzero(v) for v in vecs]
    if any(len(s) == 0 for s in supports):
        return np.zeros(FT.shape[n1:], dtype=FT.dtype)
    res = FT[np.ix_(*supports)]
    for v, s in zip(vecs, supports):
        res = np.tensordot(np.asarray(v)[s], res, axes=(0, 0))
    return res


def apply_form(FT, arrays):
    """Lambda on vector-valued data: arrays[s] has shape (cells, dim_s)."""
    n1 = len(arrays)
    res = FT
    for s, a in enumerate(arrays):
        res = np.tensordot(res, a, axes=([0, n1 - s], [0, 1]))
    return res[()] if np.ndim(res) == 0 else res


def direct_form(T: SIOForm, fs: Sequence[GridFunction]):
    if len(fs) != T.n + 1:
        raise RepresentError("direct_form needs n+1 functions")
    for f, X in zip(fs, T.slot_spaces):
        if f.grid != T.grid or f.space.dim != X.dim:
            raise RepresentError("function does not match the form's grid or slot space")
    return apply_form(T.FT, [_flat(f) for f in fs])


def adjoint(T: SIOForm, m):
    return SIOForm(adjoint_kernel(T.kernel, m), T.grid, T.refine)


def swap_slots(FT, m, n1):
    """Form tensor of the m-th adjoint: slots m and n+1 exchanged."""
    if m == n1:
        return FT
    FT = np.swapaxes(FT, m - 1, n1 - 1)
    return np.swapaxes(FT, n1 + m - 1, 2 * n1 - 1)


def form_to_operator(F, T: SIOForm):
    return MultilinearOperator.from_form(F, T.kernel.in_spaces, T.kernel.out_space)


# ---------------------------------------------------------------------------
# pairings
# ---------------------------------------------------------------------------

def _default_eta(grid, eta):
    if eta is None:
        return (1,) + (0,) * (grid.d - 1)
    return tuple(int(e) for e in np.atleast_1d(eta))


def rect_vectors(grid: Grid, R, i, eta=None):
    """Factors of h_{R,i}: h^0 on every slot except slot i, which is cancellative."""
    eta = _default_eta(grid, eta)
    zero = (0,) * grid.d
    return [cube_vec(grid, P, eta if p == i else zero) for p, P in enumerate(R, start=1)]


def haar_pairing(T: SIOForm, R, i, Q: Cube, eta_R=None, eta_Q=None):
    """<T h_{R,i}, h_Q> as an n-linear operator."""
    vecs = rect_vectors(T.grid, R, i, eta_R) + [cube_vec(T.grid, Q, _default_eta(T.grid, eta_Q))]
    return form_to_operator(eval_form(T.FT, vecs), T)


def _as_vec(grid, phi):
    if isinstance(phi, GridFunction):
        return phi.values[..., 0].ravel()
    arr = np.asarray(phi, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.n_cells, float(arr))
    return arr.ravel()


def _in_CQ(grid: Grid, Q: Cube, C):
    centers = grid.cell_centers().reshape(-1, grid.d)
    half = 0.5 * C * Q.side
    return np.all(np.abs(centers - Q.center()) < half, axis=1)


def t1_pairing(T: SIOForm, Phi, phiQ, Q: Cube, C=None):
    """<T Phi, phi_Q> by the split into a near part on CQ and n far parts.

    Far parts use K(x, y) - K(c_Q, y); the subtracted term integrates to
    zero against phi_Q, so the value does not depend on C.
    """
    grid, n = T.grid, T.n
    C = 2.0 * math.sqrt(grid.d) if C is None else float(C)
    if C < 2.0 * math.sqrt(grid.d) - 1e-12:
        raise RepresentError("C must be at least 2 sqrt(d)")
    phis = [_as_vec(grid, p) for p in Phi]
    pq = _as_vec(grid, phiQ)
    if abs(pq.sum()) > 1e-12 * max(1.0, np.abs(pq).sum()):
        raise RepresentError("phi_Q must have zero integral")
    inside = _in_CQ(grid, Q, C).astype(float)
    outside = 1.0 - inside
    near = eval_form(T.FT, [p * inside for p in phis] + [pq])
    total = near
    # K(c_Q, y) evaluated once on every y-tuple, volume and weights folded in
    KC = None
    for j in range(n):
        vecs = [phis[p] * inside for p in range(j)] + [phis[j] * outside] + phis[j + 1:]
        far_k = eval_form(T.FT, vecs + [pq])
        if KC is None:
            W = T.kernel_matrix(x_points=Q.center()[None])  # (c_1..c_n, 1, o, b..)
            w = T.kernel.out_space.weights
            vol = grid.cell_measure ** n
            W = np.take(W, 0, axis=n)
            sh = (1,) * n + (-1,) + (1,) * n
            KC = np.moveaxis(W * (vol * w).reshape(sh), n, -1)  # (c_1..c_n, b_1..b_n, o)
        sub = eval_form(KC, vecs) * (grid.cell_measure * pq.sum())
        total = total + far_k - sub
    return form_to_operator(total, T)


def t1_coefficients(T: SIOForm, m=None, FT=None):
    """{(Q, eta): form tensor of <T^{m*} 1, h_Q^eta>} in original slot order."""
    grid, n1 = T.grid, T.n + 1
    m = n1 if m is None else m
    FT = T.FT if FT is None else FT
    ones = np.ones(grid.n_cells)
    out = {}
    for Q in grid.all_cubes():
        if Q.level <= grid.l_min:
            continue
        for eta in signatures(grid.d):
            vecs = [ones] * n1
            vecs[m - 1] = cube_vec(grid, Q, eta)
            out[(Q, eta)] = eval_form(FT, vecs)
    return out


def full_t1_sequence(T: SIOForm, m=None, C=None):
    """<T^{m*} 1, h_Q> for every cube, through t1_pairing on the adjoint form."""
    n1 = T.n + 1
    m = n1 if m is None else m
    Tm = T if m == n1 else adjoint(T, m)
    grid = T.grid
    out = {}
    for Q in grid.all_cubes():
        if Q.level <= grid.l_min:
            continue
        for eta in signatures(grid.d):
            out[(Q, eta)] = t1_pairing(Tm, [1.0] * T.n, cube_vec(grid, Q, eta), Q, C)
    return out


# ---------------------------------------------------------------------------
# pair classification
# ---------------------------------------------------------------------------

SEPARATED, NEARBY, INSIDE, DIAGONAL = "separated", "nearby", "inside", "diagonal"


def pair_distance(Q: Cube, R):
    return max(cube_distance(Q, P) for P in R)


def separation_threshold(Q: Cube, side_R, gamma):
    return Q.side ** gamma * (side_R / 2.0) ** (1.0 - gamma)


def classify_pair(Q: Cube, R, gamma, r=2):
    """Label of (Q, R) for R = Q_1 x ... x Q_n with l(R) = max side >= l(Q)."""
    R = tuple(R)
    side_R = max(P.side for P in R)
    if side_R < Q.side:
        raise RepresentError("pairs need l(R) >= l(Q)")
    if all(Q.intersects(P) for P in R):
        return DIAGONAL if side_R == Q.side else INSIDE
    if pair_distance(Q, R) > separation_threshold(Q, side_R, gamma):
        return SEPARATED
    return NEARBY


# ---------------------------------------------------------------------------
# the decomposition
# ---------------------------------------------------------------------------

@dataclass
class ShiftGroup:
    m: int
    origin: str
    stage: str
    complexity: tuple
    cancellative: tuple
    spec: ShiftSpec
    weight: float

    def to_dict(self):
        return {"adjoint": 0 if self.m == self.spec.n + 1 else self.m, "origin": self.origin,
                "stage": self.stage, "complexity": list(self.complexity),
                "cancellative": list(self.cancellative), "weight": self.weight, "terms": len(self.spec)}


@dataclass
class LooseTerm:
    """A term without a common in-window parent (cubes under different roots)."""
    cubes: tuple
    etas: tuple
    coef: np.ndarray


def _coeff_vec(f: GridFunction, vec):
    """<f, v> for a flat scalar vector v."""
    return f.grid.cell_measure * (vec @ _flat(f))


def _haar_coefficient(f: GridFunction, P: Cube, eta):
    return f.grid.cell_measure * np.tensordot(haar_pattern(P, eta), f.values[f.grid.slices(P)], axes=f.grid.d)


def _top_expectation(f: GridFunction):
    g = GridFunction.zeros(f.grid, f.space, dtype=f.values.dtype)
    for Rt in f.grid.root_cubes():
        g.values[f.grid.slices(Rt)] = average(f, Rt)
    return g


@dataclass
class DecompositionResult:
    T: SIOForm
    groups: list
    paraproducts: dict
    loose: list
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.T.n

    def shift_total(self, fs, origin=None, stage=None):
        tot = 0.0
        for g in self.groups:
            if (origin is None or g.origin == origin) and (stage is None or g.stage == stage):
                tot = tot + _spec_form(g.spec, fs)
        return tot

    def paraproduct_total(self, fs):
        tot = 0.0
        for spec in self.paraproducts.values():
            tot = tot + paraproduct_value(spec, fs)
        return tot

    def tail_total(self, fs):
        tot = 0.0
        for m, spec in self.paraproducts.items():
            tot = tot - paraproduct_value(spec, fs, root_averages=True)
        return tot

    def remainder(self, fs):
        """Coarse-scale pieces: top averages, root tails and root-crossing terms."""
        FT = self.T.FT
        n1 = self.n + 1
        tops = [_top_expectation(f) for f in fs]
        arr_top = [_flat(t) for t in tops]
        total = apply_form(FT, arr_top)
        for m in range(n1):
            arrs = list(arr_top)
            arrs[m] = _flat(fs[m]) - arr_top[m]
            total = total + apply_form(FT, arrs)
        total = total + self.tail_total(fs)
        for t in self.loose:
            xs = [_haar_coefficient(f, P, e) for f, P, e in zip(fs, t.cubes, t.etas)]
            total = total + _contract(t.coef, xs)
        return total

    def evaluate(self, fs):
        parts = {
            "separated": self.shift_total(fs, origin=SEPARATED),
            "nearby": self.shift_total(fs, origin=NEARBY),
            "error": self.shift_total(fs, origin="error"),
            "diagonal_a1": self.shift_total(fs, origin="diagonal-a1"),
            "diagonal_a2": self.shift_total(fs, origin="diagonal-a2"),
            "paraproduct": self.paraproduct_total(fs),
            "remainder": self.remainder(fs),
        }
        parts["total"] = sum(parts.values())
        return parts

    def residual(self, fs):
        direct = direct_form(self.T, fs)
        total = self.evaluate(fs)["total"]
        scale = max(abs(direct), 1e-300)
        return float(abs(total - direct) / scale), direct, total

    def manifest(self):
        return {
            "groups": [g.to_dict() for g in self.groups],
            "paraproducts": {str(0 if m == self.n + 1 else m): len(s.coeffs) for m, s in self.paraproducts.items()},
            "remainder": {"loose_terms": len(self.loose)},
            "diagnostics": self.diagnostics,
        }


def _contract(coef, xs):
    res = coef
    for x in reversed(xs):
        res = res @ np.asarray(x)
    return res


def _spec_form(spec: ShiftSpec, fs):
    tot = 0.0
    for (K, Ps, etas), op in spec.sorted_items():
        xs = [_haar_coefficient(f, P, e) for f, P, e in zip(fs, Ps, etas)]
        tot = tot + _contract(op.form_tensor(), xs)
    return tot


def paraproduct_value(spec: ParaproductSpec, fs, root_averages=False):
    """Paraproduct form in original slot order; root_averages uses <f_s>_{root(Q)}."""
    grid = spec.grid
    tot = 0.0
    for (Q, eta), op in spec.sorted_items():
        A = grid.root_of(Q) if root_averages else Q
        xs = []
        for s, f in enumerate(fs, start=1):
            xs.append(_haar_coefficient(f, Q, eta) if s == spec.haar_slot else average(f, A))
        tot = tot + _contract(op.form_tensor(), xs)
    return tot


def _rect_tuples(grid: Grid, L_R, i, n):
    big = grid.cubes(L_R)
    small = grid.cubes(L_R - 1)
    return itertools.product(*([big] * i + [small] * (n - i)))


def _cube_sort_key(Q):
    return (Q.level, Q.corner)


class _Collector:
    def __init__(self, T: SIOForm, weight_alpha):
        self.T = T
        self.groups = {}
        self.loose = []
        self.alpha = weight_alpha
        self.counts = {}

    def add(self, m, origin, stage, cancellative, cubes, etas, coef):
        grid = self.T.grid
        self.counts[origin] = self.counts.get(origin, 0) + 1
        K = common_parent(cubes[0], cubes[1:])
        if K is None:
            self.loose.append(LooseTerm(tuple(cubes), tuple(etas), coef))
            return
        comp = tuple(K.level - P.level for P in cubes)
        canc = tuple(sorted(cancellative))
        key = (m, origin, stage, comp, canc)
        if key not in self.groups:
            self.groups[key] = ShiftSpec(grid, comp, canc, in_spaces=self.T.kernel.in_spaces,
                                         out_space=self.T.kernel.out_space)
        op = MultilinearOperator.from_form(coef, self.T.kernel.in_spaces, self.T.kernel.out_space)
        self.groups[key].add((K, tuple(cubes), tuple(etas)), op, check=False)

    def result_groups(self):
        out = []
        for key in sorted(self.groups, key=lambda k: (k[0], k[1], k[2], k[3], k[4])):
            m, origin, stage, comp, canc = key
            out.append(ShiftGroup(m, origin, stage, comp, canc, self.groups[key],
                                  2.0 ** (-self.alpha * max(comp) / 2.0)))
        return out


def step3_terms(T: SIOForm, Q: Cube, eta, k, i, eta_R, m=None, FT=None):
    """Pieces of the T1 identity for R = (Q^{(k)})^i x (Q^{(k-1)})^{n-i}.

    Returns (lhs, avg_u, t1, errors, R): lhs = <T h_{R,i}, h_Q>, errors[j]
    = <T Phi_{Q,k,i,j}, h_Q>, so that lhs = avg_u * t1 - sum(errors).
    Vectors are placed in the slot order of T^{m*}.
    """
    grid, n = T.grid, T.n
    n1 = n + 1
    m = n1 if m is None else m
    FT = T.FT if FT is None else FT
    zero = (0,) * grid.d
    Qk = grid.parent(Q, k)
    Qk1 = grid.parent(Q, k - 1)
    R = tuple([Qk] * i + [Qk1] * (n - i))
    hQ = cube_vec(grid, Q, eta)
    hk = cube_vec(grid, Qk, eta_R)
    one_k = cube_vec(grid, Qk)
    one_k1 = cube_vec(grid, Qk1)
    ones = np.ones(grid.n_cells)
    a_k, a_k1 = Qk.measure ** -0.5, Qk1.measure ** -0.5
    # value of h_{Q^{(k)}} on the child containing Q
    c_i = float(hk[np.flatnonzero(one_k1)[0]])
    u = [a_k * one_k] * (i - 1) + [hk] + [a_k1 * one_k1] * (n - i)
    c = [a_k] * (i - 1) + [c_i] + [a_k1] * (n - i)

    s = _sigma(m, n1)

    def place(gvecs):
        # gvecs in G-order (positions 1..n); h_Q goes to slot m
        vecs = [None] * n1
        for p in range(1, n1):
            vecs[s(p) - 1] = gvecs[p - 1]
        vecs[m - 1] = hQ
        return vecs

    lhs = eval_form(FT, place(u))
    t1 = eval_form(FT, place([ones] * n))
    errors = []
    for j in range(1, n + 1):
        phi = []
        for p in range(1, n + 1):
            if p < j:
                phi.append(c[p - 1] * ones)
            elif p == j:
                phi.append(c[p - 1] * ones - u[p - 1])
            else:
                phi.append(u[p - 1])
        errors.append(eval_form(FT, place(phi)))
    return lhs, float(np.prod(c)), t1, errors, R


def _sigma(m, n1):
    """Original slot of G-position p for the m-th adjoint ordering."""
    def s(p):
        if p == m:
            return n1
        if p == n1:
            return m
        return p
    return s


def decompose(T: SIOForm, gamma=None, r=2, check_identities=True):
    """Finite-scale representation of T on its grid (all-cubes mode)."""
    grid, n = T.grid, T.n
    n1 = n + 1
    if gamma is None:
        gamma = default_gamma(T.kernel.alpha, grid.d, n)
    if grid.window.depth < 1:
        raise RepresentError("the window needs at least two scales")
    if r > grid.window.depth:
        raise RepresentError(f"window depth {grid.window.depth} is too shallow for r={r}")
    FT = T.FT
    col = _Collector(T, T.kernel.alpha)
    zero = (0,) * grid.d
    sigs = signatures(grid.d)
    paras = {}
    step3_dev = 0.0
    step3_scale = 0.0
    inner_cubes = [Q for Q in grid.all_cubes() if Q.level > grid.l_min]

    def slot_vectors(m, gcubes, getas, Q, eta):
        s = _sigma(m, n1)
        cubes, etas = [None] * n1, [None] * n1
        for p, (P, e) in enumerate(zip(gcubes, getas), start=1):
            cubes[s(p) - 1], etas[s(p) - 1] = P, e
        cubes[m - 1], etas[m - 1] = Q, eta
        return cubes, etas

    for m in range(1, n1 + 1):
        s = _sigma(m, n1)
        pspec = ParaproductSpec(grid, n, in_spaces=T.kernel.in_spaces, out_space=T.kernel.out_space,
                                haar_slot=m)
        for Q in inner_cubes:
            for eta in sigs:
                # paraproduct coefficient <T^{m*} 1, h_Q>
                vecs = [np.ones(grid.n_cells)] * n1
                vecs[m - 1] = cube_vec(grid, Q, eta)
                t1 = eval_form(FT, vecs)
                pspec.coeffs[(Q, eta)] = MultilinearOperator.from_form(t1, T.kernel.in_spaces, T.kernel.out_space)
                for L_R in range(Q.level + 1, grid.l_max + 1):
                    for i in range(1, n + 1):
                        for R in _rect_tuples(grid, L_R, i, n):
                            for eR in sigs:
                                getas = [zero] * n
                                getas[i - 1] = eR
                                label = classify_pair(Q, R, gamma, r)
                                cubes, etas = slot_vectors(m, R, getas, Q, eta)
                                canc = (m, s(i))
                                if label in (SEPARATED, NEARBY):
                                    coef = eval_form(FT, [cube_vec(grid, P, e) for P, e in zip(cubes, etas)])
                                    col.add(m, label, "off-diagonal", canc, cubes, etas, coef)
                                    continue
                                k = L_R - Q.level
                                lhs, cu, t1v, errs, _ = step3_terms(T, Q, eta, k, i, eR, m, FT)
                                if check_identities:
                                    rhs = cu * t1v - sum(errs)
                                    step3_dev = max(step3_dev, float(np.max(np.abs(lhs - rhs))))
                                    step3_scale = max(step3_scale, float(np.max(np.abs(lhs))))
                                for e in errs:
                                    col.add(m, "error", "off-diagonal", canc, cubes, etas, -e)
        paras[m] = pspec
        if m == n1:
            continue
        # diagonal pieces: Q_1..Q_j at the scale of Q, the rest one level up
        for j in range(m, n + 1):
            canc = (m, s(j))
            for Q in inner_cubes:
                for eta in sigs:
                    for R in _rect_tuples(grid, Q.level, j, n):
                        for eR in sigs:
                            getas = [zero] * n
                            getas[j - 1] = eR
                            cubes, etas = slot_vectors(m, R, getas, Q, eta)
                            vecs = [cube_vec(grid, P, e) for P, e in zip(cubes, etas)]
                            label = classify_pair(Q, R, gamma, r)
                            if label in (SEPARATED, NEARBY):
                                col.add(m, label, "diagonal", canc, cubes, etas, eval_form(FT, vecs))
                                continue
                            full = eval_form(FT, vecs)
                            a2 = 0.0
                            for Qc in grid.children(Q):
                                ind = cube_vec(grid, Qc)
                                a2 = a2 + eval_form(FT, [v * ind for v in vecs])
                            col.add(m, "diagonal-a2", "diagonal", canc, cubes, etas, a2)
                            col.add(m, "diagonal-a1", "diagonal", canc, cubes, etas, full - a2)
    diag = {"gamma": gamma, "r": r, "counts": dict(sorted(col.counts.items())),
            "step3_max_deviation": step3_dev, "step3_scale": step3_scale}
    return DecompositionResult(T, col.result_groups(), paras, col.loose, diag)


def step4_check(res: DecompositionResult, fs):
    """Sum over (k, i) of the inside main terms versus paraproduct minus root tail.

    The left side is assembled independently from the u_{Q,k,i} averages.
    Returns (lhs, rhs) summed over all adjoint orderings.
    """
    T = res.T
    grid, n = T.grid, T.n
    n1 = n + 1
    sigs = signatures(grid.d)
    zero = (0,) * grid.d
    lhs = 0.0
    for m, spec in res.paraproducts.items():
        s = _sigma(m, n1)
        for (Q, eta), op in spec.sorted_items():
            coef = op.form_tensor()
            hq = _haar_coefficient(fs[m - 1], Q, eta)
            for k in range(1, grid.l_max - Q.level + 1):
                Qk, Qk1 = grid.parent(Q, k), grid.parent(Q, k - 1)
                for i in range(1, n + 1):
                    for eR in sigs:
                        # <u>_{Q^n} <G, u> computed slot by slot
                        xs = [None] * n1
                        for p in range(1, n + 1):
                            f = fs[s(p) - 1]
                            if p < i:
                                xs[s(p) - 1] = average(f, Qk)
                            elif p == i:
                                child_val = float(cube_vec(grid, Qk, eR)[np.flatnonzero(cube_vec(grid, Qk1))[0]])
                                xs[s(p) - 1] = child_val * _haar_coefficient(f, Qk, eR)
                            else:
                                xs[s(p) - 1] = average(f, Qk1)
                        xs[m - 1] = hq
                        lhs = lhs + _contract(coef, xs)
    rhs = res.paraproduct_total(fs) + res.tail_total(fs)
    return lhs, rhs


def normalized_members(res: DecompositionResult, origin=SEPARATED):
    """2^{alpha max k / 2} |K|^n / prod |P_s|^{1/2} times each emitted coefficient."""
    out = []
    for g in res.groups:
        if g.origin != origin:
            continue
        for (K, Ps, etas), op in g.spec.sorted_items():
            out.append(op.scaled(normalization_factor(K, Ps) / g.weight))
    return out


# ---------------------------------------------------------------------------
# averaging over random grids
# ---------------------------------------------------------------------------

@dataclass
class AverageResult:
    value: float
    direct: float
    stderr: float
    omegas: int
    all_cubes: float
    p_good: dict
    exact: bool

    def to_dict(self):
        return {"value": self.value, "direct": self.direct, "stderr": self.stderr, "omegas": self.omegas,
                "all_cubes": self.all_cubes, "p_good": {str(k): v for k, v in self.p_good.items()},
                "exact": self.exact}


def _expect_level(f: GridFunction, L):
    grid = f.grid
    g = GridFunction.zeros(grid, f.space, dtype=f.values.dtype)
    for Q in grid.cubes(L):
        g.values[grid.slices(Q)] = average(f, Q)
    return g


def per_cube_terms(T: SIOForm, fs):
    """{Q: sum_m Lambda(E_L f_1..E_L f_{m-1}, Delta_Q f_m, E_{L-1} f_{m+1}..)} and the top term."""
    grid, n1 = T.grid, T.n + 1
    FT = T.FT
    flat = {}
    out = {}
    for L in range(grid.l_min + 1, grid.l_max + 1):
        EL = [_flat(_expect_level(f, L)) for f in fs]
        EL1 = [_flat(_expect_level(f, L - 1)) for f in fs]
        for Q in grid.cubes(L):
            mask = cube_vec(grid, Q)[:, None]
            tot = 0.0
            for m in range(n1):
                dQ = (EL1[m] - EL[m]) * mask
                arrs = EL[:m] + [dQ] + EL1[m + 1:]
                tot = tot + apply_form(FT, arrs)
            out[Q] = tot
    top = apply_form(FT, [_flat(_top_expectation(f)) for f in fs])
    return out, top


def _omega_grid(base: Grid, omega: RandomShiftOmega):
    S = 2 ** base.window.depth
    off = omega.offset(base.l_max)
    origin = tuple(int(math.floor((b - o) / S)) for b, o in zip(base.box_lower, off))
    roots = tuple(r + 1 for r in base.roots)
    return Grid(base.d, base.window, omega, roots, origin)


def average_over_omega(T: SIOForm, fs, gamma=None, r=2, mode="enumerate", seed=0, trials=64, max_bits=12):
    """P_good^{-1} E_omega of the good-cube sums, level by level, plus E_omega of the top term."""
    base = T.grid
    n = T.n
    if gamma is None:
        gamma = default_gamma(T.kernel.alpha, base.d, n)
    depth, d = base.window.depth, base.d
    if mode == "enumerate":
        nbits = depth * d
        if nbits > max_bits:
            raise RepresentError(f"enumerating {nbits} omega bits exceeds the budget of {max_bits}")
        codes = range(2 ** nbits)
        omegas = [RandomShiftOmega.from_array(((c >> np.arange(nbits)) & 1).reshape(depth, d), base.window)
                  for c in codes]
    elif mode == "mc":
        rng = np.random.default_rng(seed)
        omegas = [RandomShiftOmega.from_array(rng.integers(0, 2, size=(depth, d)), base.window)
                  for _ in range(trials)]
    else:
        raise RepresentError("mode must be 'enumerate' or 'mc'")
    direct = direct_form(T, fs)
    p_good = None
    samples, all_samples = [], []
    for om in omegas:
        g = _omega_grid(base, om)
        Tg = SIOForm(T.kernel, g, T.refine)
        fg = [f.transfer(g) for f in fs]
        if p_good is None:
            p_good = good_probability_by_level(g, gamma, r)
            empty = [L for L in range(g.l_min + 1, g.l_max + 1) if p_good[L] <= 0]
            if empty:
                raise RepresentError(f"no good cubes at levels {empty} for gamma={gamma}, r={r}; "
                                     "the window is too shallow for this r")
        terms, top = per_cube_terms(Tg, fg)
        val = top
        allv = top
        for Q, t in terms.items():
            allv = allv + t
            if g.is_good(Q, gamma, r):
                val = val + t / p_good[Q.level]
        samples.append(val)
        all_samples.append(allv)
    samples = np.array(samples)
    value = samples.mean()
    se = 0.0 if mode == "enumerate" else float(np.std(samples, ddof=1) / math.sqrt(len(samples))) if len(samples) > 1 else 0.0
    return AverageResult(value, direct, se, len(omegas), np.mean(all_samples), p_good, mode == "enumerate")


# ---------------------------------------------------------------------------
# CZ constants
# ---------------------------------------------------------------------------

def operator_norm(op: MultilinearOperator, budget=4, seed=0):
    """|a| for scalars; otherwise a lower bound by optimisation over unit vectors."""
    A = op.dense()
    spaces = list(op.in_spaces) + [op.out_space.dual()]
    if all(isinstance(X, Scalar) for X in spaces):
        return float(abs(A.ravel()[0]))
    F = op.form_tensor()
    dims = [X.dim for X in spaces]

    def ratio(x):
        parts = np.split(x, np.cumsum(dims)[:-1])
        den = np.prod([float(X.norm(p)) for X, p in zip(spaces, parts)])
        if den <= 1e-300:
            return 0.0
        return abs(_contract(F, parts)) / den
    best, _, _ = _maximize(ratio, int(sum(dims)), budget, seed, maxiter=100)
    return float(best)


def bmo_norm(seq, grid: Grid, p=2.0, max_enum=12, samples=2048, seed=0, budget=2):
    """sup_{Q0} (|Q0|^{-1} E || sum_{Q in Q0} eps_Q a_Q 1_Q / |Q|^{1/2} ||_{L^p}^p)^{1/p}.

    seq maps (Q, eta) to MultilinearOperator.  Scalar sequences are exact
    when the sign count is enumerable; operator-valued entries use a fixed
    family of unit probe vectors, which gives a lower bound.
    """
    keys = sorted(seq, key=lambda k: (k[0].level, k[0].corner, k[1]))
    if not keys:
        return 0.0, True
    ops = [seq[k] for k in keys]
    spaces = list(ops[0].in_spaces) + [ops[0].out_space.dual()]
    scalar = all(isinstance(X, Scalar) for X in spaces)
    forms = np.stack([op.form_tensor() for op in ops])  # (M, b...)
    rng = np.random.default_rng(seed)
    if scalar:
        vals = forms.reshape(len(ops))
        def norms(z):  # z: (..., M-combination) already summed per cell
            return np.abs(z)
        flat = vals[:, None]
    else:
        probes = []
        for X in spaces:
            P = rng.standard_normal((16, X.dim))
            P = P / np.asarray(X.norm(P)).reshape(-1, 1)
            probes.append(P)
        flat = forms.reshape(len(ops), -1)
        # evaluate every form on the probe tuples: (M, 16)
        cols = []
        for t in range(16):
            v = None
            for P in probes:
                v = P[t] if v is None else np.multiply.outer(v, P[t])
            cols.append(flat @ v.ravel())
        flat = np.stack(cols, axis=1)
    exact = scalar
    best = 0.0
    cells = grid.n_cells
    members = {}
    for idx, (Q, eta) in enumerate(keys):
        members.setdefault(Q, []).append(idx)
    for Q0 in grid.all_cubes():
        inside = [idx for idx, (Q, _) in enumerate(keys) if Q0.contains(Q)]
        if not inside:
            continue
        M = len(inside)
        # indicator weights 1_Q(x) / |Q|^{1/2} on the cells of Q0
        Wt = np.stack([cube_vec(grid, keys[i][0]) / keys[i][0].measure ** 0.5 for i in inside])  # (M, C)
        if M <= max_enum:
            signs = np.array(list(itertools.product((1.0, -1.0), repeat=M)))
        else:
            signs = rng.choice((1.0, -1.0), size=(samples, M))
            exact = False
        # value at each cell for each sign pattern: (S, C, probes)
        vals = np.einsum("sm,mc,mp->scp", signs, Wt, flat[inside])
        pw = np.max(np.abs(vals), axis=2) ** p
        mean = grid.cell_measure * pw.sum(axis=1).mean()
        best = max(best, (mean / Q0.measure) ** (1.0 / p))
    return float(best), exact


def _sample_tuples(grid, n, samples, rng):
    centers = grid.cell_centers().reshape(-1, grid.d)
    C = len(centers)
    total = C ** (n + 1)
    if total <= samples:
        idx = np.array(list(itertools.product(range(C), repeat=n + 1)))
    else:
        idx = rng.integers(0, C, size=(samples, n + 1))
    idx = idx[~np.all(idx == idx[:, :1], axis=1)]
    return centers[idx[:, 0]], centers[idx[:, 1:]]


def cz_constants(T: SIOForm, budget=4, seed=0, samples=48, p=2.0, varpi=None):
    """Lower-bound estimates of the CZ, weak-boundedness and BMO constants."""
    K, grid, n, d = T.kernel, T.grid, T.n, T.grid.d
    rng = np.random.default_rng(seed)
    x, ys = _sample_tuples(grid, n, samples, rng)
    if n >= 3 and varpi is None:
        varpi = product_of_scalars(n + 1)
    vals = K(x, ys)
    dist = _dist_sum(x, ys)
    size_ops = [MultilinearOperator(dist[t] ** (d * n) * vals[t], K.in_spaces, K.out_space) for t in range(len(x))]
    size = r_bound(size_ops, varpi, budget=budget, seed=seed)
    # Hoelder members: move one point by at most half the largest distance
    hold_ops = []
    for t in range(len(x)):
        maxd = float(np.max(np.linalg.norm(ys[t] - x[t], axis=-1)))
        h = rng.uniform(-1, 1, d)
        h = 0.5 * maxd * rng.uniform(0.1, 1.0) * h / max(np.linalg.norm(h), 1e-12)
        j = int(rng.integers(0, n + 1))
        x2, ys2 = x[t].copy(), ys[t].copy()
        if j == 0:
            x2 = x2 + h
        else:
            ys2[j - 1] = ys2[j - 1] + h
        if np.any(np.linalg.norm(ys2 - x2, axis=-1) == 0):
            continue
        diff = K(x2[None], ys2[None])[0] - vals[t]
        fac = dist[t] ** (d * n + K.alpha) / np.linalg.norm(h) ** K.alpha
        hold_ops.append(MultilinearOperator(fac * diff, K.in_spaces, K.out_space))
    hold = r_bound(hold_ops, varpi, budget=budget, seed=seed + 1) if hold_ops else None
    weak_ops = []
    for Q in grid.all_cubes():
        ind = cube_vec(grid, Q)
        weak_ops.append(form_to_operator(eval_form(T.FT, [ind] * (n + 1)) / Q.measure, T))
    weak = r_bound(weak_ops, varpi, budget=budget, seed=seed + 2)
    bmo = {}
    for m in range(1, n + 2):
        FTm = swap_slots(T.FT, m, n + 1)
        ins = list(K.in_spaces)
        out = K.out_space
        if m <= n:
            ins[m - 1] = K.out_space.dual()
            out = K.in_spaces[m - 1].dual()
        seq = {key: MultilinearOperator.from_form(F, ins, out) for key, F in t1_coefficients(T, n + 1, FTm).items()}
        val, exact = bmo_norm(seq, grid, p, seed=seed + 3 + m)
        bmo[0 if m == n + 1 else m] = {"value": val, "exact": exact}
    return {
        "size": {"value": size.value, "exact": size.exact},
        "holder": {"value": hold.value if hold else 0.0, "exact": hold.exact if hold else True},
        "weak": {"value": weak.value, "exact": weak.exact},
        "bmo": bmo,
    }
