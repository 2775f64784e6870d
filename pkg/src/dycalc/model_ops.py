"""Operator-valued multilinear dyadic shifts, paraproducts and their relatives.

Coefficients are n-linear maps a : X_1 x ... x X_n -> Y stored as dense
tensors of shape (dim_Y, dim_1, ..., dim_n).  Paired with y in X_{n+1} = Y*
through the space's diagonal pairing, a coefficient is the same thing as
an (n+1)-linear form tensor; ``form_tensor`` gives that view with slot
axes ordered (1, ..., n, n+1).

Keys of a shift are ``(K, (P_1, ..., P_{n+1}), (eta_1, ..., eta_{n+1}))``
where eta_s is the Haar signature used in slot s (all-zero means h^0).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .haar import GridFunction, HaarError, average, haar_pattern, signatures
from .lattice import Cube, Grid
from .spaces import Bochner, Rad2, Scalar, Space

LETTERS = "abcdefghijklmnopqrstuvw"


class ModelOpError(ValueError):
    pass


# ---------------------------------------------------------------------------
# multilinear operators
# ---------------------------------------------------------------------------

class MultilinearOperator:
    def __init__(self, tensor=None, in_spaces=None, out_space=None, handle: Callable = None):
        self.in_spaces = tuple(in_spaces) if in_spaces is not None else None
        self.out_space = out_space if out_space is not None else Scalar()
        if tensor is None and handle is None:
            raise ModelOpError("need a tensor or an evaluator handle")
        self.tensor = None if tensor is None else np.asarray(tensor)
        self.handle = handle
        if self.in_spaces is None:
            if self.tensor is None:
                raise ModelOpError("in_spaces required for handle operators")
            self.in_spaces = tuple(Scalar() for _ in range(self.tensor.ndim - 1))
        if self.tensor is not None:
            want = (self.out_space.dim,) + tuple(s.dim for s in self.in_spaces)
            if self.tensor.shape != want:
                raise ModelOpError(f"tensor shape {self.tensor.shape} != {want}")

    @property
    def arity(self):
        return len(self.in_spaces)

    @classmethod
    def scalar(cls, a, n):
        return cls(np.full((1,) * (n + 1), a), tuple(Scalar() for _ in range(n)), Scalar())

    @classmethod
    def zero(cls, in_spaces, out_space):
        shp = (out_space.dim,) + tuple(s.dim for s in in_spaces)
        return cls(np.zeros(shp), in_spaces, out_space)

    @classmethod
    def from_form(cls, F, in_spaces, out_space):
        """Operator whose pairing with X_{n+1} reproduces the form tensor F."""
        F = np.asarray(F)
        A = np.moveaxis(F, -1, 0)
        w = out_space.weights.reshape((-1,) + (1,) * (A.ndim - 1))
        return cls(A / w, in_spaces, out_space)

    def form_tensor(self):
        w = self.out_space.weights.reshape((-1,) + (1,) * self.arity)
        return np.moveaxis(self.dense() * w, 0, -1)

    def dense(self):
        if self.tensor is not None:
            return self.tensor
        # materialise from the handle through the standard bases
        dims = [s.dim for s in self.in_spaces]
        out = np.zeros((self.out_space.dim,) + tuple(dims), dtype=complex)
        for idx in itertools.product(*[range(d) for d in dims]):
            xs = [np.eye(d)[i] for d, i in zip(dims, idx)]
            out[(slice(None),) + idx] = self.handle(*xs)
        if np.allclose(out.imag, 0):
            out = out.real
        return out

    def __call__(self, *xs):
        if len(xs) != self.arity:
            raise ModelOpError("wrong number of arguments")
        if self.tensor is None:
            return np.asarray(self.handle(*xs))
        res = self.tensor
        for x in reversed(xs):
            res = res @ np.asarray(x)
        return res

    def form(self, xs, y):
        return self.out_space.pair(self(*xs), y)

    def scaled(self, c):
        return MultilinearOperator(self.dense() * c, self.in_spaces, self.out_space)

    def __add__(self, other):
        return MultilinearOperator(self.dense() + other.dense(), self.in_spaces, self.out_space)

    def __sub__(self, other):
        return MultilinearOperator(self.dense() - other.dense(), self.in_spaces, self.out_space)

    def is_zero(self, tol=0.0):
        return float(np.max(np.abs(self.dense()))) <= tol

    def __repr__(self):
        return f"MultilinearOperator(n={self.arity}, out={self.out_space!r})"


def contract_form(F, vecs):
    """Contract a slot-ordered form tensor with one vector per slot."""
    res = F
    for v in reversed(vecs):
        res = res @ np.asarray(v)
    return res


# ---------------------------------------------------------------------------
# shifts
# ---------------------------------------------------------------------------

def _zero_eta(d):
    return (0,) * d


def _haar_coef(f: GridFunction, P: Cube, eta):
    sl = f.grid.slices(P)
    pat = haar_pattern(P, eta)
    return f.grid.cell_measure * np.tensordot(pat, f.values[sl], axes=f.grid.d)


class ShiftSpec:
    """Finitely supported operator-valued shift of complexity k.

    cancellative: the two 1-based slots (among 1..n+1) carrying
    cancellative Haar functions.
    """

    def __init__(self, grid: Grid, complexity, cancellative, coeffs=None,
                 in_spaces=None, out_space=None, check=True):
        self.grid = grid
        self.complexity = tuple(int(k) for k in complexity)
        self.n = len(self.complexity) - 1
        if self.n < 1:
            raise ModelOpError("complexity must have n+1 >= 2 entries")
        self.cancellative = tuple(sorted(int(s) for s in cancellative))
        if len(set(self.cancellative)) != 2 or not all(1 <= s <= self.n + 1 for s in self.cancellative):
            raise ModelOpError(f"need exactly two cancellative slots in 1..{self.n + 1}")
        self.in_spaces = tuple(in_spaces) if in_spaces is not None else tuple(Scalar() for _ in range(self.n))
        self.out_space = out_space if out_space is not None else Scalar()
        self.coeffs = {}
        for key, op in (coeffs or {}).items():
            self.add(key, op, check=check)

    def _normalize_key(self, key):
        if len(key) == 2:
            K, Ps = key
            if self.grid.d != 1:
                raise ModelOpError("signatures must be given explicitly when d > 1")
            etas = tuple((1,) if s + 1 in self.cancellative else (0,) for s in range(self.n + 1))
        else:
            K, Ps, etas = key
            etas = tuple(tuple(int(x) for x in np.atleast_1d(e)) for e in etas)
        return K, tuple(Ps), etas

    def validate_key(self, key):
        K, Ps, etas = key
        if len(Ps) != self.n + 1 or len(etas) != self.n + 1:
            raise ModelOpError("key needs n+1 cubes and signatures")
        for s, (P, k, eta) in enumerate(zip(Ps, self.complexity, etas), start=1):
            if P.level + k != K.level or self.grid.parent(P, k) != K:
                raise ModelOpError(f"slot {s}: cube {P!r} is not a level-{k} descendant of {K!r}")
            canc = any(eta)
            if canc != (s in self.cancellative):
                raise ModelOpError(f"slot {s}: signature {eta} inconsistent with cancellative slots")

    def add(self, key, op, check=True):
        key = self._normalize_key(key)
        if check:
            self.validate_key(key)
        if not isinstance(op, MultilinearOperator):
            op = MultilinearOperator(np.asarray(op).reshape((self.out_space.dim,) + tuple(s.dim for s in self.in_spaces)),
                                     self.in_spaces, self.out_space)
        if key in self.coeffs:
            op = self.coeffs[key] + op
        self.coeffs[key] = op

    def sorted_items(self):
        def sk(item):
            K, Ps, etas = item[0]
            return (K.level, K.corner, tuple((P.level, P.corner) for P in Ps), etas)
        return sorted(self.coeffs.items(), key=sk)

    def __len__(self):
        return len(self.coeffs)


def _check_inputs(spec, fs):
    if len(fs) != spec.n:
        raise ModelOpError(f"expected {spec.n} input functions")
    for f, X in zip(fs, spec.in_spaces):
        if f.grid != spec.grid:
            raise ModelOpError("input function lives on a different grid")
        if f.space.dim != X.dim:
            raise ModelOpError(f"space mismatch: {f.space!r} vs {X!r}")


def apply_shift(spec: ShiftSpec, fs: Sequence[GridFunction]):
    _check_inputs(spec, fs)
    dtype = np.result_type(*[f.values.dtype for f in fs], *[op.dense().dtype for op in spec.coeffs.values()] or [float])
    out = GridFunction.zeros(spec.grid, spec.out_space, dtype=dtype)
    for (K, Ps, etas), op in spec.sorted_items():
        xs = [_haar_coef(f, P, e) for f, P, e in zip(fs, Ps[:-1], etas[:-1])]
        y = op(*xs)
        P = Ps[-1]
        out.values[spec.grid.slices(P)] += haar_pattern(P, etas[-1])[..., None] * y
    return out


def shift_form(spec: ShiftSpec, fs: Sequence[GridFunction], g: GridFunction):
    _check_inputs(spec, fs)
    total = 0.0
    for (K, Ps, etas), op in spec.sorted_items():
        xs = [_haar_coef(f, P, e) for f, P, e in zip(fs, Ps[:-1], etas[:-1])]
        yv = _haar_coef(g, Ps[-1], etas[-1])
        total = total + op.form(xs, yv)
    return total


def dual_pair(F: GridFunction, G: GridFunction, space: Space = None):
    """<F, G> = integral of the duality pairing of Y-valued F with Y*-valued G."""
    space = space or F.space
    return F.grid.cell_measure * np.sum(space.pair(F.values, G.values))


def normalization_factor(K: Cube, Ps):
    n = len(Ps) - 1
    return K.measure ** n / np.prod([P.measure ** 0.5 for P in Ps])


def normalized_coeffs(spec: ShiftSpec):
    """Coefficients scaled by |K|^n / prod |Q_m|^{1/2}, keyed like the spec."""
    return {key: op.scaled(normalization_factor(key[0], key[1])) for key, op in spec.sorted_items()}


# ---------------------------------------------------------------------------
# paraproducts
# ---------------------------------------------------------------------------

class ParaproductSpec:
    """pi(f) = sum_Q a_Q[<f_1>_Q, ..., <f_n>_Q] h_Q^eta.

    haar_slot < n+1 gives the adjoint-type paraproduct whose cancellative
    Haar function sits on input slot `haar_slot`; only the form is then
    available.
    """

    def __init__(self, grid: Grid, n, coeffs=None, in_spaces=None, out_space=None, haar_slot=None):
        self.grid = grid
        self.n = int(n)
        self.in_spaces = tuple(in_spaces) if in_spaces is not None else tuple(Scalar() for _ in range(n))
        self.out_space = out_space if out_space is not None else Scalar()
        self.haar_slot = int(haar_slot) if haar_slot is not None else self.n + 1
        self.coeffs = {}
        for key, op in (coeffs or {}).items():
            self.add(key, op)

    def add(self, key, op):
        if isinstance(key, Cube):
            if self.grid.d != 1:
                raise ModelOpError("give (Q, eta) keys when d > 1")
            key = (key, (1,))
        Q, eta = key
        eta = tuple(int(e) for e in np.atleast_1d(eta))
        if not self.grid.in_box(Q) or Q.level <= self.grid.l_min or not any(eta):
            raise ModelOpError(f"bad paraproduct key {Q!r}, {eta}")
        if not isinstance(op, MultilinearOperator):
            op = MultilinearOperator(np.asarray(op).reshape((self.out_space.dim,) + tuple(s.dim for s in self.in_spaces)),
                                     self.in_spaces, self.out_space)
        key = (Q, eta)
        if key in self.coeffs:
            op = self.coeffs[key] + op
        self.coeffs[key] = op

    def sorted_items(self):
        return sorted(self.coeffs.items(), key=lambda it: (it[0][0].level, it[0][0].corner, it[0][1]))


def apply_paraproduct(spec: ParaproductSpec, fs: Sequence[GridFunction]):
    if spec.haar_slot != spec.n + 1:
        raise ModelOpError("apply is defined for paraproducts with the Haar function in the output slot")
    if len(fs) != spec.n:
        raise ModelOpError("wrong number of inputs")
    for f, X in zip(fs, spec.in_spaces):
        if f.space.dim != X.dim or f.grid != spec.grid:
            raise ModelOpError("space or grid mismatch")
    out = GridFunction.zeros(spec.grid, spec.out_space,
                             dtype=np.result_type(*[f.values.dtype for f in fs], float))
    for (Q, eta), op in spec.sorted_items():
        y = op(*[average(f, Q) for f in fs])
        out.values[spec.grid.slices(Q)] += haar_pattern(Q, eta)[..., None] * y
    return out


def paraproduct_form(spec: ParaproductSpec, fs: Sequence[GridFunction]):
    """Value on (n+1) functions in original slot order."""
    if len(fs) != spec.n + 1:
        raise ModelOpError("need n+1 functions")
    total = 0.0
    for (Q, eta), op in spec.sorted_items():
        vecs = []
        for s, f in enumerate(fs, start=1):
            vecs.append(_haar_coef(f, Q, eta) if s == spec.haar_slot else average(f, Q))
        total = total + contract_form(op.form_tensor(), vecs)
    return total


# ---------------------------------------------------------------------------
# multi-parameter shifts
# ---------------------------------------------------------------------------

class ProductGrid:
    def __init__(self, grids):
        self.grids = tuple(grids)
        self.box_shape = tuple(s for g in self.grids for s in g.box_shape)
        self.cell_measure = float(np.prod([g.cell_measure for g in self.grids]))

    def __eq__(self, other):
        return isinstance(other, ProductGrid) and self.grids == other.grids

    def __hash__(self):
        return hash(self.grids)

    def slices(self, rect):
        return tuple(sl for g, Q in zip(self.grids, rect) for sl in g.slices(Q))


class ProductFunction:
    def __init__(self, pgrid: ProductGrid, space: Space = None, values=None):
        self.grid = pgrid
        self.space = space or Scalar()
        shp = pgrid.box_shape + (self.space.dim,)
        self.values = np.zeros(shp) if values is None else np.asarray(values).reshape(shp)

    @classmethod
    def random(cls, pgrid, space=None, rng=None):
        space = space or Scalar()
        rng = rng or np.random.default_rng()
        return cls(pgrid, space, rng.standard_normal(pgrid.box_shape + (space.dim,)))

    @classmethod
    def tensor(cls, u: GridFunction, v: GridFunction, space=None):
        """u(x1) v(x2) for scalar u, v."""
        pg = ProductGrid((u.grid, v.grid))
        vals = np.multiply.outer(u.values[..., 0], v.values[..., 0])
        return cls(pg, space or Scalar(), vals[..., None])


def rect_pattern(rect, etas):
    pat = None
    for Q, e in zip(rect, etas):
        p = haar_pattern(Q, e)
        pat = p if pat is None else np.multiply.outer(pat, p)
    return pat


class MultiParamShiftSpec:
    """m-parameter shift on a product of grids.

    complexity[s][i]: depth of slot s (1..n+1) in parameter i.
    cancellative[i]: the slot pair with cancellative Haar functions in
    parameter i.  Keys are (K, (P_1..P_{n+1}), etas) with K and P_s tuples
    of cubes (one per parameter) and etas[s][i] signatures.
    """

    def __init__(self, grids, complexity, cancellative, coeffs=None, in_spaces=None, out_space=None):
        self.pgrid = ProductGrid(grids)
        self.grids = self.pgrid.grids
        self.m = len(self.grids)
        self.complexity = tuple(tuple(int(k) for k in row) for row in complexity)
        self.n = len(self.complexity) - 1
        self.cancellative = tuple(tuple(sorted(c)) for c in cancellative)
        if len(self.cancellative) != self.m:
            raise ModelOpError("one cancellative pair per parameter required")
        for c in self.cancellative:
            if len(set(c)) != 2:
                raise ModelOpError("each parameter needs exactly two cancellative slots")
        self.in_spaces = tuple(in_spaces) if in_spaces is not None else tuple(Scalar() for _ in range(self.n))
        self.out_space = out_space if out_space is not None else Scalar()
        self.coeffs = {}
        for key, op in (coeffs or {}).items():
            self.add(key, op)

    def add(self, key, op):
        K, Ps, etas = key
        K = tuple(K)
        Ps = tuple(tuple(P) for P in Ps)
        etas = tuple(tuple(tuple(int(x) for x in np.atleast_1d(e)) for e in row) for row in etas)
        for s in range(self.n + 1):
            for i in range(self.m):
                g = self.grids[i]
                P = Ps[s][i]
                k = self.complexity[s][i]
                if g.parent(P, k) != K[i] or P.level + k != K[i].level:
                    raise ModelOpError(f"slot {s + 1}, parameter {i + 1}: complexity violated")
                if any(etas[s][i]) != ((s + 1) in self.cancellative[i]):
                    raise ModelOpError(f"slot {s + 1}, parameter {i + 1}: inconsistent cancellative pattern")
        if not isinstance(op, MultilinearOperator):
            op = MultilinearOperator(np.asarray(op).reshape((self.out_space.dim,) + tuple(s.dim for s in self.in_spaces)),
                                     self.in_spaces, self.out_space)
        key = (K, Ps, etas)
        if key in self.coeffs:
            op = self.coeffs[key] + op
        self.coeffs[key] = op

    def sorted_items(self):
        def sk(item):
            K, Ps, etas = item[0]
            return (tuple((Q.level, Q.corner) for Q in K), tuple((Q.level, Q.corner) for P in Ps for Q in P), etas)
        return sorted(self.coeffs.items(), key=sk)


def _rect_coef(f: ProductFunction, rect, etas):
    pat = rect_pattern(rect, etas)
    block = f.values[f.grid.slices(rect)]
    return f.grid.cell_measure * np.tensordot(pat, block, axes=pat.ndim)


def apply_multiparam_shift(spec: MultiParamShiftSpec, fs):
    out = ProductFunction(spec.pgrid, spec.out_space,
                          np.zeros(spec.pgrid.box_shape + (spec.out_space.dim,),
                                   dtype=np.result_type(*[f.values.dtype for f in fs], float)))
    for (K, Ps, etas), op in spec.sorted_items():
        xs = [_rect_coef(f, P, e) for f, P, e in zip(fs, Ps[:-1], etas[:-1])]
        y = op(*xs)
        out.values[spec.pgrid.slices(Ps[-1])] += rect_pattern(Ps[-1], etas[-1])[..., None] * y
    return out


def iterate_view(spec: MultiParamShiftSpec, parameter=1, exponents=None):
    """Outer shift over the first factor grid with shift-valued coefficients.

    Only the biparameter case is supported.  The coefficient of
    (K^1, (Q^1_j)) is the inner shift S_{K^1,(Q^1_j)} on functions over the
    second grid, materialised as a dense operator between Bochner spaces
    L^{p_j}(grid2; X_j) with mu = finest cell measure.
    """
    if spec.m != 2 or parameter != 1:
        raise ModelOpError("iterate_view supports biparameter specs viewed along parameter 1")
    g1, g2 = spec.grids
    nc2 = g2.n_cells
    mu = np.full(nc2, g2.cell_measure)
    n = spec.n
    ps = exponents if exponents is not None else [float(n + 1)] * (n + 1)
    in_sp = tuple(Bochner(ps[j], mu, spec.in_spaces[j]) for j in range(n))
    out_sp = Bochner(ps[n] / (ps[n] - 1.0), mu, spec.out_space)
    outer = ShiftSpec(g1, [row[0] for row in spec.complexity], spec.cancellative[0],
                      in_spaces=in_sp, out_space=out_sp)
    dims = [X.dim for X in spec.in_spaces]
    dY = spec.out_space.dim
    for (K, Ps, etas), op in spec.sorted_items():
        A = op.dense()
        # cell patterns on grid2 for every slot
        vecs = []
        for s in range(n + 1):
            v = np.zeros(g2.box_shape)
            v[g2.slices(Ps[s][1])] = haar_pattern(Ps[s][1], etas[s][1])
            vecs.append(v.ravel())
        # T[(c_out, o), (c_1, b_1), ...] = h_out(c_out) A[o, b..] prod mu h_j(c_j)
        T = np.einsum("c,o...->co...", vecs[n], A)
        for j in range(n):
            T = np.multiply.outer(T, g2.cell_measure * vecs[j])
        # axes: c_out, o, b_1..b_n, c_1..c_n -> c_out, o, (c_1, b_1), ...
        order = [0, 1]
        for j in range(n):
            order += [2 + n + j, 2 + j]
        T = T.transpose(order).reshape((nc2 * dY,) + tuple(nc2 * d for d in dims))
        key1 = (K[0], tuple(P[0] for P in Ps), tuple(row[0] for row in etas))
        outer.add(key1, MultilinearOperator(T, in_sp, out_sp))
    return outer


def product_to_outer(f: ProductFunction, g1: Grid, inner_dim=None):
    """Reshape a product function into a grid1 function with L^p(grid2; X) values."""
    nc2 = int(np.prod(f.grid.box_shape[g1.d:]))
    vals = f.values.reshape(g1.box_shape + (nc2 * f.space.dim,))
    return vals


def apply_iterated(spec: MultiParamShiftSpec, fs, exponents=None):
    outer = iterate_view(spec, 1, exponents)
    g1 = spec.grids[0]
    Fs = [GridFunction(g1, X, product_to_outer(f, g1)) for f, X in zip(fs, outer.in_spaces)]
    out = apply_shift(outer, Fs)
    return ProductFunction(spec.pgrid, spec.out_space, out.values.reshape(spec.pgrid.box_shape + (spec.out_space.dim,)))


# ---------------------------------------------------------------------------
# Rad_2 lifting of a family of bilinear shifts
# ---------------------------------------------------------------------------

def lift_shift_family(shifts, eps, N=None):
    """Single shift over Rad_2 spaces reproducing sum_tuv eps_tuv <S_tuv[f1_tu, f2_uv], f3_tv>.

    shifts: nested N x N x N sequence (or dict keyed by (t,u,v)) of bilinear ShiftSpecs.
    """
    eps = np.asarray(eps)
    if N is None:
        N = eps.shape[0]
    get = (lambda t, u, v: shifts[(t, u, v)]) if isinstance(shifts, dict) else (lambda t, u, v: shifts[t][u][v])
    ref = get(0, 0, 0)
    if ref.n != 2:
        raise ModelOpError("lifting is defined for bilinear shifts")
    if np.any(np.abs(np.abs(eps) - 1) > 1e-12):
        raise ModelOpError("eps must be unimodular")
    for t, u, v in itertools.product(range(N), repeat=3):
        S = get(t, u, v)
        if (S.grid != ref.grid or S.complexity != ref.complexity or S.cancellative != ref.cancellative
                or [x.dim for x in S.in_spaces] != [x.dim for x in ref.in_spaces]):
            raise ModelOpError("heterogeneous shift family")
    X1, X2 = ref.in_spaces
    Y = ref.out_space
    d1, d2, d3 = X1.dim, X2.dim, Y.dim
    sp1, sp2, spY = Rad2(N, X1), Rad2(N, X2), Rad2(N, Y)
    keys = set()
    for t, u, v in itertools.product(range(N), repeat=3):
        keys.update(get(t, u, v).coeffs.keys())
    dtype = np.result_type(eps.dtype, float)
    lifted = ShiftSpec(ref.grid, ref.complexity, ref.cancellative, in_spaces=(sp1, sp2), out_space=spY)
    for key in sorted(keys, key=lambda k: (k[0].level, k[0].corner, tuple((P.level, P.corner) for P in k[1]), k[2])):
        G = np.zeros((N, N, d1, N, N, d2, N, N, d3), dtype=dtype)
        for t, u, v in itertools.product(range(N), repeat=3):
            op = get(t, u, v).coeffs.get(key)
            if op is None:
                continue
            F = op.form_tensor()  # (d1, d2, d3)
            G[t, u, :, u, v, :, t, v, :] += eps[t, u, v] * F
        G = G.reshape(N * N * d1, N * N * d2, N * N * d3)
        lifted.add(key, MultilinearOperator.from_form(G, (sp1, sp2), spY), check=False)
    return lifted


def stack_rad2(fs_by_index, N, grid, space):
    """F(x) = (f_{ab}(x))_{a,b} as a grid function with Rad_2 values."""
    vals = np.stack([np.stack([fs_by_index[a][b].values for b in range(N)], axis=-2) for a in range(N)], axis=-3)
    # vals shape box + (N, N, dim)
    return GridFunction(grid, Rad2(N, space), vals.reshape(grid.box_shape + (N * N * space.dim,)))


# ---------------------------------------------------------------------------
# operator-norm lower bounds
# ---------------------------------------------------------------------------

@dataclass
class NormEstimate:
    value: float
    history: list = field(default_factory=list)
    witness: Optional[list] = None

    def __float__(self):
        return float(self.value)


def op_norm_estimate(spec: ShiftSpec, exponents, trials=20, seed=0):
    """Running-max lower bound for ||S : L^{p_1} x ... -> L^{q}||."""
    exponents = [float(p) for p in exponents]
    n = spec.n
    if len(exponents) != n + 1:
        raise ModelOpError("need exponents p_1..p_n and q")
    if abs(sum(1.0 / p for p in exponents[:n]) - 1.0 / exponents[n]) > 1e-9:
        raise ModelOpError("exponents must satisfy sum 1/p_m = 1/q")
    rng = np.random.default_rng(seed)
    best, hist, wit = 0.0, [], None

    def ratio(fs):
        den = np.prod([f.lp_norm(p) for f, p in zip(fs, exponents[:n])])
        if den == 0:
            return 0.0
        return apply_shift(spec, fs).lp_norm(exponents[n]) / den

    keys = [k for k, _ in spec.sorted_items()]
    for t in range(trials):
        if keys and t % 2 == 1:
            # Haar-atom inputs aligned with one key
            K, Ps, etas = keys[int(rng.integers(len(keys)))]
            fs = []
            for P, e, X in zip(Ps[:-1], etas[:-1], spec.in_spaces):
                f = GridFunction.zeros(spec.grid, X)
                f.values[spec.grid.slices(P)] = haar_pattern(P, e)[..., None] * X.random(rng)
                fs.append(f)
        else:
            fs = [GridFunction.random(spec.grid, X, rng) for X in spec.in_spaces]
        val = ratio(fs)
        if val > best:
            best, wit = val, fs
        hist.append(best)
    return NormEstimate(best, hist, wit)
