"""Multilinear and classic Rademacher maximal functions on grid data."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from ._util import derive_seed
from .haar import GridFunction, average
from .lattice import Grid
from .spaces import (Contraction, Scalar, SpaceError, _check_J, product_of_scalars, rad_norm,
                     rm_closed_form, rm_exact_available, rm_norm)


class RMFError(ValueError):
    pass


@dataclass
class RMConfig:
    varpi: Contraction
    J: tuple
    v: int
    exponents: tuple = None
    budget: int = 8
    seed: int = 0

    def __post_init__(self):
        try:
            self.J = _check_J(self.J, self.v, self.varpi.arity)
        except SpaceError as exc:
            raise RMFError(str(exc)) from exc
        if self.exponents is not None:
            self.exponents = tuple(float(p) for p in self.exponents)
            if len(self.exponents) != len(self.J):
                raise RMFError("one exponent per index in J")

    @property
    def exact(self):
        return rm_exact_available(self.varpi, self.J, self.v)

    @property
    def target_exponent(self):
        return 1.0 / sum(1.0 / p for p in self.exponents)


def _averages(fs, Q):
    return tuple(average(f, Q) for f in fs)


def rm_of_cubes(fs, cubes, varpi, J, v, budget=8, seed=0):
    """RM norm of {(<f_j>_Q)_j : Q in cubes}; returns (value, exact)."""
    J = _check_J(J, v, varpi.arity)
    tuples = [_averages(fs, Q) for Q in cubes]
    if not tuples:
        return 0.0, True
    res = rm_norm(tuples, varpi, J, v, budget=budget, seed=seed)
    return float(res.value), bool(res.exact)


def rm_maximal_family(fs, family, varpi, J, v, budget=8, seed=0):
    """Pointwise RM over the cubes of `family` containing each finest cell.

    Scalar products use a running maximum down the tree (each cube's value
    computed once).  Other contractions evaluate the set attached to every
    cell, exactly where a closed form exists and by the estimator otherwise.
    """
    J = _check_J(J, v, varpi.arity)
    fs = list(fs)
    if len(fs) != len(J):
        raise RMFError("need one function per index in J")
    for f, j in zip(fs, J):
        if f.space.dim != varpi.spaces[j - 1].dim:
            raise RMFError(f"function for slot {j} has the wrong space")
    grid = fs[0].grid
    fam = sorted(set(family), key=lambda Q: (-Q.level, Q.corner))
    out = np.zeros(grid.box_shape)
    if varpi.is_scalar_product():
        for Q in fam:
            val = float(np.prod([abs(complex(a[0])) for a in _averages(fs, Q)]))
            sl = grid.slices(Q)
            out[sl] = np.maximum(out[sl], val)
        return out, True
    # per-cube tuples cached once, sets assembled per cell
    cache = {Q: _averages(fs, Q) for Q in fam}
    exact_all = True
    owners = [[] for _ in range(int(np.prod(grid.box_shape)))]
    flat_idx = np.arange(int(np.prod(grid.box_shape))).reshape(grid.box_shape)
    for Q in fam:
        for i in flat_idx[grid.slices(Q)].ravel():
            owners[i].append(Q)
    memo = {}
    exact_path = rm_exact_available(varpi, J, v)
    for i, cubes in enumerate(owners):
        if not cubes:
            continue
        key = tuple(cubes)
        if key not in memo:
            tuples = [cache[Q] for Q in cubes]
            if exact_path:
                memo[key] = rm_closed_form(tuples, varpi, J)
            else:
                res = rm_norm(tuples, varpi, J, v, budget=budget, seed=derive_seed(seed, i))
                memo[key] = res.value
                exact_all = False
        out.flat[i] = memo[key]
    return out, exact_all and exact_path


def rm_maximal(fs, cfg: RMConfig, grid: Grid = None, family=None):
    fs = list(fs)
    grid = grid or fs[0].grid
    fam = grid.all_cubes() if family is None else family
    vals, exact = rm_maximal_family(fs, fam, cfg.varpi, cfg.J, cfg.v, cfg.budget, cfg.seed)
    meta = {"path": "exact" if exact else "estimator", "budget": cfg.budget}
    return GridFunction(grid, Scalar(), vals[..., None], meta)


def _rm_classic_set(vecs, space, power, budget, seed):
    """sup over unit-l2 lambda of (E|sum eps lambda a|^power)^(1/power)."""
    vecs = [np.atleast_1d(np.asarray(a)) for a in vecs]
    norms = [float(space.norm(a)) for a in vecs]
    best = max(norms) if norms else 0.0
    if space.is_hilbert or len(vecs) <= 1:
        # Hilbert: E|sum|^2 = sum |lambda|^2 |a|^2, so the single best vector wins
        return best, True
    A = np.stack(vecs)
    K = len(vecs)
    mode = "exact" if K <= 16 else "mc"

    def neg(lam):
        nl = np.linalg.norm(lam)
        if nl == 0:
            return 0.0
        xs = (lam / nl)[:, None] * A
        return -rad_norm(xs, space, mode=mode, seed=seed, power=power).value

    rng = np.random.default_rng(seed)
    for _ in range(max(1, budget)):
        res = optimize.minimize(neg, rng.standard_normal(K), method="L-BFGS-B", options={"maxiter": 100})
        best = max(best, -neg(res.x))
    return best, False


def classic_mr(f: GridFunction, grid: Grid = None, power=1, family=None, budget=4, seed=0):
    """Pointwise M_R f(x) = ||{<f>_Q : x in Q}||_RM (power 1 by default)."""
    if power not in (1, 2):
        raise RMFError("power must be 1 or 2")
    grid = grid or f.grid
    fam = sorted(set(grid.all_cubes() if family is None else family), key=lambda Q: (-Q.level, Q.corner))
    out = np.zeros(grid.box_shape)
    exact = True
    if f.space.is_hilbert:
        for Q in fam:
            sl = grid.slices(Q)
            out[sl] = np.maximum(out[sl], float(f.space.norm(average(f, Q))))
    else:
        flat = np.arange(out.size).reshape(grid.box_shape)
        owners = [[] for _ in range(out.size)]
        for Q in fam:
            for i in flat[grid.slices(Q)].ravel():
                owners[i].append(Q)
        memo = {}
        for i, cubes in enumerate(owners):
            if not cubes:
                continue
            key = tuple(cubes)
            if key not in memo:
                memo[key], ex = _rm_classic_set([average(f, Q) for Q in cubes], f.space, power,
                                                budget, derive_seed(seed, i))
                exact = exact and ex
            out.flat[i] = memo[key]
    return GridFunction(grid, Scalar(), out[..., None], {"path": "exact" if exact else "estimator",
                                                        "power": power})


@dataclass
class LpEstimate:
    value: float
    history: list
    witness: list


def rmf_lp_estimate(cfg: RMConfig, grid: Grid, trials=20, seed=0, exponents=None):
    """Running-max lower bound of ||RM||_{prod L^{p_j} -> L^{p(J)}}."""
    ps = tuple(float(p) for p in (exponents if exponents is not None else cfg.exponents))
    if ps is None or len(ps) != len(cfg.J):
        raise RMFError("exponent mismatch")
    p = 1.0 / sum(1.0 / q for q in ps)
    rng = np.random.default_rng(seed)
    spaces = [cfg.varpi.spaces[j - 1] for j in cfg.J]
    cubes = grid.all_cubes()
    best, hist, wit = 0.0, [], None
    for t in range(trials):
        if t % 2 == 0:
            fs = [GridFunction.random(grid, X, rng) for X in spaces]
        else:
            fs = []
            for X in spaces:
                Q = cubes[int(rng.integers(len(cubes)))]
                fs.append(GridFunction.indicator(grid, Q, X.random(rng) if X.dim > 1 else 1.0, X))
        den = np.prod([f.lp_norm(q) for f, q in zip(fs, ps)])
        if den > 0:
            M = rm_maximal(fs, cfg, grid)
            r = M.lp_norm(p) / den
            if r > best:
                best, wit = float(r), fs
        hist.append(best)
    return LpEstimate(best, hist, wit)


def rm_ratio(fs, cfg: RMConfig, exponents):
    ps = tuple(float(q) for q in exponents)
    p = 1.0 / sum(1.0 / q for q in ps)
    M = rm_maximal(fs, cfg)
    return M.lp_norm(p) / np.prod([f.lp_norm(q) for f, q in zip(fs, ps)])


def weak_type_constant(fs, cfg: RMConfig):
    """sup_lambda lambda^(1/l) |{RM > lambda}| / prod ||f_j||_1^(1/l)."""
    ell = len(cfg.J)
    M = rm_maximal(fs, cfg).values[..., 0]
    grid = fs[0].grid
    norm1 = np.prod([f.lp_norm(1) for f in fs])
    if norm1 == 0:
        return 0.0
    vals = np.unique(M[M > 0])
    best = 0.0
    for lam in vals:
        # just below each attained value the level set is largest
        meas = grid.cell_measure * np.count_nonzero(M >= lam)
        best = max(best, lam ** (1.0 / ell) * meas / norm1 ** (1.0 / ell))
    return float(best)


def rmf_table(n, grid: Grid, exponent=None, trials=6, seed=0, varpi=None):
    """Estimates for every admissible (J, v) configuration at linearity n (n >= 3)."""
    varpi = varpi or product_of_scalars(n + 1)
    rows = []
    for size in range(1, n - 1):
        for J in itertools.combinations(range(1, n + 2), size):
            for v in range(1, n + 2):
                if v in J:
                    continue
                ps = tuple([exponent or 2.0 * len(J)] * len(J))
                cfg = RMConfig(varpi, J, v, ps, seed=seed)
                est = rmf_lp_estimate(cfg, grid, trials, derive_seed(seed, J, v))
                rows.append({"J": list(J), "v": v, "estimate": est.value, "exact_path": cfg.exact})
    return rows
