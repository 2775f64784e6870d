"""Sparse collections, stopping times, sparse forms and the CZ decomposition."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .haar import GridFunction, average
from .lattice import Cube, Grid


class SparseError(ValueError):
    pass


def _units(Q: Cube):
    """|Q| in finest-cell units (exact integer)."""
    return Q.units ** Q.d


def _cube_key(Q: Cube):
    return (Q.level, Q.corner)


@dataclass
class SparseCollection:
    grid: Grid
    cubes: list
    eta: float = 0.5
    witnesses: Optional[dict] = None
    children: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.cubes)

    def __iter__(self):
        return iter(self.cubes)

    def __contains__(self, Q):
        return Q in set(self.cubes)

    def to_dict(self):
        return {
            "eta": self.eta,
            "cubes": [{"level": Q.level, "corner": list(Q.corner)} for Q in sorted(self.cubes, key=_cube_key)],
        }


def _abs_avg(f: GridFunction, Q: Cube):
    block = f.pointwise_norm()[f.grid.slices(Q)]
    return float(block.mean())


def _subcubes(grid: Grid, S: Cube):
    """Strict dyadic subcubes of S, coarse to fine."""
    out = []
    for k in range(1, S.level - grid.l_min + 1):
        out.extend(grid.descendants(S, k))
    return out


def _maximal_selection(grid, S, pred):
    """Maximal strict subcubes of S satisfying pred, scanning coarse-to-fine."""
    chosen = []
    covered = np.zeros(grid.box_shape, dtype=bool)
    for Q in _subcubes(grid, S):
        sl = grid.slices(Q)
        if covered[sl].any():
            continue
        if pred(Q):
            chosen.append(Q)
            covered[sl] = True
    return chosen


@dataclass
class StoppingResult:
    collection: SparseCollection
    blocks: dict          # S -> list of GridFunction f_{m,S}
    threshold: float

    def stopping_children(self, S):
        return self.collection.children.get(S, [])


def build_stopping(fs: Sequence[GridFunction], Q0: Cube, threshold=None):
    """Stopping cubes for max_m <|f_m|>_Q / <|f_m|>_S > 2n, with the blocks f_{m,S}.

    If some slot has zero average over S the recursion stops there: S gets
    no stopping children (0/0 never triggers the condition).
    """
    n = len(fs)
    grid = fs[0].grid
    thr = 2.0 * n if threshold is None else float(threshold)
    for f in fs:
        outside = np.ones(grid.box_shape, dtype=bool)
        outside[grid.slices(Q0)] = False
        if np.any(f.values[outside] != 0):
            raise SparseError("functions must be supported in Q0")
    norms = [f.pointwise_norm() for f in fs]

    def avg(m, Q):
        return float(norms[m][grid.slices(Q)].mean())

    collection, children, blocks = [], {}, {}
    stack = [Q0]
    while stack:
        S = stack.pop()
        collection.append(S)
        base = [avg(m, S) for m in range(n)]

        def stops(Q):
            return any(avg(m, Q) > thr * b for m, b in enumerate(base))

        ch = _maximal_selection(grid, S, stops) if all(b > 0 for b in base) else []
        children[S] = ch
        stack.extend(reversed(ch))
        blk = []
        for f in fs:
            g = GridFunction.zeros(grid, f.space, dtype=f.values.dtype)
            sl = grid.slices(S)
            g.values[sl] = f.values[sl]
            for C in ch:
                g.values[grid.slices(C)] = average(f, C)
            blk.append(g)
        blocks[S] = blk
    coll = SparseCollection(grid, collection, 0.5, None, children)
    return StoppingResult(coll, blocks, thr)


def stopping_sparsity_holds(result: StoppingResult):
    """sum of |S'| over stopping children <= |S| / 2, in exact integers."""
    for S, ch in result.collection.children.items():
        if 2 * sum(_units(C) for C in ch) > _units(S):
            return False
    return True


def pi_S(result: StoppingResult, Q: Cube):
    """Minimal stopping cube containing Q."""
    best = None
    for S in result.collection.cubes:
        if S.contains(Q) and (best is None or S.level < best.level):
            best = S
    return best


def verify_sparse(S, eta, grid: Grid = None):
    """Greedy witnesses E_Q = Q minus finer members; checks |E_Q| >= eta |Q|."""
    cubes = list(S.cubes if isinstance(S, SparseCollection) else S)
    uniq = sorted(set(cubes), key=_cube_key)
    if not uniq:
        return True, {}
    grid = grid or uniq[0].grid
    witnesses, ok = {}, True
    for Q in uniq:
        mask = np.zeros(grid.box_shape, dtype=bool)
        mask[grid.slices(Q)] = True
        for R in uniq:
            if R != Q and Q.contains(R):
                mask[grid.slices(R)] = False
        witnesses[Q] = mask
        if mask.sum() < eta * _units(Q):
            ok = False
    return ok, witnesses


def sparse_form(S, fs: Sequence[GridFunction]):
    """sum over Q in S of |Q| prod_m <|f_m|>_Q."""
    cubes = S.cubes if isinstance(S, SparseCollection) else S
    total = 0.0
    for Q in sorted(set(cubes), key=_cube_key):
        total += Q.measure * float(np.prod([_abs_avg(f, Q) for f in fs]))
    return total


def sparse_form_rows(S, fs):
    """(cube, measure, product of averages) rows for reports."""
    cubes = S.cubes if isinstance(S, SparseCollection) else S
    rows = []
    for Q in sorted(set(cubes), key=_cube_key):
        rows.append((Q, Q.measure, float(np.prod([_abs_avg(f, Q) for f in fs]))))
    return rows


@dataclass
class CZDecomposition:
    good: GridFunction
    bad: GridFunction
    cubes: list
    threshold: float


def cz_decompose(f: GridFunction, lam, ell=1):
    """f = g + b at threshold lam^(1/ell) over maximal cubes with <|f|>_Q above it."""
    if lam <= 0:
        raise SparseError("lambda must be positive")
    t = float(lam) ** (1.0 / ell)
    grid = f.grid
    norms = f.pointwise_norm()
    chosen = []
    covered = np.zeros(grid.box_shape, dtype=bool)
    for Q in grid.all_cubes(coarse_first=True):
        sl = grid.slices(Q)
        if covered[sl].any():
            continue
        if float(norms[sl].mean()) > t:
            chosen.append(Q)
            covered[sl] = True
    g = f.copy()
    b = GridFunction.zeros(grid, f.space, dtype=f.values.dtype)
    for Q in chosen:
        sl = grid.slices(Q)
        a = average(f, Q)
        b.values[sl] = f.values[sl] - a
        g.values[sl] = a
    return CZDecomposition(g, b, chosen, t)


# ---------------------------------------------------------------------------
# sparse domination of the RM maximal function
# ---------------------------------------------------------------------------

@dataclass
class RMSparseResult:
    collection: SparseCollection
    holds: bool
    margin: float
    exact: bool


def sparse_dominate_rmf(fs, family, B, varpi, J, v, Q0: Cube = None, budget=4, seed=0):
    """Iterated stopping on RM^Q > 2^l B prod <|f_j|>_{top}, with a pointwise check.

    fs are the J-indexed functions (one per j in J, in increasing order).
    """
    from .rmf import rm_of_cubes
    if B <= 0:
        raise SparseError("B must be positive")
    fs = list(fs)
    grid = fs[0].grid
    ell = len(fs)
    fam = list(family)
    if Q0 is None:
        if fam:
            Q0 = max(fam, key=lambda Q: Q.level)
            for Q in fam:
                if not Q0.contains(Q):
                    raise SparseError("family has no top cube")
        else:
            Q0 = grid.root_cubes()[0]
    fac = 2.0 ** ell * B
    exact_all = True

    def prod_abs(Q):
        return float(np.prod([_abs_avg(f, Q) for f in fs]))

    def rm_above(Q, top):
        nonlocal exact_all
        sub = [C for C in fam if top.contains(C) and C.contains(Q)]
        val, exact = rm_of_cubes(fs, sub, varpi, J, v, budget, seed)
        exact_all = exact_all and exact
        return val

    collection, children = [], {}
    stack = [Q0]
    while stack:
        T = stack.pop()
        collection.append(T)
        bound = fac * prod_abs(T)
        ch = _maximal_selection(grid, T, lambda Q: rm_above(Q, T) > bound)
        children[T] = ch
        stack.extend(reversed(ch))
    coll = SparseCollection(grid, collection, 0.5, None, children)

    # pointwise comparison at every finest cell
    from .rmf import rm_maximal_family
    lhs, _ = rm_maximal_family(fs, fam, varpi, J, v, budget, seed)
    rhs = np.zeros(grid.box_shape)
    for S in collection:
        rhs[grid.slices(S)] += fac * prod_abs(S)
    margin = float(np.min(rhs - lhs)) if lhs.size else 0.0
    return RMSparseResult(coll, bool(np.all(lhs <= rhs * (1 + 1e-12) + 1e-300)), margin, exact_all)
