"""Haar system, averages, martingale differences and the fast Haar transform.

Grid functions are step functions at the finest scale of a grid's
bounding box.  Values live in an array of shape ``box_shape + (dim,)``;
axis a of the box is the coordinate x_{a+1}.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .lattice import Cube, Grid, LatticeError, NoChildren
from .spaces import Scalar, Space, space_from_dict


class HaarError(ValueError):
    pass


class GridFunction:
    def __init__(self, grid: Grid, space: Space = None, values=None, metadata=None):
        self.grid = grid
        self.space = space if space is not None else Scalar()
        shp = grid.box_shape + (self.space.dim,)
        if values is None:
            values = np.zeros(shp)
        values = np.asarray(values)
        if values.shape == grid.box_shape and self.space.dim == 1:
            values = values[..., None]
        if values.shape != shp:
            raise HaarError(f"values have shape {values.shape}, expected {shp}")
        self.values = values
        self.metadata = dict(metadata or {})

    # construction helpers ------------------------------------------------
    @classmethod
    def zeros(cls, grid, space=None, dtype=float):
        space = space or Scalar()
        return cls(grid, space, np.zeros(grid.box_shape + (space.dim,), dtype=dtype))

    @classmethod
    def random(cls, grid, space=None, rng=None, complex=False):
        rng = rng if rng is not None else np.random.default_rng()
        space = space or Scalar()
        return cls(grid, space, space.random(rng, grid.box_shape, complex=complex))

    @classmethod
    def indicator(cls, grid, Q: Cube, value=1.0, space=None):
        f = cls.zeros(grid, space, dtype=np.result_type(float, np.asarray(value).dtype))
        f.values[grid.slices(Q)] = value
        return f

    @classmethod
    def from_callable(cls, grid, func, space=None):
        """Sample func(x) at finest-cell centres; x has shape (..., d)."""
        space = space or Scalar()
        vals = np.asarray(func(grid.cell_centers()))
        return cls(grid, space, vals.reshape(grid.box_shape + (space.dim,)))

    def copy(self):
        return GridFunction(self.grid, self.space, self.values.copy(), self.metadata)

    def like(self, values):
        return GridFunction(self.grid, self.space, values)

    # arithmetic ------------------------------------------------------------
    def _check(self, other):
        if other.grid != self.grid:
            raise HaarError("grid mismatch")

    def __add__(self, other):
        self._check(other)
        return self.like(self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return self.like(self.values - other.values)

    def __mul__(self, c):
        return self.like(self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self.like(-self.values)

    # norms and integrals ---------------------------------------------------
    def pointwise_norm(self):
        return self.space.norm(self.values)

    def integral(self):
        return self.grid.cell_measure * self.values.reshape(-1, self.space.dim).sum(axis=0)

    def lp_norm(self, p):
        a = self.pointwise_norm()
        if p == np.inf:
            return float(a.max())
        return float((self.grid.cell_measure * np.sum(a ** p)) ** (1.0 / p))

    def abs(self):
        return GridFunction(self.grid, Scalar(), self.pointwise_norm()[..., None])

    def support_mask(self):
        return np.any(self.values != 0, axis=-1)

    def transfer(self, grid: Grid):
        """Same step function viewed on another grid's box (zero outside)."""
        if grid.l_min != self.grid.l_min or grid.d != self.grid.d:
            raise HaarError("grids must share the finest scale")
        out = np.zeros(grid.box_shape + (self.space.dim,), dtype=self.values.dtype)
        lo = np.maximum(grid.box_lower, self.grid.box_lower)
        hi = np.minimum(grid.box_lower + grid.box_shape, self.grid.box_lower + self.grid.box_shape)
        if np.all(hi > lo):
            dst = tuple(slice(int(a - b), int(c - b)) for a, b, c in zip(lo, grid.box_lower, hi))
            src = tuple(slice(int(a - b), int(c - b)) for a, b, c in zip(lo, self.grid.box_lower, hi))
            out[dst] = self.values[src]
        return GridFunction(grid, self.space, out, self.metadata)

    def __repr__(self):
        return f"GridFunction(space={self.space!r}, box={self.grid.box_shape})"


@dataclass(frozen=True)
class HaarIndex:
    cube: Cube
    eta: tuple

    @property
    def cancellative(self):
        return any(self.eta)


def signatures(d, include_zero=False):
    sigs = list(itertools.product((0, 1), repeat=d))
    return sigs if include_zero else sigs[1:]


def _eta_tuple(eta, d):
    if np.isscalar(eta):
        if eta == 0:
            eta = (0,) * d
        elif d == 1:
            eta = (int(eta),)
        else:
            raise HaarError("give the signature as a tuple when d > 1")
    eta = tuple(int(e) for e in eta)
    if len(eta) != d or any(e not in (0, 1) for e in eta):
        raise HaarError(f"bad signature {eta}")
    return eta


def child_signs(eta):
    """Signs of h^eta on the 2^d children, ordered like itertools.product((0,1))."""
    d = len(eta)
    out = []
    for delta in itertools.product((0, 1), repeat=d):
        s = 1.0
        for e, dl in zip(eta, delta):
            if e and dl:
                s = -s
        out.append(s)
    return np.array(out)


def haar_pattern(Q: Cube, eta):
    """Values of h_Q^eta on the finest cells of Q (shape (units,)*d)."""
    d = Q.d
    eta = _eta_tuple(eta, d)
    u = Q.units
    if any(eta) and u < 2:
        raise HaarError("cancellative Haar function needs a cube above the finest scale")
    amp = Q.measure ** -0.5
    pat = np.full((u,) * d, amp)
    for a, e in enumerate(eta):
        if e:
            s = np.ones(u)
            s[u // 2:] = -1.0
            shape = [1] * d
            shape[a] = u
            pat = pat * s.reshape(shape)
    return pat


def haar(Q: Cube, eta, grid: Grid = None):
    grid = grid or Q.grid
    f = GridFunction.zeros(grid)
    f.values[grid.slices(Q)] = haar_pattern(Q, eta)[..., None]
    return f


def pair(f: GridFunction, g: GridFunction):
    """Integral of f times the scalar function g (vector in f's space)."""
    if f.grid != g.grid:
        raise HaarError("grid mismatch")
    if g.space.dim != 1:
        raise HaarError("second argument must be scalar")
    return f.grid.cell_measure * np.tensordot(g.values[..., 0], f.values, axes=f.grid.d)


def pair_haar(f: GridFunction, Q: Cube, eta):
    """<f, h_Q^eta> using only the cells of Q."""
    sl = f.grid.slices(Q)
    pat = haar_pattern(Q, eta)
    return f.grid.cell_measure * np.tensordot(pat, f.values[sl], axes=f.grid.d)


def average(f: GridFunction, Q: Cube):
    sl = f.grid.slices(Q)
    block = f.values[sl]
    return block.reshape(-1, f.space.dim).mean(axis=0)


def expectation(f: GridFunction, Q: Cube):
    out = GridFunction.zeros(f.grid, f.space, dtype=f.values.dtype)
    out.values[f.grid.slices(Q)] = average(f, Q)
    return out


def martingale_diff(f: GridFunction, Q: Cube):
    if Q.level <= f.grid.l_min:
        raise HaarError("martingale difference needs a cube above the finest scale")
    out = GridFunction.zeros(f.grid, f.space, dtype=f.values.dtype)
    a = average(f, Q)
    for C in f.grid.children(Q):
        out.values[f.grid.slices(C)] = average(f, C) - a
    return out


def block_avg(f: GridFunction, Q: Cube, k):
    """E_Q^k f = sum over R with R^{(k)} = Q of E_R f."""
    if Q.level - k < f.grid.l_min:
        raise HaarError("block below the finest scale")
    out = GridFunction.zeros(f.grid, f.space, dtype=f.values.dtype)
    for R in f.grid.descendants(Q, k):
        out.values[f.grid.slices(R)] = average(f, R)
    return out


def block_diff(f: GridFunction, Q: Cube, k):
    """Delta_Q^k f = sum over R with R^{(k)} = Q of Delta_R f."""
    if Q.level - k - 1 < f.grid.l_min:
        raise HaarError("block below the finest scale")
    return block_avg(f, Q, k + 1) - block_avg(f, Q, k)


# ---------------------------------------------------------------------------
# fast transform
# ---------------------------------------------------------------------------

def _coarsen(arr, d):
    """Average 2^d blocks: (s0, .., s_{d-1}, D) -> (s0/2, .., D)."""
    shp = arr.shape
    new = []
    for a in range(d):
        new += [shp[a] // 2, 2]
    x = arr.reshape(new + [shp[-1]])
    return x.mean(axis=tuple(2 * a + 1 for a in range(d)))


def _children_view(arr, d):
    """(s0, .., D) -> (s0/2, .., 2, .., 2, D) with child offsets as trailing axes."""
    shp = arr.shape
    new = []
    for a in range(d):
        new += [shp[a] // 2, 2]
    x = arr.reshape(new + [shp[-1]])
    perm = [2 * a for a in range(d)] + [2 * a + 1 for a in range(d)] + [2 * d]
    return x.transpose(perm)


def pyramid(f: GridFunction):
    """Averages over all cubes, per level: dict level -> array shape_at(L)+(dim,)."""
    g = f.grid
    out = {g.l_min: f.values}
    cur = f.values
    for L in range(g.l_min + 1, g.l_max + 1):
        cur = _coarsen(cur, g.d)
        out[L] = cur
    return out


@dataclass
class Expansion:
    """Haar coefficients per level plus root averages.

    coeffs[L] has shape shape_at(L) + (2^d - 1, dim); the signature axis
    follows ``signatures(d)``.
    """
    grid: Grid
    space: Space
    coeffs: dict
    root_averages: np.ndarray

    def coefficient(self, Q: Cube, eta):
        eta = _eta_tuple(eta, self.grid.d)
        k = signatures(self.grid.d).index(eta)
        return self.coeffs[Q.level][self.grid.index(Q)][k]

    def items(self):
        g = self.grid
        sigs = signatures(g.d)
        for L in range(g.l_max, g.l_min, -1):
            arr = self.coeffs[L]
            for idx in itertools.product(*[range(s) for s in g.shape_at(L)]):
                Q = g.cube(L, idx)
                for k, eta in enumerate(sigs):
                    yield HaarIndex(Q, eta), arr[idx][k]

    def nonzero(self, tol=0.0):
        return [(h, c) for h, c in self.items() if np.max(np.abs(c)) > tol]


def expand(f: GridFunction):
    g = f.grid
    d = g.d
    pyr = pyramid(f)
    sigs = signatures(d)
    S = np.stack([child_signs(e) for e in sigs])  # (nsig, 2^d)
    coeffs = {}
    for L in range(g.l_min + 1, g.l_max + 1):
        ch = _children_view(pyr[L - 1], d)
        ch = ch.reshape(ch.shape[:d] + (2 ** d, ch.shape[-1]))
        # <f, h> = |Q|^{1/2} 2^{-d} sum_delta sign(delta) <f>_child
        c = np.einsum("ek,...kD->...eD", S, ch) * (2.0 ** (d * L)) ** 0.5 / 2 ** d
        coeffs[L] = c
    return Expansion(g, f.space, coeffs, pyr[g.l_max])


def reconstruct(exp: Expansion):
    g = exp.grid
    d = g.d
    sigs = signatures(d)
    S = np.stack([child_signs(e) for e in sigs])
    cur = exp.root_averages
    for L in range(g.l_max, g.l_min, -1):
        amp = (2.0 ** (d * L)) ** -0.5
        add = np.einsum("ek,...eD->...kD", S, exp.coeffs[L]) * amp
        child = cur[..., None, :] + add  # (shape_L..., 2^d, D)
        shp = cur.shape[:d]
        child = child.reshape(shp + (2,) * d + (cur.shape[-1],))
        perm = []
        for a in range(d):
            perm += [a, d + a]
        perm.append(2 * d)
        child = child.transpose(perm)
        cur = child.reshape(tuple(2 * s for s in shp) + (cur.shape[-1],))
    return GridFunction(g, exp.space, cur)


def haar_basis(grid: Grid):
    """All in-window Haar functions: cancellative ones and the root h^0's."""
    out = []
    for Q in grid.root_cubes():
        out.append(HaarIndex(Q, (0,) * grid.d))
    for L in range(grid.l_max, grid.l_min, -1):
        for Q in grid.cubes(L):
            for eta in signatures(grid.d):
                out.append(HaarIndex(Q, eta))
    return out


def gram_matrix(grid: Grid):
    B = haar_basis(grid)
    M = np.stack([haar(h.cube, h.eta, grid).values[..., 0].ravel() for h in B])
    return grid.cell_measure * M @ M.T


# ---------------------------------------------------------------------------
# file format: one JSON header line, then data
# ---------------------------------------------------------------------------

def write_gridfunction(path, f: GridFunction, metadata=None, encoding="binary"):
    vals = np.ascontiguousarray(f.values)
    is_c = np.iscomplexobj(vals)
    header = {"grid": f.grid.to_dict(), "space": f.space.to_dict(), "shape": list(vals.shape),
              "dtype": "complex128" if is_c else "float64", "encoding": encoding,
              "metadata": metadata if metadata is not None else f.metadata}
    if encoding == "json":
        flat = vals.ravel()
        header["data"] = ([[float(z.real), float(z.imag)] for z in flat] if is_c
                          else [float(x) for x in flat])
        with open(path, "w") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
        return
    if encoding != "binary":
        raise HaarError(f"unknown encoding {encoding!r}")
    data = vals.astype("<c16" if is_c else "<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(data)


def read_gridfunction(path):
    with open(path, "rb") as fh:
        head = fh.readline()
        rest = fh.read()
    header = json.loads(head.decode())
    grid = Grid.from_dict(header["grid"])
    space = space_from_dict(header["space"])
    shape = tuple(header["shape"])
    is_c = header.get("dtype") == "complex128"
    if header.get("encoding") == "json":
        data = np.asarray(header["data"], dtype=float)
        vals = (data[:, 0] + 1j * data[:, 1]) if is_c else data
    else:
        vals = np.frombuffer(rest, dtype="<c16" if is_c else "<f8")
    return GridFunction(grid, space, vals.reshape(shape).copy(), header.get("metadata"))
