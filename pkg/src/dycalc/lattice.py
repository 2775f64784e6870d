"""Dyadic cubes on randomly shifted grids over a finite scale window.

All geometry is integer arithmetic in units of the finest side 2**l_min.
A cube of level L has side 2**L; its lower corner sits at

    offset(L) + 2**L * m,      offset(L) = sum_{l_min <= s < L} omega_s 2**s

so cubes of the finest level are never shifted.  Inside the bounding box
every level is a regular aligned pyramid, which is what the Haar module
relies on for its reshape-based transforms.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._util import Estimate


class LatticeError(ValueError):
    pass


class ScaleOverflow(LatticeError):
    pass


class NoChildren(LatticeError):
    pass


@dataclass(frozen=True)
class ScaleWindow:
    l_min: int
    l_max: int

    def __post_init__(self):
        if int(self.l_min) != self.l_min or int(self.l_max) != self.l_max:
            raise LatticeError("scale exponents must be integers")
        if self.l_min > self.l_max:
            raise LatticeError(f"empty window [{self.l_min}, {self.l_max}]")

    @property
    def levels(self):
        return list(range(self.l_min, self.l_max + 1))

    @property
    def depth(self):
        return self.l_max - self.l_min


@dataclass(frozen=True)
class RandomShiftOmega:
    """Per-scale shift bits; row s - l_min holds omega for cubes of side 2**s."""
    d: int
    l_min: int
    bits: tuple = ()

    @classmethod
    def zero(cls, window: ScaleWindow, d: int):
        return cls(d, window.l_min, tuple((0,) * d for _ in range(window.depth)))

    @classmethod
    def from_array(cls, arr, window: ScaleWindow):
        arr = np.asarray(arr, dtype=int)
        if arr.size == 0:
            arr = arr.reshape(0, 1)
        d = arr.shape[1]
        if arr.shape[0] != window.depth:
            raise LatticeError(f"omega needs {window.depth} rows, got {arr.shape[0]}")
        if np.any((arr != 0) & (arr != 1)):
            raise LatticeError("omega entries must be 0 or 1")
        return cls(d, window.l_min, tuple(tuple(int(b) for b in row) for row in arr))

    def array(self):
        return np.array(self.bits, dtype=np.int64).reshape(len(self.bits), self.d)

    def offset(self, level):
        """Shift of level-`level` cubes, in units of 2**l_min (integer vector)."""
        arr = self.array()
        k = level - self.l_min
        if k <= 0:
            return np.zeros(self.d, dtype=np.int64)
        w = 2 ** np.arange(k, dtype=np.int64)
        return (arr[:k] * w[:, None]).sum(axis=0)


@dataclass(frozen=True)
class Cube:
    """Half-open cube [corner, corner + side) in units of 2**base.

    Equality and hashing use (level, corner, base); the owning grid rides
    along for navigation only.
    """
    level: int
    corner: tuple
    base: int
    grid: "Grid" = field(default=None, compare=False, repr=False, hash=False)

    @property
    def d(self):
        return len(self.corner)

    @property
    def units(self):
        return 2 ** (self.level - self.base)

    @property
    def side(self):
        return 2.0 ** self.level

    @property
    def measure(self):
        return 2.0 ** (self.d * self.level)

    def lower(self):
        return np.array(self.corner, dtype=np.int64)

    def upper(self):
        return self.lower() + self.units

    def bounds(self):
        """Real-valued (lo, hi) arrays."""
        s = 2.0 ** self.base
        return self.lower() * s, self.upper() * s

    def center(self):
        lo, hi = self.bounds()
        return 0.5 * (lo + hi)

    def contains(self, other: "Cube"):
        return bool(np.all(other.lower() >= self.lower()) and np.all(other.upper() <= self.upper()))

    def intersects(self, other: "Cube"):
        return bool(np.all(other.lower() < self.upper()) and np.all(self.lower() < other.upper()))

    def parent(self, k=1):
        return self.grid.parent(self, k)

    def children(self):
        return self.grid.children(self)

    def __repr__(self):
        lo, hi = self.bounds()
        parts = ",".join(f"[{a:g},{b:g})" for a, b in zip(lo, hi))
        return f"Cube(L={self.level}, {parts})"


def cube_distance(Q: Cube, R: Cube):
    """Euclidean distance between two (closed) cubes, real units."""
    gap = np.maximum(0, np.maximum(Q.lower() - R.upper(), R.lower() - Q.upper()))
    return float(np.sqrt(np.sum(gap.astype(float) ** 2))) * 2.0 ** Q.base


def boundary_distance(Q: Cube, R: Cube):
    """d(Q, ∂R) for Q ⊂ R, in units of 2**base (integer)."""
    return int(min(np.min(Q.lower() - R.lower()), np.min(R.upper() - Q.upper())))


class Grid:
    """A finite piece of the shifted lattice D_omega.

    The bounding box is a block of `roots` level-l_max cubes per axis whose
    first root has lattice index `root_origin`.
    """

    def __init__(self, d: int, window: ScaleWindow, omega: Optional[RandomShiftOmega] = None,
                 roots=1, root_origin=0, seed=None):
        if d < 1:
            raise LatticeError("dimension must be >= 1")
        self.d = int(d)
        self.window = window
        if omega is None:
            omega = RandomShiftOmega.zero(window, d)
        if omega.d != d and window.depth > 0:
            raise LatticeError("omega dimension mismatch")
        if omega.l_min != window.l_min or len(omega.bits) != window.depth:
            raise LatticeError("omega does not match the window")
        self.omega = omega
        self.roots = tuple(int(r) for r in np.broadcast_to(np.asarray(roots), (d,)))
        if min(self.roots) < 1:
            raise LatticeError("need at least one root cube per axis")
        self.root_origin = tuple(int(r) for r in np.broadcast_to(np.asarray(root_origin), (d,)))
        self.seed = seed
        self._offsets = {L: self.omega.offset(L) for L in window.levels}
        S = 2 ** window.depth
        self.box_lower = self._offsets[window.l_max] + S * np.array(self.root_origin, dtype=np.int64)
        self.box_shape = tuple(r * S for r in self.roots)

    # basic data --------------------------------------------------------
    @property
    def l_min(self):
        return self.window.l_min

    @property
    def l_max(self):
        return self.window.l_max

    @property
    def levels(self):
        return self.window.levels

    @property
    def cell_measure(self):
        return 2.0 ** (self.d * self.l_min)

    @property
    def n_cells(self):
        return int(np.prod(self.box_shape))

    def key(self):
        return (self.d, self.l_min, self.l_max, self.omega.bits, self.roots, self.root_origin)

    def __eq__(self, other):
        return isinstance(other, Grid) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return (f"Grid(d={self.d}, window=[{self.l_min},{self.l_max}], roots={self.roots}, "
                f"omega={self.omega.array().tolist()})")

    def offset(self, level):
        return self._offsets[level]

    def shape_at(self, level):
        f = 2 ** (level - self.l_min)
        return tuple(s // f for s in self.box_shape)

    # cube construction -------------------------------------------------
    def cube(self, level, index):
        """Cube at `level` with box-relative multi-index `index`."""
        self._check_level(level)
        idx = np.asarray(index, dtype=np.int64).reshape(self.d)
        shp = self.shape_at(level)
        if np.any(idx < 0) or np.any(idx >= np.array(shp)):
            raise LatticeError(f"index {tuple(idx)} outside box at level {level}")
        corner = self.box_lower + idx * 2 ** (level - self.l_min)
        return Cube(level, tuple(int(c) for c in corner), self.l_min, self)

    def cube_from_lattice_index(self, level, m):
        """Cube with lower corner offset(L) + 2**L m (m the lattice index)."""
        self._check_level(level)
        corner = self._offsets[level] + np.asarray(m, dtype=np.int64) * 2 ** (level - self.l_min)
        Q = Cube(level, tuple(int(c) for c in corner), self.l_min, self)
        if not self.in_box(Q):
            raise LatticeError("cube outside the bounding box")
        return Q

    def lattice_index(self, Q: Cube):
        return tuple(int(v) for v in (Q.lower() - self._offsets[Q.level]) // Q.units)

    def index(self, Q: Cube):
        """Box-relative multi-index of Q at its level."""
        return tuple(int(v) for v in (Q.lower() - self.box_lower) // Q.units)

    def in_box(self, Q: Cube):
        rel = Q.lower() - self.box_lower
        if np.any(rel < 0) or np.any(rel + Q.units > np.array(self.box_shape)):
            return False
        return bool(np.all(rel % Q.units == 0)) and self.l_min <= Q.level <= self.l_max

    def slices(self, Q: Cube):
        """Slices of the finest-cell array covered by Q."""
        rel = Q.lower() - self.box_lower
        return tuple(slice(int(a), int(a) + Q.units) for a in rel)

    def cubes(self, level):
        shp = self.shape_at(level)
        return [self.cube(level, idx) for idx in itertools.product(*[range(s) for s in shp])]

    def all_cubes(self, coarse_first=True):
        lv = self.levels[::-1] if coarse_first else self.levels
        out = []
        for L in lv:
            out.extend(self.cubes(L))
        return out

    def root_cubes(self):
        return self.cubes(self.l_max)

    def cell_cube(self, cell_index):
        return self.cube(self.l_min, cell_index)

    def cells(self):
        return self.cubes(self.l_min)

    def cell_centers(self):
        """Array (box_shape..., d) of finest-cell centres, real units."""
        axes = [(self.box_lower[a] + np.arange(self.box_shape[a]) + 0.5) * 2.0 ** self.l_min
                for a in range(self.d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def _check_level(self, level):
        if not (self.l_min <= level <= self.l_max):
            raise ScaleOverflow(f"level {level} outside window [{self.l_min}, {self.l_max}]")

    # navigation --------------------------------------------------------
    def parent(self, Q: Cube, k=1):
        if k < 0:
            raise LatticeError("k must be nonnegative")
        if k == 0:
            return Q
        L = Q.level + k
        if L > self.l_max:
            raise ScaleOverflow(f"parent at level {L} exceeds l_max={self.l_max}")
        u = 2 ** (L - self.l_min)
        off = self._offsets[L]
        m = (Q.lower() - off) // u
        corner = off + m * u
        return Cube(L, tuple(int(c) for c in corner), self.l_min, self)

    def children(self, Q: Cube):
        if Q.level <= self.l_min:
            raise NoChildren(f"{Q!r} is at the finest scale")
        h = Q.units // 2
        lo = Q.lower()
        out = []
        for delta in itertools.product((0, 1), repeat=self.d):
            corner = lo + np.array(delta, dtype=np.int64) * h
            out.append(Cube(Q.level - 1, tuple(int(c) for c in corner), self.l_min, self))
        return out

    def descendants(self, Q: Cube, k):
        """Cubes R ⊂ Q with R^{(k)} = Q."""
        L = Q.level - k
        if L < self.l_min:
            raise ScaleOverflow("descendant level below l_min")
        u = 2 ** (L - self.l_min)
        n = 2 ** k
        lo = Q.lower()
        return [Cube(L, tuple(int(c) for c in lo + np.array(t, dtype=np.int64) * u), self.l_min, self)
                for t in itertools.product(range(n), repeat=self.d)]

    def ancestors(self, Q: Cube):
        return [self.parent(Q, k) for k in range(1, self.l_max - Q.level + 1)]

    def root_of(self, Q: Cube):
        return self.parent(Q, self.l_max - Q.level)

    def containing_cubes(self, cell_index):
        """Chain of cubes containing a finest cell, finest first."""
        c = self.cell_cube(cell_index)
        return [c] + self.ancestors(c)

    # goodness ------------------------------------------------------------
    def is_good(self, Q: Cube, gamma, r=2):
        if not (0 < gamma < 1):
            raise LatticeError("gamma must lie in (0,1)")
        for L in range(Q.level + r, self.l_max + 1):
            R = self.parent(Q, L - Q.level)
            dist = boundary_distance(Q, R)
            thresh = 2.0 ** (gamma * Q.level + (1 - gamma) * L - self.l_min)
            if not dist > thresh:
                return False
        return True

    # serialization -------------------------------------------------------
    def to_dict(self):
        out = {"d": self.d, "l_min": self.l_min, "l_max": self.l_max,
               "roots": list(self.roots) if len(set(self.roots)) > 1 else self.roots[0],
               "omega": self.omega.array().tolist(), "seed": self.seed}
        if any(self.root_origin):
            out["root_origin"] = list(self.root_origin)
        return out

    @classmethod
    def from_dict(cls, dd):
        for k in ("d", "l_min", "l_max"):
            if k not in dd:
                raise LatticeError(f"grid descriptor missing '{k}'")
        window = ScaleWindow(int(dd["l_min"]), int(dd["l_max"]))
        d = int(dd["d"])
        om = dd.get("omega")
        if om is None or (len(om) == 0 and window.depth == 0):
            omega = RandomShiftOmega.zero(window, d)
        else:
            omega = RandomShiftOmega.from_array(np.asarray(om).reshape(-1, d), window)
        return cls(d, window, omega, roots=dd.get("roots", 1),
                   root_origin=dd.get("root_origin", 0), seed=dd.get("seed"))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def with_omega(self, omega):
        return Grid(self.d, self.window, omega, self.roots, self.root_origin, self.seed)


# ---------------------------------------------------------------------------
# module-level API
# ---------------------------------------------------------------------------

def make_grid(d, window, omega=None, roots=1, root_origin=0, seed=None):
    if not isinstance(window, ScaleWindow):
        window = ScaleWindow(*window)
    if omega is not None and not isinstance(omega, RandomShiftOmega):
        omega = RandomShiftOmega.from_array(np.asarray(omega).reshape(window.depth, d), window)
    return Grid(d, window, omega, roots=roots, root_origin=root_origin, seed=seed)


def parent(Q: Cube, k=1):
    return Q.grid.parent(Q, k)


def children(Q: Cube):
    return Q.grid.children(Q)


def is_good(Q: Cube, grid: Grid, gamma, r=2):
    return grid.is_good(Q, gamma, r)


def sublattice(grid: Grid, j, k):
    """Cubes whose level L satisfies L = m(k+1) + j for some integer m."""
    if not (0 <= j <= k):
        raise LatticeError("need 0 <= j <= k")
    out = []
    for L in grid.levels[::-1]:
        if (L - j) % (k + 1) == 0:
            out.extend(grid.cubes(L))
    return out


def sublattice_levels(grid: Grid, j, k):
    return [L for L in grid.levels if (L - j) % (k + 1) == 0]


def common_parent(Q: Cube, R: Sequence[Cube] = ()):
    """Smallest in-window cube containing Q and every cube of R (or None)."""
    grid = Q.grid
    cubes = [Q] + list(R)
    lo = min(c.level for c in cubes)
    for L in range(max(c.level for c in cubes), grid.l_max + 1):
        K = grid.parent(Q, L - Q.level)
        if all(K.contains(c) for c in cubes):
            return K
    return None


def default_gamma(alpha, d, n):
    return alpha / (2.0 * (d * n + alpha))


def sample_shift(seed, window: ScaleWindow, d):
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(window.depth, d))
    return RandomShiftOmega.from_array(bits, window)


def _bad_flags(bits, gamma, r, l_min, level, d):
    """Vectorised badness of the cube [0, 2**level)^d under many omegas.

    bits: (T, depth, d) integer array.  Returns boolean (T,) array.
    """
    T, depth, _ = bits.shape
    k0 = level - l_min
    bad = np.zeros(T, dtype=bool)
    side_q = 2 ** k0
    # cumulative offsets: off[t, j] for level l_min + j
    w = 2 ** np.arange(depth, dtype=np.int64)
    for j in range(k0 + r, depth + 1):
        # only the bits at levels >= level(Q) move Q relative to its ancestors
        off = (bits[:, k0:j, :] * w[None, k0:j, None]).sum(axis=1)
        u = 2 ** j
        # lower corner of the ancestor containing the point 0
        low = off - u * ((off + u - 1) // u)
        pos = -low  # position of Q's corner inside the ancestor
        dist = np.minimum(pos, u - pos - side_q).min(axis=1)
        thresh = 2.0 ** (gamma * level + (1 - gamma) * (l_min + j) - l_min)
        bad |= ~(dist > thresh)
    return bad


def bad_probability(gamma, r, trials=10_000, seed=0, d=1, window=None, level=None, mode="mc"):
    """Probability that a level-`level` cube of a random grid is (gamma, r)-bad.

    Only the shift bits at levels >= level matter, so we place the cube
    at [0, 2**level)^d and randomise the ancestors.

    mode="mc" draws `trials` shifts; mode="enumerate" averages over all of
    them (returns stderr 0).  The same draws serve every r, so estimates
    are monotone in r for a fixed seed.
    """
    if trials < 1:
        raise LatticeError("trials must be >= 1")
    if window is None:
        window = ScaleWindow(0, 12)
    if level is None:
        level = window.l_min
    depth = window.depth
    if depth == 0:
        # no ancestors inside the window: goodness is vacuous
        return Estimate(0.0, 0.0, 1, True)
    if mode == "enumerate":
        nbits = depth * d
        if nbits > 20:
            raise LatticeError("too many omega bits to enumerate")
        codes = np.arange(2 ** nbits, dtype=np.int64)
        bits = ((codes[:, None] >> np.arange(nbits)) & 1).reshape(-1, depth, d)
        flags = _bad_flags(bits, gamma, r, window.l_min, level, d)
        return Estimate(float(flags.mean()), 0.0, len(flags), True)
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(trials, depth, d))
    flags = _bad_flags(bits, gamma, r, window.l_min, level, d)
    p = float(flags.mean())
    se = math.sqrt(max(p * (1 - p), 0.0) / trials)
    return Estimate(p, se, trials, False)


def good_probability_by_level(grid: Grid, gamma, r):
    """Exact P(cube of level L is good) under uniform omega, per level."""
    out = {}
    for L in grid.levels:
        est = bad_probability(gamma, r, window=grid.window, d=grid.d, level=L, mode="enumerate")
        out[L] = 1.0 - est.value
    return out
