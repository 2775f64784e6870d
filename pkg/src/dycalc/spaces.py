"""Finite-dimensional normed spaces, contractions, Rademacher and RM norms.

Vectors are flat arrays of length ``space.dim`` (real or complex).  Every
space comes with a dual and a diagonal pairing  <x, y> = sum_o w_o x_o y_o
whose weights w are 1 except for Bochner spaces, where they carry the
measure mu.  For Schatten classes this is tr(A B^T), which obeys the same
Hoelder duality as tr(AB).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize

from ._util import Estimate

EXACT_RAD_LIMIT = 16
MC_SAMPLES = 20_000


def conj_exponent(p):
    if p == np.inf:
        return 1.0
    if p == 1:
        return np.inf
    return p / (p - 1.0)


class SpaceError(ValueError):
    pass


# ---------------------------------------------------------------------------
# spaces
# ---------------------------------------------------------------------------

class Space:
    dim: int = 1

    def norm(self, x):
        raise NotImplementedError

    def dual(self) -> "Space":
        raise NotImplementedError

    @property
    def weights(self):
        return np.ones(self.dim)

    @property
    def is_hilbert(self):
        return False

    def pair(self, x, y):
        """Bilinear duality pairing along the last axis."""
        return np.sum(self.weights * np.asarray(x) * np.asarray(y), axis=-1)

    def random(self, rng, size=(), complex=False):
        shape = tuple(np.atleast_1d(size)) if size != () else ()
        x = rng.standard_normal(shape + (self.dim,))
        if complex:
            x = x + 1j * rng.standard_normal(shape + (self.dim,))
        return x

    def to_dict(self):
        raise NotImplementedError

    def __eq__(self, other):
        return type(self) is type(other) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(repr(sorted(self.to_dict().items(), key=lambda kv: kv[0])))


class Scalar(Space):
    dim = 1

    def norm(self, x):
        return np.abs(np.asarray(x)[..., 0])

    def dual(self):
        return self

    @property
    def is_hilbert(self):
        return True

    def to_dict(self):
        return {"variant": "scalar"}

    def __repr__(self):
        return "Scalar()"


class SequenceLp(Space):
    def __init__(self, p, dim):
        if not p > 1:
            raise SpaceError("need p > 1")
        self.p = float(p)
        self.dim = int(dim)

    def norm(self, x):
        a = np.abs(np.asarray(x))
        if self.p == np.inf:
            return a.max(axis=-1)
        return np.sum(a ** self.p, axis=-1) ** (1.0 / self.p)

    def dual(self):
        return SequenceLp(conj_exponent(self.p), self.dim)

    @property
    def is_hilbert(self):
        return self.p == 2

    def to_dict(self):
        return {"variant": "lp", "p": self.p, "dim": self.dim}

    def __repr__(self):
        return f"SequenceLp(p={self.p:g}, dim={self.dim})"


class Schatten(Space):
    """S^p on n x n matrices, stored row-major."""

    def __init__(self, p, n):
        if not p > 1:
            raise SpaceError("need p > 1")
        self.p = float(p)
        self.n = int(n)
        self.dim = self.n * self.n

    def matrices(self, x):
        x = np.asarray(x)
        return x.reshape(x.shape[:-1] + (self.n, self.n))

    def norm(self, x):
        s = np.linalg.svd(self.matrices(x), compute_uv=False)
        if self.p == np.inf:
            return s.max(axis=-1)
        return np.sum(s ** self.p, axis=-1) ** (1.0 / self.p)

    def dual(self):
        return Schatten(conj_exponent(self.p), self.n)

    @property
    def is_hilbert(self):
        return self.p == 2

    def to_dict(self):
        return {"variant": "schatten", "p": self.p, "n": self.n}

    def __repr__(self):
        return f"Schatten(p={self.p:g}, n={self.n})"


class Bochner(Space):
    """L^p(Omega, mu; X) over a finite measure space Omega."""

    def __init__(self, p, weights, inner: Space = None):
        if not p > 1:
            raise SpaceError("need p > 1")
        self.p = float(p)
        self.mu = np.asarray(weights, dtype=float).ravel()
        if np.any(self.mu <= 0):
            raise SpaceError("Bochner weights must be positive")
        self.inner = inner if inner is not None else Scalar()
        self.dim = len(self.mu) * self.inner.dim

    def split(self, x):
        x = np.asarray(x)
        return x.reshape(x.shape[:-1] + (len(self.mu), self.inner.dim))

    def pointwise_norms(self, x):
        return self.inner.norm(self.split(x))

    def norm(self, x):
        v = self.pointwise_norms(x)
        return np.sum(self.mu * v ** self.p, axis=-1) ** (1.0 / self.p)

    def dual(self):
        return Bochner(conj_exponent(self.p), self.mu, self.inner.dual())

    @property
    def weights(self):
        return np.kron(self.mu, self.inner.weights)

    @property
    def is_hilbert(self):
        return self.p == 2 and self.inner.is_hilbert

    def to_dict(self):
        return {"variant": "bochner", "p": self.p, "weights": self.mu.tolist(),
                "inner": self.inner.to_dict()}

    def __repr__(self):
        return f"Bochner(p={self.p:g}, |Omega|={len(self.mu)}, inner={self.inner!r})"


class Rad2(Space):
    """Doubly indexed N x N arrays over X normed by the Rademacher mean."""

    def __init__(self, N, inner: Space = None):
        self.N = int(N)
        self.inner = inner if inner is not None else Scalar()
        self.dim = self.N * self.N * self.inner.dim

    def entries(self, x):
        x = np.asarray(x)
        return x.reshape(x.shape[:-1] + (self.N * self.N, self.inner.dim))

    def norm(self, x):
        e = self.entries(x)
        K = self.N * self.N
        if K <= EXACT_RAD_LIMIT:
            E = sign_patterns(K)
        else:
            E = np.random.default_rng(12345).choice([-1.0, 1.0], size=(MC_SAMPLES, K))
        sums = np.einsum("sk,...kd->...sd", E, e)
        return np.sqrt(np.mean(self.inner.norm(sums) ** 2, axis=-1))

    def dual(self):
        return Rad2(self.N, self.inner.dual())

    @property
    def weights(self):
        return np.tile(self.inner.weights, self.N * self.N)

    @property
    def is_hilbert(self):
        return self.inner.is_hilbert

    def to_dict(self):
        return {"variant": "rad2", "N": self.N, "inner": self.inner.to_dict()}

    def __repr__(self):
        return f"Rad2(N={self.N}, inner={self.inner!r})"


def space_from_dict(dd):
    if isinstance(dd, Space):
        return dd
    if not isinstance(dd, dict) or "variant" not in dd:
        raise SpaceError(f"bad space descriptor: {dd!r}")
    v = str(dd["variant"]).lower()
    if v == "scalar":
        return Scalar()
    if v in ("lp", "sequencelp", "ell_p"):
        return SequenceLp(dd["p"], dd["dim"])
    if v == "schatten":
        return Schatten(dd["p"], dd["n"])
    if v == "bochner":
        return Bochner(dd["p"], dd["weights"], space_from_dict(dd.get("inner", {"variant": "scalar"})))
    if v == "rad2":
        return Rad2(dd["N"], space_from_dict(dd.get("inner", {"variant": "scalar"})))
    raise SpaceError(f"unknown space variant {v!r}")


def lebesgue_exponent(space: Space):
    return getattr(space, "p", 2.0)


# ---------------------------------------------------------------------------
# Rademacher sums
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _patterns(K):
    if K == 0:
        return np.ones((1, 0))
    codes = np.arange(2 ** (K - 1), dtype=np.int64)
    bits = (codes[:, None] >> np.arange(K - 1)) & 1
    E = np.ones((len(codes), K))
    E[:, 1:] = 1 - 2 * bits
    return E


def sign_patterns(K):
    """All sign vectors with first sign +1 (norms are even, so this suffices)."""
    return _patterns(int(K))


def rad_moments(xs, space: Space = None, mode="exact", seed=0, samples=MC_SAMPLES):
    """Return arrays of |sum eps x| over the sign sample (for moment work)."""
    space = space or Scalar()
    xs = np.asarray(xs)
    if xs.ndim == 1:
        xs = xs[:, None]
    K = xs.shape[0]
    if mode == "exact":
        if K > EXACT_RAD_LIMIT:
            raise SpaceError(f"exact enumeration limited to K <= {EXACT_RAD_LIMIT}, got {K}")
        E = sign_patterns(K)
    else:
        rng = np.random.default_rng(seed)
        E = rng.choice([-1.0, 1.0], size=(samples, K))
    return space.norm(E @ xs)


def rad_norm(xs, space: Space = None, mode="auto", seed=0, samples=MC_SAMPLES, power=2):
    """Rademacher norm (E|sum eps_k x_k|^power)^{1/power}.

    mode: "exact" enumerates signs (K <= 16), "mc" samples, "auto" picks.
    """
    xs = np.asarray(xs)
    K = 0 if xs.size == 0 else (xs.shape[0] if xs.ndim > 1 else len(xs))
    if K == 0:
        return Estimate(0.0, 0.0, 0, True)
    if mode == "auto":
        mode = "exact" if K <= EXACT_RAD_LIMIT else "mc"
    v = rad_moments(xs, space, mode, seed, samples)
    m = np.mean(v ** power)
    val = float(m ** (1.0 / power))
    if mode == "exact":
        return Estimate(val, 0.0, len(v), True)
    se_m = np.std(v ** power, ddof=1) / math.sqrt(len(v)) if len(v) > 1 else 0.0
    se = float(se_m * m ** (1.0 / power - 1) / power) if m > 0 else 0.0
    return Estimate(val, se, len(v), False)


def rad_value(xs, space: Space = None):
    """Exact Rademacher norm as a float (helper for estimators)."""
    xs = np.asarray(xs)
    if xs.size == 0:
        return 0.0
    v = rad_moments(xs, space or Scalar(), "exact")
    return float(np.sqrt(np.mean(v ** 2)))


def contraction_check(xs, a, space: Space = None, tol=1e-12):
    """Kahane contraction with real |a_k| <= 1: Rad(a x) <= Rad(x)."""
    a = np.asarray(a, dtype=float)
    if np.any(np.abs(a) > 1 + 1e-15):
        raise SpaceError("coefficients must satisfy |a_k| <= 1")
    xs = np.asarray(xs)
    if xs.ndim == 1:
        xs = xs[:, None]
    lhs = rad_value(a[:, None] * xs, space)
    rhs = rad_value(xs, space)
    return lhs <= rhs + tol


def kk_holder_check(xs, space: Space = None, tol=1e-12):
    """First moment never exceeds the square mean (one-sided Kahane-Khintchine)."""
    v = rad_moments(xs, space or Scalar(), "exact")
    return float(np.mean(v)) <= float(np.sqrt(np.mean(v ** 2))) + tol


# ---------------------------------------------------------------------------
# contractions varpi
# ---------------------------------------------------------------------------

@dataclass
class Contraction:
    """An (n+1)-linear form with |varpi(e)| <= prod |e_m|.

    `kind` is "product" (scalars), "trace" (Schatten tuples),
    "integral" (Bochner/lp lift of a scalar product) or "tensor".
    """
    spaces: tuple
    kind: str
    evaluator: Callable = field(repr=False, default=None)
    weights: Optional[np.ndarray] = None
    exponents: Optional[tuple] = None
    tensor: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def arity(self):
        return len(self.spaces)

    def __call__(self, *es):
        """Evaluate on batches: each e_m has shape (..., dim_m)."""
        return self.evaluator([np.asarray(e) for e in es])

    def is_scalar_product(self):
        return self.kind == "product" and all(isinstance(s, Scalar) for s in self.spaces)

    def to_dict(self):
        out = {"kind": self.kind, "spaces": [s.to_dict() for s in self.spaces]}
        if self.exponents is not None:
            out["exponents"] = list(self.exponents)
        return out


def product_of_scalars(n_plus_1):
    def ev(es):
        out = es[0][..., 0]
        for e in es[1:]:
            out = out * e[..., 0]
        return out
    return Contraction(tuple(Scalar() for _ in range(n_plus_1)), "product", ev)


def trace_of_product(ps, side):
    """varpi(A_1..A_k) = tr(A_1 A_2 ... A_k) on Schatten classes, sum 1/p = 1."""
    ps = tuple(float(p) for p in ps)
    if abs(sum(1.0 / p for p in ps) - 1.0) > 1e-12:
        raise SpaceError("trace contraction needs sum 1/p_m = 1")
    spaces = tuple(Schatten(p, side) for p in ps)

    def ev(es):
        mats = [np.asarray(e).reshape(np.asarray(e).shape[:-1] + (side, side)) for e in es]
        prod = mats[0]
        for M in mats[1:]:
            prod = prod @ M
        return np.trace(prod, axis1=-2, axis2=-1)
    return Contraction(spaces, "trace", ev, exponents=ps)


def bochner_lift(ps, weights):
    """Integral lift of the scalar product to L^{p_m}(mu) (Hoelder, sum 1/p = 1)."""
    ps = tuple(float(p) for p in ps)
    if abs(sum(1.0 / p for p in ps) - 1.0) > 1e-12:
        raise SpaceError("integral contraction needs sum 1/p_m = 1")
    mu = np.asarray(weights, dtype=float)
    spaces = tuple(Bochner(p, mu, Scalar()) for p in ps)

    def ev(es):
        prod = es[0]
        for e in es[1:]:
            prod = prod * e
        return np.sum(mu * prod, axis=-1)
    return Contraction(spaces, "integral", ev, weights=mu, exponents=ps)


def hoelder_sequence(ps, dim):
    """Same lift for lp sequence spaces (counting measure)."""
    c = bochner_lift(ps, np.ones(dim))
    c.spaces = tuple(SequenceLp(p, dim) for p in ps)
    return c


def tensor_contraction(spaces, tensor):
    tensor = np.asarray(tensor)
    return Contraction(tuple(spaces), "tensor", lambda es: _contract_batched(tensor, es), tensor=tensor)


def _contract_batched(tensor, es):
    letters = "abcdefghijklmnop"
    n = tensor.ndim
    spec = letters[:n] + "," + ",".join("z" + letters[i] for i in range(n)) + "->z"
    es2 = [np.asarray(e).reshape(-1, np.asarray(e).shape[-1]) for e in es]
    out = np.einsum(spec, tensor, *es2)
    return out.reshape(np.asarray(es[0]).shape[:-1])


def contraction_from_dict(dd):
    kind = dd.get("kind", "product")
    if kind == "product":
        return product_of_scalars(int(dd["arity"]))
    if kind == "trace":
        return trace_of_product(dd["exponents"], int(dd["n"]))
    if kind == "integral":
        if "dim" in dd:
            return hoelder_sequence(dd["exponents"], int(dd["dim"]))
        return bochner_lift(dd["exponents"], dd["weights"])
    raise SpaceError(f"unknown contraction kind {kind!r}")


# ---------------------------------------------------------------------------
# RM norms
# ---------------------------------------------------------------------------

@dataclass
class BoundResult:
    """A supremum: exact value, or a certified lower bound with its witness."""
    value: float
    exact: bool
    witness: Optional[dict] = None
    evaluations: int = 0

    def __float__(self):
        return float(self.value)

    def to_dict(self):
        return {"value": float(self.value), "path": "exact" if self.exact else "estimator",
                "evaluations": int(self.evaluations)}


def _check_J(J, v, n1):
    J = tuple(sorted(int(j) for j in J))
    n = n1 - 1
    if not (1 <= len(J) <= max(n - 2, 0)):
        raise SpaceError(f"need 1 <= #J <= n-2 (n={n}), got J={J}")
    if v in J or not (1 <= v <= n1) or any(not (1 <= j <= n1) for j in J):
        raise SpaceError(f"invalid index v={v} for J={J}")
    return J


def _as_tuples(A, J, varpi):
    """Normalise A to a list of |J|-tuples of flat vectors."""
    out = []
    for tup in A:
        if np.isscalar(tup) or (isinstance(tup, np.ndarray) and tup.ndim == 0):
            tup = (tup,)
        vecs = []
        for j, e in zip(J, tup):
            e = np.atleast_1d(np.asarray(e))
            if e.shape[-1] != varpi.spaces[j - 1].dim:
                raise SpaceError("tuple entry has wrong dimension")
            vecs.append(e)
        if len(vecs) != len(J):
            raise SpaceError("tuple length differs from #J")
        out.append(tuple(vecs))
    return out


def rm_exact_available(varpi: Contraction, J, v):
    if varpi.is_scalar_product():
        return True
    if varpi.kind == "integral" and varpi.exponents is not None:
        rad = [i for i in range(1, varpi.arity + 1) if i not in J and i != v]
        return all(varpi.exponents[i - 1] >= 2 for i in rad)
    return False


def rm_closed_form(tuples, varpi: Contraction, J):
    """Closed-form RM norm for the scalar and integral-lift cases."""
    if len(tuples) == 0:
        return 0.0
    if varpi.is_scalar_product():
        vals = [np.prod([abs(complex(e[0])) for e in tup]) for tup in tuples]
        return float(max(vals))
    # integral lift: || sup_k prod_J |e_{j,k}(w)| ||_{L^{p(J)}(mu)}
    mu = varpi.weights
    pJ = 1.0 / sum(1.0 / varpi.exponents[j - 1] for j in J)
    M = np.zeros(len(mu))
    for tup in tuples:
        prod = np.ones(len(mu))
        for e in tup:
            prod = prod * np.abs(e)
        M = np.maximum(M, prod)
    return float(np.sum(mu * M ** pJ) ** (1.0 / pJ))


def _rm_ratio_factory(tuples, varpi, J, v):
    n1 = varpi.arity
    K = len(tuples)
    rad_slots = [i for i in range(1, n1 + 1) if i not in J and i != v]
    dims = {i: varpi.spaces[i - 1].dim for i in range(1, n1 + 1)}
    fixed = {j: np.stack([tup[t] for tup in tuples]) for t, j in enumerate(J)}
    sizes = [dims[v]] + [K * dims[i] for i in rad_slots]

    def unpack(x):
        parts = np.split(x, np.cumsum(sizes)[:-1])
        ev = parts[0]
        rads = {i: parts[t + 1].reshape(K, dims[i]) for t, i in enumerate(rad_slots)}
        return ev, rads

    def ratio(x):
        ev, rads = unpack(x)
        es = []
        for i in range(1, n1 + 1):
            if i == v:
                es.append(np.broadcast_to(ev, (K, dims[v])))
            elif i in fixed:
                es.append(fixed[i])
            else:
                es.append(rads[i])
        num = abs(np.sum(varpi(*es)))
        den = float(varpi.spaces[v - 1].norm(ev))
        for i in rad_slots:
            den *= rad_value(rads[i], varpi.spaces[i - 1])
        if den <= 1e-300:
            return 0.0
        return num / den
    return ratio, int(sum(sizes)), unpack


def _maximize(ratio, size, budget, seed, maxiter=200):
    """Multi-start L-BFGS on a scale-invariant ratio; returns (best, x)."""
    rng = np.random.default_rng(seed)
    best, best_x, evals = 0.0, None, 0
    for _ in range(max(1, budget)):
        x0 = rng.standard_normal(size)
        try:
            res = optimize.minimize(lambda x: -ratio(x), x0, method="L-BFGS-B",
                                    options={"maxiter": maxiter})
            x, val = res.x, -res.fun
            evals += res.nfev
        except (ValueError, FloatingPointError):
            x, val = x0, ratio(x0)
        val = ratio(x)  # re-evaluate: the returned value is what we certify
        evals += 1
        if val > best:
            best, best_x = val, x
    return best, best_x, evals


def rm_norm(A, varpi: Contraction, J, v, budget=8, seed=0, force_estimator=False):
    """RM_v(varpi, J) norm of a finite set A of |J|-tuples.

    Exact for scalar products and for integral lifts whose Rad slots have
    exponents >= 2; otherwise a lower bound found by multi-start
    optimisation over the unit-ball constraints.
    """
    J = _check_J(J, v, varpi.arity)
    tuples = _as_tuples(A, J, varpi)
    if len(tuples) == 0:
        return BoundResult(0.0, True)
    if not force_estimator and rm_exact_available(varpi, J, v):
        return BoundResult(rm_closed_form(tuples, varpi, J), True)
    ratio, size, unpack = _rm_ratio_factory(tuples, varpi, J, v)
    best, x, evals = _maximize(ratio, size, budget, seed)
    wit = None
    if x is not None:
        ev, rads = unpack(x)
        wit = {"e_v": ev, "rad": rads}
    return BoundResult(float(best), False, wit, evals)


def dedupe_tuples(A):
    out, seen = [], set()
    for tup in A:
        if np.isscalar(tup):
            tup = (tup,)
        key = tuple(tuple(np.atleast_1d(np.asarray(e)).ravel().tolist()) for e in tup)
        if key not in seen:
            seen.add(key)
            out.append(tup)
    return out


# ---------------------------------------------------------------------------
# R-bounds
# ---------------------------------------------------------------------------

def _op_parts(op):
    """(form tensor with slot axes 1..n, n+1 ; in spaces ; dual-out space)."""
    T = np.asarray(op.tensor)
    w = op.out_space.weights
    F = T * w.reshape((-1,) + (1,) * (T.ndim - 1))
    return np.moveaxis(F, 0, -1)


def form_value(G, es):
    """Evaluate slot-ordered form tensor G on vectors es (batched along axis 0)."""
    return _contract_batched(G, es)


def admissible_partitions(n, tight=True):
    """Yield (j_P, P_Rad, P_RM) with #P_RM <= n-2 (tight: #P_Rad = 2)."""
    slots = list(range(1, n + 2))
    out = []
    for jP in slots:
        rest = [s for s in slots if s != jP]
        for r in range(0, len(rest) + 1):
            for rad in itertools.combinations(rest, r):
                rm = tuple(s for s in rest if s not in rad)
                if len(rm) > max(n - 2, 0):
                    continue
                if tight and len(rad) != 2:
                    continue
                out.append((jP, tuple(rad), rm))
    return out


def _all_scalar(ops):
    return all(all(isinstance(s, Scalar) for s in op.in_spaces) and isinstance(op.out_space, Scalar)
               for op in ops)


def r_bound(family, varpi: Contraction = None, partition=None, budget=6, seed=0, K=3):
    """Lower bound for the R_varpi (n=2: plain R-) boundedness constant.

    partition=None takes the sup over all tight admissible partitions.
    Scalar families are exact: the constant is max |a|.
    """
    family = list(family)
    if not family:
        return BoundResult(0.0, True)
    n = family[0].arity
    if any(op.arity != n for op in family):
        raise SpaceError("operator arity mismatch in family")
    parts = [partition] if partition is not None else admissible_partitions(n)
    if _all_scalar(family):
        val = max(abs(complex(np.asarray(op.tensor).ravel()[0])) for op in family)
        return BoundResult(float(val), True, {"K": 1})
    best = BoundResult(0.0, False)
    forms = [_op_parts(op) for op in family]
    slot_spaces = list(family[0].in_spaces) + [family[0].out_space.dual()]
    if n >= 3 and varpi is None:
        raise SpaceError("n >= 3 needs a contraction varpi")
    rng = np.random.default_rng(seed)
    evals = 0
    for pi, (jP, rad, rm) in enumerate(parts):
        for trial in range(max(1, budget)):
            Kt = int(rng.integers(1, K + 1))
            choice = rng.integers(0, len(family), size=Kt)
            ratio, size, unpack = _rbound_ratio(forms, choice, slot_spaces, jP, rad, rm, varpi)
            val, x, ev = _maximize(ratio, size, 1, int(rng.integers(2 ** 31)), maxiter=150)
            evals += ev
            if val > best.value:
                best = BoundResult(float(val), False, {"partition": (jP, rad, rm), "choice": choice.tolist(),
                                                       "x": x}, 0)
    best.evaluations = evals
    return best


def _rbound_ratio(forms, choice, slot_spaces, jP, rad, rm, varpi):
    Kt = len(choice)
    n1 = len(slot_spaces)
    dims = [s.dim for s in slot_spaces]
    sizes = []
    for s in range(1, n1 + 1):
        sizes.append(dims[s - 1] if s == jP else Kt * dims[s - 1])

    def unpack(x):
        parts = np.split(x, np.cumsum(sizes)[:-1])
        es = []
        for s in range(1, n1 + 1):
            p = parts[s - 1]
            if s == jP:
                es.append(np.broadcast_to(p, (Kt, dims[s - 1])))
            else:
                es.append(p.reshape(Kt, dims[s - 1]))
        return es

    def ratio(x):
        es = unpack(x)
        num = 0.0
        for k, c in enumerate(choice):
            num = num + form_value(forms[c], [e[k:k + 1] for e in es])[0]
        num = abs(num)
        den = float(slot_spaces[jP - 1].norm(es[jP - 1][0]))
        for s in rad:
            den *= rad_value(es[s - 1], slot_spaces[s - 1])
        if rm:
            tuples = [tuple(es[j - 1][k] for j in rm) for k in range(Kt)]
            if varpi is not None and rm_exact_available(varpi, rm, jP):
                den *= rm_closed_form(tuples, varpi, rm)
            else:
                # upper bound for the RM factor keeps the ratio a valid lower bound
                for j in rm:
                    den *= rad_value(es[j - 1], slot_spaces[j - 1])
        if den <= 1e-300:
            return 0.0
        return num / den
    return ratio, int(sum(sizes)), unpack


def rhat_bound(family, budget=6, seed=0, N=2):
    """Lower bound for the R-hat constant of a bilinear family.

    Candidates include the embedded witnesses of the plain R-bound search
    run with the same budget and seed, so rhat_bound >= r_bound.
    """
    family = list(family)
    if not family:
        return BoundResult(0.0, True)
    if any(op.arity != 2 for op in family):
        raise SpaceError("R-hat bounds are defined for bilinear families")
    forms = [_op_parts(op) for op in family]
    spaces = list(family[0].in_spaces) + [family[0].out_space.dual()]
    base = r_bound(family, budget=budget, seed=seed)
    best = BoundResult(base.value, False, {"embedded_r_bound": True}, base.evaluations)
    rng = np.random.default_rng(seed + 7919)
    for trial in range(max(1, budget)):
        Nt = int(rng.integers(1, N + 1))
        choice = rng.integers(0, len(family), size=(Nt, Nt, Nt))
        ratio, size = _rhat_ratio(forms, choice, spaces, Nt)
        val, x, ev = _maximize(ratio, size, 1, int(rng.integers(2 ** 31)), maxiter=150)
        best.evaluations += ev
        if val > best.value:
            best = BoundResult(float(val), False, {"N": Nt, "choice": choice.tolist(), "x": x},
                               best.evaluations)
    return best


def _rhat_ratio(forms, choice, spaces, N):
    d1, d2, d3 = (s.dim for s in spaces)
    sizes = [N * N * d1, N * N * d2, N * N * d3]

    def ratio(x):
        a, b, c = np.split(x, np.cumsum(sizes)[:-1])
        e1 = a.reshape(N, N, d1)
        e2 = b.reshape(N, N, d2)
        e3 = c.reshape(N, N, d3)
        num = 0.0
        for t in range(N):
            for u in range(N):
                for v in range(N):
                    G = forms[choice[t, u, v]]
                    num += abs(form_value(G, [e1[t, u][None], e2[u, v][None], e3[t, v][None]])[0])
        den = (rad_value(e1.reshape(N * N, d1), spaces[0]) * rad_value(e2.reshape(N * N, d2), spaces[1])
               * rad_value(e3.reshape(N * N, d3), spaces[2]))
        if den <= 1e-300:
            return 0.0
        return num / den
    return ratio, int(sum(sizes))


def rhat_config_value(ops, e1, e2, e3):
    """Sum |<T_tuv[e1_tu, e2_uv], e3_tv>| for explicit arrays (N,N,dim)."""
    N = e1.shape[0]
    tot = 0.0
    for t in range(N):
        for u in range(N):
            for v in range(N):
                G = _op_parts(ops[t][u][v])
                tot += abs(form_value(G, [e1[t, u][None], e2[u, v][None], e3[t, v][None]])[0])
    return tot
