"""Small shared helpers: estimates, deterministic seeding, JSON-safe conversion."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np


@dataclass
class Estimate:
    """A number that may carry Monte-Carlo error (stderr 0 means exact)."""
    value: float
    stderr: float = 0.0
    n: int = 0
    exact: bool = False

    def __float__(self):
        return float(self.value)

    def to_dict(self):
        return {"value": float(self.value), "stderr": float(self.stderr), "n": int(self.n),
                "exact": bool(self.exact)}


def derive_seed(*parts):
    """Stable 63-bit seed from arbitrary printable parts."""
    h = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


def rng_for(*parts):
    return np.random.default_rng(derive_seed(*parts))


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    return obj
