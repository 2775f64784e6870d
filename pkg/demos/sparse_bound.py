"""Compare a bilinear shift form with its sparse bound on heavy-tailed inputs."""
import numpy as np

from dycalc.cli import random_bilinear_shift
from dycalc.haar import GridFunction
from dycalc.lattice import ScaleWindow, make_grid
from dycalc.model_ops import normalized_coeffs, shift_form
from dycalc.spaces import r_bound
from dycalc.sparse import build_stopping, sparse_form, stopping_sparsity_holds

grid = make_grid(1, ScaleWindow(-6, 0))
Q0 = grid.root_cubes()[0]
rng = np.random.default_rng(3)
S = random_bilinear_shift(rng, grid, (1, 0, 1), (1, 3))
fs = []
for _ in range(3):
    f = GridFunction.zeros(grid)
    f.values[...] = rng.pareto(1.5, size=f.values.shape)
    fs.append(f)

stop = build_stopping(fs, Q0)
R = r_bound(list(normalized_coeffs(S).values())).value
lhs = abs(shift_form(S, fs[:2], fs[2]))
rhs = (1 + max(S.complexity)) * R * sparse_form(stop.collection, fs)
print(f"{len(stop.collection)} stopping cubes, half sparse: {stopping_sparsity_holds(stop)}")
print(f"|<S(f1,f2), g>| = {lhs:.4e}   sparse bound = {rhs:.4e}   ratio = {lhs / rhs:.3f}")
