"""Decompose a random bilinear CZ form into shifts and paraproducts, then average over shifted grids."""
import numpy as np

from dycalc.haar import GridFunction
from dycalc.lattice import ScaleWindow, make_grid
from dycalc.represent import SIOForm, average_over_omega, decompose, random_cz_kernel

grid = make_grid(1, ScaleWindow(-3, 0))
T = SIOForm(random_cz_kernel(n=2, d=1, seed=1), grid)
res = decompose(T, r=2)
rng = np.random.default_rng(0)
fs = [GridFunction.random(grid, rng=rng) for _ in range(3)]

parts = res.evaluate(fs)
for name, val in parts.items():
    print(f"{name:>12s}  {val: .6e}")
rel, direct, _ = res.residual(fs)
print(f"direct form {direct:.6e}, relative residual {rel:.1e}, {len(res.groups)} shift groups")

# random-grid average on five scales; with gamma = 1/2 and r = 3 every Haar level has good cubes
grid5 = make_grid(1, ScaleWindow(-4, 0))
T5 = SIOForm(T.kernel, grid5)
fs5 = [GridFunction.random(grid5, rng=rng) for _ in range(3)]
av = average_over_omega(T5, fs5, gamma=0.5, r=3)
print(f"omega average {av.value:.6e} vs direct {av.direct:.6e} over {av.omegas} grids")
print("P_good by level:", {L: round(p, 4) for L, p in av.p_good.items()})
