"""P(bad) against r for the default gamma and for gamma = 1/2."""
from dycalc.lattice import bad_probability, default_gamma

g0 = default_gamma(alpha=1.0, d=1, n=2)
print(" r   P_bad(gamma=%.4f)   P_bad(gamma=0.5)" % g0)
for r in range(1, 13):
    a = bad_probability(g0, r, trials=10_000, seed=0)
    b = bad_probability(0.5, r, trials=10_000, seed=0)
    print(f"{r:2d}   {a.value:.4f} +- {a.stderr:.4f}     {b.value:.4f} +- {b.stderr:.4f}")
