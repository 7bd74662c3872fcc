# %% [markdown]
# # A nonlinear elliptic problem: the p-Laplacian
#
# Finite differences on the unit square with homogeneous Dirichlet data.
# The energy ``(1/p) sum_k ||D_k v||_p^p - <f, v>`` is minimised by the
# progressive solver and compared with a Newton solve on all unknowns.

# %%
import numpy as np

from progpgd import (
    PLaplacianSpec,
    SolverConfig,
    a_posteriori_bound,
    dense_minimize,
    make_p_laplacian,
    pgd_solve,
    uniform_grid_space,
)
from progpgd.tensor_core import as_array

space = uniform_grid_space((8, 8))
f = 10 * np.random.default_rng(0).uniform(-1, 1, space.dims)
J = make_p_laplacian(PLaplacianSpec.uniform_grid(space, 3.0, f), space)
oracle = dense_minimize(J)

snaps = []
_, rep = pgd_solve(J, "ccl*", SolverConfig(max_rank=20),
                   callback=lambda m, u, rec: snaps.append(as_array(u)))

# %% [markdown]
# The gap ``J(u_m) - J*`` bounds the error in the energy norm.

# %%
for rec, U in zip(rep.records, snaps):
    gap = max(rec.J_value - oracle.J, 0.0)
    err = J.norm(U - oracle.u.array)
    print(f"m={rec.m:2d} {rec.symbol}  gap={gap:.3e}  error={err:.3e}  "
          f"bound={a_posteriori_bound(gap, J.s, J.alpha):.3e}")
