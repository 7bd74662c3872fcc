# %% [markdown]
# # Greedy rank-one corrections reproduce the SVD
#
# For the quadratic functional ``J(v) = 1/2 ||v||^2 - <X, v>`` on matrices,
# each greedy rank-one correction is the dominant singular triple of the
# current residual. The norms of the corrections are therefore the singular
# values of ``X``.

# %%
import numpy as np

from progpgd import SolverConfig, TensorSpace, identity_operator, make_quadratic, pgd_solve
from progpgd.tensor_core import as_array

rng = np.random.default_rng(0)
X = rng.uniform(-1, 1, (20, 30))
space = TensorSpace(X.shape)
J = make_quadratic(identity_operator(space, X), space)

u, report = pgd_solve(J, "c*", SolverConfig(max_rank=10))

# %%
sigma_pgd = np.array([r.sigma for r in report.records])
sigma_svd = np.linalg.svd(X, compute_uv=False)[:10]
for m, (a, b) in enumerate(zip(sigma_pgd, sigma_svd), 1):
    print(f"m={m:2d}  pgd {a:.10f}  svd {b:.10f}")

# %% [markdown]
# The error of the rank-``m`` iterate follows from the corrections alone:
# ``||X - u_m||^2 = ||X||^2 - sum_k sigma_k^2``.

# %%
err = np.linalg.norm(X - as_array(u)) ** 2
print("squared error", err, "predicted", np.sum(X**2) - np.sum(sigma_pgd**2))
