# %% [markdown]
# # Obstacle problem by penalisation
#
# The constraint ``v >= g`` is replaced by ``(1/eps) * 1/2 ||max(0, g - v)||^2``.
# As ``eps`` shrinks the rank-8 approximation violates the obstacle less.

# %%
from progpgd import SolverConfig, pgd_solve
from progpgd.problems import build_problem

params = {"type": "penalized", "dims": [12, 12], "operator": "laplacian",
          "rhs": {"kind": "constant", "value": -8},
          "obstacle": {"kind": "sine_bump", "amplitude": 0.3, "offset": -0.1}}

for eps in (1e-1, 1e-2, 1e-3):
    J = build_problem(params, epsilon=eps).J
    u, rep = pgd_solve(J, "ccl*", SolverConfig(max_rank=8))
    print(f"eps={eps:g}  J={rep.final_J:.6f}  violation={J.violation(u):.4e}")
