# %% [markdown]
# # A crash bed: calmness diagnostics and the non-calm price
#
# Paths now carry Poisson crashes of -40%. Refining the mesh no longer
# drives the Lindeberg sums to zero, and the fitted law grows jump atoms.

# %%
import math

from densityprice import (
    DiagnosticsConfig,
    diagnose,
    estimate_limit_law,
    gen_gbm,
    gen_jump_diffusion,
    make_mesh,
    price_calm,
    price_noncalm,
)

mesh = make_mesh("uniform", 0.0, 1.0, 256)
jump = gen_jump_diffusion(100.0, 0.08, 0.2, 1.0, [(math.log(0.6), 1.0)], mesh, 30_000, seed=11)
calm = gen_gbm(100.0, 0.08, 0.2, mesh, 30_000, seed=11)

# %% [markdown]
# The calm proxy compares each Lindeberg sum with the one on a 4x coarser
# subsample of the same paths. For GBM the sums drop sharply; for the crash
# bed they stay put.

# %%
for name, ens in (("gbm", calm), ("jump", jump)):
    rep = diagnose(ens, DiagnosticsConfig())
    print(name, "fine  :", [f"{v:.2e}" for v in rep.lindeberg_Y])
    print(name, "coarse:", [f"{v:.2e}" for v in rep.lindeberg_Y_coarse])
    print(name, "calm per eps:", rep.verdicts["calm_per_eps"])

# %% [markdown]
# The estimated law puts its mass near y = sqrt(0.6) - 1, with total rate
# about 1 under the trader strategy. The diffusion smears the crash over
# neighbouring histogram bins, so it may show up as a few close atoms. Under
# the buyer strategy the rate drops to about 0.6, because buyer weights
# already include the crash. Double crashes in one interval give the small
# atoms further out.

# %%
from densityprice import to_densities
exp = to_densities(jump)
law = estimate_limit_law(exp)
crash_y = math.sqrt(0.6) - 1
for side, atoms in (("trader", law.atoms_t0), ("buyer", law.atoms_T)):
    for a in sorted(atoms, key=lambda a: a.y):
        print(f"{side:6} atom y={a.y:+.4f} rate={a.intensity:.4f}")
    near = sum(a.intensity for a in atoms if abs(a.y - crash_y) < 0.05)
    print(f"{side:6} total rate near the crash: {near:.3f}")

# %% [markdown]
# Forcing the normal formula onto this bed ignores the crash risk. The
# mixture price keeps it.

# %%
log_a = math.log(exp.a_factor)
for X in (80.0, 100.0, 120.0):
    nc = price_noncalm(100.0, X, 0.05, 1.0, law, log_a)
    c = price_calm(100.0, X, 0.05, 1.0, law.sigma2_interval, log_a)
    print(f"X={X:5.0f}  non-calm={nc.price:8.4f}  forced calm={c.price:8.4f}")
