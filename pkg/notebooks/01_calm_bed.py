# %% [markdown]
# # A calm bed: from price paths to a Black-Scholes-Merton price
#
# We simulate geometric Brownian motion, turn each price column into a
# density by dividing by its cross-path mean, and let the strategy-weighted
# increments speak for themselves. The pricing route never sees the drift or
# the volatility used to generate the paths.

# %%
import math

import numpy as np

from densityprice import (
    TRADER,
    BUYER,
    empirical_cdf,
    estimate_limit_law,
    gen_gbm,
    hellinger_profile,
    lindeberg_curve,
    make_mesh,
    oracle_bsm,
    price_calm,
    to_densities,
)

mesh = make_mesh("uniform", 0.0, 1.0, 256)
ens = gen_gbm(100.0, 0.08, 0.2, mesh, 50_000, seed=7)
exp = to_densities(ens)
print("column means of p:", exp.p.mean(axis=0)[:4], "...")
print("a[t0, T] =", exp.a_factor, " vs e^0.08 =", math.exp(0.08))

# %% [markdown]
# Per-interval squared Hellinger distances are tiny and sum to about
# sigma^2 * T / 4. The Lindeberg sums shrink toward zero as eps grows.

# %%
prof = hellinger_profile(exp)
print("sum 2h^2 =", prof.sum_2h2, " (sigma^2 T / 4 = 0.01)")
eps = [0.2, 0.1, 0.05, 0.02, 0.01]
for e, v in zip(eps, lindeberg_curve(exp, eps)):
    print(f"eps={e:<5} lindeberg={v:.3e}")

# %% [markdown]
# The fitted limit law is normal with variance near 0.04 and mean near
# -0.02. Under the trader strategy Λ follows that law; under the buyer
# strategy it is mirrored.

# %%
law = estimate_limit_law(exp)
print("mu_interval =", law.mu_interval, " sigma2_interval =", law.sigma2_interval)
from scipy import stats
tr = empirical_cdf(exp, TRADER, n_draws=50_000, seed=1)
bu = empirical_cdf(exp, BUYER, n_draws=50_000, seed=2)
print("KS trader:", tr.ks_distance(stats.norm(law.mu_interval, law.sigma_interval).cdf))
print("KS buyer: ", bu.ks_distance(stats.norm(-law.mu_interval, law.sigma_interval).cdf))

# %% [markdown]
# After the risk-neutral translation the trader price is the BSM price, and
# the buyer lower bound sits above it.

# %%
for X in (80.0, 100.0, 120.0):
    q = price_calm(100.0, X, 0.05, 1.0, law.sigma2_interval, math.log(exp.a_factor))
    print(f"X={X:5.0f}  trader={q.price:8.4f}  bsm={oracle_bsm(100, X, 0.05, 0.2, 1):8.4f}"
          f"  buyer_lower_bound={q.fair_buyer_lower_bound:8.4f}")
