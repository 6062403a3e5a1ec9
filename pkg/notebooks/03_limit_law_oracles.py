# %% [markdown]
# # Limit laws and their oracles
#
# A hand-built law with one jump atom lets us check the closed-form mixture
# price against two independent routes: adaptive quadrature of the same
# payoff decomposition, and plain Monte Carlo.

# %%
import math

import numpy as np

from densityprice import (
    Atom,
    LimitLaw,
    mgf_lambda,
    oracle_quadrature_price,
    poisson_component_law,
    price_noncalm,
    translation_spec,
)
from densityprice.limit_law import risk_neutral_expectation
from densityprice.pricing import mc_price

y, rate, sigma2_interval = -0.15, 0.5, 0.04
s2 = sigma2_interval / 4
law = LimitLaw(-(s2 + rate * y * y) / 2, s2, (Atom.from_intensity(y, rate),),
               (Atom.from_intensity(y, rate * (1 + y) ** 2),))

# %% [markdown]
# The compound-Poisson component is tabulated exactly up to a tail budget.
# Its log-mgf matches the jump term of the limit log-mgf.

# %%
cp = poisson_component_law(law.atoms_t0, 1e-12)
for s in (0.25, 0.5, 0.75):
    jump_term = mgf_lambda(law, s) - mgf_lambda(LimitLaw(law.mu, law.sigma2), s)
    print(f"s={s}: table {math.log(cp.mgf(s)):.12f}  formula {jump_term:.12f}")

# %% [markdown]
# The risk-neutral translation is a deterministic shift. Afterwards the
# expected growth of the stock is exactly e^{r dt}.

# %%
tr = translation_spec(law, 0.05, 1.0, log_a=0.08)
print("E*[S_T/S_t0] =", risk_neutral_expectation(law, tr), " e^r =", math.exp(0.05))

# %%
for X in (80.0, 100.0, 120.0):
    p = price_noncalm(100.0, X, 0.05, 1.0, law, 0.08).price
    q = oracle_quadrature_price(law, tr, 100.0, X, 0.05, 1.0)
    mc, se = mc_price(law, tr, 100.0, X, 0.05, 1.0, n_draws=1_000_000, seed=1)
    print(f"X={X:5.0f}  formula={p:.8f}  quadrature={q:.8f}  mc={mc:.4f} +/- {se:.4f}")
