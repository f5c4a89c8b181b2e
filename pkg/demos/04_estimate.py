"""
A multilevel estimate
=====================

Pick a target accuracy, let :func:`allocate` choose the finest level and
the per-level sample sizes, then compare the telescoping estimate with
the quadrature answer and with plain MCMC at the finest level.
"""

# %%
from mlmcmc import HierGaussModel, HierModelConfig, Rates, allocate, ml_estimate, single_level_estimate
from mlmcmc.hier_model import simulate_data
from mlmcmc.rng import Purpose, derive_stream

y = simulate_data(1.0, 8 * 2**8, derive_stream(1, Purpose.DATA))
model = HierGaussModel(HierModelConfig(y=y))
hs = [model.h(l) for l in range(9)]

# %%
# Allocation
# ----------
for eps in (0.01, 0.002):
    a = allocate(eps, Rates(beta=4, rho=2, gamma=1), hs)
    print(f"eps={eps}: L={a.L}, N={list(a.samples)}")

# %%
# Estimate against the oracle
# ---------------------------
a = allocate(0.002, Rates(), hs)
est = ml_estimate(model, a, master_seed=1)
oracle = model.posterior_oracle(a.L)
print(f"multilevel   {est.value:+.6f} +/- {est.se:.1e}   cost {est.total_cost}")
for l, (m, c) in enumerate(zip(est.per_level_means, est.per_level_costs)):
    print(f"   level {l}: {m:+.3e}  ({c} draws)")
print(f"quadrature   {oracle:+.6f}")

sl = single_level_estimate(model, a.L, a.samples[0], master_seed=1)
print(f"single level {sl.value:+.6f} +/- {sl.se:.1e}   cost {sl.total_cost}")
