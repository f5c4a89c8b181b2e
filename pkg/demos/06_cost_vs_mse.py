"""
Cost against mean square error
==============================

Fifty replicates per tolerance for the multilevel estimator and for
single-level MCMC at the same finest level. The slope of log cost against
log MSE is shallower for the multilevel estimator.
"""

# %%
import numpy as np

from mlmcmc.diagnostics import mse_cost_sweep
from mlmcmc.hier_model import HierGaussModel, HierModelConfig, simulate_data
from mlmcmc.rng import Purpose, derive_stream

y = simulate_data(1.0, 8 * 2**8, derive_stream(1, Purpose.DATA))
model = HierGaussModel(HierModelConfig(y=y))

rep = mse_cost_sweep(model, [0.04, 0.02, 0.01, 0.005], replicates=50, master_seed=1)
print("   eps     L    ML mse     ML cost    SL mse     SL cost")
for i, e in enumerate(rep.epsilons):
    L = rep.allocations[i]["L"]
    print(f"{e:7.3f}  {L:2d}  {rep.ml_mse[i]:.3e}  {rep.ml_cost[i]:8.0f}  {rep.sl_mse[i]:.3e}  {rep.sl_cost[i]:8.0f}")
print(f"slopes: ML {rep.ml_slope:.3f}, single level {rep.sl_slope:.3f}")
print(f"cost ratio at the smallest eps: {rep.sl_cost[-1] / rep.ml_cost[-1]:.2f}")
