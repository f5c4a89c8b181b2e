"""
Kernels as iterated maps
========================

A kernel is a pure map ``x' = apply(x, record)`` plus a declared
innovation layout. Two examples: random-walk Metropolis on a truncated
Gaussian and the two-block Gibbs sweep of the hierarchical model.
"""

# %%
# Metropolis-Hastings on a compact target
# ---------------------------------------
import numpy as np

from mlmcmc.hier_model import HierGaussModel, HierModelConfig, simulate_data
from mlmcmc.kernels import SyntheticMHModel, iterate
from mlmcmc.rng import Purpose, derive_stream

synth = SyntheticMHModel(rate_beta_prime=1.0)
kern = synth.kernel(4)
print("layout:", kern.layout)
traj, cost = iterate(kern, np.zeros(1), 100_000, derive_stream(0, Purpose.LEVEL0))
moved = np.mean(np.diff(traj[:, 0]) != 0)
grid, dens = synth.density_grid(4)
target_var = np.trapezoid(grid**2 * dens, grid)
print(f"mean {traj.mean():+.4f}, var {traj.var():.4f} (truncated target var {target_var:.4f})")
print(f"acceptance {moved:.2f}, scalar draws {cost}")

# %%
# The same record gives the same move
# -----------------------------------
rec = kern.draw(derive_stream(0, Purpose.ORACLE))
print("pure map:", kern.apply(np.array([0.3]), rec), kern.apply(np.array([0.3]), rec))

# %%
# Gibbs sweep of the hierarchical model
# -------------------------------------
# State is ``[delta, u_1, ..., u_K]``; the sweep updates u given delta and
# then delta given u. Level l has K_l = 8 * 2**l coordinates.
y = simulate_data(1.0, 8 * 2**4, derive_stream(1, Purpose.DATA))
model = HierGaussModel(HierModelConfig(max_level=4, y=y))
g = model.kernel(2)
print("Gibbs layout:", g.layout)
vals, cost = iterate(g, model.initial_state(2), 20_000, derive_stream(1, Purpose.LEVEL0), record=model.phi)
print(f"ergodic mean of phi {vals.mean():+.6f}, quadrature {model.posterior_oracle(2):+.6f}")
print("draws per sweep:", cost // 20_000, "= K_2 + 1")
