"""
Measuring the rates
===================

Regress the coupled-increment variance and the bias on log h_l, then
probe the contraction and map-closeness conditions the theory leans on.
Takes about 20 seconds.
"""

# %%
from mlmcmc.diagnostics import check_assumptions, check_coupling_decay, estimate_rates
from mlmcmc.hier_model import HierGaussModel, HierModelConfig, simulate_data
from mlmcmc.kernels import SyntheticMHModel
from mlmcmc.rng import Purpose, derive_stream

y = simulate_data(1.0, 8 * 2**8, derive_stream(1, Purpose.DATA))
model = HierGaussModel(HierModelConfig(y=y))

# %%
# Variance and bias rates
# -----------------------
rep = estimate_rates(model, range(1, 7), 10_000, master_seed=1)
print(" l        h        var      |bias|")
for row in rep.rows():
    print("%2d  %.5f  %.3e  %.3e" % (row[0], row[1], row[2], row[4]))
print(f"variance slope {rep.slope_variance:.2f} (R2 {rep.r2_variance:.3f})")
print(f"bias slope     {rep.slope_bias:.2f} (R2 {rep.r2_bias:.3f})")
print(f"reference at level {rep.reference_level}: {rep.reference_value:+.6f} +/- {rep.reference_se:.1e}, "
      f"oracle {rep.oracle_value:+.6f}")

# %%
# Assumption probes
# -----------------
# tau_hat is a randomized lower bound on the contraction constant.
probe = check_assumptions(model, range(1, 7), n_pairs=32, n_points=32, master_seed=1)
print("tau_hat per level:", ["%.1e" % t for t in probe.tau_hat])
print(f"Gibbs map-closeness slope {probe.a5_slope:.2f}")
synth = check_coupling_decay(SyntheticMHModel(1.0), range(1, 7), 128, master_seed=1)
print(f"Metropolis map-closeness slope {synth.slope:.2f}")
