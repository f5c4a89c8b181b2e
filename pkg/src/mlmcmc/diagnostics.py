"""Rate estimation, assumption probes, and the cost-versus-MSE sweep."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from mlmcmc.coupling import batch_means, coarse_view, coupled_trajectory, _coarse_record
from mlmcmc.estimator import Rates, _level_term, allocate, ml_estimate, single_level_estimate
from mlmcmc.io import write_csv
from mlmcmc.kernels import IteratedMapKernel, draw_innovations, iterate
from mlmcmc.rng import KEY_SCHEMA_VERSION, Purpose, RngStream, derive_stream


class DegenerateCouplingError(RuntimeError):
    """Increments have zero variance although phi varies along the chain."""


def ols_slope(x, y) -> tuple[float, float, float]:
    """Least-squares fit ``y = slope * x + intercept``; returns ``(slope, intercept, r2)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or x.size != y.size:
        raise ValueError("need at least two paired points")
    xm, ym = x.mean(), y.mean()
    dx, dy = x - xm, y - ym
    sxx = float(dx @ dx)
    slope = float(dx @ dy) / sxx
    intercept = ym - slope * xm
    resid = dy - slope * dx
    syy = float(dy @ dy)
    r2 = 1.0 - float(resid @ resid) / syy if syy > 0 else 1.0
    return slope, float(intercept), r2


def _pool_map(fn: Callable, args: Sequence[tuple], threads: int) -> list:
    # Results come back in argument order whatever the scheduling.
    if threads <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        futures = [ex.submit(fn, *a) for a in args]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# Variance and bias rates


@dataclass
class LevelStats:
    level: int
    h: float
    n: int
    var: float
    var_se: float
    mean: float
    mean_se: float
    phi_range: float
    cost: int


def coupled_level_stats(model, level: int, n: int, master_seed: int, burn_in: int = 0,
                        replicate: int = 0) -> LevelStats:
    """Statistics of ``phi(fine) - phi(coarse)`` from one coupled chain at ``level``."""
    stream = derive_stream(master_seed, Purpose.LEVEL_PAIR, level, replicate)
    run = coupled_trajectory(model.kernel(level), model.kernel(level - 1), model.initial_state(level),
                             n, stream, model.phi)
    inc = run.increments[burn_in:]
    mean, mean_se = batch_means(inc)
    dev2 = (inc - mean) ** 2
    var = float(dev2.sum() / (inc.size - 1))
    _, var_se = batch_means(dev2)
    fp = run.fine_phi[burn_in:]
    return LevelStats(level, model.h(level), int(inc.size), var, var_se, mean, mean_se,
                      float(fp.max() - fp.min()), run.cost)


@dataclass
class RateReport:
    levels: list
    h: list
    variance: list
    variance_se: list
    bias: list
    bias_se: list
    increment_mean: list
    increment_mean_se: list
    slope_variance: float
    r2_variance: float
    slope_bias: float
    r2_bias: float
    slope_increment_mean: float
    reference_level: int
    reference_value: float
    reference_se: float
    oracle_value: float | None
    reference_agrees: bool | None
    sample_counts: list
    manifest: dict = field(default_factory=dict)

    def rows(self):
        for i, l in enumerate(self.levels):
            yield (l, self.h[i], self.variance[i], self.variance_se[i], self.bias[i], self.bias_se[i])

    def to_csv(self, path):
        return write_csv(path, ["level", "h_l", "var", "var_se", "bias", "bias_se"], self.rows())

    def summary(self) -> dict:
        return {
            "beta_hat": self.slope_variance,
            "beta_r2": self.r2_variance,
            "bias_rho_hat": self.slope_bias,
            "bias_r2": self.r2_bias,
            "increment_mean_slope": self.slope_increment_mean,
            "mixing_rho": None,
            "reference_level": self.reference_level,
            "reference_value": self.reference_value,
            "reference_se": self.reference_se,
            "oracle_value": self.oracle_value,
            "reference_agrees_with_oracle": self.reference_agrees,
        }


def estimate_rates(model, levels: Sequence[int], n_per_level: int, master_seed: int,
                   reference_level: int | None = None, reference_steps: int | None = None,
                   burn_in: int = 0, threads: int = 1) -> RateReport:
    """Regress per-level increment variance and bias on ``log2 h_l``.

    The bias of level ``l`` is ``|pi_l(phi) - pi_ref(phi)|`` with
    ``ref = max(levels) + 1`` by default, estimated by summing the coupled
    increment means of levels ``l+1..ref``. The reference value itself comes
    from a long single chain at ``ref`` and is compared with
    ``model.posterior_oracle`` when the model has one.
    """
    levels = sorted(int(l) for l in levels)
    if len(levels) < 3:
        raise ValueError("estimate_rates needs at least 3 levels")
    if levels[0] < 1:
        raise ValueError("rate levels start at 1")
    ref = levels[-1] + 1 if reference_level is None else int(reference_level)
    if ref <= levels[-1]:
        raise ValueError("reference_level must exceed every regression level")
    run_levels = list(range(levels[0], ref + 1))
    stats = _pool_map(coupled_level_stats, [(model, l, n_per_level, master_seed, burn_in) for l in run_levels],
                      threads)
    by_level = {s.level: s for s in stats}

    for l in levels:
        s = by_level[l]
        if s.var == 0.0 and s.phi_range > 0.0:
            raise DegenerateCouplingError(f"level {l}: increments are identically zero while phi varies")

    n_ref = reference_steps or 10 * n_per_level
    ref_stream = derive_stream(master_seed, Purpose.REPLICATE_ROOT, ref, 0)
    ref_vals, _ = iterate(model.kernel(ref), model.initial_state(ref), n_ref, ref_stream, record=model.phi)
    ref_mean, ref_se = batch_means(ref_vals[burn_in:])
    oracle = None
    agrees = None
    if hasattr(model, "posterior_oracle"):
        oracle = float(model.posterior_oracle(ref))
        agrees = bool(abs(ref_mean - oracle) <= 4.0 * ref_se)

    bias, bias_se = [], []
    for l in levels:
        tail = [by_level[k] for k in range(l + 1, ref + 1)]
        bias.append(abs(sum(s.mean for s in tail)))
        bias_se.append(math.sqrt(sum(s.mean_se**2 for s in tail)))

    logh = np.log2([by_level[l].h for l in levels])
    var = [by_level[l].var for l in levels]
    bv, _, r2v = ols_slope(logh, np.log2(var))
    with np.errstate(divide="ignore"):
        bb, _, r2b = ols_slope(logh, np.log2(bias))
        bm, _, _ = ols_slope(logh, np.log2([abs(by_level[l].mean) for l in levels]))
    manifest = {
        "master_seed": int(master_seed),
        "key_schema_version": KEY_SCHEMA_VERSION,
        "levels": levels,
        "n_per_level": int(n_per_level),
        "burn_in": int(burn_in),
        "reference_steps": int(n_ref),
        "coupled_costs": {str(s.level): s.cost for s in stats},
    }
    return RateReport(
        levels=levels,
        h=[by_level[l].h for l in levels],
        variance=var,
        variance_se=[by_level[l].var_se for l in levels],
        bias=bias,
        bias_se=bias_se,
        increment_mean=[by_level[l].mean for l in levels],
        increment_mean_se=[by_level[l].mean_se for l in levels],
        slope_variance=bv,
        r2_variance=r2v,
        slope_bias=bb,
        r2_bias=r2b,
        slope_increment_mean=bm,
        reference_level=ref,
        reference_value=ref_mean,
        reference_se=ref_se,
        oracle_value=oracle,
        reference_agrees=agrees,
        sample_counts=[by_level[l].n for l in levels],
        manifest=manifest,
    )


# ---------------------------------------------------------------------------
# Assumption probes


def contraction_ratio(kernel: IteratedMapKernel, x: np.ndarray, y: np.ndarray, stream: RngStream,
                      n_innovations: int = 64) -> float:
    """Monte Carlo ``E_u |xi(x,u) - xi(y,u)|^2 / |x - y|^2``."""
    d0 = float(np.sum((np.asarray(x) - np.asarray(y)) ** 2))
    if d0 == 0.0:
        raise ValueError("x and y coincide")
    acc = 0.0
    for _ in range(n_innovations):
        rec = draw_innovations(kernel.layout, stream)
        acc += float(np.sum((kernel.apply(x, rec) - kernel.apply(y, rec)) ** 2))
    return acc / n_innovations / d0


def check_contraction(model, level: int, n_pairs: int, master_seed: int, n_innovations: int = 64) -> float:
    """Largest contraction ratio over ``n_pairs`` random state pairs.

    This is a randomized lower bound on the supremum over all pairs.
    Coincident pairs are redrawn.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    stream = derive_stream(master_seed, Purpose.ORACLE, level, 1)
    kernel = model.kernel(level)
    worst = 0.0
    for _ in range(n_pairs):
        while True:
            x = model.random_state(level, stream)
            y = model.random_state(level, stream)
            if np.any(x != y):
                break
        worst = max(worst, contraction_ratio(kernel, x, y, stream, n_innovations))
    return worst


def embed(coarse_state: np.ndarray, fine_dim: int) -> np.ndarray:
    """Zero-pad a coarse state into the fine space."""
    out = np.zeros(fine_dim)
    out[:coarse_state.size] = coarse_state
    return out


def coupling_distance(fine: IteratedMapKernel, coarse: IteratedMapKernel, x_coarse: np.ndarray,
                      stream: RngStream, n_innovations: int = 64) -> float:
    """Monte Carlo ``E_u |xi_l(x,u) - xi_{l-1}(x,u)|^2`` on the common coordinates."""
    view = coarse_view(fine.layout, coarse.layout)
    xf = embed(x_coarse, fine.state_dim)
    dc = coarse.state_dim
    acc = 0.0
    for _ in range(n_innovations):
        rec = draw_innovations(fine.layout, stream)
        a = fine.apply(xf, rec)[:dc]
        b = coarse.apply(x_coarse, _coarse_record(rec, view))
        acc += float(np.sum((a - b) ** 2))
    return acc / n_innovations


@dataclass
class CouplingDecay:
    levels: list
    h: list
    distance: list
    slope: float
    r2: float
    degenerate: bool


def check_coupling_decay(model, levels: Sequence[int], n_points: int, master_seed: int,
                         n_innovations: int = 64) -> CouplingDecay:
    """Slope of ``log2 E|xi_l - xi_{l-1}|^2`` against ``log2 h_l``."""
    levels = sorted(int(l) for l in levels)
    if len(levels) < 3:
        raise ValueError("check_coupling_decay needs at least 3 levels")
    dist = []
    for l in levels:
        stream = derive_stream(master_seed, Purpose.ORACLE, l, 2)
        fine, coarse = model.kernel(l), model.kernel(l - 1)
        acc = 0.0
        for _ in range(n_points):
            x = model.random_state(l - 1, stream)
            acc += coupling_distance(fine, coarse, x, stream, n_innovations)
        dist.append(acc / n_points)
    h = [model.h(l) for l in levels]
    if any(d <= 0.0 for d in dist):
        return CouplingDecay(levels, h, dist, math.nan, math.nan, True)
    slope, _, r2 = ols_slope(np.log2(h), np.log2(dist))
    return CouplingDecay(levels, h, dist, slope, r2, False)


@dataclass
class AssumptionReport:
    levels: list
    tau_hat: list
    a5_distance: list
    a5_slope: float
    a5_r2: float
    degenerate: bool
    n_pairs: int
    n_points: int
    n_innovations: int

    def rows(self):
        for i, l in enumerate(self.levels):
            yield (l, self.tau_hat[i], self.a5_distance[i])

    def to_csv(self, path):
        return write_csv(path, ["level", "tau_hat", "a5_dist"], self.rows())


def check_assumptions(model, levels: Sequence[int], n_pairs: int, n_points: int, master_seed: int,
                      n_innovations: int = 64) -> AssumptionReport:
    levels = sorted(int(l) for l in levels)
    taus = [check_contraction(model, l, n_pairs, master_seed, n_innovations) for l in levels]
    decay = check_coupling_decay(model, levels, n_points, master_seed, n_innovations)
    return AssumptionReport(levels, taus, decay.distance, decay.slope, decay.r2, decay.degenerate,
                            n_pairs, n_points, n_innovations)


# ---------------------------------------------------------------------------
# Cost against MSE


@dataclass
class MseCostReport:
    epsilons: list
    ml_mse: list
    ml_cost: list
    sl_mse: list
    sl_cost: list
    replicates: int
    reference_value: float
    reference_level: int
    allocations: list
    single_level_samples: list
    ml_slope: float
    sl_slope: float
    manifest: dict = field(default_factory=dict)

    def rows(self):
        for i, e in enumerate(self.epsilons):
            yield (e, "mlmcmc", self.ml_mse[i], self.ml_cost[i], self.replicates)
            yield (e, "single_level", self.sl_mse[i], self.sl_cost[i], self.replicates)

    def to_csv(self, path):
        return write_csv(path, ["epsilon", "method", "mse", "cost", "replicates"], self.rows())


def _ml_replicate(model, allocation, seed, replicate):
    est = ml_estimate(model, allocation, seed, replicate)
    return est.value, est.total_cost


def _sl_replicate(model, level, n, seed, replicate):
    est = single_level_estimate(model, level, n, seed, replicate)
    return est.value, est.total_cost


def _paired_replicate(model, allocation, seed, replicate):
    """One multilevel and one single-level estimate on common random numbers.

    The single-level chain at ``L`` and the multilevel level-0 chain run as a
    nested coupled pair: each sweep's level-``L`` innovations drive the
    baseline and their level-0 prefix drives the level-0 term. Each chain
    keeps its own marginal law; only the pairing changes. The level-0 term is
    charged the draws a solo level-0 chain would consume.
    """
    L = allocation.L
    n0 = allocation.samples[0]
    stream = derive_stream(seed, Purpose.LEVEL0, 0, replicate)
    fine, coarse = model.kernel(L), model.kernel(0)
    start = stream.position
    run = coupled_trajectory(fine, coarse, model.initial_state(L), n0, stream, model.phi)
    drawn = stream.position - start
    extra = sum(fp - cp for (k, fp), (_, cp) in zip(fine.layout, coarse.layout) if k == "gaussian")
    sl_value = float(np.mean(run.fine_phi))
    ml_value = float(np.mean(run.coarse_phi))
    ml_cost = drawn - n0 * extra
    for level in range(1, L + 1):
        m, _, c = _level_term(model, level, allocation.samples[level], seed, replicate, 0)
        ml_value += m
        ml_cost += c
    return ml_value, int(ml_cost), sl_value, int(drawn)


def mse_cost_sweep(model, epsilons: Sequence[float], replicates: int, master_seed: int,
                   rates: Rates = Rates(), C_N: float = 1.0, C_B: float = 1.0, N_min: int = 2,
                   reference: float | None = None, same_seed: bool = False, threads: int = 1,
                   max_level: int | None = None, common_random_numbers: bool = True) -> MseCostReport:
    """Empirical MSE and mean cost of the multilevel and single-level estimators.

    For each epsilon the multilevel estimator uses :func:`allocate`; the
    single-level baseline runs at the same ``L`` with ``N = N_0`` steps, the
    level-0 budget of the allocation. MSE is measured against ``reference``
    (default: the model's quadrature oracle at the deepest ``L`` of the grid).
    ``same_seed`` forces every replicate onto replicate stream 0.

    With ``common_random_numbers`` (default) each baseline replicate shares
    innovations with the level-0 chain of its multilevel partner (see
    :func:`_paired_replicate`), so the two MSE curves carry the same sampling
    noise and their slopes can be compared at R = 50. Otherwise the two
    estimators use independent streams.
    """
    if replicates < 10:
        raise ValueError("replicates must be >= 10")
    if max_level is None:
        max_level = model.config.max_level if hasattr(model, "config") else 12
    hs = [model.h(l) for l in range(max_level + 1)]
    allocs = [allocate(e, rates, hs, C_N, C_B, N_min) for e in epsilons]
    deepest = max(a.L for a in allocs)
    if reference is None:
        reference = float(model.posterior_oracle(deepest))

    ml_mse, ml_cost, sl_mse, sl_cost, sl_n = [], [], [], [], []
    for i, a in enumerate(allocs):
        reps = [0 if same_seed else i * replicates + r for r in range(replicates)]
        n_single = a.samples[0]
        if common_random_numbers:
            out = _pool_map(_paired_replicate, [(model, a, master_seed, r) for r in reps], threads)
            ml = [(v, c) for v, c, _, _ in out]
            sl = [(v, c) for _, _, v, c in out]
        else:
            ml = _pool_map(_ml_replicate, [(model, a, master_seed, r) for r in reps], threads)
            sl = _pool_map(_sl_replicate, [(model, a.L, n_single, master_seed, r) for r in reps], threads)
        ml_v = np.array([v for v, _ in ml])
        sl_v = np.array([v for v, _ in sl])
        ml_mse.append(float(np.mean((ml_v - reference) ** 2)))
        sl_mse.append(float(np.mean((sl_v - reference) ** 2)))
        ml_cost.append(float(np.mean([c for _, c in ml])))
        sl_cost.append(float(np.mean([c for _, c in sl])))
        sl_n.append(n_single)

    ml_slope = sl_slope = math.nan
    if len(epsilons) >= 2:
        ml_slope = ols_slope(np.log(ml_mse), np.log(ml_cost))[0]
        sl_slope = ols_slope(np.log(sl_mse), np.log(sl_cost))[0]
    manifest = {
        "master_seed": int(master_seed),
        "key_schema_version": KEY_SCHEMA_VERSION,
        "replicates": int(replicates),
        "same_seed": bool(same_seed),
        "common_random_numbers": bool(common_random_numbers),
        "rates": Rates(*rates)._asdict(),
        "C_N": C_N,
        "C_B": C_B,
        "N_min": N_min,
    }
    return MseCostReport(list(map(float, epsilons)), ml_mse, ml_cost, sl_mse, sl_cost, int(replicates),
                         reference, deepest, [a.to_dict() for a in allocs], sl_n, ml_slope, sl_slope, manifest)
