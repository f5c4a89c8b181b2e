"""Telescoping multilevel estimator and its single-level baseline.

A *level model* is any object with ``h(level)``, ``kernel(level)``,
``initial_state(level)`` and ``phi(state)``; :class:`~mlmcmc.hier_model.HierGaussModel`
and :class:`~mlmcmc.kernels.SyntheticMHModel` both qualify.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from mlmcmc.coupling import batch_means, coupled_trajectory
from mlmcmc.kernels import iterate
from mlmcmc.rng import KEY_SCHEMA_VERSION, Purpose, derive_stream

# Relative slack so that exact boundary cases are not pushed one level or one
# sample up by rounding.
_REL_TOL = 1e-12


class Rates(NamedTuple):
    beta: float = 4.0   # variance decay
    rho: float = 2.0    # bias decay
    gamma: float = 1.0  # cost growth


class MaxLevelError(ValueError):
    pass


@dataclass(frozen=True)
class LevelAllocation:
    L: int
    samples: tuple
    epsilon: float
    C_N: float
    C_B: float
    N_min: int
    rates: Rates
    h: tuple

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rates"] = self.rates._asdict()
        d["samples"] = list(self.samples)
        d["h"] = list(self.h)
        return d


def allocate(epsilon: float, rates: Rates | Sequence[float], h_schedule: Sequence[float],
             C_N: float = 1.0, C_B: float = 1.0, N_min: int = 2) -> LevelAllocation:
    """Choose ``L`` and ``N_0..N_L`` for a target root-MSE ``epsilon``.

    Half the MSE goes to bias: ``L`` is the smallest level with
    ``C_B * h_L**rho <= epsilon / sqrt(2)``. Then
    ``N_l = max(N_min, ceil(C_N * epsilon**-2 * h_l**((beta + gamma) / 2)))``.
    ``h_schedule[l]`` is ``h_l`` for every level the model supports.
    """
    rates = Rates(*rates)
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not rates.beta > rates.gamma:
        raise ValueError(f"allocation assumes beta > gamma, got beta={rates.beta}, gamma={rates.gamma}")
    if C_N <= 0 or C_B <= 0 or N_min < 1:
        raise ValueError("C_N, C_B must be positive and N_min >= 1")
    h = [float(v) for v in h_schedule]
    budget = epsilon / math.sqrt(2.0)
    L = None
    for level, hl in enumerate(h):
        if C_B * hl**rates.rho <= budget * (1.0 + _REL_TOL):
            L = level
            break
    if L is None:
        raise MaxLevelError(
            f"epsilon={epsilon} needs a level beyond the configured max level {len(h) - 1}")
    expo = 0.5 * (rates.beta + rates.gamma)
    samples = []
    for hl in h[:L + 1]:
        target = C_N * epsilon**-2 * hl**expo
        samples.append(max(int(N_min), math.ceil(target * (1.0 - _REL_TOL))))
    return LevelAllocation(L, tuple(samples), float(epsilon), float(C_N), float(C_B), int(N_min), rates,
                           tuple(h[:L + 1]))


@dataclass
class MlEstimate:
    value: float
    per_level_means: list
    per_level_ses: list
    per_level_costs: list
    total_cost: int
    manifest: dict = field(default_factory=dict)

    @property
    def se(self) -> float:
        """Combined standard error across independent levels."""
        return math.sqrt(sum(s * s for s in self.per_level_ses))


def _model_id(model) -> str:
    cfg = getattr(model, "config", None)
    return type(model).__name__ if cfg is None else f"{type(model).__name__}(M0={cfg.M0}, lam={cfg.lam})"


def _level_term(model, level: int, n: int, master_seed: int, replicate: int, burn_in: int):
    if level == 0:
        stream = derive_stream(master_seed, Purpose.LEVEL0, 0, replicate)
        vals, cost = iterate(model.kernel(0), model.initial_state(0), n, stream, record=model.phi)
    else:
        stream = derive_stream(master_seed, Purpose.LEVEL_PAIR, level, replicate)
        run = coupled_trajectory(model.kernel(level), model.kernel(level - 1), model.initial_state(level),
                                 n, stream, model.phi)
        vals, cost = run.increments, run.cost
    if not np.all(np.isfinite(vals[burn_in:])):
        raise FloatingPointError(f"non-finite mean at level {level}")
    mean, se = batch_means(vals[burn_in:])
    return mean, se, int(cost)


def ml_estimate(model, allocation: LevelAllocation, master_seed: int, replicate: int = 0,
                burn_in: int = 0, level_order: Sequence[int] | None = None) -> MlEstimate:
    """Multilevel estimate of ``pi_L(phi)``.

    Level 0 is one chain of ``K_0``; each level ``l >= 1`` is an independent
    coupled chain with its own stream, so ``level_order`` (the simulation
    order) cannot change the result.
    """
    levels = list(range(allocation.L + 1))
    order = levels if level_order is None else list(level_order)
    if sorted(order) != levels:
        raise ValueError("level_order must be a permutation of 0..L")
    if burn_in >= min(allocation.samples):
        raise ValueError("burn_in must be smaller than every N_l")
    results = {}
    for level in order:
        results[level] = _level_term(model, level, allocation.samples[level], master_seed, replicate, burn_in)
    means = [results[l][0] for l in levels]
    ses = [results[l][1] for l in levels]
    costs = [results[l][2] for l in levels]
    value = means[0]
    for m in means[1:]:
        value += m
    manifest = {
        "master_seed": int(master_seed),
        "key_schema_version": KEY_SCHEMA_VERSION,
        "replicate": int(replicate),
        "burn_in": int(burn_in),
        "allocation": allocation.to_dict(),
        "model": _model_id(model),
    }
    return MlEstimate(value, means, ses, costs, int(sum(costs)), manifest)


def single_level_estimate(model, level: int, N: int, master_seed: int, replicate: int = 0,
                          burn_in: int = 0) -> MlEstimate:
    """Plain MCMC average of ``phi`` from one chain at ``level`` with ``N`` steps."""
    if N < 1:
        raise ValueError("N must be >= 1")
    stream = derive_stream(master_seed, Purpose.REPLICATE_ROOT, level, replicate)
    vals, cost = iterate(model.kernel(level), model.initial_state(level), N, stream, record=model.phi)
    if not np.all(np.isfinite(vals[burn_in:])):
        raise FloatingPointError(f"non-finite mean at level {level}")
    mean, se = batch_means(vals[burn_in:])
    manifest = {
        "master_seed": int(master_seed),
        "key_schema_version": KEY_SCHEMA_VERSION,
        "replicate": int(replicate),
        "level": int(level),
        "N": int(N),
        "model": _model_id(model),
    }
    return MlEstimate(float(mean), [float(mean)], [se], [int(cost)], int(cost), manifest)
