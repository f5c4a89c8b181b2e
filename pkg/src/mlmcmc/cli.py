"""Batch experiment runner.

    mlmcmc {simulate-data,rates,check-assumptions,mse-sweep,estimate} [--config PATH] [flags]

A flat JSON config file sets any field of :class:`RunConfig`; command-line
flags override it. Outputs go to ``--out`` as CSV files plus ``manifest.json``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from mlmcmc import __version__
from mlmcmc.diagnostics import check_assumptions, check_coupling_decay, estimate_rates, mse_cost_sweep
from mlmcmc.estimator import Rates, allocate, ml_estimate
from mlmcmc.hier_model import HierGaussModel, HierModelConfig, simulate_data
from mlmcmc.io import read_data_csv, write_csv, write_data_csv, write_manifest
from mlmcmc.kernels import SyntheticMHModel
from mlmcmc.rng import KEY_SCHEMA_VERSION, Purpose, derive_stream

EXPERIMENTS = ("simulate-data", "rates", "check-assumptions", "mse-sweep", "estimate")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    experiment: str = "rates"
    alpha0: float = 1.0
    kappa0: float = 0.1
    lam: float = 1000.0
    M0: int = 8
    max_level: int = 8
    true_delta: float = 1.0
    data_truth: str = "decaying"
    seed: int = 1
    data: str | None = None
    out: str = "out"
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    # rates / check-assumptions
    levels: int = 6
    n_per_level: int = 10_000
    reference_steps: int | None = None
    burn_in: int = 0
    n_pairs: int = 32
    n_points: int = 32
    synthetic_beta_prime: float = 1.0
    # estimate / mse-sweep
    epsilon: float = 0.01
    epsilon_grid: list = field(default_factory=lambda: [0.04, 0.02, 0.01, 0.005])
    replicates: int = 50
    C_N: float = 1.0
    C_B: float = 1.0
    N_min: int = 2
    beta: float = 4.0
    bias_rho: float = 2.0
    gamma: float = 1.0

    def model_config(self, y=None) -> HierModelConfig:
        return HierModelConfig(self.alpha0, self.kappa0, self.lam, self.M0, self.max_level, y)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        return d


# Config-file keys that differ from attribute names.
_ALIASES = {"lambda": "lam", "epsilon-grid": "epsilon_grid"}
_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _positive(name, v):
    if not v > 0:
        raise ConfigError(f"{name} must be positive, got {v!r}")


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {cfg.experiment!r}")
    for name in ("alpha0", "kappa0", "true_delta", "epsilon", "C_N", "C_B", "synthetic_beta_prime"):
        _positive(name, getattr(cfg, name))
    _positive("lambda", cfg.lam)
    for name in ("M0", "threads", "n_per_level", "n_pairs", "n_points", "N_min"):
        if int(getattr(cfg, name)) < 1:
            raise ConfigError(f"{name} must be an integer >= 1, got {getattr(cfg, name)!r}")
    if cfg.max_level < 0:
        raise ConfigError(f"max_level must be >= 0, got {cfg.max_level}")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {cfg.seed}")
    if cfg.data_truth not in ("decaying", "prior"):
        raise ConfigError(f"data_truth must be 'decaying' or 'prior', got {cfg.data_truth!r}")
    if cfg.burn_in < 0:
        raise ConfigError("burn_in must be >= 0")
    if not cfg.epsilon_grid or any(not e > 0 for e in cfg.epsilon_grid):
        raise ConfigError("epsilon_grid must be a non-empty list of positive numbers")
    if cfg.experiment == "mse-sweep" and cfg.replicates < 10:
        raise ConfigError("replicates must be >= 10")
    if cfg.experiment in ("rates", "check-assumptions"):
        if cfg.levels < 3:
            raise ConfigError("levels must be >= 3 (regression needs three points)")
        need = cfg.levels + (1 if cfg.experiment == "rates" else 0)
        if cfg.max_level < need:
            raise ConfigError(f"max_level must be >= {need} for levels={cfg.levels}")
    if not cfg.beta > cfg.gamma:
        raise ConfigError("beta must exceed gamma")
    if cfg.data is not None and not Path(cfg.data).is_file():
        raise ConfigError(f"data file not found: {cfg.data}")
    return cfg


def _coerce(name: str, value):
    f = _FIELDS[name]
    typ = f.type if isinstance(f.type, str) else f.type.__name__
    try:
        if name == "epsilon_grid":
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            return [float(v) for v in value]
        if value is None:
            return None
        if typ.startswith("int"):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if typ.startswith("float"):
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot interpret {value!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mlmcmc", description="Multilevel MCMC experiments")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--epsilon-grid", dest="epsilon_grid", help="comma-separated list")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--replicates", type=int)
    p.add_argument("--levels", type=int, help="regression levels 1..N")
    p.add_argument("--n-per-level", dest="n_per_level", type=int)
    p.add_argument("--max-level", dest="max_level", type=int)
    p.add_argument("--data", help="reuse y from this CSV (index,y)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int)
    return p


def parse_config(argv=None, file_values: dict | None = None) -> RunConfig:
    """Merge defaults, the JSON file named by ``--config`` (or ``file_values``), and flags.

    Precedence: flags > file > defaults.
    """
    args = build_parser().parse_args(argv)
    values = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_values = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from None
    if file_values:
        if not isinstance(file_values, dict):
            raise ConfigError("config must be a flat JSON object")
        for key, value in file_values.items():
            name = _ALIASES.get(key, key)
            if name not in _FIELDS or name == "experiment":
                raise ConfigError(f"unknown config key {key!r}")
            values[name] = _coerce(name, value)
    for name, value in vars(args).items():
        if name in ("config", "experiment") or value is None:
            continue
        values[name] = _coerce(name, value)
    values["experiment"] = args.experiment
    return validate(RunConfig(**values))


def load_model(cfg: RunConfig, out: Path) -> tuple[HierGaussModel, dict]:
    """Dataset for this run: reused from ``cfg.data`` or simulated from the seed."""
    K_max = cfg.M0 * 2**cfg.max_level
    if cfg.data:
        y = read_data_csv(cfg.data)
        info = {"source": str(cfg.data)}
    else:
        y = simulate_data(cfg.true_delta, K_max, derive_stream(cfg.seed, Purpose.DATA), cfg.lam,
                          truth=cfg.data_truth)
        info = {"source": "simulated", "seed": cfg.seed, "true_delta": cfg.true_delta, "truth": cfg.data_truth}
    write_data_csv(out / "data.csv", y)
    info["K_max"] = K_max
    return HierGaussModel(cfg.model_config(y[:K_max])), info


def _rates(cfg, model, out):
    rep = estimate_rates(model, range(1, cfg.levels + 1), cfg.n_per_level, cfg.seed,
                         reference_steps=cfg.reference_steps, burn_in=cfg.burn_in, threads=cfg.threads)
    rep.to_csv(out / "rates.csv")
    cost = sum(rep.manifest["coupled_costs"].values())
    return ["rates.csv"], {"rates": rep.summary(), "run": rep.manifest}, cost


def _assumptions(cfg, model, out):
    levels = range(1, cfg.levels + 1)
    rep = check_assumptions(model, levels, cfg.n_pairs, cfg.n_points, cfg.seed)
    rep.to_csv(out / "assumptions.csv")
    synth = check_coupling_decay(SyntheticMHModel(cfg.synthetic_beta_prime), levels, 4 * cfg.n_points, cfg.seed)
    derived = {
        "tau_hat_max": max(rep.tau_hat),
        "tau_hat_is_lower_bound": True,
        "a5_slope": rep.a5_slope,
        "a5_r2": rep.a5_r2,
        "a5_degenerate": rep.degenerate,
        "synthetic_mh_a5_slope": synth.slope,
        "synthetic_mh_distance": synth.distance,
        "synthetic_below_gibbs": bool(synth.slope < rep.a5_slope),
    }
    return ["assumptions.csv"], {"assumptions": derived}, None


def _mse(cfg, model, out):
    rep = mse_cost_sweep(model, cfg.epsilon_grid, cfg.replicates, cfg.seed,
                         Rates(cfg.beta, cfg.bias_rho, cfg.gamma), cfg.C_N, cfg.C_B, cfg.N_min,
                         threads=cfg.threads)
    rep.to_csv(out / "mse_cost.csv")
    derived = {
        "ml_slope": rep.ml_slope,
        "single_level_slope": rep.sl_slope,
        "reference_value": rep.reference_value,
        "reference_level": rep.reference_level,
        "allocations": rep.allocations,
        "single_level_samples": rep.single_level_samples,
        "run": rep.manifest,
    }
    cost = sum(rep.ml_cost) * rep.replicates + sum(rep.sl_cost) * rep.replicates
    return ["mse_cost.csv"], {"mse_sweep": derived}, cost


def _estimate(cfg, model, out):
    hs = [model.h(l) for l in range(cfg.max_level + 1)]
    alloc = allocate(cfg.epsilon, Rates(cfg.beta, cfg.bias_rho, cfg.gamma), hs, cfg.C_N, cfg.C_B, cfg.N_min)
    est = ml_estimate(model, alloc, cfg.seed, burn_in=cfg.burn_in)
    oracle = model.posterior_oracle(alloc.L)
    rows = [(l, alloc.samples[l], est.per_level_means[l], est.per_level_ses[l], est.per_level_costs[l])
            for l in range(alloc.L + 1)]
    write_csv(out / "estimate.csv", ["level", "N", "mean", "se", "cost"], rows)
    derived = {"estimate": {"value": est.value, "se": est.se, "oracle": oracle, **est.manifest}}
    return ["estimate.csv"], derived, est.total_cost


_DISPATCH = {"rates": _rates, "check-assumptions": _assumptions, "mse-sweep": _mse, "estimate": _estimate}


def run(cfg: RunConfig) -> int:
    """Execute one experiment; 0 on success, non-zero with a message on stderr otherwise."""
    t0 = time.perf_counter()
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        print(f"mlmcmc: cannot write to output directory {out}: {exc.strerror or exc}", file=sys.stderr)
        return 2
    try:
        model, data_info = load_model(cfg, out)
        outputs, derived, cost = ["data.csv"], {}, None
        if cfg.experiment != "simulate-data":
            files, derived, cost = _DISPATCH[cfg.experiment](cfg, model, out)
            outputs += files
    except OSError as exc:
        print(f"mlmcmc: I/O error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"mlmcmc: {cfg.experiment} failed: {exc}", file=sys.stderr)
        return 1
    manifest = {
        "experiment": cfg.experiment,
        "config": cfg.to_dict(),
        "code_version": __version__,
        "key_schema_version": KEY_SCHEMA_VERSION,
        "data": data_info,
        "outputs": outputs,
        "total_scalar_draw_cost": cost,
        "wall_time_s": time.perf_counter() - t0,
        **derived,
    }
    write_manifest(out / "manifest.json", manifest)
    return 0


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"mlmcmc: config error: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
