"""Markov kernels written as deterministic maps ``x' = xi_l(x, u)``.

A kernel declares an *innovation layout*: an ordered tuple of slots, each one
of ``("gaussian", n)``, ``("uniform", 1)`` or ``("gamma", shape)``. A realized
innovation record holds one value per slot (an array for Gaussian slots, a
float otherwise). ``kernel.apply(x, record)`` is pure, so two kernels fed the
same record can be compared draw for draw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtri

from mlmcmc.rng import RngStream

Slot = tuple  # ("gaussian", n) | ("uniform", 1) | ("gamma", shape)

_KINDS = ("gaussian", "uniform", "gamma")

# Scalars pre-drawn per chunk on the fixed-consumption fast path.
_CHUNK_SCALARS = 1 << 20


class ConditionalSamplerError(ArithmeticError):
    """A Gibbs block produced an invalid value or hit a numerical domain error."""

    def __init__(self, block: int, message: str):
        super().__init__(f"block {block}: {message}")
        self.block = block


def _check_layout(layout: Sequence[Slot]) -> tuple:
    out = []
    for kind, param in layout:
        if kind not in _KINDS:
            raise ValueError(f"unknown innovation kind {kind!r}")
        if kind == "gaussian" and int(param) < 0:
            raise ValueError("gaussian slot size must be >= 0")
        if kind == "gamma" and not param > 0:
            raise ValueError("gamma slot shape must be positive")
        out.append((kind, int(param) if kind != "gamma" else float(param)))
    return tuple(out)


def fixed_width(layout: Sequence[Slot]) -> int | None:
    """Scalar draws per record, or ``None`` if consumption is data dependent."""
    width = 0
    for kind, param in layout:
        if kind == "gaussian":
            width += param
        elif kind == "uniform":
            width += 1
        elif param == 1.0:
            width += 1
        else:
            return None
    return width


def draw_innovations(layout: Sequence[Slot], stream: RngStream) -> tuple:
    """Draw one innovation record in layout order."""
    rec = []
    for kind, param in layout:
        if kind == "gaussian":
            rec.append(stream.normals(param))
        elif kind == "uniform":
            rec.append(stream.uniform())
        else:
            rec.append(stream.gamma(param))
    return tuple(rec)


def _realize_block(layout: Sequence[Slot], u: np.ndarray) -> list:
    """Turn a (steps, width) block of uniforms into per-slot columns.

    Must reproduce ``draw_innovations`` value for value, hence the scalar
    ``math.log`` for the exponential slots.
    """
    cols = []
    pos = 0
    for kind, param in layout:
        if kind == "gaussian":
            cols.append(ndtri(u[:, pos:pos + param]))
            pos += param
        elif kind == "uniform":
            cols.append([float(v) for v in u[:, pos]])
            pos += 1
        else:
            cols.append([-math.log(v) for v in u[:, pos]])
            pos += 1
    return cols


def innovation_records(layout: Sequence[Slot], stream: RngStream, n: int):
    """Yield ``n`` records, drawn exactly as ``n`` calls to ``draw_innovations`` would."""
    width = fixed_width(layout)
    if width is None or width == 0:
        for _ in range(n):
            yield draw_innovations(layout, stream)
        return
    chunk = max(1, _CHUNK_SCALARS // width)
    done = 0
    while done < n:
        m = min(chunk, n - done)
        cols = _realize_block(layout, stream.uniforms(m * width).reshape(m, width))
        for s in range(m):
            yield tuple(c[s] for c in cols)
        done += m


@dataclass(frozen=True)
class TargetSpec:
    """Unnormalized log-density on an optional box support."""

    log_density: Callable[[np.ndarray], float]
    dim: int = 1
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    def in_support(self, x: np.ndarray) -> bool:
        if self.lower is not None and np.any(x < self.lower):
            return False
        if self.upper is not None and np.any(x > self.upper):
            return False
        return True


@dataclass(frozen=True, eq=False)
class IteratedMapKernel:
    """A level-indexed transition ``x' = apply(x, record)``.

    ``level_h`` is the resolution h_l of the level. ``apply`` must be a pure
    function of the state and the realized record.
    """

    level: int
    level_h: float
    state_dim: int
    layout: tuple
    apply: Callable[[np.ndarray, tuple], np.ndarray]
    name: str = "kernel"

    def __post_init__(self):
        object.__setattr__(self, "layout", _check_layout(self.layout))

    def draw(self, stream: RngStream) -> tuple:
        return draw_innovations(self.layout, stream)

    def step(self, x: np.ndarray, stream: RngStream) -> np.ndarray:
        return self.apply(x, self.draw(stream))


# ---------------------------------------------------------------------------
# Metropolis-Hastings


def _mh_apply(target: TargetSpec, scale: float):
    def apply(x, rec):
        u1, u2 = rec
        lp_x = target.log_density(x)
        if not np.isfinite(lp_x):
            raise ValueError("MH state has non-finite log-density; start the chain inside the support")
        y = x + scale * u1
        if not target.in_support(y):
            return x
        lp_y = target.log_density(y)
        if not np.isfinite(lp_y):
            return x
        # symmetric random walk: q(x, y) = q(y, x)
        if lp_y >= lp_x or u2 < math.exp(lp_y - lp_x):
            return y
        return x

    return apply


def mh_kernel(target: TargetSpec, proposal_scale: float, level: int = 0, level_h: float = 1.0) -> IteratedMapKernel:
    """Gaussian random-walk Metropolis-Hastings as an iterated map.

    Innovations are ``(gaussian(dim), uniform)``; proposals leaving the
    support are rejected.
    """
    if not proposal_scale > 0:
        raise ValueError("proposal_scale must be positive")
    return IteratedMapKernel(
        level=level,
        level_h=level_h,
        state_dim=target.dim,
        layout=(("gaussian", target.dim), ("uniform", 1)),
        apply=_mh_apply(target, float(proposal_scale)),
        name="mh",
    )


def mh_map_step(target: TargetSpec, proposal_scale: float, x: np.ndarray, stream: RngStream) -> np.ndarray:
    return mh_kernel(target, proposal_scale).step(np.asarray(x, dtype=float), stream)


# ---------------------------------------------------------------------------
# Deterministic-scan Gibbs


@dataclass(frozen=True, eq=False)
class GibbsBlock:
    """One coordinate block of a deterministic-scan Gibbs sweep.

    ``update(x, u)`` returns new values for ``x[indices]`` given the current
    state (already holding this sweep's earlier blocks) and the realized
    innovation ``u``. It must not read its own block.
    """

    indices: slice | np.ndarray
    innovation: Slot
    update: Callable[[np.ndarray, object], np.ndarray]


def _gibbs_apply(blocks: Sequence[GibbsBlock]):
    def apply(x, rec):
        x = np.array(x, dtype=float)
        for i, (blk, u) in enumerate(zip(blocks, rec)):
            try:
                vals = blk.update(x, u)
            except (ValueError, ArithmeticError) as exc:
                raise ConditionalSamplerError(i, str(exc)) from exc
            if not np.isfinite(vals).all():
                raise ConditionalSamplerError(i, "non-finite conditional draw")
            x[blk.indices] = vals
        return x

    return apply


def gibbs_kernel(blocks: Sequence[GibbsBlock], state_dim: int, level: int = 0, level_h: float = 1.0,
                 name: str = "gibbs") -> IteratedMapKernel:
    """Deterministic-scan Gibbs sweep over ``blocks`` in list order."""
    blocks = tuple(blocks)
    covered = np.zeros(state_dim, dtype=int)
    for blk in blocks:
        covered[blk.indices] += 1
    if not np.all(covered == 1):
        raise ValueError("Gibbs blocks must partition the state vector")
    return IteratedMapKernel(
        level=level,
        level_h=level_h,
        state_dim=state_dim,
        layout=tuple(b.innovation for b in blocks),
        apply=_gibbs_apply(blocks),
        name=name,
    )


def gibbs_sweep_step(blocks: Sequence[GibbsBlock], x: np.ndarray, stream: RngStream) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return gibbs_kernel(blocks, x.size).step(x, stream)


# ---------------------------------------------------------------------------


def iterate(kernel: IteratedMapKernel, x0: np.ndarray, n_steps: int, stream: RngStream,
            record: Callable[[np.ndarray], float] | None = None):
    """Run ``n_steps`` transitions from ``x0``.

    Returns ``(trajectory, cost)``. The trajectory excludes ``x0``; it is an
    ``(n_steps, dim)`` array of states, or the ``record(state)`` values when
    ``record`` is given. Cost is the number of scalar draws consumed.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    x = np.asarray(x0, dtype=float)
    start = stream.position
    out = []
    for rec in innovation_records(kernel.layout, stream, n_steps):
        x = kernel.apply(x, rec)
        out.append(x if record is None else record(x))
    if record is None:
        traj = np.array(out, dtype=float).reshape(n_steps, kernel.state_dim)
    else:
        traj = np.array(out, dtype=float)
    return traj, stream.position - start


# ---------------------------------------------------------------------------
# Synthetic compact target


def synthetic_h(level: int) -> float:
    return 2.0 ** (-level - 1)


def synthetic_target(level: int, rate_beta_prime: float, proposal_scale: float = 1.0):
    """Truncated Gaussian family on [-3, 3] with variance ``1 + h_l**rate_beta_prime``.

    Returns ``(target, kernel)`` where the kernel is a fixed-scale random-walk
    MH map. Consecutive levels differ by O(h_l**rate_beta_prime), and the
    accept/reject step makes their coupling degrade at that same rate.
    """
    if level < 0:
        raise ValueError("level must be >= 0")
    h = synthetic_h(level)
    var = 1.0 + h**rate_beta_prime
    inv2 = 0.5 / var

    def log_density(x):
        return -inv2 * float(x[0]) ** 2

    target = TargetSpec(log_density, dim=1, lower=np.array([-3.0]), upper=np.array([3.0]),
                        params={"level": level, "h": h, "variance": var, "rate_beta_prime": rate_beta_prime})
    kernel = mh_kernel(target, proposal_scale, level=level, level_h=h)
    return target, kernel


@dataclass
class SyntheticMHModel:
    """Level model wrapping :func:`synthetic_target` with ``phi(x) = x``."""

    rate_beta_prime: float = 1.0
    proposal_scale: float = 1.0
    max_level: int = 12
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_cache"] = {}
        return state

    def h(self, level: int) -> float:
        return synthetic_h(level)

    def state_dim(self, level: int) -> int:
        return 1

    def kernel(self, level: int) -> IteratedMapKernel:
        if level not in self._cache:
            self._cache[level] = synthetic_target(level, self.rate_beta_prime, self.proposal_scale)
        return self._cache[level][1]

    def target(self, level: int) -> TargetSpec:
        self.kernel(level)
        return self._cache[level][0]

    def initial_state(self, level: int) -> np.ndarray:
        return np.zeros(1)

    @staticmethod
    def phi(x: np.ndarray) -> float:
        return float(x[0])

    def random_state(self, level: int, stream: RngStream) -> np.ndarray:
        return np.array([-3.0 + 6.0 * stream.uniform()])

    def density_grid(self, level: int, n: int = 10_000):
        """Grid on [-3, 3] and the normalized density of level ``level`` on it."""
        grid = np.linspace(-3.0, 3.0, n)
        var = self.target(level).params["variance"]
        dens = np.exp(-0.5 * grid**2 / var)
        dens /= np.trapezoid(dens, grid)
        return grid, dens

    def exact_sample(self, level: int, n: int, stream: RngStream) -> np.ndarray:
        """Exact draws by inverse CDF on a fine grid; shape ``(n, 1)``."""
        grid, dens = self.density_grid(level, 200_001)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
        cdf /= cdf[-1]
        return np.interp(stream.uniforms(n), cdf, grid)[:, None]
