"""Fine/coarse chains driven by one innovation sequence.

The fine kernel's layout decides what is drawn. The coarse kernel reads the
same record, truncating each Gaussian slot to its own (smaller) size and
reusing uniform and gamma slots as they are. State spaces are nested by
prefix: the coarse state is ``fine[:coarse_dim]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from mlmcmc.kernels import IteratedMapKernel, draw_innovations, innovation_records
from mlmcmc.rng import RngStream


class IncompatibleKernelsError(ValueError):
    """Fine and coarse kernels cannot share innovations."""


@dataclass(frozen=True)
class CoupledState:
    fine: np.ndarray
    coarse: np.ndarray
    step_index: int = 0

    @classmethod
    def start(cls, x0: np.ndarray, coarse_dim: int | None = None) -> "CoupledState":
        """Initial pair: coarse is the projection of ``x0`` onto the common coordinates."""
        x0 = np.asarray(x0, dtype=float)
        if coarse_dim is None:
            coarse_dim = x0.size
        return cls(x0.copy(), x0[:coarse_dim].copy(), 0)


class IncrementSample(NamedTuple):
    value: float
    step_index: int


def coarse_view(fine_layout: tuple, coarse_layout: tuple) -> tuple:
    """Per-slot Gaussian prefix lengths for the coarse kernel (``None`` = shared scalar).

    Raises :class:`IncompatibleKernelsError` unless the layouts have the same
    kinds in the same order, equal gamma shapes, and coarse Gaussian slots no
    larger than the fine ones.
    """
    if len(fine_layout) != len(coarse_layout):
        raise IncompatibleKernelsError(f"layouts differ in length: {fine_layout} vs {coarse_layout}")
    view = []
    for (fk, fp), (ck, cp) in zip(fine_layout, coarse_layout):
        if fk != ck:
            raise IncompatibleKernelsError(f"innovation kinds differ: {fk} vs {ck}")
        if fk == "gaussian":
            if cp > fp:
                raise IncompatibleKernelsError(f"coarse gaussian slot ({cp}) larger than fine ({fp})")
            view.append(cp)
        else:
            if fk == "gamma" and fp != cp:
                raise IncompatibleKernelsError(f"gamma shapes differ: {fp} vs {cp}")
            view.append(None)
    return tuple(view)


def _coarse_record(rec: tuple, view: tuple) -> tuple:
    return tuple(r if n is None else r[:n] for r, n in zip(rec, view))


def _coarse_extra(view: tuple) -> int:
    # Gaussian coordinates re-applied by the coarse map; shared scalars count once.
    return sum(n for n in view if n is not None)


def coupled_step(fine_kernel: IteratedMapKernel, coarse_kernel: IteratedMapKernel,
                 s: CoupledState, stream: RngStream) -> CoupledState:
    """Advance both chains one step on a single innovation record."""
    view = coarse_view(fine_kernel.layout, coarse_kernel.layout)
    rec = draw_innovations(fine_kernel.layout, stream)
    return CoupledState(
        fine_kernel.apply(s.fine, rec),
        coarse_kernel.apply(s.coarse, _coarse_record(rec, view)),
        s.step_index + 1,
    )


@dataclass
class CoupledRun:
    """Output of :func:`coupled_trajectory`.

    ``increments[n-1]`` is ``phi(fine_n) - phi(coarse_n)`` for steps
    ``n = 1..n_steps``; ``fine_phi`` and ``coarse_phi`` hold the two
    chains' ``phi`` values.
    """

    increments: np.ndarray
    fine_phi: np.ndarray
    coarse_phi: np.ndarray
    cost: int
    final: CoupledState
    fine_states: np.ndarray | None = None
    coarse_states: np.ndarray | None = None

    def samples(self) -> list[IncrementSample]:
        return [IncrementSample(float(v), n + 1) for n, v in enumerate(self.increments)]


def coupled_trajectory(fine_kernel: IteratedMapKernel, coarse_kernel: IteratedMapKernel,
                       x0: np.ndarray, n_steps: int, stream: RngStream,
                       phi: Callable[[np.ndarray], float], keep_states: bool = False) -> CoupledRun:
    """Run the coupled pair for ``n_steps`` and collect increments.

    ``x0`` is the fine initial state; the coarse chain starts from its
    prefix. Cost counts the scalar draws consumed from ``stream`` plus the
    Gaussian coordinates the coarse map re-applies, i.e. the work of both
    chains with shared scalars counted once.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    view = coarse_view(fine_kernel.layout, coarse_kernel.layout)
    s = CoupledState.start(x0, coarse_kernel.state_dim)
    xf, xc = s.fine, s.coarse
    inc = np.empty(n_steps)
    fphi = np.empty(n_steps)
    cphi = np.empty(n_steps)
    fs = [] if keep_states else None
    cs = [] if keep_states else None
    start = stream.position
    for n, rec in enumerate(innovation_records(fine_kernel.layout, stream, n_steps)):
        xf = fine_kernel.apply(xf, rec)
        xc = coarse_kernel.apply(xc, _coarse_record(rec, view))
        pf = phi(xf)
        pc = phi(xc)
        fphi[n] = pf
        cphi[n] = pc
        inc[n] = pf - pc
        if keep_states:
            fs.append(xf)
            cs.append(xc)
    cost = stream.position - start + n_steps * _coarse_extra(view)
    return CoupledRun(
        increments=inc,
        fine_phi=fphi,
        coarse_phi=cphi,
        cost=cost,
        final=CoupledState(xf, xc, n_steps),
        fine_states=np.array(fs) if keep_states else None,
        coarse_states=np.array(cs) if keep_states else None,
    )


def batch_means(x: np.ndarray, n_batches: int = 32) -> tuple[float, float]:
    """Mean and batch-means standard error of a chain.

    With fewer than ``2 * n_batches`` samples the batch count drops to
    ``floor(sqrt(n))`` (at least 2). A single sample has undefined SE (nan).
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n == 0:
        raise ValueError("no samples")
    mean = float(np.mean(x))
    if n == 1:
        return mean, math.nan
    if n < 2 * n_batches:
        n_batches = max(2, math.isqrt(n))
    b = n // n_batches
    # Batches taken from the tail so the most recent samples are always used.
    tail = x[n - b * n_batches:].reshape(n_batches, b)
    bm = tail.mean(axis=1)
    se = float(np.std(bm, ddof=1) / math.sqrt(n_batches))
    return mean, se


def increment_mean(samples, burn_in: int = 0, n_batches: int = 32) -> tuple[float, float]:
    """Post-burn-in mean of increments with its batch-means SE."""
    if isinstance(samples, CoupledRun):
        values = samples.increments
    elif len(samples) and isinstance(samples[0], IncrementSample):
        values = np.array([s.value for s in samples])
    else:
        values = np.asarray(samples, dtype=float)
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")
    kept = values[burn_in:]
    if kept.size == 0:
        raise ValueError(f"burn_in={burn_in} leaves no samples out of {values.size}")
    return batch_means(kept, n_batches)
