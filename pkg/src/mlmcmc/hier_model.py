"""Hierarchical Gaussian model with a Gamma hyper-parameter.

Data ``y_j | u_j ~ N(u_j, 1/lam)`` and the (unnormalized in ``u``) prior

    p(u_{1:K}, delta) = exp(-delta/2 * sum_j j^-3 u_j^2) * delta^(alpha0-1) * exp(-kappa0*delta)

Level ``l`` keeps ``K_l = M0 * 2**l`` coordinates with ``h_l = 1/K_l``. The
full conditionals are

    u_j | y, delta ~ N(lam*y_j / (delta*j^-3 + lam), 1 / (delta*j^-3 + lam))
    delta | y, u   ~ Gamma(alpha0, rate = kappa0 + 0.5 * sum_j j^-3 u_j^2)

States are stored as ``[delta, u_1, ..., u_K]`` so that the coordinates
shared by levels ``l-1`` and ``l`` form a prefix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import integrate, optimize

from mlmcmc.coupling import CoupledState, coupled_step
from mlmcmc.kernels import GibbsBlock, IteratedMapKernel, gibbs_kernel
from mlmcmc.rng import RngStream


class ConditionalParams(NamedTuple):
    mean: np.ndarray
    var: np.ndarray


@dataclass(frozen=True, eq=False)
class HierModelConfig:
    alpha0: float = 1.0
    kappa0: float = 0.1
    lam: float = 1000.0
    M0: int = 8
    max_level: int = 8
    y: np.ndarray | None = None

    def __post_init__(self):
        for name, label in (("alpha0", "alpha0"), ("kappa0", "kappa0"), ("lam", "lambda")):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"{label} must be a positive finite number, got {v!r}")
        if int(self.M0) != self.M0 or self.M0 < 1:
            raise ValueError(f"M0 must be an integer >= 1, got {self.M0!r}")
        if int(self.max_level) != self.max_level or self.max_level < 0:
            raise ValueError(f"max_level must be an integer >= 0, got {self.max_level!r}")
        if self.y is not None:
            y = np.asarray(self.y, dtype=float)
            if y.ndim != 1 or y.size < self.K(self.max_level):
                raise ValueError(f"y must have at least K_max = {self.K(self.max_level)} entries, got {y.size}")
            if not np.all(np.isfinite(y)):
                raise ValueError("y must be finite")
            object.__setattr__(self, "y", y)

    def K(self, level: int) -> int:
        return int(self.M0) * 2**int(level)

    def h(self, level: int) -> float:
        return 1.0 / self.K(level)


def simulate_data(true_delta: float, K_max: int, stream: RngStream, lam: float = 1000.0,
                  return_latent: bool = False, truth: str = "decaying"):
    """Simulate ``y_{1:K_max}`` with ``y_j = u_j + N(0, 1/lam)``.

    ``truth="decaying"`` (default) draws ``u_j ~ N(0, j^-3 / true_delta)``, a
    square-summable signal. ``truth="prior"`` draws ``u_j`` from the model's
    own prior, ``N(0, j^3 / true_delta)``, whose variance grows with ``j``.
    Draw order: all ``u`` normals first, then the noise.
    """
    if K_max < 1:
        raise ValueError("K_max must be >= 1")
    if not true_delta > 0 or not lam > 0:
        raise ValueError("true_delta and lam must be positive")
    if truth not in ("decaying", "prior"):
        raise ValueError(f"truth must be 'decaying' or 'prior', got {truth!r}")
    j = np.arange(1, K_max + 1, dtype=float)
    scale = j**-3 if truth == "decaying" else j**3
    u = stream.normals(K_max) * np.sqrt(scale / true_delta)
    y = u + stream.normals(K_max) / math.sqrt(lam)
    return (y, u) if return_latent else y


class HierGaussModel:
    """Per-level kernels, the coupled sweep, ``phi`` and exact references.

    Build with a config whose ``y`` is set (see :func:`simulate_data`).
    """

    def __init__(self, config: HierModelConfig):
        if config.y is None:
            raise ValueError("HierGaussModel needs data: config.y is None")
        self.config = config
        K = config.K(config.max_level)
        j = np.arange(1, K + 1, dtype=float)
        self._jm3 = j**-3
        self._y = config.y[:K]
        self._lam_y = config.lam * self._y
        self._kernels: dict[int, IteratedMapKernel] = {}
        self._grids: dict[int, tuple] = {}

    def __getstate__(self):
        return {"config": self.config}

    def __setstate__(self, state):
        self.__init__(state["config"])

    # -- level geometry -------------------------------------------------
    def K(self, level: int) -> int:
        return self.config.K(level)

    def h(self, level: int) -> float:
        return self.config.h(level)

    def state_dim(self, level: int) -> int:
        return self.K(level) + 1

    def _check_level(self, level: int):
        if not 0 <= level <= self.config.max_level:
            raise ValueError(f"level {level} outside 0..max_level={self.config.max_level}")

    def initial_state(self, level: int) -> np.ndarray:
        """Reference start: ``delta = 1``, ``u = 0``."""
        x = np.zeros(self.state_dim(level))
        x[0] = 1.0
        return x

    # -- conditionals ---------------------------------------------------
    def u_conditional(self, level: int, delta: float) -> ConditionalParams:
        if not delta > 0:
            raise ValueError(f"delta must be positive, got {delta}")
        K = self.K(level)
        prec = delta * self._jm3[:K] + self.config.lam
        return ConditionalParams(self._lam_y[:K] / prec, 1.0 / prec)

    def delta_conditional_rate(self, level: int, u: np.ndarray) -> float:
        K = self.K(level)
        u = np.asarray(u, dtype=float)
        if u.size != K:
            raise ValueError(f"u must have K_l = {K} entries, got {u.size}")
        return float(self.config.kappa0 + 0.5 * np.dot(self._jm3[:K], u * u))

    def kernel(self, level: int) -> IteratedMapKernel:
        """Deterministic-scan Gibbs sweep at ``level``: u-block, then delta."""
        self._check_level(level)
        if level in self._kernels:
            return self._kernels[level]
        K = self.K(level)
        jm3 = self._jm3[:K]
        lam_y = self._lam_y[:K]
        lam = self.config.lam
        kappa0 = self.config.kappa0

        def update_u(x, v):
            delta = x[0]
            if not delta > 0:
                raise ValueError(f"delta must be positive, got {delta}")
            prec = delta * jm3 + lam
            return lam_y / prec + v / np.sqrt(prec)

        def update_delta(x, w):
            u = x[1:]
            return w / (kappa0 + 0.5 * np.dot(jm3, u * u))

        blocks = [
            GibbsBlock(slice(1, K + 1), ("gaussian", K), update_u),
            GibbsBlock(slice(0, 1), ("gamma", self.config.alpha0), update_delta),
        ]
        k = gibbs_kernel(blocks, K + 1, level=level, level_h=self.h(level), name=f"hier-gibbs-l{level}")
        self._kernels[level] = k
        return k

    def coupled_sweep(self, level: int, s: CoupledState, stream: RngStream,
                      coarse_level: int | None = None) -> CoupledState:
        """One coupled sweep of ``level`` (fine) and ``coarse_level`` (default ``level - 1``).

        ``coarse_level == level`` couples a level with itself.
        """
        if coarse_level is None:
            coarse_level = level - 1
        if coarse_level not in (level - 1, level) or coarse_level < 0:
            raise ValueError(f"coarse_level must be {level - 1} or {level}, got {coarse_level}")
        if s.fine.size != self.state_dim(level) or s.coarse.size != self.state_dim(coarse_level):
            raise ValueError("coupled state dimensions do not match the levels")
        return coupled_step(self.kernel(level), self.kernel(coarse_level), s, stream)

    def phi(self, x: np.ndarray) -> float:
        """Mean of the first ``M0`` u-coordinates."""
        M0 = self.config.M0
        return float(x[1:1 + M0].sum()) / M0

    def random_state(self, level: int, stream: RngStream, delta_box=(0.1, 10.0)) -> np.ndarray:
        """Random state for assumption probes: delta uniform on ``delta_box``,
        u_j uniform within 3 noise SDs of y_j."""
        K = self.K(level)
        x = np.empty(K + 1)
        lo, hi = delta_box
        x[0] = lo + (hi - lo) * stream.uniform()
        half = 3.0 / math.sqrt(self.config.lam)
        x[1:] = self._y[:K] + half * (2.0 * stream.uniforms(K) - 1.0)
        return x

    # -- exact references ---------------------------------------------
    def log_delta_posterior(self, level: int, delta) -> np.ndarray:
        """Unnormalized ``log p(delta | y_{1:K_l})`` with u integrated out.

        Integrating ``u_j`` against the unnormalized prior leaves
        ``(1 + a_j/lam)^(-1/2) * exp(-y_j^2 a_j / (2 (1 + a_j/lam)))`` per
        coordinate, with ``a_j = delta * j^-3``.
        """
        K = self.K(level)
        c = self.config
        delta = np.atleast_1d(np.asarray(delta, dtype=float))
        a = delta[:, None] * self._jm3[None, :K]
        r = a / c.lam
        ll = -0.5 * np.log1p(r) - 0.5 * self._y[None, :K] ** 2 * a / (1.0 + r)
        return (c.alpha0 - 1.0) * np.log(delta) - c.kappa0 * delta + ll.sum(axis=1)

    def _log_q(self, level: int, t):
        # density of t = log(delta): p(e^t) e^t
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return self.log_delta_posterior(level, np.exp(t)) + t

    def _t_bracket(self, level: int, drop: float = 60.0):
        grid = np.linspace(-40.0, 25.0, 1301)
        lq = self._log_q(level, grid)
        i = int(np.argmax(lq))
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
        res = optimize.minimize_scalar(lambda t: -self._log_q(level, t)[0], bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-10})
        t_mode = float(res.x)
        lq_max = float(self._log_q(level, t_mode)[0])
        # curvature-based width, then widen until the log density has dropped by `drop`
        e = 1e-4
        curv = -(self._log_q(level, t_mode + e)[0] - 2 * lq_max + self._log_q(level, t_mode - e)[0]) / e**2
        width = 1.0 / math.sqrt(curv) if curv > 0 else 1.0

        def edge(sign):
            w = width
            while self._log_q(level, t_mode + sign * w)[0] > lq_max - drop:
                w *= 2.0
                if w > 200:
                    raise RuntimeError("delta posterior does not decay; cannot bracket")
            return t_mode + sign * w

        return edge(-1.0), t_mode, edge(1.0), lq_max

    def posterior_oracle(self, level: int, epsrel: float = 1e-8) -> float:
        """``E[phi | y_{1:K_l}]`` by one-dimensional adaptive quadrature over ``log delta``."""
        return self.posterior_expectation(level, self.phi_conditional_mean, epsrel)

    def phi_conditional_mean(self, delta):
        """``E[phi | delta, y]`` (depends only on the first ``M0`` coordinates)."""
        M0 = self.config.M0
        delta = np.atleast_1d(np.asarray(delta, dtype=float))
        prec = delta[:, None] * self._jm3[None, :M0] + self.config.lam
        return (self._lam_y[None, :M0] / prec).mean(axis=1)

    def posterior_expectation(self, level: int, g, epsrel: float = 1e-8) -> float:
        """``E[g(delta) | y_{1:K_l}]`` for a vectorized ``g``."""
        self._check_level(level)
        t_lo, t_mode, t_hi, lq_max = self._t_bracket(level)

        def w(t):
            return math.exp(self._log_q(level, t)[0] - lq_max)

        def wg(t):
            return w(t) * float(g(np.array([math.exp(t)]))[0])

        def quad(f, epsabs):
            # full_output adds a fourth element (the message) only on failure
            res = integrate.quad(f, t_lo, t_hi, points=[t_mode], epsabs=epsabs, epsrel=epsrel,
                                 limit=500, full_output=1)
            if len(res) > 3:
                raise RuntimeError(f"posterior quadrature did not converge: {res[3]}")
            return res[0]

        z = quad(w, 0.0)
        num = quad(wg, 1e-15 * z)
        return num / z

    def _inverse_cdf_grid(self, level: int, n: int = 1 << 15):
        if level not in self._grids:
            t_lo, _, t_hi, lq_max = self._t_bracket(level)
            t = np.linspace(t_lo, t_hi, n)
            q = np.exp(self._log_q(level, t) - lq_max)
            cdf = np.concatenate([[0.0], np.cumsum(0.5 * (q[1:] + q[:-1]) * np.diff(t))])
            cdf /= cdf[-1]
            self._grids[level] = (t, cdf)
        return self._grids[level]

    def exact_posterior_sample(self, level: int, n: int, stream: RngStream) -> np.ndarray:
        """``n`` exact posterior draws at ``level``, shape ``(n, K_l + 1)``.

        delta by inverse CDF on a fine grid in ``log delta``, then ``u | delta``
        from its Gaussian conditional.
        """
        self._check_level(level)
        K = self.K(level)
        t, cdf = self._inverse_cdf_grid(level)
        delta = np.exp(np.interp(stream.uniforms(n), cdf, t))
        prec = delta[:, None] * self._jm3[None, :K] + self.config.lam
        z = stream.normals(n * K).reshape(n, K)
        out = np.empty((n, K + 1))
        out[:, 0] = delta
        out[:, 1:] = self._lam_y[None, :K] / prec + z / np.sqrt(prec)
        return out


# Module-level forms of the model operations.

def u_conditional(config: HierModelConfig, level: int, delta: float) -> ConditionalParams:
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    K = config.K(level)
    j = np.arange(1, K + 1, dtype=float)
    prec = delta * j**-3 + config.lam
    return ConditionalParams(config.lam * np.asarray(config.y[:K]) / prec, 1.0 / prec)


def delta_conditional_rate(config: HierModelConfig, level: int, u: np.ndarray) -> float:
    K = config.K(level)
    u = np.asarray(u, dtype=float)
    if u.size != K:
        raise ValueError(f"u must have K_l = {K} entries, got {u.size}")
    j = np.arange(1, K + 1, dtype=float)
    return float(config.kappa0 + 0.5 * np.dot(j**-3, u * u))


def phi(x: np.ndarray, M0: int = 8) -> float:
    return float(np.asarray(x)[1:1 + M0].sum()) / M0
