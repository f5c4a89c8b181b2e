import math

import numpy as np
import pytest

from mlmcmc.coupling import CoupledState
from mlmcmc.kernels import (
    ConditionalSamplerError,
    GibbsBlock,
    SyntheticMHModel,
    TargetSpec,
    gibbs_kernel,
    gibbs_sweep_step,
    iterate,
    mh_kernel,
    mh_map_step,
    synthetic_target,
)
from mlmcmc.diagnostics import ols_slope
from mlmcmc.rng import Purpose, derive_stream


def truncated_normal():
    return TargetSpec(lambda x: -0.5 * float(x[0]) ** 2, 1, np.array([-3.0]), np.array([3.0]))


@pytest.fixture(scope="module")
def long_mh_run():
    kern = mh_kernel(truncated_normal(), 1.0)
    traj, cost = iterate(kern, np.zeros(1), 1_000_000, derive_stream(5, Purpose.LEVEL0))
    return traj[:, 0], cost


class TestMetropolisMap:
    def test_uphill_always_accepted(self):
        apply = mh_kernel(truncated_normal(), 1.0).apply
        for u2 in (1e-12, 0.5, 1 - 1e-12):
            assert apply(np.array([2.0]), (np.array([-1.0]), u2))[0] == 1.0

    def test_rejection_returns_current_state(self):
        apply = mh_kernel(truncated_normal(), 1.0).apply
        a = math.exp(-0.5)
        x = np.array([0.0])
        assert apply(x, (np.array([1.0]), a + 1e-9)) is x
        assert apply(x, (np.array([1.0]), a - 1e-9))[0] == 1.0

    def test_outside_support_rejected(self):
        apply = mh_kernel(truncated_normal(), 1.0).apply
        x = np.array([2.5])
        assert apply(x, (np.array([1.0]), 1e-9)) is x

    def test_non_finite_start_raises(self):
        target = TargetSpec(lambda x: -np.inf if x[0] < 0 else 0.0, 1)
        with pytest.raises(ValueError):
            mh_map_step(target, 1.0, np.array([-1.0]), derive_stream(1, Purpose.LEVEL0))

    def test_bad_scale(self):
        with pytest.raises(ValueError):
            mh_kernel(truncated_normal(), 0.0)

    def test_step_consumes_dim_plus_one(self):
        s = derive_stream(1, Purpose.LEVEL0)
        mh_map_step(truncated_normal(), 1.0, np.zeros(1), s)
        assert s.position == 2

    def test_ergodic_mean(self, long_mh_run):
        traj, cost = long_mh_run
        assert cost == 2 * traj.size
        assert abs(traj.mean()) < 0.02

    def test_acceptance_fraction_interior(self, long_mh_run):
        traj = long_mh_run[0][:100_000]
        moved = np.mean(np.diff(traj) != 0.0)
        assert 0.0 < moved < 1.0

    def test_histogram_matches_density(self, long_mh_run):
        traj = long_mh_run[0]
        edges = np.linspace(-3, 3, 41)
        emp = np.histogram(traj, edges)[0] / traj.size
        grid, dens = SyntheticMHModel().density_grid(200, 400_001)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
        ref = np.diff(np.interp(edges, grid, cdf / cdf[-1]))
        assert 0.5 * np.abs(emp - ref).sum() < 0.02


class TestGibbsSweep:
    def test_identity_blocks(self):
        blocks = [GibbsBlock(slice(0, 2), ("gaussian", 2), lambda x, u: x[0:2]),
                  GibbsBlock(slice(2, 3), ("uniform", 1), lambda x, u: x[2:3])]
        x = np.array([1.0, -2.0, 3.5])
        assert np.array_equal(gibbs_sweep_step(blocks, x, derive_stream(1, Purpose.LEVEL0)), x)

    def test_single_block_is_direct_sampling(self):
        blocks = [GibbsBlock(slice(0, 1), ("gaussian", 1), lambda x, u: 2.0 + 3.0 * u)]
        s = derive_stream(1, Purpose.LEVEL0)
        out = gibbs_sweep_step(blocks, np.zeros(1), s)
        assert out[0] == 2.0 + 3.0 * s.replay(0).normal()

    def test_blocks_updated_in_order(self):
        # block 2 sees block 1's new value
        blocks = [GibbsBlock(slice(0, 1), ("uniform", 1), lambda x, u: np.array([10.0])),
                  GibbsBlock(slice(1, 2), ("uniform", 1), lambda x, u: x[0:1] + 1.0)]
        out = gibbs_sweep_step(blocks, np.zeros(2), derive_stream(1, Purpose.LEVEL0))
        assert out.tolist() == [10.0, 11.0]

    def test_failure_names_block(self):
        def bad(x, u):
            raise ValueError("variance must be positive")
        blocks = [GibbsBlock(slice(0, 1), ("uniform", 1), lambda x, u: np.array([u])),
                  GibbsBlock(slice(1, 2), ("uniform", 1), bad)]
        with pytest.raises(ConditionalSamplerError) as exc:
            gibbs_sweep_step(blocks, np.zeros(2), derive_stream(1, Purpose.LEVEL0))
        assert exc.value.block == 1 and "block 1" in str(exc.value)

    def test_non_finite_draw_rejected(self):
        blocks = [GibbsBlock(slice(0, 1), ("uniform", 1), lambda x, u: np.array([np.nan]))]
        with pytest.raises(ConditionalSamplerError):
            gibbs_sweep_step(blocks, np.zeros(1), derive_stream(1, Purpose.LEVEL0))

    def test_blocks_must_partition(self):
        blk = GibbsBlock(slice(0, 1), ("uniform", 1), lambda x, u: x[0:1])
        with pytest.raises(ValueError):
            gibbs_kernel([blk], 2)
        with pytest.raises(ValueError):
            gibbs_kernel([blk, blk], 1)

    def test_hier_sweep_matches_self_coupled_sweep(self, model):
        s = derive_stream(3, Purpose.LEVEL0)
        x0 = model.initial_state(0)
        solo = model.kernel(0).step(x0, s.replay(0))
        pair = model.coupled_sweep(0, CoupledState.start(x0), s.replay(0), coarse_level=0)
        assert np.array_equal(solo, pair.fine) and np.array_equal(solo, pair.coarse)


class TestIterate:
    def test_zero_steps(self):
        traj, cost = iterate(mh_kernel(truncated_normal(), 1.0), np.zeros(1), 0, derive_stream(1, Purpose.LEVEL0))
        assert traj.shape == (0, 1) and cost == 0

    def test_deterministic(self):
        kern = mh_kernel(truncated_normal(), 1.0)
        a = iterate(kern, np.zeros(1), 500, derive_stream(4, Purpose.LEVEL0))
        b = iterate(kern, np.zeros(1), 500, derive_stream(4, Purpose.LEVEL0))
        assert np.array_equal(a[0], b[0]) and a[1] == b[1]

    def test_matches_stepwise(self):
        kern = mh_kernel(truncated_normal(), 1.0)
        traj, _ = iterate(kern, np.zeros(1), 50, derive_stream(4, Purpose.LEVEL0))
        s = derive_stream(4, Purpose.LEVEL0)
        x = np.zeros(1)
        for row in traj:
            x = kern.step(x, s)
            assert np.array_equal(row, x)

    def test_record_function(self, small_model):
        k = small_model.kernel(1)
        x0 = small_model.initial_state(1)
        traj, cost = iterate(k, x0, 20, derive_stream(2, Purpose.LEVEL0))
        vals, cost2 = iterate(k, x0, 20, derive_stream(2, Purpose.LEVEL0), record=small_model.phi)
        assert cost == cost2 == 20 * (small_model.K(1) + 1)
        assert np.array_equal(vals, [small_model.phi(r) for r in traj])

    def test_negative_steps(self):
        with pytest.raises(ValueError):
            iterate(mh_kernel(truncated_normal(), 1.0), np.zeros(1), -1, derive_stream(1, Purpose.LEVEL0))


class TestSyntheticTarget:
    def test_same_level_same_params(self):
        a, _ = synthetic_target(3, 1.0)
        b, _ = synthetic_target(3, 1.0)
        assert a.params == b.params

    def test_limit_is_standard_normal(self):
        m = SyntheticMHModel()
        grid, dens = m.density_grid(60)
        ref = np.exp(-0.5 * grid**2)
        ref /= np.trapezoid(ref, grid)
        assert np.max(np.abs(dens - ref)) < 1e-12

    @pytest.mark.parametrize("beta_prime", [0.5, 1.0, 2.0])
    def test_level_gap_rate(self, beta_prime):
        m = SyntheticMHModel(beta_prime)
        levels = range(1, 9)
        gaps = []
        for l in levels:
            _, d1 = m.density_grid(l)
            _, d0 = m.density_grid(l - 1)
            gaps.append(np.max(np.abs(d1 - d0)))
        slope = ols_slope(np.log2([m.h(l) for l in levels]), np.log2(gaps))[0]
        assert abs(slope - beta_prime) < 0.2

    def test_negative_level(self):
        with pytest.raises(ValueError):
            synthetic_target(-1, 1.0)

    def test_stationarity_from_exact_draws(self):
        m = SyntheticMHModel()
        level, R = 2, 10_000
        x0 = m.exact_sample(level, R, derive_stream(6, Purpose.ORACLE))
        kern = m.kernel(level)
        s = derive_stream(6, Purpose.ORACLE, replicate=1)
        x1 = np.array([kern.step(x, s) for x in x0])
        for f in (lambda v: v, lambda v: v**2):
            d = f(x1[:, 0]) - f(x0[:, 0])
            assert abs(d.mean()) < 4 * d.std(ddof=1) / math.sqrt(R)
