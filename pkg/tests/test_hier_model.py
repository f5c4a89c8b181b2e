import math
import pickle

import numpy as np
import pytest

from mlmcmc.coupling import batch_means
from mlmcmc.hier_model import (
    HierGaussModel,
    HierModelConfig,
    delta_conditional_rate,
    phi,
    simulate_data,
    u_conditional,
)
from mlmcmc.kernels import iterate
from mlmcmc.rng import Purpose, derive_stream


class TestConfig:
    def test_defaults_and_geometry(self):
        c = HierModelConfig()
        assert (c.alpha0, c.kappa0, c.lam, c.M0) == (1.0, 0.1, 1000.0, 8)
        assert c.K(0) == 8 and c.K(3) == 64
        assert c.h(2) == 1 / 32

    @pytest.mark.parametrize("field, label", [("alpha0", "alpha0"), ("kappa0", "kappa0"), ("lam", "lambda")])
    def test_positive_fields(self, field, label):
        with pytest.raises(ValueError, match=label):
            HierModelConfig(**{field: -1.0})

    def test_short_data(self):
        with pytest.raises(ValueError, match="K_max"):
            HierModelConfig(max_level=2, y=np.zeros(10))

    def test_model_needs_data(self):
        with pytest.raises(ValueError):
            HierGaussModel(HierModelConfig())


class TestSimulateData:
    def test_same_seed_same_data(self):
        a = simulate_data(1.0, 64, derive_stream(3, Purpose.DATA))
        b = simulate_data(1.0, 64, derive_stream(3, Purpose.DATA))
        assert np.array_equal(a, b)

    def test_noise_vanishes_for_huge_precision(self):
        y, u = simulate_data(1.0, 2048, derive_stream(3, Purpose.DATA), lam=1e12, return_latent=True)
        assert np.all(np.abs(y - u) < 1e-4)

    def test_first_coordinate_variance(self):
        R = 100_000
        y1 = np.array([simulate_data(1.0, 1, derive_stream(5, Purpose.DATA, 0, r))[0] for r in range(R)])
        target = 1.0 + 1e-3
        sd = target * math.sqrt(2.0 / (R - 1))
        assert abs(y1.var(ddof=1) - target) < 3 * sd

    def test_prior_truth_grows(self):
        _, u = simulate_data(1.0, 4096, derive_stream(3, Purpose.DATA), truth="prior", return_latent=True)
        j = np.arange(1, 4097.0)
        z = u / np.sqrt(j**3)
        assert abs(z.var() - 1.0) < 0.1
        with pytest.raises(ValueError):
            simulate_data(1.0, 4, derive_stream(3, Purpose.DATA), truth="other")

    def test_bad_args(self):
        with pytest.raises(ValueError):
            simulate_data(1.0, 0, derive_stream(1, Purpose.DATA))
        with pytest.raises(ValueError):
            simulate_data(0.0, 4, derive_stream(1, Purpose.DATA))


class TestConditionals:
    def test_hand_checked_entry(self):
        c = HierModelConfig(M0=1, max_level=0, y=np.array([0.5]))
        p = u_conditional(c, 0, 1.0)
        assert p.mean[0] == pytest.approx(500 / 1001, rel=1e-15)
        assert p.var[0] == pytest.approx(1 / 1001, rel=1e-15)

    def test_flat_prior_limit(self, model):
        p = model.u_conditional(2, 1e-14)
        np.testing.assert_allclose(p.mean, model.config.y[:32], rtol=1e-12)
        np.testing.assert_allclose(p.var, 1e-3, rtol=1e-12)

    def test_last_entry_scales_with_h_cubed(self, model):
        for level in (0, 3):
            delta = 2.5
            p = model.u_conditional(level, delta)
            assert 1.0 / p.var[-1] - model.config.lam == pytest.approx(delta * model.h(level) ** 3, rel=1e-6)

    def test_module_and_method_agree(self, model):
        a = u_conditional(model.config, 2, 0.7)
        b = model.u_conditional(2, 0.7)
        assert np.array_equal(a.mean, b.mean) and np.array_equal(a.var, b.var)

    def test_delta_must_be_positive(self, model):
        with pytest.raises(ValueError):
            model.u_conditional(1, 0.0)

    def test_rate_examples(self, model):
        K = model.K(1)
        assert delta_conditional_rate(model.config, 1, np.zeros(K)) == 0.1
        e1 = np.zeros(K)
        e1[0] = 1.0
        assert delta_conditional_rate(model.config, 1, e1) == pytest.approx(0.6)
        assert model.delta_conditional_rate(1, e1) == pytest.approx(0.6)
        with pytest.raises(ValueError):
            model.delta_conditional_rate(1, np.zeros(K + 1))

    @pytest.mark.parametrize("m", [1, 8, 64])
    def test_tail_bound(self, m):
        u = derive_stream(1, Purpose.ORACLE).uniforms(4096) * 2 - 1
        i = np.arange(m + 1, u.size + 1, dtype=float)
        tail = np.sum(i**-3 * u[m:] ** 2)
        assert tail <= np.max(np.abs(u)) ** 2 / (2 * m * m)


class TestPhi:
    def test_examples(self):
        assert phi(np.zeros(9)) == 0.0
        assert phi(np.r_[3.0, np.ones(8), np.full(8, 7.0)]) == 1.0

    def test_uses_only_shared_coordinates(self, model):
        x = np.r_[1.0, np.arange(1.0, 17.0)]
        assert model.phi(x) == model.phi(x[:9]) == 4.5


class TestKernel:
    def test_cost_per_sweep(self, model):
        for level in (0, 2, 4):
            _, cost = iterate(model.kernel(level), model.initial_state(level), 100, derive_stream(1, Purpose.LEVEL0))
            assert cost == 100 * (model.K(level) + 1)

    def test_level_range(self, model):
        with pytest.raises(ValueError):
            model.kernel(9)

    def test_pickle_roundtrip(self, model):
        clone = pickle.loads(pickle.dumps(model))
        x0 = model.initial_state(1)
        a = iterate(model.kernel(1), x0, 50, derive_stream(2, Purpose.LEVEL0))[0]
        b = iterate(clone.kernel(1), x0, 50, derive_stream(2, Purpose.LEVEL0))[0]
        assert np.array_equal(a, b)


class TestOracle:
    def test_zero_data(self):
        m = HierGaussModel(HierModelConfig(max_level=2, y=np.zeros(32)))
        assert m.posterior_oracle(2) == 0.0

    def test_concentrated_prior(self):
        delta_star, y1 = 2.0, 0.5
        kappa0 = 1e6
        m = HierGaussModel(HierModelConfig(alpha0=kappa0 * delta_star, kappa0=kappa0, M0=1, max_level=0,
                                           y=np.array([y1])))
        assert m.posterior_oracle(0) == pytest.approx(1000 * y1 / (delta_star + 1000), rel=1e-6)

    def test_finite_at_deepest_level(self, model):
        v = model.posterior_oracle(8)
        assert math.isfinite(v)

    def test_levels_converge(self, model):
        vals = [model.posterior_oracle(l) for l in range(7)]
        gaps = np.abs(np.diff(vals))
        assert np.all(gaps[1:] < gaps[:-1])

    def test_normalizer_in_log_domain(self, model):
        # exp(-5000) underflows; a rescaled integrand does not care
        class Shifted(HierGaussModel):
            def log_delta_posterior(self, level, delta):
                return super().log_delta_posterior(level, delta) - 5000.0

        shifted = Shifted(model.config)
        assert shifted.posterior_oracle(4) == pytest.approx(model.posterior_oracle(4), rel=1e-9)

    def test_long_gibbs_run_agrees(self, model):
        level = 3
        vals, _ = iterate(model.kernel(level), model.initial_state(level), 1_000_000,
                          derive_stream(1, Purpose.REPLICATE_ROOT, level), record=model.phi)
        mean, se = batch_means(vals)
        assert abs(mean - model.posterior_oracle(level)) < 4 * se

    def test_exact_sampler_matches_oracle(self, model):
        level, n = 2, 20_000
        x = model.exact_posterior_sample(level, n, derive_stream(1, Purpose.ORACLE, level))
        assert x.shape == (n, model.K(level) + 1) and np.all(x[:, 0] > 0)
        ph = x[:, 1:9].mean(axis=1)
        assert abs(ph.mean() - model.posterior_oracle(level)) < 4 * ph.std() / math.sqrt(n)
        d_mean = model.posterior_expectation(level, lambda d: d)
        assert abs(x[:, 0].mean() - d_mean) < 4 * x[:, 0].std() / math.sqrt(n)
