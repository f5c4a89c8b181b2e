import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlmcmc.rng import (
    KEY_SCHEMA_VERSION,
    Purpose,
    RngStream,
    StreamKey,
    derive_stream,
    draw_gamma,
    draw_gaussian_vector,
    draw_uniform,
)


def test_same_key_same_draws():
    a = derive_stream(7, Purpose.LEVEL_PAIR, 1, 0).uniforms(100)
    b = derive_stream(7, Purpose.LEVEL_PAIR, 1, 0).uniforms(100)
    assert np.array_equal(a, b)


def test_distinct_levels_uncorrelated():
    a = derive_stream(7, Purpose.LEVEL_PAIR, 1, 0).uniforms(100_000)
    b = derive_stream(7, Purpose.LEVEL_PAIR, 2, 0).uniforms(100_000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.01


@pytest.mark.parametrize("other", [
    dict(purpose=Purpose.LEVEL0, level=1, replicate=0),
    dict(purpose=Purpose.LEVEL_PAIR, level=1, replicate=1),
    dict(purpose=Purpose.ORACLE, level=0, replicate=0),
])
def test_cross_correlation_bound(other):
    n = 10_000
    a = derive_stream(3, Purpose.LEVEL_PAIR, 1, 0).uniforms(n)
    b = derive_stream(3, **other).uniforms(n)
    assert abs(np.corrcoef(a, b)[0, 1]) < 4 / math.sqrt(n)


def test_distinct_seeds_differ():
    assert not np.array_equal(derive_stream(1, "level0").uniforms(10), derive_stream(2, "level0").uniforms(10))


def test_purpose_accepts_names_and_ints():
    a = derive_stream(5, "oracle", 2, 3).uniforms(4)
    b = derive_stream(5, int(Purpose.ORACLE), 2, 3).uniforms(4)
    assert np.array_equal(a, b)


def test_uniform_range_and_position():
    s = derive_stream(11, Purpose.LEVEL0)
    u = s.uniforms(1_000_000)
    assert s.position == 1_000_000
    assert u.min() > 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.002
    v = draw_uniform(s)
    assert 0.0 < v < 1.0 and s.position == 1_000_001


def test_replay_reproduces_value():
    s = derive_stream(11, Purpose.LEVEL0)
    s.uniforms(17)
    v = s.uniform()
    assert s.replay(17).uniform() == v


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 5000), st.integers(0, 40))
def test_seek_matches_sequential(pos, n):
    s = derive_stream(2, Purpose.REPLICATE_ROOT, 0, 9)
    seq = s.uniforms(pos + n)
    assert np.array_equal(s.replay(pos).uniforms(n), seq[pos:])


def test_gaussian_prefix_property():
    s = derive_stream(4, Purpose.LEVEL_PAIR, 3)
    v3 = draw_gaussian_vector(s, 3)
    v2 = draw_gaussian_vector(s.replay(0), 2)
    assert np.array_equal(v3[:2], v2)


def test_gaussian_single_replay_and_empty():
    s = derive_stream(4, Purpose.LEVEL_PAIR, 3)
    x = draw_gaussian_vector(s, 1)
    assert np.array_equal(draw_gaussian_vector(s.replay(0), 1), x)
    pos = s.position
    assert draw_gaussian_vector(s, 0).size == 0 and s.position == pos


def test_gaussian_variance():
    z = derive_stream(9, Purpose.ORACLE).normals(1_000_000)
    assert abs(z.var() - 1.0) < 0.01
    assert abs(z.mean()) < 0.005


def test_gamma_shape_one_is_exponential_inverse():
    s = derive_stream(8, Purpose.LEVEL0)
    g = draw_gamma(s, 1.0)
    u = s.replay(0).uniform()
    assert g == -math.log(u) and s.position == 1


@pytest.mark.parametrize("shape, tol", [(1.0, 0.004), (2.5, 0.006)])
def test_gamma_mean(shape, tol):
    s = derive_stream(21, Purpose.ORACLE)
    g = np.array([s.gamma(shape) for _ in range(1_000_000)])
    assert abs(g.mean() - shape) < tol


def test_gamma_small_shape_mean():
    s = derive_stream(21, Purpose.ORACLE, 1)
    g = np.array([s.gamma(0.4) for _ in range(200_000)])
    assert g.min() > 0
    assert abs(g.mean() - 0.4) < 4 * math.sqrt(0.4 / 200_000)


@pytest.mark.parametrize("shape", [0.0, -1.0, float("nan")])
def test_gamma_domain_error(shape):
    with pytest.raises(ValueError):
        draw_gamma(derive_stream(1, Purpose.LEVEL0), shape)


def test_key_validation():
    with pytest.raises(ValueError):
        StreamKey(-1, Purpose.LEVEL0)
    with pytest.raises(ValueError):
        StreamKey(1, Purpose.LEVEL0, level=-1)
    with pytest.raises(ValueError):
        RngStream(StreamKey(1, Purpose.LEVEL0)).seek(-3)


def test_schema_version_in_key():
    ss = StreamKey(1, Purpose.LEVEL_PAIR, 2, 3).seed_sequence()
    assert ss.spawn_key == (KEY_SCHEMA_VERSION, 0, 2, 3)
