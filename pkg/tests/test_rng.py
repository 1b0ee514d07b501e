import numpy as np
import pytest
from hypothesis import given, strategies as st

from glx.rng import KeyedStream, generator, keyed_uniform_reference, split_seed, stream_key


def test_split_seed_round_trip():
    s = (123 << 64) | 456
    assert split_seed(s) == (456, 123)
    with pytest.raises(ValueError):
        split_seed(-1)
    with pytest.raises(ValueError):
        split_seed(1 << 128)


def test_stream_names_give_different_keys():
    assert stream_key(1, "a") != stream_key(1, "b")
    assert stream_key(1, "a") != stream_key(2, "a")
    assert stream_key(1, "a", 3) == stream_key(1, "a", 3)


def test_generator_reproducible():
    a = generator(9, "walk").standard_normal(5)
    b = generator(9, "walk").standard_normal(5)
    assert np.array_equal(a, b)


@given(st.integers(0, 2**70), st.integers(0, 50), st.integers(0, 1000), st.integers(0, 99), st.integers(0, 3))
def test_jit_uniform_matches_pure_python(seed, replica, sweep, site, draw):
    ks = KeyedStream(seed, "chain")
    u = ks.uniforms([replica], sweep, site + 1, draw)[0, site]
    assert u == keyed_uniform_reference(seed, ("chain",), replica, sweep, site, draw)
    assert 0.0 < u < 1.0


def test_keyed_draws_do_not_depend_on_batch_split():
    ks = KeyedStream(4, "x")
    together = ks.normals(np.arange(6), 3, 50)
    apart = np.concatenate([ks.normals([r], 3, 50) for r in range(6)])
    assert np.array_equal(together, apart)


def test_keyed_normals_are_standard():
    z = KeyedStream(11, "n").normals(np.arange(200), 0, 500).ravel()
    assert abs(z.mean()) < 4 / np.sqrt(z.size)
    assert abs(z.var() - 1) < 4 * np.sqrt(2 / z.size)
