import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from mvhomog import rng


def test_normals_repeatable():
    a = rng.normals(42, np.arange(100), step=7, ncomp=3)
    b = rng.normals(42, np.arange(100), step=7, ncomp=3)
    assert np.array_equal(a, b)
    assert a.shape == (100, 3)


def test_different_seeds_streams_steps_differ():
    base = rng.normals(1, np.arange(50), 0, 2)
    assert not np.array_equal(base, rng.normals(2, np.arange(50), 0, 2))
    assert not np.array_equal(base, rng.normals(1, np.arange(50) + 50, 0, 2))
    assert not np.array_equal(base, rng.normals(1, np.arange(50), 1, 2))


def test_chunk_invariance():
    streams = np.arange(257)
    whole = rng.normals(9, streams, 4, 2)
    parts = np.concatenate([rng.normals(9, streams[:100], 4, 2),
                            rng.normals(9, streams[100:190], 4, 2),
                            rng.normals(9, streams[190:], 4, 2)])
    assert np.array_equal(whole, parts)


def test_permuting_streams_permutes_draws():
    streams = np.arange(64)
    perm = np.random.default_rng(0).permutation(64)
    assert np.array_equal(rng.normals(5, streams[perm], 2, 3),
                          rng.normals(5, streams, 2, 3)[perm])


def test_normal_moments():
    x = rng.normals(3, np.arange(100000), 0, 2).ravel()
    assert abs(x.mean()) < 0.01
    assert abs(x.var() - 1.0) < 0.02
    assert abs(np.mean(x ** 3)) < 0.05
    assert np.all(np.isfinite(x))


def test_uniforms_in_half_open_interval():
    u = rng.uniforms(11, np.arange(100000), 0, 1).ravel()
    assert u.min() > 0.0
    assert u.max() <= 1.0
    assert abs(u.mean() - 0.5) < 0.01


def test_unit_vectors_normalized():
    v = rng.unit_vectors(7, 500, 3)
    assert np.allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-12)


def test_derive_labels_separate_domains():
    assert rng.derive(0, "alpha") != rng.derive(0, "beta")
    assert rng.derive(0, "alpha") == rng.derive(0, "alpha")
    assert rng.derive(1, "alpha") != rng.derive(0, "alpha")


@given(seed=st.integers(min_value=0, max_value=2 ** 62),
       step=st.integers(min_value=0, max_value=2 ** 30))
def test_draws_pure_in_key(seed, step):
    streams = np.arange(8)
    a = rng.normals(seed, streams, step, 2)
    b = rng.normals(seed, streams, step, 2)
    assert np.array_equal(a, b)
    assert np.all(np.isfinite(a))
