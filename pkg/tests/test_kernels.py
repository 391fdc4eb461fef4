import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from infopriv.exceptions import LengthMismatch, SupportTooLarge
from infopriv.kernels import (
    GramCache,
    KernelSpec,
    PrivacyMapping,
    count_kernel,
    cross_gram_Q,
    enumerate_messages,
    gram_Q,
    kernel_Q,
    kernel_Q_bruteforce,
    parse_kernel,
)


def test_count_kernel_examples():
    assert count_kernel((1, 2, 3, 4), (1, 2, 3, 4)) == 4
    assert count_kernel((1, 2), (2, 1)) == 0
    assert count_kernel((1, 2, 3), (1, 2, 4)) == 2
    with pytest.raises(LengthMismatch):
        count_kernel((1, 2), (1, 2, 3))


def test_parse_kernel():
    assert parse_kernel("count") == KernelSpec("count")
    assert parse_kernel("gaussian:2.5") == KernelSpec("gaussian", 2.5)
    assert str(parse_kernel("gaussian:2.5")) == "gaussian:2.5"
    with pytest.raises(ValueError):
        parse_kernel("poly:3")
    with pytest.raises(ValueError):
        KernelSpec("gaussian", 0.0)


def test_uniform_mapping_kernel_is_s_over_z():
    Q = PrivacyMapping.uniform(4, 5, 2)
    assert kernel_Q((1, 2, 3, 4), (5, 5, 1, 2), Q) == pytest.approx(2.0)
    xs = np.random.default_rng(0).integers(1, 6, size=(5, 4))
    assert np.allclose(gram_Q(xs, Q), 2.0)


def test_deterministic_mapping_reduces_to_count_kernel():
    assign = np.array([[1, 2, 2], [2, 1, 2]])
    Q = PrivacyMapping.deterministic(assign, 2)
    x, x2 = (1, 3), (2, 2)
    z = (assign[0, 0], assign[1, 2])
    z2 = (assign[0, 1], assign[1, 1])
    assert kernel_Q(x, x2, Q) == count_kernel(z, z2)


def test_enumeration_limit():
    assert enumerate_messages(2, 3).shape == (9, 2)
    with pytest.raises(SupportTooLarge):
        enumerate_messages(13, 2, limit=4096)


@given(seed=st.integers(0, 10**6), s=st.integers(1, 3), z=st.integers(2, 3), xc=st.integers(1, 4))
def test_factorization_matches_double_sum(seed, s, z, xc):
    rng = np.random.default_rng(seed)
    Q = PrivacyMapping.random(s, xc, z, rng)
    x, x2 = rng.integers(1, xc + 1, size=(2, s))
    assert kernel_Q(x, x2, Q) == pytest.approx(
        kernel_Q_bruteforce(x, x2, Q, KernelSpec("count")), abs=1e-10
    )


@given(seed=st.integers(0, 10**6), kind=st.sampled_from(["count", "gaussian:0.7"]))
def test_gram_symmetric_psd(seed, kind):
    rng = np.random.default_rng(seed)
    s, xc = int(rng.integers(1, 4)), int(rng.integers(2, 5))
    Q = PrivacyMapping.random(s, xc, 2, rng)
    xs = rng.integers(1, xc + 1, size=(int(rng.integers(1, 9)), s))
    G = gram_Q(xs, Q, kind)
    assert np.array_equal(G, G.T)
    assert np.linalg.eigvalsh(G).min() >= -1e-9


def test_gram_single_and_duplicates(rng):
    Q = PrivacyMapping.random(3, 4, 2, rng)
    xs = np.array([[1, 2, 3], [4, 1, 2], [1, 2, 3]])
    G = gram_Q(xs, Q)
    assert G.shape == (3, 3)
    assert np.allclose(G[0], G[2])
    assert gram_Q(xs[:1], Q)[0, 0] == pytest.approx(kernel_Q(xs[0], xs[0], Q))


def test_gaussian_kernel_general_path(rng):
    Q = PrivacyMapping.random(2, 3, 2, rng)
    k = KernelSpec("gaussian", 1.3)
    x, x2 = (1, 3), (2, 2)
    zs = enumerate_messages(2, 2)
    px = np.prod(Q.rows(np.array([x]))[0][np.arange(2), zs - 1], axis=1)
    px2 = np.prod(Q.rows(np.array([x2]))[0][np.arange(2), zs - 1], axis=1)
    direct = sum(
        px[i] * px2[j] * np.exp(-np.sum((zs[i] - zs[j]) ** 2) / (2 * 1.3**2))
        for i in range(4) for j in range(4)
    )
    assert kernel_Q(x, x2, Q, k) == pytest.approx(direct, abs=1e-12)


@given(seed=st.integers(0, 10**6))
def test_sensor_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    s = 3
    Q = PrivacyMapping.random(s, 4, 3, rng)
    x, x2 = rng.integers(1, 5, size=(2, s))
    perm = rng.permutation(s)
    Qp = PrivacyMapping(Q.tables[perm])
    assert kernel_Q(x[perm], x2[perm], Qp) == pytest.approx(kernel_Q(x, x2, Q), abs=1e-12)


def test_mapping_flags():
    Q = PrivacyMapping.deterministic(np.array([[1, 1]]), 2)
    assert Q.is_row_stochastic()
    assert not Q.column_mass_ok(0.005)
    assert Q.band_ok(0.005)
    U = PrivacyMapping.uniform(1, 2, 2)
    assert not U.band_ok(0.005)
    assert not PrivacyMapping(np.array([[[0.7, 0.4]]])).is_row_stochastic()


def test_sampling_frequencies(rng):
    Q = PrivacyMapping(np.array([[[0.2, 0.8], [0.9, 0.1]]]))
    xs = np.ones((20000, 1), dtype=int)
    z = Q.sample(xs, rng)
    assert set(np.unique(z)) <= {1, 2}
    assert np.mean(z == 1) == pytest.approx(0.2, abs=0.015)


def test_gram_cache_updates(rng):
    xs = rng.integers(1, 5, size=(7, 3))
    Q = PrivacyMapping.random(3, 4, 2, rng)
    cache = GramCache(xs, Q)
    assert np.allclose(cache.matrix, gram_Q(xs, Q))
    new = PrivacyMapping.random(1, 4, 2, rng).tables[0]
    cache.update(1, new)
    assert np.allclose(cache.matrix, gram_Q(xs, Q.with_block(1, new)))


def test_cross_gram_two_mappings(rng):
    xs = rng.integers(1, 4, size=(4, 2))
    Q, Q2 = PrivacyMapping.random(2, 3, 2, rng), PrivacyMapping.random(2, 3, 2, rng)
    C = cross_gram_Q(xs, Q, xs, Q2)
    expected = np.array([[np.sum(Q.rows(a[None])[0] * Q2.rows(b[None])[0]) for b in xs] for a in xs])
    assert np.allclose(C, expected)
