import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from offpath.errors import NegativeRatio, ValidationError
from offpath.workloads import (
    KvWorkloadSpec, ReplicationWorkloadSpec, ZipfSampler, cache_fit_miss_rate, cached_entries,
    dump_replication_stream, gen_kv_requests, gen_replication_stream, generalized_harmonic, zipf_pmf,
)
from tests import oracles


@pytest.mark.parametrize("theta", [0.5, 0.99, 1.0, 1.3])
def test_zipf_sampler_matches_inverse_cdf_oracle(theta):
    n, count = 10_000, 1_000_000
    ours = ZipfSampler(n, theta).sample(np.random.default_rng(1), count)
    ref = oracles.inverse_cdf_zipf(np.random.default_rng(2), n, theta, count)
    assert ours.min() >= 1 and ours.max() <= n
    # bin the tail so expected counts stay large enough for chi-square
    edges = np.unique(np.concatenate([np.arange(1, 101), np.geomspace(101, n + 1, 40).astype(int)]))
    ours_h = np.histogram(ours, bins=edges)[0]
    ref_h = np.histogram(ref, bins=edges)[0]
    _, p, _, _ = stats.chi2_contingency(np.vstack([ours_h, ref_h]))
    assert p > 1e-3


def test_zipf_goodness_of_fit_small_keyspace():
    n = 50
    draws = ZipfSampler(n, 0.99).sample(np.random.default_rng(7), 200_000)
    observed = np.bincount(draws, minlength=n + 1)[1:]
    expected = zipf_pmf(n, 0.99) * draws.size
    assert stats.chisquare(observed, expected).pvalue > 1e-3


def test_requests_deterministic_and_seed_sensitive():
    spec = KvWorkloadSpec(keyspace_size=1000, get_fraction=0.5)
    a = gen_kv_requests(spec, seed=3, count=500)
    b = gen_kv_requests(spec, seed=3, count=500)
    c = gen_kv_requests(spec, seed=4, count=500)
    assert list(a) == list(b)
    assert list(a) != list(c)


def test_request_stream_fields_and_csv():
    spec = KvWorkloadSpec(keyspace_size=10, get_fraction=0.0)
    s = gen_kv_requests(spec, seed=0, count=20)
    assert len(s) == 20
    assert all(op == "put" and 0 <= k < 10 for k, op in s)
    buf = io.StringIO()
    s.to_csv(buf)
    assert buf.getvalue().splitlines()[0] == "key,op"


def test_uniform_keys_when_theta_zero():
    s = gen_kv_requests(KvWorkloadSpec(keyspace_size=4, zipf_theta=0), seed=0, count=40_000)
    counts = np.bincount(s.keys, minlength=4)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_spec_validation():
    with pytest.raises(ValidationError):
        KvWorkloadSpec(keyspace_size=0)
    with pytest.raises(ValidationError):
        KvWorkloadSpec(keyspace_size=10, get_fraction=1.5)
    with pytest.raises(NegativeRatio):
        ReplicationWorkloadSpec(compression_ratio=-0.1)
    with pytest.raises(ValidationError):
        gen_kv_requests(KvWorkloadSpec(keyspace_size=10), seed=0, count=0)


@pytest.mark.parametrize("m,theta", [(1, 0.99), (1000, 0.5), (1 << 20, 0.99), ((1 << 20) + 5, 1.0),
                                     (3_000_000, 0.99), (5_000_000, 1.2)])
def test_harmonic_matches_direct_sum(m, theta):
    assert generalized_harmonic(m, theta) == pytest.approx(oracles.harmonic_direct(m, theta), rel=1e-10)


def test_large_cache_holds_everything():
    spec = KvWorkloadSpec(keyspace_size=10**8, soc_cache_bytes=16 * 2**30)
    assert cached_entries(spec) >= spec.keyspace_size
    assert cache_fit_miss_rate(spec) == 0.0


def test_small_cache_miss_rate():
    spec = KvWorkloadSpec(keyspace_size=10**8, soc_cache_bytes=2**30)
    k = cached_entries(spec)
    assert k == 2**30 // 104
    expected = 1 - oracles.harmonic_direct(k, 0.99) / oracles.harmonic_direct(10**8, 0.99)
    assert cache_fit_miss_rate(spec) == pytest.approx(expected, rel=1e-9)


def test_miss_rate_edge_cases():
    assert cache_fit_miss_rate(KvWorkloadSpec(keyspace_size=100)) == 1.0
    uniform = KvWorkloadSpec(keyspace_size=100, zipf_theta=0, soc_cache_bytes=104 * 25)
    assert cache_fit_miss_rate(uniform) == pytest.approx(0.75)


@settings(max_examples=60)
@given(st.integers(1, 10**6), st.integers(0, 10**8), st.integers(0, 10**8),
       st.floats(0, 1.5, allow_nan=False))
def test_miss_rate_nonincreasing_in_cache(n, c1, extra, theta):
    small = KvWorkloadSpec(keyspace_size=n, zipf_theta=theta, soc_cache_bytes=c1)
    big = KvWorkloadSpec(keyspace_size=n, zipf_theta=theta, soc_cache_bytes=c1 + extra)
    assert 0.0 <= cache_fit_miss_rate(big) <= cache_fit_miss_rate(small) + 1e-12 <= 1.0 + 1e-12


def test_replication_stream_default_counts():
    spec = ReplicationWorkloadSpec()
    writes = list(gen_replication_stream(spec, seed=1))
    assert len(writes) == 131072
    assert all(w.chunks == (16 * 2**10,) for w in writes)
    assert sum(w.nbytes for w in writes) == spec.file_bytes


@given(st.integers(1, 2**22), st.integers(1, 2**16), st.integers(1, 2**18), st.integers(1, 4))
def test_replication_stream_covers_file(file_bytes, io_bytes, chunk, clients):
    io_bytes = min(io_bytes, file_bytes)
    spec = ReplicationWorkloadSpec(file_bytes=file_bytes, io_bytes=io_bytes, chunk_bytes=chunk,
                                   n_clients=clients)
    writes = list(gen_replication_stream(spec))
    assert len(writes) == clients * spec.writes_per_client
    for c in range(clients):
        mine = [w for w in writes if w.client == c]
        assert sum(w.nbytes for w in mine) == file_bytes
        assert all(max(w.chunks) <= chunk for w in mine)


def test_replication_stream_dump():
    buf = io.StringIO()
    spec = ReplicationWorkloadSpec(file_bytes=2**20, io_bytes=2**19, chunk_bytes=2**18, n_clients=2)
    dump_replication_stream(gen_replication_stream(spec), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "client,write_index,chunks"
    assert lines[1] == "0,0,262144 262144"
    assert len(lines) == 5
