"""Deterministic request generators for the key-value and replication workloads."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .analytic import segment_transfer
from .errors import NegativeRatio, ValidationError

ENTRY_OVERHEAD_BYTES = 32


@dataclass(frozen=True)
class KvWorkloadSpec:
    """Key-value workload.

    ``keyspace_size`` and ``soc_cache_bytes`` have no canonical values and
    must be chosen per experiment.
    """

    keyspace_size: int
    n_clients: int = 1
    zipf_theta: float = 0.99
    key_bytes: int = 8
    value_bytes: int = 64
    get_fraction: float = 1.0
    soc_cache_bytes: int = 0
    entry_overhead_bytes: int = ENTRY_OVERHEAD_BYTES

    def __post_init__(self):
        if self.zipf_theta < 0 or math.isnan(self.zipf_theta):
            raise ValidationError("zipf_theta must be >= 0")
        if not 0.0 <= self.get_fraction <= 1.0:
            raise ValidationError("get_fraction must be in [0, 1]")
        for name in ("keyspace_size", "n_clients", "key_bytes", "value_bytes"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        if self.soc_cache_bytes < 0 or self.entry_overhead_bytes < 0:
            raise ValidationError("cache size and entry overhead must be >= 0")

    @property
    def entry_bytes(self) -> int:
        return self.key_bytes + self.value_bytes + self.entry_overhead_bytes


@dataclass(frozen=True)
class ReplicationWorkloadSpec:
    file_bytes: int = 2 * 2**30
    io_bytes: int = 16 * 2**10
    n_clients: int = 1
    compression_ratio: float = 1.0
    chunk_bytes: int = 256 * 2**10

    def __post_init__(self):
        if self.compression_ratio < 0:
            raise NegativeRatio("compression_ratio must be >= 0")
        if self.io_bytes < 1 or self.chunk_bytes < 1 or self.n_clients < 1:
            raise ValidationError("io_bytes, chunk_bytes and n_clients must be positive")
        if self.io_bytes > self.file_bytes:
            raise ValidationError("io_bytes must not exceed file_bytes")

    @property
    def writes_per_client(self) -> int:
        return -(-self.file_bytes // self.io_bytes)


# ---------------------------------------------------------------------------
# Zipf sampling (rejection-inversion, Hörmann & Derflinger)


def _helper1(x):
    """log1p(x) / x, accurate near zero."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) <= 1e-8
    safe = np.where(small, 1.0, x)
    return np.where(small, 1 - x * (0.5 - x * (1 / 3 - 0.25 * x)), np.log1p(safe) / safe)


def _helper2(x):
    """expm1(x) / x, accurate near zero."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) <= 1e-8
    safe = np.where(small, 1.0, x)
    return np.where(small, 1 + x * 0.5 * (1 + x / 3 * (1 + 0.25 * x)), np.expm1(safe) / safe)


class ZipfSampler:
    """Draws ranks in ``[1, n]`` with P(k) proportional to ``k ** -theta``.

    O(1) expected work per draw regardless of ``n``; draws are vectorized in
    batches.
    """

    def __init__(self, n: int, theta: float):
        if n < 1:
            raise ValidationError("keyspace must be >= 1")
        if theta < 0:
            raise ValidationError("theta must be >= 0")
        self.n = int(n)
        self.theta = float(theta)
        self._h_x1 = self._h_integral(1.5) - 1.0
        self._h_n = self._h_integral(self.n + 0.5)
        self._s = 2.0 - self._h_integral_inverse(self._h_integral(2.5) - self._h(2.0))

    def _h(self, x):
        return np.exp(-self.theta * np.log(x))

    def _h_integral(self, x):
        log_x = np.log(x)
        return _helper2((1.0 - self.theta) * log_x) * log_x

    def _h_integral_inverse(self, x):
        t = np.maximum(x * (1.0 - self.theta), -1.0)
        return np.exp(_helper1(t) * x)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        out = np.empty(count, dtype=np.int64)
        filled = 0
        while filled < count:
            want = count - filled
            batch = max(64, int(want * 1.1))
            u = self._h_n + rng.random(batch) * (self._h_x1 - self._h_n)
            x = self._h_integral_inverse(u)
            k = np.clip(np.floor(x + 0.5), 1, self.n)
            accept = (k - x <= self._s) | (u >= self._h_integral(k + 0.5) - self._h(k))
            got = k[accept][:want].astype(np.int64)
            out[filled:filled + got.size] = got
            filled += got.size
        return out


def zipf_pmf(n: int, theta: float) -> np.ndarray:
    """Exact probabilities of ranks ``1..n`` (for small ``n``)."""
    weights = np.arange(1, n + 1, dtype=float) ** -theta
    return weights / weights.sum()


@dataclass
class KvRequestStream:
    """Generated requests: 0-based key index and an is-get flag per request."""

    keys: np.ndarray
    is_get: np.ndarray

    def __iter__(self) -> Iterator[tuple[int, str]]:
        for key, get in zip(self.keys.tolist(), self.is_get.tolist()):
            yield key, "get" if get else "put"

    def __len__(self):
        return len(self.keys)

    def to_csv(self, fh) -> None:
        writer = csv.writer(fh)
        writer.writerow(("key", "op"))
        writer.writerows(self)


def gen_kv_requests(spec: KvWorkloadSpec, seed: int, count: int) -> KvRequestStream:
    if count < 1:
        raise ValidationError("count must be >= 1")
    rng = np.random.default_rng(seed)
    if spec.zipf_theta == 0:
        keys = rng.integers(0, spec.keyspace_size, size=count)
    else:
        keys = ZipfSampler(spec.keyspace_size, spec.zipf_theta).sample(rng, count) - 1
    is_get = rng.random(count) < spec.get_fraction
    return KvRequestStream(keys=keys, is_get=is_get)


# ---------------------------------------------------------------------------
# cache fit

_DIRECT_TERMS = 1 << 20


def generalized_harmonic(m: int, theta: float) -> float:
    """``sum(i ** -theta for i in 1..m)``; Euler-Maclaurin tail for large ``m``."""
    if m <= 0:
        return 0.0
    head = min(m, _DIRECT_TERMS)
    total = float(np.sum(np.arange(head, 0, -1, dtype=float) ** -theta))
    if m == head:
        return total
    a, b = float(head + 1), float(m)
    if theta == 1.0:
        integral = math.log(b / a)
    else:
        integral = (b ** (1 - theta) - a ** (1 - theta)) / (1 - theta)
    f = lambda x: x ** -theta  # noqa: E731
    df = lambda x: -theta * x ** (-theta - 1)  # noqa: E731
    d3f = lambda x: -theta * (theta + 1) * (theta + 2) * x ** (-theta - 3)  # noqa: E731
    return total + integral + (f(a) + f(b)) / 2 + (df(b) - df(a)) / 12 - (d3f(b) - d3f(a)) / 720


def cached_entries(spec: KvWorkloadSpec) -> int:
    return spec.soc_cache_bytes // spec.entry_bytes


def cache_fit_miss_rate(spec: KvWorkloadSpec) -> float:
    """Probability that a request's key is not among the hottest cached entries."""
    k = cached_entries(spec)
    n = spec.keyspace_size
    if k >= n:
        return 0.0
    if k == 0:
        return 1.0
    if spec.zipf_theta == 0:
        return 1.0 - k / n
    ratio = generalized_harmonic(k, spec.zipf_theta) / generalized_harmonic(n, spec.zipf_theta)
    return min(1.0, max(0.0, 1.0 - ratio))


# ---------------------------------------------------------------------------
# replication


@dataclass(frozen=True)
class ReplicationWrite:
    client: int
    write_index: int
    chunks: tuple[int, ...]

    @property
    def nbytes(self) -> int:
        return sum(self.chunks)


def gen_replication_stream(spec: ReplicationWorkloadSpec, seed: int = 0) -> Iterator[ReplicationWrite]:
    """Sequential file writes, round-robin across clients.

    The workload is sequential, so ``seed`` does not change the stream; it is
    accepted for interface symmetry with the other generators.
    """
    del seed
    n_writes = spec.writes_per_client
    last = spec.file_bytes - (n_writes - 1) * spec.io_bytes
    full_chunks = tuple(segment_transfer(spec.io_bytes, spec.chunk_bytes))
    last_chunks = tuple(segment_transfer(last, spec.chunk_bytes))
    for index in range(n_writes):
        chunks = last_chunks if index == n_writes - 1 else full_chunks
        for client in range(spec.n_clients):
            yield ReplicationWrite(client, index, chunks)


def dump_replication_stream(stream, fh) -> None:
    writer = csv.writer(fh)
    writer.writerow(("client", "write_index", "chunks"))
    for w in stream:
        writer.writerow((w.client, w.write_index, " ".join(map(str, w.chunks))))
