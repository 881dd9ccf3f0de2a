"""Offloading planners for the file-replication and key-value case studies.

Each alternative is reduced to a resource vector: how much of every shared
resource one unit of work consumes (one Gbps of file data for replication,
one M req/s for key-value).  Capacities are Gbps for links and 1.0 for the
NIC cores, SoC CPU, host CPU and DMA engine, so a vector entry of 0.01 on
``nic`` means 100 units saturate the NIC.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

from .analytic import path_latency
from .errors import Infeasible, InvalidCapacities, NegativeRatio, UnknownAlternative, ValidationError
from .hw import (
    CLIENT_HOST,
    CLIENT_SOC,
    DMA_S2H,
    LINKS,
    RDMA_S2H,
    HardwareConfig,
    Path,
    PathKind,
    Verb,
    link_loads,
)
from .workloads import KvWorkloadSpec, ReplicationWorkloadSpec, cache_fit_miss_rate

CPU_RESOURCES = ("nic", "soc_cpu", "host_cpu", "dma")


# ---------------------------------------------------------------------------
# hybrid replication LP


def a1_limit(P: float, ratio: float, N: float = math.inf) -> float:
    """File bandwidth of full offload: PCIe1 out carries d and d*ratio; the wire d*ratio."""
    if ratio < 0:
        raise NegativeRatio("ratio must be >= 0")
    if P <= 0:
        raise InvalidCapacities("P must be > 0")
    network = N / ratio if ratio > 0 else math.inf
    return min(P / (1 + ratio), network)


def break_even_ratio(P: float, N: float) -> float:
    if not P > N > 0:
        raise InvalidCapacities("need P > N > 0")
    return P / N - 1


@dataclass(frozen=True)
class ReplicationPlan:
    S: float
    H: float
    ratio: float
    goodput: float
    pcie_residual: float  # P - (H + S + S*ratio)
    network_residual: float  # N - (H + S*ratio)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def plan_hybrid_replication(P: float, N: float, ratio: float) -> ReplicationPlan:
    """Split file traffic between SoC offload with compression (S) and host-direct (H).

    Maximizes H + S subject to ``H + S(1 + ratio) <= P`` and
    ``H + S*ratio <= N``.  At ratio 1 the objective is flat along the
    network constraint and S = 0 is chosen.
    """
    if ratio < 0:
        raise NegativeRatio("ratio must be >= 0")
    if P <= 0 or N <= 0:
        raise InvalidCapacities("P and N must be > 0")
    if P <= N or ratio >= 1:
        S, H = 0.0, float(min(N, P))
    else:
        S = P - N
        H = N - S * ratio
        if H < 0:
            # the two constraints cross at negative H: offload everything
            S, H = min(P / (1 + ratio), N / ratio), 0.0
    return ReplicationPlan(
        S=S, H=H, ratio=ratio, goodput=S + H,
        pcie_residual=P - (H + S + S * ratio),
        network_residual=N - (H + S * ratio),
    )


# ---------------------------------------------------------------------------
# alternatives


@dataclass(frozen=True)
class KvModel:
    """Key-value cost parameters.

    ``soc_lookup_us`` is the SoC core time to search its cached index for
    one request, on top of the receive handler.  ``miss_rate`` of ``None``
    derives it from the workload's cache fit.
    """

    bucket_bytes: int = 64
    value_bytes: int = 64
    soc_lookup_us: float = 0.0842
    miss_rate: float | None = None


@dataclass(frozen=True)
class ReplicationModel:
    """Replication cost parameters (per Gbps of uncompressed file data).

    ``soc_replication_gbps`` is the file bandwidth the SoC cores sustain
    while compressing and replicating; ``host_cpu_per_gbps`` is the share
    of the host CPU used by host-direct replication per Gbps.
    """

    chunk_bytes: int = 256 * 2**10
    soc_replication_gbps: float = 133.0
    host_cpu_per_gbps: float = 0.001


@dataclass
class AlternativeProfile:
    id: str
    case: str
    latency_us: float
    peak_throughput: float
    unit: str
    resource_vector: dict
    criteria_score: float = 0.0
    binding: str = ""

    def metric(self, name: str) -> float:
        if name == "latency":
            return self.latency_us
        if name == "throughput":
            return self.peak_throughput
        if name == "host_cpu":
            return self.resource_vector.get("host_cpu", 0.0)
        if name == "network":
            return sum(self.resource_vector.get(link, 0.0) for link in LINKS if link.startswith("net:"))
        raise ValidationError(f"unknown criterion {name!r}")


def resource_capacities(cfg: HardwareConfig) -> dict:
    caps = {link: cfg.capacity(link) for link in LINKS}
    caps.update({name: 1.0 for name in CPU_RESOURCES})
    return caps


class _Usage:
    """Accumulates per-unit resource consumption for a sequence of steps."""

    def __init__(self, cfg: HardwareConfig):
        self.cfg = cfg
        self.vector: dict = {}

    def add(self, resource: str, amount: float) -> None:
        if amount:
            self.vector[resource] = self.vector.get(resource, 0.0) + amount

    def outbound(self, path: Path, gbps_per_unit: float, mops_per_unit: float) -> None:
        """Local endpoint of a client path WRITEs to a remote machine.

        The path types name the remote side as requester, so the byte route
        is that of a READ served by the local endpoint.
        """
        for link in link_loads(path, Verb.READ):
            self.add(link, gbps_per_unit)
        self.add("nic", mops_per_unit / self.cfg.op_rate(path, Verb.WRITE))

    def transfer(self, path: Path, verb: Verb, gbps_per_unit: float, mops_per_unit: float) -> None:
        """Move bytes over a path: link bandwidth plus NIC or DMA-engine time."""
        for link in link_loads(path, verb):
            self.add(link, gbps_per_unit)
        op_time = mops_per_unit / self.cfg.op_rate(path, verb)
        if path.kind is PathKind.HOSTSOC_DMA:
            byte_time = gbps_per_unit / self.cfg.dma_engine.cap(verb)
            self.add("dma", max(op_time, byte_time))
        else:
            self.add("nic", op_time)


def _peak(vector: dict, caps: dict) -> tuple[float, str]:
    best, binding = math.inf, ""
    for resource, per_unit in vector.items():
        if per_unit > 0 and caps[resource] / per_unit < best:
            best, binding = caps[resource] / per_unit, resource
    return best, binding


KV_ALTERNATIVES = ("A1", "A2", "A3", "A4", "A5-sendrecv", "A5-read")
REPLICATION_ALTERNATIVES = ("A1", "A2", "A3")


def _soc_request_cost(cfg: HardwareConfig, lookup_us: float) -> float:
    """Share of the SoC CPU per M req/s for a receive handler (+ index lookup)."""
    cores = cfg.core_counts.soc_cores
    return (cores / cfg.soc_sendrecv_peak + lookup_us) / cores


def _eval_kv(alt_id: str, cfg: HardwareConfig, workload, model: KvModel) -> AlternativeProfile:
    usage = _Usage(cfg)
    bucket_gbps = model.bucket_bytes * 8 / 1e3
    value_gbps = model.value_bytes * 8 / 1e3
    latency = 0.0

    def step(path, verb, payload_gbps, fraction=1.0):
        nonlocal latency
        payload = max(1, round(payload_gbps * 1e3 / 8))
        usage.transfer(path, verb, payload_gbps * fraction, fraction)
        latency += fraction * path_latency(cfg, path, verb, payload)

    if alt_id == "A1":
        step(CLIENT_HOST, Verb.READ, bucket_gbps)
        step(CLIENT_HOST, Verb.READ, value_gbps)
    elif alt_id in ("A2", "A3"):
        step(CLIENT_SOC, Verb.SENDRECV, value_gbps)
        # A3 keeps the index on the SoC; A2 traverses it in host memory
        lookup = model.soc_lookup_us if alt_id == "A3" else 0.0
        usage.add("soc_cpu", _soc_request_cost(cfg, lookup))
        latency += lookup
        if alt_id == "A2":
            step(DMA_S2H, Verb.READ, bucket_gbps)
        step(DMA_S2H, Verb.READ, value_gbps)
    elif alt_id == "A4":
        step(CLIENT_SOC, Verb.READ, bucket_gbps)
        step(CLIENT_HOST, Verb.READ, value_gbps)
    elif alt_id == "A5-sendrecv":
        step(CLIENT_SOC, Verb.SENDRECV, value_gbps)
        usage.add("soc_cpu", _soc_request_cost(cfg, model.soc_lookup_us))
        latency += model.soc_lookup_us
        miss = model.miss_rate
        if miss is None:
            miss = cache_fit_miss_rate(workload) if isinstance(workload, KvWorkloadSpec) else 0.0
        if miss > 0:
            # the SoC answers with the value's address; the client READs it from the host
            step(CLIENT_HOST, Verb.READ, value_gbps, fraction=miss)
    elif alt_id == "A5-read":
        step(CLIENT_SOC, Verb.READ, bucket_gbps)
        step(CLIENT_SOC, Verb.READ, value_gbps)
    else:
        raise UnknownAlternative(alt_id)
    peak, binding = _peak(usage.vector, resource_capacities(cfg))
    return AlternativeProfile(alt_id, "kv", latency, peak, "Mreqs/s", usage.vector, binding=binding)


def _eval_replication(alt_id: str, cfg: HardwareConfig, workload, model: ReplicationModel) -> AlternativeProfile:
    ratio = workload.compression_ratio if workload is not None else 1.0
    if ratio < 0:
        raise NegativeRatio("ratio must be >= 0")
    usage = _Usage(cfg)
    chunk = model.chunk_bytes
    mops_per_gbps = 1e3 / (8 * chunk)
    compressed = max(1, round(chunk * ratio))
    if alt_id in ("A1", "A2"):
        fetch = RDMA_S2H if alt_id == "A1" else DMA_S2H
        usage.transfer(fetch, Verb.READ, 1.0, mops_per_gbps)
        usage.add("soc_cpu", 1.0 / model.soc_replication_gbps)
        if ratio > 0:
            usage.outbound(CLIENT_SOC, ratio, mops_per_gbps)
        latency = path_latency(cfg, fetch, Verb.READ, chunk)
        latency += path_latency(cfg, CLIENT_SOC, Verb.WRITE, compressed)
    elif alt_id == "A3":
        # host-direct replication: the host WRITEs uncompressed data to the backup
        usage.outbound(CLIENT_HOST, 1.0, mops_per_gbps)
        usage.add("host_cpu", model.host_cpu_per_gbps)
        latency = path_latency(cfg, CLIENT_HOST, Verb.WRITE, chunk)
    else:
        raise UnknownAlternative(alt_id)
    peak, binding = _peak(usage.vector, resource_capacities(cfg))
    return AlternativeProfile(alt_id, "replication", latency, peak, "Gbps", usage.vector, binding=binding)


def eval_alternative(alt_id: str, case: str, cfg: HardwareConfig, workload=None, model=None) -> AlternativeProfile:
    """Latency, peak throughput and resource vector of one alternative."""
    if case == "kv":
        if alt_id == "A5":
            alt_id = "A5-sendrecv"
        return _eval_kv(alt_id, cfg, workload, model or KvModel())
    if case == "replication":
        if workload is not None and not isinstance(workload, ReplicationWorkloadSpec):
            raise ValidationError("replication alternatives need a ReplicationWorkloadSpec")
        return _eval_replication(alt_id, cfg, workload, model or ReplicationModel())
    raise ValidationError(f"unknown case study {case!r}")


# ---------------------------------------------------------------------------
# greedy combination

DEFAULT_CRITERIA = {
    "kv": {"latency": 1.0},
    "replication": {"network": 1.0, "host_cpu": 1.0},
}
_HIGHER_IS_BETTER = {"throughput"}


def score_profiles(profiles, criteria: dict) -> None:
    """Set ``criteria_score`` (lower ranks first) from weighted, max-normalized metrics."""
    for profile in profiles:
        profile.criteria_score = 0.0
    for name, weight in criteria.items():
        values = [p.metric(name) for p in profiles]
        scale = max(abs(v) for v in values) or 1.0
        sign = -1.0 if name in _HIGHER_IS_BETTER else 1.0
        for profile, value in zip(profiles, values):
            profile.criteria_score += sign * weight * value / scale


@dataclass
class CombinedPlan:
    """Ordered load assignments; ``switch_points`` are cumulative loads at hand-offs."""

    assignments: list  # (alternative id, load)
    switch_points: list
    total: float
    unit: str
    utilization: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "assignments": [{"alternative": a, "load": load} for a, load in self.assignments],
            "switch_points": self.switch_points,
            "total": self.total,
            "unit": self.unit,
        }, indent=2)

    def table(self) -> str:
        lines = [f"{'alternative':<14}{'load':>12}"]
        lines += [f"{a:<14}{load:>12.3f}" for a, load in self.assignments]
        lines.append(f"{'total':<14}{self.total:>12.3f} {self.unit}")
        return "\n".join(lines)


def greedy_combine(profiles, cfg: HardwareConfig, criteria: dict | None = None,
                   demand: float = math.inf) -> CombinedPlan:
    """Fill the best-ranked alternative until a resource saturates, then spill over."""
    profiles = list(profiles)
    if not profiles:
        raise ValidationError("need at least one alternative")
    if not any(p.peak_throughput > 0 for p in profiles):
        raise Infeasible("no alternative has positive capacity")
    if criteria is None:
        criteria = DEFAULT_CRITERIA.get(profiles[0].case, {"throughput": 1.0})
    score_profiles(profiles, criteria)
    ranked = sorted(profiles, key=lambda p: (p.criteria_score, p.id))

    caps = resource_capacities(cfg)
    remaining = dict(caps)
    assignments, switch_points = [], []
    total = 0.0
    for profile in ranked:
        if total >= demand:
            break
        load = min(
            (remaining[r] / per_unit for r, per_unit in profile.resource_vector.items() if per_unit > 0),
            default=math.inf,
        )
        load = max(0.0, min(load, demand - total))
        if not math.isfinite(load):
            raise Infeasible(f"{profile.id} consumes no bounded resource")
        if assignments:
            switch_points.append(total)
        for r, per_unit in profile.resource_vector.items():
            remaining[r] = max(0.0, remaining[r] - per_unit * load)
        assignments.append((profile.id, load))
        total += load
    utilization = {r: 1 - remaining[r] / caps[r] for r in caps}
    return CombinedPlan(assignments, switch_points, total, ranked[0].unit, utilization)


def kv_switch_point(soc_capacity_mrps: float, per_client_demand_mrps: float, rho_max: float = 1.0) -> int:
    """Clients the SoC fast path can take before it saturates."""
    if soc_capacity_mrps <= 0 or per_client_demand_mrps <= 0:
        raise ValidationError("capacity and demand must be positive")
    if not 0 < rho_max <= 1:
        raise ValidationError("rho_max must be in (0, 1]")
    return math.floor(soc_capacity_mrps * rho_max / per_client_demand_mrps + 1e-12)
