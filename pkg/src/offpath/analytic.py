"""Closed-form bandwidth sharing, latency composition and anomaly adjustments."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .hw import (
    DMA_H2S,
    LINKS,
    RDMA_H2S,
    FlowSpec,
    HardwareConfig,
    Path,
    PathKind,
    Verb,
    check_supported,
    link_loads,
    nic_packets_per_byte,
)

PACKET_BUDGET = "nic-packet-budget"
DMA_ENGINE = "engine:dma"
_EPS = 1e-9


def effective_path_cap(cfg: HardwareConfig, path: Path, verb: Verb, payload: int) -> float:
    """Bandwidth ceiling (Gbps) of a lone flow, before any sharing."""
    check_supported(path, verb, cfg)
    cap = min(cfg.capacity(link) for link in link_loads(path, verb))
    if path.kind is PathKind.HOSTSOC_DMA:
        cap = min(cap, cfg.dma_engine.cap(verb))
    if in_cliff(cfg, path, verb, payload):
        cap = min(cap, cfg.anomaly.cliff_bw_gbps)
    return cap


def in_cliff(cfg: HardwareConfig, path: Path, verb: Verb, payload: int) -> bool:
    """True when ``payload`` is at or beyond the path's throughput-collapse threshold."""
    a = cfg.anomaly
    if path.kind is PathKind.CLIENT_SOC:
        return verb is Verb.READ and payload >= a.soc_read_cliff_bytes
    if path.kind is PathKind.HOSTSOC_RDMA:
        return verb in (Verb.READ, Verb.WRITE) and payload >= a.hostsoc_cliff_bytes
    if path.kind is PathKind.HOSTSOC_DMA:
        return payload >= a.dma_cliff_bytes
    return False


@dataclass
class AllocationReport:
    """Result of :func:`allocate_bandwidth`.

    ``bottleneck`` joins every saturated constraint with ``+``; when nothing
    saturates it is ``"demand"``, ``"cliff"`` or ``"path-cap"``.
    ``per_flow_limit`` names, per flow, what stopped it from growing.
    """

    flows: list
    per_flow_rate: list
    per_link_utilization: dict
    bottleneck: str
    total_goodput: float
    per_flow_limit: list = field(default_factory=list)

    def rate(self, index: int) -> float:
        return self.per_flow_rate[index]

    def csv_rows(self):
        yield ("flow", "path", "verb", "payload", "rate_gbps", "limit")
        for i, (flow, rate) in enumerate(zip(self.flows, self.per_flow_rate)):
            yield (flow.name or f"f{i}", str(flow.path), flow.verb.value, flow.payload,
                   f"{rate:.6f}", self.per_flow_limit[i])

    def summary(self) -> dict:
        return {
            "bottleneck": self.bottleneck,
            "total_goodput_gbps": self.total_goodput,
            "utilization": self.per_link_utilization,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def _constraints(cfg: HardwareConfig, flows):
    """Constraint matrix A (rows = constraints, cols = flows) and capacities."""
    names = list(LINKS)
    rows = [[float(link_loads(f.path, f.verb)[link]) for f in flows] for link in LINKS]
    caps = [cfg.capacity(link) for link in LINKS]
    if cfg.nic_pkt_rate_cap is not None:
        # Gbps -> Mpps: rate * 1e9 / 8 bytes/s * packets/byte / 1e6
        names.append(PACKET_BUDGET)
        rows.append([nic_packets_per_byte(f.path, f.payload, cfg) * 1e3 / 8 for f in flows])
        caps.append(cfg.nic_pkt_rate_cap)
    if any(f.path.kind is PathKind.HOSTSOC_DMA for f in flows):
        # one engine time-shared between verbs: sum(rate / cap(verb)) <= 1
        names.append(DMA_ENGINE)
        rows.append([1.0 / cfg.dma_engine.cap(f.verb) if f.path.kind is PathKind.HOSTSOC_DMA else 0.0
                     for f in flows])
        caps.append(1.0)
    return names, np.array(rows, dtype=float), np.array(caps, dtype=float)


def allocate_bandwidth(cfg: HardwareConfig, flows) -> AllocationReport:
    """Max-min fair rates by progressive filling.

    All unfrozen flows grow at the same speed until a constraint saturates or
    a flow reaches its own bound (``min(demand, effective_path_cap)``); the
    flows touching a saturated constraint are frozen and filling continues.
    """
    flows = list(flows)
    if not flows:
        raise ValidationError("allocate_bandwidth needs at least one flow")
    names, A, caps = _constraints(cfg, flows)
    path_caps = np.array([effective_path_cap(cfg, f.path, f.verb, f.payload) for f in flows])
    demands = np.array([f.demand for f in flows], dtype=float)
    bounds = np.minimum(demands, path_caps)

    n = len(flows)
    rate = np.zeros(n)
    active = np.ones(n, dtype=bool)
    limit = [""] * n

    def freeze_bounded():
        for i in np.flatnonzero(active & (rate >= bounds - _EPS)):
            active[i] = False
            rate[i] = bounds[i]
            limit[i] = "demand" if demands[i] <= path_caps[i] else _cap_reason(cfg, flows[i])

    freeze_bounded()
    while active.any():
        slack = caps - A @ rate
        growth = A[:, active].sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            step_c = np.where(growth > 0, slack / growth, np.inf)
        step = min(step_c.min(initial=np.inf), (bounds[active] - rate[active]).min())
        if not math.isfinite(step):
            raise ValidationError("unbounded allocation: a flow loads no finite constraint")
        rate[active] += max(step, 0.0)
        slack = caps - A @ rate
        for j in np.flatnonzero(_saturated(slack, caps) & (growth > 0)):
            touched = active & (A[j] > 0)
            for i in np.flatnonzero(touched):
                limit[i] = names[j]
            active &= ~touched
        freeze_bounded()

    load = A @ rate
    utilization = {name: float(load[j] / caps[j]) for j, name in enumerate(names)}
    saturated = [names[j] for j in np.flatnonzero(_saturated(caps - load, caps)) if A[j].any()]
    if saturated:
        bottleneck = "+".join(saturated)
    elif any(lim == "cliff" for lim in limit):
        bottleneck = "cliff"
    elif any(lim == "path-cap" for lim in limit):
        bottleneck = "path-cap"
    else:
        bottleneck = "demand"
    return AllocationReport(
        flows=flows,
        per_flow_rate=[float(r) for r in rate],
        per_link_utilization=utilization,
        bottleneck=bottleneck,
        total_goodput=float(rate.sum()),
        per_flow_limit=limit,
    )


def _saturated(slack, caps):
    return slack <= _EPS * np.maximum(caps, 1.0)


def _cap_reason(cfg, flow) -> str:
    return "cliff" if in_cliff(cfg, flow.path, flow.verb, flow.payload) else "path-cap"


def theoretical_allocation(cfg: HardwareConfig, flows) -> AllocationReport:
    """Allocation with every link efficiency reset to 1."""
    return allocate_bandwidth(cfg.theoretical(), flows)


# ---------------------------------------------------------------------------
# latency

_CROSSINGS = {
    PathKind.CLIENT_HOST: {Verb.READ: 2, Verb.WRITE: 1, Verb.SENDRECV: 1},
    PathKind.CLIENT_SOC: {Verb.READ: 2, Verb.WRITE: 1, Verb.SENDRECV: 1},
    PathKind.HOSTSOC_RDMA: {Verb.READ: 4, Verb.WRITE: 2, Verb.SENDRECV: 4},
    PathKind.HOSTSOC_DMA: {Verb.READ: 2, Verb.WRITE: 1},
}
SERIALIZATION_THRESHOLD = 1024


def switch_crossings(path: Path, verb: Verb) -> int:
    check_supported(path, verb)
    return _CROSSINGS[path.kind][verb]


def base_latency(cfg: HardwareConfig, verb: Verb) -> float:
    lat = cfg.latencies
    return {Verb.READ: lat.base_read_us, Verb.WRITE: lat.base_write_us,
            Verb.SENDRECV: lat.base_sendrecv_us}[verb]


def posting_cost(cfg: HardwareConfig, side: str) -> float:
    """MMIO doorbell posting cost in microseconds for one unbatched request."""
    lat = cfg.latencies
    if side == "soc":
        return lat.mmio_soc_cycles / (lat.soc_ghz * 1000)
    return lat.mmio_host_cycles / (lat.host_ghz * 1000)


def path_latency(cfg: HardwareConfig, path: Path, verb: Verb, payload: int, doorbell_batch: int = 1) -> float:
    """Unloaded request latency in microseconds.

    The verb's base latency (measured client-to-host on a NIC without a switch)
    is adjusted segment by segment: switch crossings, the network round trip
    that intra-machine paths skip, requester posting cost amortized over the
    doorbell batch, responder memory speed, the SoC's slower receive handler,
    DMA setup, and serialization for payloads above 1 KB.
    """
    if payload < 1:
        raise ValidationError("payload must be >= 1")
    if doorbell_batch < 1:
        raise ValidationError("doorbell_batch must be >= 1")
    check_supported(path, verb, cfg)
    lat = cfg.latencies
    switch_us = lat.switch_cross_ns / 1000
    reference_post = posting_cost(cfg, "host")

    total = base_latency(cfg, verb) + switch_crossings(path, verb) * switch_us
    if path.kind is PathKind.HOSTSOC_DMA:
        total += -2 * lat.net_oneway_us + cfg.dma_engine.setup_us
    else:
        if path.kind is PathKind.HOSTSOC_RDMA:
            total -= 2 * lat.net_oneway_us
            requester_post = posting_cost(cfg, path.requester)
        else:
            requester_post = reference_post
        total += requester_post / doorbell_batch - reference_post
        if path.responder == "soc":
            if verb is Verb.READ:
                total += (lat.soc_dram_ns - lat.host_dram_ns) / 1000
            elif verb is Verb.SENDRECV:
                total += lat.soc_handler_extra_us
    if payload > SERIALIZATION_THRESHOLD:
        total += payload * 8 / (effective_path_cap(cfg, path, verb, payload) * 1e3)
    return total


def rnic_latency(cfg: HardwareConfig, verb: Verb, payload: int, doorbell_batch: int = 1) -> float:
    """Client-to-host latency on the same NIC without a switch or SoC."""
    return path_latency(cfg.as_rnic(), Path(PathKind.CLIENT_HOST), verb, payload, doorbell_batch)


# ---------------------------------------------------------------------------
# tables


def _verb_key(verb) -> str:
    value = verb.value if isinstance(verb, Verb) else str(verb).lower()
    if value not in ("read", "write"):
        raise ValidationError(f"skew tables cover read and write only, not {value!r}")
    return value


def skew_throughput(cfg: HardwareConfig, target: str, verb, address_range_bytes: float) -> float:
    """Peak small-request rate (M reqs/s) when accesses hit ``address_range_bytes``."""
    if address_range_bytes < 64:
        raise ValidationError("address range must be >= 64 bytes")
    tables = {"soc": cfg.skew_table_soc, "host_ddio": cfg.skew_table_host_ddio, "host": cfg.skew_table_host_ddio}
    if target not in tables:
        raise ValidationError(f"unknown skew target {target!r}")
    points = tables[target][_verb_key(verb)]
    xs, ys = zip(*points)
    return float(np.interp(address_range_bytes, xs, ys))


def doorbell_multiplier(cfg: HardwareConfig, side: str, batch: int) -> float:
    """Throughput multiplier from batching ``batch`` requests per doorbell.

    Tables are interpolated linearly in ``batch``.  Past the last sample the
    SoC and client tables hold their final value; the host table returns to
    1.0, since its small penalty is only observed up to the sampled sizes.
    """
    if batch < 1:
        raise ValidationError("batch must be >= 1")
    if side not in cfg.doorbell:
        raise ValidationError(f"unknown doorbell side {side!r}")
    if batch == 1:
        return 1.0
    xs, ys = zip(*cfg.doorbell[side])
    if side == "host" and batch > xs[-1]:
        return 1.0
    return float(np.interp(batch, xs, ys))


def segment_transfer(total_bytes: int, chunk_bytes: int) -> list[int]:
    if chunk_bytes < 1:
        raise ValidationError("chunk must be >= 1 byte")
    if total_bytes < 0:
        raise ValidationError("total must be >= 0 bytes")
    full, rest = divmod(total_bytes, chunk_bytes)
    return [chunk_bytes] * full + ([rest] if rest else [])


# ---------------------------------------------------------------------------
# small-request rates


def reserved_core_boost(cfg: HardwareConfig) -> float:
    """Gain in NIC op rate when both host and SoC endpoints are active.

    Each endpoint owns reserved NIC cores on top of the shared pool, so a
    second endpoint brings its reserved cores into play.
    """
    c = cfg.core_counts
    shared, reserved = c.nic_cores_shared, c.nic_cores_reserved_per_endpoint
    return (shared + 2 * reserved) / (shared + reserved)


def dma_small_request_ratio(cfg: HardwareConfig, verb: Verb = Verb.READ) -> float:
    """DMA-engine small-request rate relative to the RDMA path."""
    return cfg.op_rate(DMA_H2S, verb) / cfg.op_rate(RDMA_H2S, verb)
