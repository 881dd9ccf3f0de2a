"""Request-level discrete-event simulator of the SmartNIC data paths.

Each request walks a precomputed route of stages: a requester posting delay,
the NIC core pool, every loaded directed link (a FIFO byte server at usable
capacity), the DMA engine, responder memory and responder CPU, then a pure
propagation delay that brings the unloaded latency back to the closed-form
value.  Times are microseconds internally; scenarios are in seconds.
"""

from __future__ import annotations

import configparser
import csv
import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .analytic import allocate_bandwidth, in_cliff, path_latency, posting_cost, skew_throughput
from .errors import NotComparable, ParseError, ValidationError
from .hw import (
    FlowSpec,
    HardwareConfig,
    Path,
    PathKind,
    Verb,
    check_supported,
    config_parse_error,
    link_loads,
    load_profile,
    pcie_packet_counts,
)
from .workloads import KvWorkloadSpec, ReplicationWorkloadSpec


@dataclass(frozen=True)
class SimFlow:
    """A flow plus how it is driven: ``clients * depth`` outstanding requests
    (closed loop) or Poisson arrivals at ``spec.demand`` (open loop)."""

    spec: FlowSpec
    clients: int = 1
    depth: int = 1
    open_loop: bool = False

    def __post_init__(self):
        if self.clients < 1 or self.depth < 1:
            raise ValidationError("clients and depth must be >= 1")
        if self.open_loop and not (0 < self.spec.demand < math.inf):
            raise ValidationError("open-loop flows need a finite positive demand")

    @property
    def window(self) -> int:
        return self.clients * self.depth

    @property
    def name(self) -> str:
        return self.spec.name


@dataclass(frozen=True)
class Scenario:
    cfg: HardwareConfig
    flows: tuple
    duration: float = 1.0
    warmup: float = 0.1
    seed: int = 42
    kv_workload: KvWorkloadSpec | None = None
    replication_workload: ReplicationWorkloadSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "flows", tuple(self.flows))
        if not self.duration > self.warmup >= 0:
            raise ValidationError("need duration > warmup >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        for flow in self.flows:
            check_supported(flow.spec.path, flow.spec.verb, self.cfg)


# ---------------------------------------------------------------------------
# scenario files

_SCENARIO_KEYS = {"profile", "duration", "warmup", "seed"}
_FLOW_KEYS = {"path", "verb", "payload", "demand", "doorbell_batch", "address_range", "clients", "depth", "mode"}
_KV_KEYS = {"keyspace_size", "n_clients", "zipf_theta", "key_bytes", "value_bytes", "get_fraction",
            "soc_cache_bytes", "entry_overhead_bytes"}
_REPL_KEYS = {"file_bytes", "io_bytes", "n_clients", "compression_ratio", "chunk_bytes"}


def _key_lines(text: str) -> dict:
    """Map (section, key) to its 1-based line number, for error messages."""
    lines, section = {}, None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            lines[(section, None)] = lineno
        elif "=" in line and not line.startswith("#") and section is not None:
            lines[(section, line.split("=", 1)[0].strip().lower())] = lineno
    return lines


def build_scenario(text: str, cfg: HardwareConfig | None = None) -> Scenario:
    """Parse scenario text.

    ``[scenario]`` holds run settings; every ``[flow.<name>]`` section is one
    flow; optional ``[kv]`` and ``[replication]`` sections describe workloads.
    """
    parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#",),
                                       inline_comment_prefixes=("#",), interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise config_parse_error(exc) from None
    where = _key_lines(text)

    def fail(section, key, message, exc=ValidationError):
        lineno = where.get((section, key)) or where.get((section, None))
        if exc is ParseError:
            raise ParseError(message, lineno)
        raise exc(f"line {lineno}: {message}" if lineno else message)

    def number(section, key, value, kind=float):
        try:
            result = float(value)
        except ValueError:
            fail(section, key, f"[{section}] {key}: not a number: {value!r}", ParseError)
        if kind is int:
            if not result.is_integer():
                fail(section, key, f"[{section}] {key}: expected an integer", ParseError)
            return int(result)
        return result

    def check_keys(section, allowed):
        for key in parser[section]:
            if key not in allowed:
                fail(section, key, f"[{section}] unknown key {key!r}")

    settings = {}
    flows = []
    kv = replication = None
    for section in parser.sections():
        items = parser[section]
        if section == "scenario":
            check_keys(section, _SCENARIO_KEYS)
            for key, value in items.items():
                if key == "profile":
                    settings["profile"] = value
                else:
                    settings[key] = number(section, key, value, int if key == "seed" else float)
        elif section.startswith("flow."):
            check_keys(section, _FLOW_KEYS)
            if "path" not in items or "verb" not in items or "payload" not in items:
                fail(section, None, f"[{section}] needs path, verb and payload")
            demand = items.get("demand", "unbounded")
            address_range = items.get("address_range", "uniform-large")
            mode = items.get("mode", "closed")
            if mode not in ("closed", "open"):
                fail(section, "mode", f"[{section}] mode must be closed or open")
            try:
                spec = FlowSpec(
                    path=Path.parse(items["path"]),
                    verb=Verb.parse(items["verb"]),
                    payload=number(section, "payload", items["payload"], int),
                    demand=math.inf if demand == "unbounded" else number(section, "demand", demand),
                    doorbell_batch=number(section, "doorbell_batch", items.get("doorbell_batch", "1"), int),
                    address_range=None if address_range == "uniform-large"
                    else number(section, "address_range", address_range, int),
                    name=section[len("flow."):],
                )
                flows.append(SimFlow(
                    spec,
                    clients=number(section, "clients", items.get("clients", "1"), int),
                    depth=number(section, "depth", items.get("depth", "1"), int),
                    open_loop=mode == "open",
                ))
            except ValidationError as exc:
                fail(section, None, str(exc))
        elif section == "kv":
            check_keys(section, _KV_KEYS)
            kwargs = {k: number(section, k, v, float if k in ("zipf_theta", "get_fraction") else int)
                      for k, v in items.items()}
            if "keyspace_size" not in kwargs:
                fail(section, None, "[kv] needs keyspace_size")
            kv = KvWorkloadSpec(**kwargs)
        elif section == "replication":
            check_keys(section, _REPL_KEYS)
            replication = ReplicationWorkloadSpec(**{
                k: number(section, k, v, float if k == "compression_ratio" else int) for k, v in items.items()})
        else:
            fail(section, None, f"unknown section [{section}]")

    if cfg is None:
        cfg = load_profile(settings.pop("profile", None))
    else:
        settings.pop("profile", None)
    return Scenario(cfg=cfg, flows=flows, kv_workload=kv, replication_workload=replication,
                    **{k: settings[k] for k in ("duration", "warmup", "seed") if k in settings})


# ---------------------------------------------------------------------------
# resources


class FifoServer:
    """``servers`` identical servers sharing one FIFO queue."""

    def __init__(self, name: str, servers: int = 1):
        self.name = name
        self.servers = servers
        self.busy = 0
        self.queue: deque = deque()
        self.busy_time = 0.0
        self.bytes_done = 0

    def arrive(self, sim, req, service, nbytes=0):
        if self.busy < self.servers:
            self._start(sim, req, service, nbytes)
        else:
            self.queue.append((req, service, nbytes))

    def _start(self, sim, req, service, nbytes):
        self.busy += 1
        sim.account(self, sim.now, sim.now + service, nbytes)
        sim.schedule(sim.now + service, self._done, req)

    def _done(self, sim, req):
        self.busy -= 1
        if self.queue:
            self._start(sim, *self.queue.popleft())
        sim.advance(req)


class NicCorePool:
    """Shared NIC cores plus a reserved slice per endpoint (host, soc).

    A request first takes a free reserved core of its endpoint, else a free
    shared core.  Freed cores serve the oldest eligible waiting request.
    """

    def __init__(self, shared: int, reserved: int, endpoints=("host", "soc")):
        self.name = "nic"
        self.servers = shared + reserved * len(endpoints)
        self.free_shared = shared
        self.free_reserved = {e: reserved for e in endpoints}
        self.waiting = {e: deque() for e in endpoints}
        self.busy_time = 0.0
        self.bytes_done = 0
        self._ticket = 0

    def arrive(self, sim, req, service, endpoint):
        if self.free_reserved[endpoint] > 0:
            self.free_reserved[endpoint] -= 1
            self._start(sim, req, service, endpoint)
        elif self.free_shared > 0:
            self.free_shared -= 1
            self._start(sim, req, service, None)
        else:
            self._ticket += 1
            self.waiting[endpoint].append((self._ticket, req, service))

    def _start(self, sim, req, service, owner):
        sim.account(self, sim.now, sim.now + service, 0)
        sim.schedule(sim.now + service, self._done, (req, owner))

    def _done(self, sim, item):
        req, owner = item
        if owner is not None:
            queue = self.waiting[owner]
            if queue:
                _, nxt, service = queue.popleft()
                self._start(sim, nxt, service, owner)
            else:
                self.free_reserved[owner] += 1
        else:
            heads = [(q[0][0], e) for e, q in self.waiting.items() if q]
            if heads:
                _, endpoint = min(heads)
                _, nxt, service = self.waiting[endpoint].popleft()
                self._start(sim, nxt, service, None)
            else:
                self.free_shared += 1
        sim.advance(req)


class _Delay:
    name = "delay"

    def arrive(self, sim, req, service, _extra=None):
        sim.schedule(sim.now + service, lambda s, r: s.advance(r), req)


_DELAY = _Delay()


@dataclass
class _Request:
    flow: int
    issued: float
    stage: int = 0


# ---------------------------------------------------------------------------
# simulation


@dataclass
class SimMetrics:
    flow_names: list
    gbps: list
    mreqs: list
    p50_us: list
    p99_us: list
    utilization: dict
    link_gbps: dict
    events: int
    issued: int
    completed: int
    in_flight: int

    def csv_rows(self):
        yield ("flow", "gbps", "mreqs_per_s", "p50_us", "p99_us")
        for row in zip(self.flow_names, self.gbps, self.mreqs, self.p50_us, self.p99_us):
            yield (row[0],) + tuple(f"{v:.6f}" for v in row[1:])

    def write_csv(self, fh) -> None:
        csv.writer(fh).writerows(self.csv_rows())

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True, default=float)

    @property
    def total_gbps(self) -> float:
        return sum(self.gbps)


def _nic_endpoint(path: Path) -> str:
    if path.kind is PathKind.CLIENT_HOST:
        return "host"
    if path.kind is PathKind.CLIENT_SOC:
        return "soc"
    return path.requester


class _Simulation:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        cfg = scenario.cfg
        self.cfg = cfg
        self.now = 0.0
        self.heap: list = []
        self.seq = 0
        self.events = 0
        self.t_end = scenario.duration * 1e6
        self.t_warm = scenario.warmup * 1e6
        self.rng = np.random.default_rng(scenario.seed)

        cores = cfg.core_counts
        self.nic = NicCorePool(cores.nic_cores_shared, cores.nic_cores_reserved_per_endpoint)
        self.links = {}
        self.others = {}
        self.routes = [self._route(f.spec) for f in scenario.flows]
        self.unloaded = [sum(s for _, s, _ in route) for route in self.routes]

        n = len(scenario.flows)
        self.done_bytes = [0] * n
        self.done_count = [0] * n
        self.latencies = [[] for _ in range(n)]
        self.issued = 0
        self.completed = 0

    # -- route construction -------------------------------------------------
    def _server(self, name, servers=1):
        table = self.links if ":" in name and not name.startswith("engine") else self.others
        if name not in table:
            table[name] = FifoServer(name, servers)
        return table[name]

    def _route(self, spec: FlowSpec):
        cfg = self.cfg
        path, verb, payload = spec.path, spec.verb, spec.payload
        stages = []  # (resource, service_us, extra)
        requester = "host" if path.requester == "client" else path.requester
        post = posting_cost(cfg, requester) / spec.doorbell_batch
        stages.append((_DELAY, post, None))
        if path.uses_nic:
            c = cfg.core_counts
            per_core = (c.nic_cores_shared + c.nic_cores_reserved_per_endpoint) / cfg.op_rate(path, verb)
            stages.append((self.nic, per_core, _nic_endpoint(path)))
            if cfg.nic_pkt_rate_cap is not None:
                counts = pcie_packet_counts(path, payload, cfg)
                packets = counts["pcie1_packets"] + counts["pcie0_packets"]
                stages.append((self._server("nic-packet-budget"), packets / cfg.nic_pkt_rate_cap, payload))
        else:
            engine_time = max(1.0 / cfg.op_rate(path, verb), payload * 8 / (cfg.dma_engine.cap(verb) * 1e3))
            stages.append((self._server("engine:dma"), engine_time, payload))
        cliff = in_cliff(cfg, path, verb, payload)
        for link in link_loads(path, verb):
            rate = cfg.capacity(link)
            if cliff:
                rate = min(rate, cfg.anomaly.cliff_bw_gbps)
            stages.append((self._server(link), payload * 8 / (rate * 1e3), payload))
        if spec.address_range is not None and verb is not Verb.SENDRECV:
            target = "soc" if path.responder == "soc" else "host_ddio"
            rate = skew_throughput(cfg, target, verb, spec.address_range)
            stages.append((self._server(f"mem-{path.responder}"), 1.0 / rate, None))
        if verb is Verb.SENDRECV:
            if path.responder == "soc":
                n, peak = cfg.core_counts.soc_cores, cfg.soc_sendrecv_peak
            else:
                n, peak = cfg.core_counts.host_cores, cfg.host_sendrecv_peak
            stages.append((self._server(f"cpu-{path.responder}", n), n / peak, None))
        target_latency = path_latency(cfg, path, verb, payload, spec.doorbell_batch)
        busy = sum(service for _, service, _ in stages)
        stages.append((_DELAY, max(0.0, target_latency - busy), None))
        return stages

    # -- event plumbing -----------------------------------------------------
    def schedule(self, t, fn, arg):
        self.seq += 1
        heapq.heappush(self.heap, (t, self.seq, fn, arg))

    def account(self, resource, start, end, nbytes):
        overlap = min(end, self.t_end) - max(start, self.t_warm)
        if overlap > 0:
            resource.busy_time += overlap
            if nbytes:
                resource.bytes_done += nbytes * overlap / (end - start)

    def issue(self, flow_index):
        self.issued += 1
        self.advance(_Request(flow_index, self.now))

    def advance(self, req: _Request):
        route = self.routes[req.flow]
        if req.stage == len(route):
            self.finish(req)
            return
        resource, service, extra = route[req.stage]
        req.stage += 1
        resource.arrive(self, req, service, extra)

    def finish(self, req: _Request):
        self.completed += 1
        flow = self.scenario.flows[req.flow]
        if self.t_warm <= self.now <= self.t_end:
            self.done_count[req.flow] += 1
            self.done_bytes[req.flow] += flow.spec.payload
        if req.issued >= self.t_warm and self.now <= self.t_end:
            self.latencies[req.flow].append(self.now - req.issued)
        if not flow.open_loop and self.now < self.t_end:
            self.issue(req.flow)

    def _arrival(self, _sim, flow_index):
        self.issue(flow_index)
        self._next_arrival(flow_index)

    def _next_arrival(self, flow_index):
        spec = self.scenario.flows[flow_index].spec
        per_us = spec.demand * 1e3 / (8 * spec.payload)
        t = self.now + self.rng.exponential(1.0 / per_us)
        if t < self.t_end:
            self.schedule(t, self._arrival, flow_index)

    def run(self) -> SimMetrics:
        for i, flow in enumerate(self.scenario.flows):
            if flow.open_loop:
                self._next_arrival(i)
            else:
                for start in np.sort(self.rng.uniform(0.0, self.unloaded[i], flow.window)):
                    self.schedule(float(start), lambda sim, idx: sim.issue(idx), i)
        while self.heap:
            t, _, fn, arg = heapq.heappop(self.heap)
            if t > self.t_end:
                heapq.heappush(self.heap, (t, 0, fn, arg))
                break
            self.now = t
            self.events += 1
            fn(self, arg)
        return self._metrics()

    def _metrics(self) -> SimMetrics:
        window = self.t_end - self.t_warm
        flows = self.scenario.flows
        gbps = [b * 8 / (window * 1e3) for b in self.done_bytes]
        mreqs = [c / window for c in self.done_count]
        p50, p99 = [], []
        for samples in self.latencies:
            if samples:
                p50.append(float(np.percentile(samples, 50)))
                p99.append(float(np.percentile(samples, 99)))
            else:
                p50.append(math.nan)
                p99.append(math.nan)
        utilization = {}
        link_gbps = {}
        for name, server in {**self.links, **self.others, "nic": self.nic}.items():
            utilization[name] = server.busy_time / (server.servers * window)
            if name in self.links:
                link_gbps[name] = server.bytes_done * 8 / (window * 1e3)
        return SimMetrics(
            flow_names=[f.name or f"f{i}" for i, f in enumerate(flows)],
            gbps=gbps, mreqs=mreqs, p50_us=p50, p99_us=p99,
            utilization=utilization, link_gbps=link_gbps, events=self.events,
            issued=self.issued, completed=self.completed, in_flight=self.issued - self.completed,
        )


def run_simulation(scenario: Scenario) -> SimMetrics:
    """Simulate ``scenario``; identical inputs give identical metrics."""
    return _Simulation(scenario).run()


@dataclass
class DivergenceReport:
    flow_names: list
    simulated: list
    analytic: list
    relative_error: list
    metrics: SimMetrics = field(repr=False, default=None)

    @property
    def max_error(self) -> float:
        return max(self.relative_error, default=0.0)


def compare_with_analytic(scenario: Scenario, metrics: SimMetrics | None = None) -> DivergenceReport:
    """Relative error between simulated steady-state rates and the max-min allocation."""
    if not scenario.flows:
        raise NotComparable("scenario has no flows")
    for flow in scenario.flows:
        spec = flow.spec
        if in_cliff(scenario.cfg, spec.path, spec.verb, spec.payload):
            raise NotComparable(f"flow {flow.name or spec.path} is beyond its throughput cliff")
    if metrics is None:
        metrics = run_simulation(scenario)
    report = allocate_bandwidth(scenario.cfg, [f.spec for f in scenario.flows])
    errors = []
    for sim, ana in zip(metrics.gbps, report.per_flow_rate):
        errors.append(abs(sim - ana) / ana if ana > 0 else abs(sim))
    return DivergenceReport(metrics.flow_names, metrics.gbps, report.per_flow_rate, errors, metrics)
