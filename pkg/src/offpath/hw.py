"""SmartNIC topology, hardware profiles and per-path data-flow arithmetic.

Every other module consumes the types defined here.  Links are directed and
named ``<link>:<from>-><to>``; a path/verb pair maps to the ordered list of
directed links its payload bytes traverse (source to sink).
"""

from __future__ import annotations

import configparser
import dataclasses
import enum
import hashlib
import math
import os
import re
from dataclasses import dataclass, field
from importlib import resources
from types import MappingProxyType
from typing import Mapping

from .errors import (
    BadMtu,
    ConfigError,
    EmptySkewTable,
    NonPositiveCapacity,
    ParseError,
    UnsupportedVerbForPath,
    ValidationError,
)

NET_OUT = "net:nic->wire"
NET_IN = "net:wire->nic"
PCIE1_DOWN = "pcie1:switch->nic"
PCIE1_UP = "pcie1:nic->switch"
PCIE0_UP = "pcie0:host->switch"
PCIE0_DOWN = "pcie0:switch->host"
SOC_UP = "soc:soc->switch"
SOC_DOWN = "soc:switch->soc"

LINKS = (NET_OUT, NET_IN, PCIE1_DOWN, PCIE1_UP, PCIE0_UP, PCIE0_DOWN, SOC_UP, SOC_DOWN)


class Verb(enum.Enum):
    READ = "read"
    WRITE = "write"
    SENDRECV = "sendrecv"

    @classmethod
    def parse(cls, text: str) -> "Verb":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValidationError(f"unknown verb {text!r}") from None


class PathKind(enum.Enum):
    CLIENT_HOST = "client_host"  # path 1
    CLIENT_SOC = "client_soc"  # path 2
    HOSTSOC_RDMA = "hostsoc_rdma"  # path 3
    HOSTSOC_DMA = "hostsoc_dma"  # path 3*


class Direction(enum.Enum):
    H2S = "h2s"
    S2H = "s2h"


@dataclass(frozen=True)
class Path:
    kind: PathKind
    direction: Direction | None = None

    def __post_init__(self):
        intra = self.kind in (PathKind.HOSTSOC_RDMA, PathKind.HOSTSOC_DMA)
        if intra and self.direction is None:
            raise ValidationError(f"{self.kind.value} needs a direction (h2s|s2h)")
        if not intra and self.direction is not None:
            raise ValidationError(f"{self.kind.value} takes no direction")

    @classmethod
    def parse(cls, text: str) -> "Path":
        name, _, direction = text.strip().lower().partition(".")
        try:
            kind = PathKind(name)
        except ValueError:
            raise ValidationError(f"unknown path {text!r}") from None
        return cls(kind, Direction(direction) if direction else None)

    @property
    def requester(self) -> str:
        if self.kind in (PathKind.CLIENT_HOST, PathKind.CLIENT_SOC):
            return "client"
        return "host" if self.direction is Direction.H2S else "soc"

    @property
    def responder(self) -> str:
        if self.kind is PathKind.CLIENT_HOST:
            return "host"
        if self.kind is PathKind.CLIENT_SOC:
            return "soc"
        return "soc" if self.direction is Direction.H2S else "host"

    @property
    def uses_nic(self) -> bool:
        return self.kind is not PathKind.HOSTSOC_DMA

    def __str__(self):
        if self.direction is None:
            return self.kind.value
        return f"{self.kind.value}.{self.direction.value}"


CLIENT_HOST = Path(PathKind.CLIENT_HOST)
CLIENT_SOC = Path(PathKind.CLIENT_SOC)
RDMA_H2S = Path(PathKind.HOSTSOC_RDMA, Direction.H2S)
RDMA_S2H = Path(PathKind.HOSTSOC_RDMA, Direction.S2H)
DMA_H2S = Path(PathKind.HOSTSOC_DMA, Direction.H2S)
DMA_S2H = Path(PathKind.HOSTSOC_DMA, Direction.S2H)


@dataclass(frozen=True)
class FlowSpec:
    """One offered traffic flow.  ``demand`` is Gbps; ``math.inf`` is unbounded."""

    path: Path
    verb: Verb
    payload: int
    demand: float = math.inf
    doorbell_batch: int = 1
    address_range: int | None = None  # None means uniform over a large range
    name: str = ""

    def __post_init__(self):
        if self.payload < 1:
            raise ValidationError("payload must be >= 1 byte")
        if self.doorbell_batch < 1:
            raise ValidationError("doorbell_batch must be >= 1")
        if self.demand < 0:
            raise ValidationError("demand must be >= 0")
        if self.address_range is not None and self.address_range < 64:
            raise ValidationError("address_range must be >= 64 bytes")


# ---------------------------------------------------------------------------
# hardware configuration


@dataclass(frozen=True)
class Latencies:
    switch_cross_ns: float = 300.0
    net_oneway_us: float = 0.5
    host_dram_ns: float = 420.0
    soc_dram_ns: float = 100.0
    mmio_host_cycles: float = 399.0
    mmio_soc_cycles: float = 1405.0
    host_ghz: float = 3.6
    soc_ghz: float = 2.75
    base_read_us: float = 2.0
    base_write_us: float = 1.5
    base_sendrecv_us: float = 3.0
    soc_handler_extra_us: float = 1.2


@dataclass(frozen=True)
class Cores:
    host_cores: int = 24
    soc_cores: int = 8
    nic_cores_shared: int = 12
    nic_cores_reserved_per_endpoint: int = 1


@dataclass(frozen=True)
class DmaEngine:
    small_req_factor: float = 0.53
    read_bw_cap: float = 200.0
    write_bw_cap: float = 160.0
    setup_us: float = 0.3

    def cap(self, verb: Verb) -> float:
        return self.read_bw_cap if verb is Verb.READ else self.write_bw_cap


@dataclass(frozen=True)
class Anomaly:
    soc_read_cliff_bytes: int = 9 * 2**20
    hostsoc_cliff_bytes: int = 2 * 2**20
    dma_cliff_bytes: int = 2**20
    cliff_bw_gbps: float = 100.0


def _freeze(mapping):
    return MappingProxyType(dict(mapping))


@dataclass(frozen=True, eq=False)
class HardwareConfig:
    """Validated, immutable description of the modeled SmartNIC platform.

    Build instances through :func:`validate_config` or :func:`load_profile`.
    Tables (skew, doorbell) are tuples of ``(x, y)`` pairs sorted by ``x``.
    ``efficiency`` maps directed link ids to factors in (0, 1]; missing links
    are treated as 1.0.
    """

    net_bw_per_dir: float = 200.0
    pcie1_bw_per_dir: float = 256.0
    pcie0_bw_per_dir: float = 256.0
    soc_link_bw_per_dir: float = 256.0
    host_pcie_mtu: int = 512
    soc_pcie_mtu: int = 128
    nic_pkt_rate_cap: float | None = None
    nic_op_rate: Mapping[str, float] = field(default_factory=dict)
    dma_engine: DmaEngine = field(default_factory=DmaEngine)
    latencies: Latencies = field(default_factory=Latencies)
    core_counts: Cores = field(default_factory=Cores)
    soc_sendrecv_peak: float = 21.6
    host_sendrecv_peak: float = 33.75
    anomaly: Anomaly = field(default_factory=Anomaly)
    skew_table_host_ddio: Mapping[str, tuple] = field(default_factory=dict)
    skew_table_soc: Mapping[str, tuple] = field(default_factory=dict)
    doorbell: Mapping[str, tuple] = field(default_factory=dict)
    efficiency: Mapping[str, float] = field(default_factory=dict)
    has_soc: bool = True

    def __post_init__(self):
        for name in ("nic_op_rate", "skew_table_host_ddio", "skew_table_soc", "doorbell", "efficiency"):
            object.__setattr__(self, name, _freeze(getattr(self, name)))

    def __eq__(self, other):
        if not isinstance(other, HardwareConfig):
            return NotImplemented
        return dump_profile(self) == dump_profile(other) and self.has_soc == other.has_soc

    def __hash__(self):
        return hash(dump_profile(self))

    # capacities ------------------------------------------------------------
    def raw_capacity(self, link: str) -> float:
        prefix = link.split(":", 1)[0]
        return {
            "net": self.net_bw_per_dir,
            "pcie1": self.pcie1_bw_per_dir,
            "pcie0": self.pcie0_bw_per_dir,
            "soc": self.soc_link_bw_per_dir,
        }[prefix]

    def link_efficiency(self, link: str) -> float:
        return self.efficiency.get(link, 1.0)

    def capacity(self, link: str) -> float:
        """Usable capacity of a directed link: raw capacity times efficiency."""
        return self.raw_capacity(link) * self.link_efficiency(link)

    def op_rate(self, path: Path, verb: Verb) -> float:
        """Small-request NIC (or DMA engine) rate for a path, M ops/s."""
        if path.kind is PathKind.HOSTSOC_DMA:
            base = self.nic_op_rate[f"{PathKind.HOSTSOC_RDMA.value}.{verb.value}"]
            return base * self.dma_engine.small_req_factor
        return self.nic_op_rate[f"{path.kind.value}.{verb.value}"]

    def replace(self, **changes) -> "HardwareConfig":
        return dataclasses.replace(self, **changes)

    def with_efficiency(self, efficiency: Mapping[str, float]) -> "HardwareConfig":
        return validate_config(self.replace(efficiency=dict(efficiency)))

    def theoretical(self) -> "HardwareConfig":
        return self.replace(efficiency={})

    def as_rnic(self) -> "HardwareConfig":
        """The same NIC without the PCIe switch and SoC (plain RDMA NIC baseline)."""
        lat = dataclasses.replace(self.latencies, switch_cross_ns=0.0)
        return self.replace(latencies=lat, has_soc=False)

    def digest(self) -> str:
        return hashlib.sha256(dump_profile(self).encode()).hexdigest()


def _is_pow2(n) -> bool:
    return isinstance(n, int) and n > 0 and (n & (n - 1)) == 0


def validate_config(raw) -> HardwareConfig:
    """Check a candidate configuration and return it as a :class:`HardwareConfig`.

    ``raw`` may be a ``HardwareConfig`` or a mapping of its field names.  The
    first violated invariant is raised.
    """
    if isinstance(raw, Mapping):
        unknown = set(raw) - {f.name for f in dataclasses.fields(HardwareConfig)}
        if unknown:
            raise ValidationError(f"unknown config fields: {sorted(unknown)}")
        cfg = HardwareConfig(**raw)
    elif isinstance(raw, HardwareConfig):
        cfg = raw
    else:
        raise TypeError(f"cannot validate {type(raw).__name__}")

    def positive(name, value):
        if value is None or not value > 0 or math.isnan(value):
            raise NonPositiveCapacity(f"{name} must be > 0 (got {value!r})")

    for name in ("net_bw_per_dir", "pcie1_bw_per_dir", "pcie0_bw_per_dir", "soc_link_bw_per_dir",
                 "soc_sendrecv_peak", "host_sendrecv_peak"):
        positive(name, getattr(cfg, name))
    if cfg.nic_pkt_rate_cap is not None:
        positive("nic_pkt_rate_cap", cfg.nic_pkt_rate_cap)
    for name in ("host_pcie_mtu", "soc_pcie_mtu"):
        value = getattr(cfg, name)
        if not _is_pow2(value) or value < 64:
            raise BadMtu(f"{name} must be a power of two >= 64 (got {value!r})")
    for key, value in cfg.nic_op_rate.items():
        positive(f"nic_op_rate.{key}", value)
    for sub in ("dma_engine", "latencies", "core_counts", "anomaly"):
        for f in dataclasses.fields(getattr(cfg, sub)):
            value = getattr(getattr(cfg, sub), f.name)
            # the RNIC baseline legitimately has a zero switch crossing
            if f.name == "switch_cross_ns" and value == 0 and not cfg.has_soc:
                continue
            positive(f"{sub}.{f.name}", value)
    if cfg.dma_engine.small_req_factor > 1:
        raise ConfigError("dma_engine.small_req_factor must be <= 1")
    for table_name in ("skew_table_host_ddio", "skew_table_soc"):
        table = getattr(cfg, table_name)
        for verb in ("read", "write"):
            points = table.get(verb, ())
            if not points:
                raise EmptySkewTable(f"{table_name}.{verb} has no samples")
            _check_table(f"{table_name}.{verb}", points)
    for side, points in cfg.doorbell.items():
        if not points:
            raise ConfigError(f"doorbell.{side} has no samples")
        _check_table(f"doorbell.{side}", points)
    for link, factor in cfg.efficiency.items():
        if link not in LINKS:
            raise ConfigError(f"efficiency for unknown link {link!r}")
        if not 0 < factor <= 1:
            raise ConfigError(f"efficiency of {link} must be in (0, 1] (got {factor})")
    return cfg


def _check_table(name, points):
    xs = [p[0] for p in points]
    if xs != sorted(xs) or len(set(xs)) != len(xs):
        raise ConfigError(f"{name} samples must have strictly increasing x")
    for x, y in points:
        if not (x > 0 and y > 0):
            raise NonPositiveCapacity(f"{name} samples must be positive")


# ---------------------------------------------------------------------------
# profile files

_SCALAR_SECTIONS = {
    "bandwidth": ("net_bw_per_dir", "pcie1_bw_per_dir", "pcie0_bw_per_dir", "soc_link_bw_per_dir"),
    "mtu": ("host_pcie_mtu", "soc_pcie_mtu"),
}
_NESTED_SECTIONS = {
    "dma_engine": ("dma_engine", DmaEngine),
    "latencies": ("latencies", Latencies),
    "cores": ("core_counts", Cores),
    "anomaly": ("anomaly", Anomaly),
}
_INT_FIELDS = {"host_pcie_mtu", "soc_pcie_mtu", "host_cores", "soc_cores", "nic_cores_shared",
               "nic_cores_reserved_per_endpoint", "soc_read_cliff_bytes", "hostsoc_cliff_bytes",
               "dma_cliff_bytes"}


def _number(text, key, section):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"[{section}] {key}: not a number: {text!r}") from None
    if key in _INT_FIELDS:
        if not value.is_integer():
            raise ParseError(f"[{section}] {key}: expected an integer, got {text!r}")
        return int(value)
    return value


def parse_table(text: str, where: str = "table") -> tuple:
    points = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        x, sep, y = item.partition(":")
        if not sep:
            raise ParseError(f"{where}: expected x:y pairs, got {item!r}")
        try:
            points.append((float(x), float(y)))
        except ValueError:
            raise ParseError(f"{where}: bad sample {item!r}") from None
    return tuple(points)


def _format_table(points) -> str:
    return ", ".join(f"{_fmt(x)}:{_fmt(y)}" for x, y in points)


def _fmt(value) -> str:
    if isinstance(value, float) and value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _new_parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(
        delimiters=("=",), comment_prefixes=("#",), inline_comment_prefixes=("#",),
        interpolation=None, strict=True)
    return parser


def config_parse_error(exc: configparser.Error) -> ParseError:
    """Turn a configparser failure into a ParseError carrying its line number."""
    message = re.sub(r"^While reading from .*?\[line\s+\d+\]: ", "", str(exc).splitlines()[0])
    return ParseError(message, getattr(exc, "lineno", None))


def parse_profile(text: str) -> HardwareConfig:
    """Parse key=value profile text (see ``data/bluefield2.profile``)."""
    parser = _new_parser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise config_parse_error(exc) from None

    raw: dict = {}
    for section in parser.sections():
        items = dict(parser.items(section))
        if section in _SCALAR_SECTIONS:
            for key, value in items.items():
                if key not in _SCALAR_SECTIONS[section]:
                    raise ParseError(f"[{section}] unknown key {key!r}")
                raw[key] = _number(value, key, section)
        elif section in _NESTED_SECTIONS:
            name, cls = _NESTED_SECTIONS[section]
            known = {f.name for f in dataclasses.fields(cls)}
            kwargs = {}
            for key, value in items.items():
                if key not in known:
                    raise ParseError(f"[{section}] unknown key {key!r}")
                kwargs[key] = _number(value, key, section)
            raw[name] = cls(**kwargs)
        elif section == "nic":
            for key, value in items.items():
                if key != "pkt_rate_cap":
                    raise ParseError(f"[nic] unknown key {key!r}")
                raw["nic_pkt_rate_cap"] = None if value.lower() == "none" else _number(value, key, section)
        elif section == "nic_op_rate":
            raw["nic_op_rate"] = {k: _number(v, k, section) for k, v in items.items()}
        elif section == "sendrecv":
            for key, value in items.items():
                if key not in ("soc_peak", "host_peak"):
                    raise ParseError(f"[sendrecv] unknown key {key!r}")
                raw[f"{key.split('_')[0]}_sendrecv_peak"] = _number(value, key, section)
        elif section in ("skew.soc", "skew.host_ddio"):
            target = "skew_table_soc" if section == "skew.soc" else "skew_table_host_ddio"
            raw[target] = {k: parse_table(v, f"[{section}] {k}") for k, v in items.items()}
        elif section == "doorbell":
            raw["doorbell"] = {k: parse_table(v, f"[doorbell] {k}") for k, v in items.items()}
        elif section == "efficiency":
            raw["efficiency"] = {k: _number(v, k, section) for k, v in items.items()}
        else:
            raise ParseError(f"unknown section [{section}]")
    return validate_config(raw)


def dump_profile(cfg: HardwareConfig) -> str:
    """Serialize a configuration back to profile text (round-trips exactly)."""
    out = []

    def section(name, pairs):
        out.append(f"[{name}]")
        out.extend(f"{k} = {v}" for k, v in pairs)
        out.append("")

    for name, keys in _SCALAR_SECTIONS.items():
        section(name, [(k, _fmt(getattr(cfg, k))) for k in keys])
    cap = cfg.nic_pkt_rate_cap
    section("nic", [("pkt_rate_cap", "none" if cap is None else _fmt(cap))])
    section("nic_op_rate", [(k, _fmt(v)) for k, v in sorted(cfg.nic_op_rate.items())])
    for sec, (name, cls) in _NESTED_SECTIONS.items():
        obj = getattr(cfg, name)
        section(sec, [(f.name, _fmt(getattr(obj, f.name))) for f in dataclasses.fields(cls)])
    section("sendrecv", [("soc_peak", _fmt(cfg.soc_sendrecv_peak)), ("host_peak", _fmt(cfg.host_sendrecv_peak))])
    section("doorbell", [(k, _format_table(v)) for k, v in sorted(cfg.doorbell.items())])
    section("skew.soc", [(k, _format_table(v)) for k, v in sorted(cfg.skew_table_soc.items())])
    section("skew.host_ddio", [(k, _format_table(v)) for k, v in sorted(cfg.skew_table_host_ddio.items())])
    section("efficiency", [(k, _fmt(v)) for k, v in sorted(cfg.efficiency.items())])
    return "\n".join(out)


PROFILE_ENV = "OFFPATH_PROFILE"


def _data_path(name: str):
    return resources.files("offpath") / "data" / name


def load_profile(source=None) -> HardwareConfig:
    """Load a profile from a path, or a bundled name (``bluefield2``, ``fitted``).

    With no argument, ``$OFFPATH_PROFILE`` is used if set, else ``bluefield2``.
    """
    if source is None:
        source = os.environ.get(PROFILE_ENV, "bluefield2")
    source = str(source)
    if source in ("bluefield2", "fitted"):
        text = _data_path(f"{source}.profile").read_text()
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    return parse_profile(text)


def default_config() -> HardwareConfig:
    return load_profile("bluefield2")


def fitted_config() -> HardwareConfig:
    return load_profile("fitted")


# ---------------------------------------------------------------------------
# data-flow arithmetic

_ROUTES = {
    ("host", "wire"): (PCIE0_UP, PCIE1_DOWN, NET_OUT),
    ("wire", "host"): (NET_IN, PCIE1_UP, PCIE0_DOWN),
    ("soc", "wire"): (SOC_UP, PCIE1_DOWN, NET_OUT),
    ("wire", "soc"): (NET_IN, PCIE1_UP, SOC_DOWN),
    ("host", "soc", "rdma"): (PCIE0_UP, PCIE1_DOWN, PCIE1_UP, SOC_DOWN),
    ("soc", "host", "rdma"): (SOC_UP, PCIE1_DOWN, PCIE1_UP, PCIE0_DOWN),
    ("host", "soc", "dma"): (PCIE0_UP, SOC_DOWN),
    ("soc", "host", "dma"): (SOC_UP, PCIE0_DOWN),
}


class LinkLoad(Mapping):
    """Bytes carried per payload byte on each directed link, in data-flow order.

    Links not on the route have multiplier 0.
    """

    def __init__(self, route):
        self.route = tuple(route)

    def __getitem__(self, link):
        if link in self.route:
            return 1
        if link in LINKS:
            return 0
        raise KeyError(link)

    def __iter__(self):
        return iter(self.route)

    def __len__(self):
        return len(self.route)

    def __repr__(self):
        return f"LinkLoad({list(self.route)})"


def check_supported(path: Path, verb: Verb, cfg: HardwareConfig | None = None) -> None:
    if path.kind is PathKind.HOSTSOC_DMA and verb is Verb.SENDRECV:
        raise UnsupportedVerbForPath("DMA path supports READ and WRITE only")
    if cfg is not None and not cfg.has_soc and path.kind is not PathKind.CLIENT_HOST:
        raise UnsupportedVerbForPath(f"{path} needs a SoC; this profile has none")


def data_endpoints(path: Path, verb: Verb) -> tuple[str, str]:
    """(source, sink) of the payload bytes.  READ moves responder->requester."""
    requester = "wire" if path.requester == "client" else path.requester
    if verb is Verb.READ:
        return path.responder, requester
    return requester, path.responder


def link_loads(path: Path, verb: Verb) -> LinkLoad:
    check_supported(path, verb)
    src, dst = data_endpoints(path, verb)
    if path.kind is PathKind.HOSTSOC_RDMA:
        return LinkLoad(_ROUTES[(src, dst, "rdma")])
    if path.kind is PathKind.HOSTSOC_DMA:
        return LinkLoad(_ROUTES[(src, dst, "dma")])
    return LinkLoad(_ROUTES[(src, dst)])


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def pcie_packet_counts(path: Path, nbytes: int, cfg: HardwareConfig) -> dict:
    """PCIe data packets to move ``nbytes`` (control-path packets omitted)."""
    if nbytes < 1:
        raise ValidationError("bytes must be >= 1")
    host = _ceil_div(nbytes, cfg.host_pcie_mtu)
    soc = _ceil_div(nbytes, cfg.soc_pcie_mtu)
    if path.kind is PathKind.CLIENT_HOST:
        return {"pcie1_packets": host, "pcie0_packets": host}
    if path.kind is PathKind.CLIENT_SOC:
        return {"pcie1_packets": soc, "pcie0_packets": 0}
    if path.kind is PathKind.HOSTSOC_RDMA:
        return {"pcie1_packets": host + soc, "pcie0_packets": host}
    return {"pcie1_packets": 0, "pcie0_packets": host}


def packet_rate_mpps(path: Path, nbytes: int, gbps: float, cfg: HardwareConfig) -> dict:
    """Packet rates (Mpps) when streaming ``nbytes`` transfers at ``gbps``."""
    counts = pcie_packet_counts(path, nbytes, cfg)
    transfers_per_s = gbps * 1e9 / 8 / nbytes
    rates = {k.replace("_packets", ""): v * transfers_per_s / 1e6 for k, v in counts.items()}
    rates["total"] = rates["pcie1"] + rates["pcie0"]
    return rates


def nic_packets_per_byte(path: Path, nbytes: int, cfg: HardwareConfig) -> float:
    """Packets the NIC handles per payload byte; zero for the DMA path."""
    if not path.uses_nic:
        return 0.0
    counts = pcie_packet_counts(path, nbytes, cfg)
    return (counts["pcie1_packets"] + counts["pcie0_packets"]) / nbytes
