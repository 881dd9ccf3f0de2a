"""Reference measurements, per-link efficiency fitting and model regression checks.

Each fixture row names an evaluator in its ``mix`` column; the evaluator
computes the model's value for that observation.  Evaluator syntax::

    alloc[:[@<demand>]+<flow>...]  total goodput of the row's flow plus extra flows
    alloc_theory[:...]          same, with all link efficiencies reset to 1
    latency / latency_rnic      unloaded latency of the row's flow
    cliff                       single-flow bandwidth ceiling
    packets:<gbps>:<link>       PCIe packet rate (pcie1, pcie0 or total)
    skew:<target>               small-request rate; payload column is the address range
    doorbell:<side>             batching multiplier; payload column is the batch size
    a1_limit:P=..;ratio=..      break_even:P=..;N=..
    hybrid:P=..;N=..;ratio=..;field=S|H|goodput
    kv_peak:<alt>  kv_latency:<alt>  kv_combined:<alt>+<alt>
    repl_peak:<alt>;ratio=..[;theory]   theory: ignore link efficiencies
    sendrecv_peak:<soc|host>  reserved_boost  dma_small_ratio

Extra flows are ``path/verb[/payload][@demand]``.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.optimize import least_squares

from . import analytic, planner
from .errors import MissingColumn, ParseError, Underdetermined, ValidationError
from .hw import LINKS, FlowSpec, HardwareConfig, Path, Verb, packet_rate_mpps
from .workloads import ReplicationWorkloadSpec

COLUMNS = ("id", "source", "path", "verb", "payload", "mix", "value", "unit", "tol")


@dataclass(frozen=True)
class Fixture:
    id: str
    source: str
    path: str
    verb: str
    payload: int | None
    mix: str
    value: float
    unit: str
    tol: float

    def flow(self, demand: float = math.inf) -> FlowSpec:
        if not self.path or self.path == "-":
            raise ValidationError(f"fixture {self.id} has no flow")
        return FlowSpec(Path.parse(self.path), Verb.parse(self.verb), self.payload or 1, demand, name=self.id)

    @property
    def evaluator(self) -> str:
        return self.mix.split(":", 1)[0]


def load_fixtures(source) -> list[Fixture]:
    """Read fixtures from a path, an open file, or the bundled table (``None``)."""
    if source is None:
        text = (resources.files("offpath") / "data" / "observations.csv").read_text()
    elif hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, encoding="utf-8", newline="") as fh:
            text = fh.read()
    lines = [line for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")]
    if not lines:
        return []
    reader = csv.DictReader(io.StringIO("\n".join(lines)))
    missing = [c for c in COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise MissingColumn(f"fixture table lacks columns: {', '.join(missing)}", 1)
    fixtures = []
    seen = set()
    for row in reader:
        lineno = reader.line_num
        if None in row or any(row[c] is None for c in COLUMNS):
            raise ParseError("wrong number of fields", lineno)
        try:
            payload = int(row["payload"]) if row["payload"].strip() not in ("", "-") else None
            value = float(row["value"])
            tol = float(row["tol"])
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if not 0 < tol <= 1:
            raise ValidationError(f"line {lineno}: tolerance must be in (0, 1]")
        if not row["source"].strip():
            raise ValidationError(f"line {lineno}: source citation is empty")
        if row["id"] in seen:
            raise ValidationError(f"line {lineno}: duplicate fixture id {row['id']!r}")
        seen.add(row["id"])
        fixtures.append(Fixture(
            id=row["id"].strip(), source=row["source"].strip(), path=row["path"].strip(),
            verb=row["verb"].strip(), payload=payload, mix=row["mix"].strip(),
            value=value, unit=row["unit"].strip(), tol=tol))
    return fixtures


# ---------------------------------------------------------------------------
# evaluation


def _kwargs(text: str) -> dict:
    out = {}
    for part in filter(None, (p.strip() for p in text.split(";"))):
        key, sep, value = part.partition("=")
        if not sep:
            out[key] = None
            continue
        try:
            out[key] = float(value)
        except ValueError:
            out[key] = value
    return out


def _parse_extra(text: str, default_payload: int) -> FlowSpec:
    body, _, demand = text.partition("@")
    parts = body.split("/")
    if len(parts) not in (2, 3):
        raise ValidationError(f"bad flow {text!r}; expected path/verb[/payload][@demand]")
    payload = int(parts[2]) if len(parts) == 3 else default_payload
    return FlowSpec(Path.parse(parts[0]), Verb.parse(parts[1]), payload,
                    float(demand) if demand else math.inf)


def alloc_flows(fixture: Fixture) -> list[FlowSpec]:
    """Flows of an ``alloc`` fixture: the row's own flow, then any extras."""
    _, _, rest = fixture.mix.partition(":")
    own, *extras = rest.split("+") if rest else [""]
    demand = float(own[1:]) if own.startswith("@") else math.inf
    if own and not own.startswith("@"):
        extras.insert(0, own)
    return [fixture.flow(demand)] + [_parse_extra(p, fixture.payload or 1) for p in extras]


def evaluate_fixture(cfg: HardwareConfig, fixture: Fixture) -> float:
    """The model's value for one fixture."""
    kind, _, arg = fixture.mix.partition(":")
    if kind == "alloc":
        return analytic.allocate_bandwidth(cfg, alloc_flows(fixture)).total_goodput
    if kind == "alloc_theory":
        return analytic.theoretical_allocation(cfg, alloc_flows(fixture)).total_goodput
    if kind == "latency":
        f = fixture.flow()
        return analytic.path_latency(cfg, f.path, f.verb, f.payload)
    if kind == "latency_rnic":
        return analytic.rnic_latency(cfg, Verb.parse(fixture.verb), fixture.payload or 1)
    if kind == "cliff":
        f = fixture.flow()
        return analytic.effective_path_cap(cfg, f.path, f.verb, f.payload)
    if kind == "packets":
        gbps, which = arg.split(":")
        return packet_rate_mpps(Path.parse(fixture.path), fixture.payload, float(gbps), cfg)[which]
    if kind == "skew":
        return analytic.skew_throughput(cfg, arg, fixture.verb, fixture.payload)
    if kind == "doorbell":
        return analytic.doorbell_multiplier(cfg, arg, fixture.payload)
    if kind == "a1_limit":
        kw = _kwargs(arg)
        return planner.a1_limit(kw["P"], kw["ratio"], kw.get("N", math.inf))
    if kind == "break_even":
        kw = _kwargs(arg)
        return planner.break_even_ratio(kw["P"], kw["N"])
    if kind == "hybrid":
        kw = _kwargs(arg)
        plan = planner.plan_hybrid_replication(kw["P"], kw["N"], kw["ratio"])
        return getattr(plan, kw.get("field", "goodput"))
    if kind == "kv_peak":
        return planner.eval_alternative(arg, "kv", cfg).peak_throughput
    if kind == "kv_latency":
        return planner.eval_alternative(arg, "kv", cfg).latency_us
    if kind == "kv_combined":
        profiles = [planner.eval_alternative(a, "kv", cfg) for a in arg.split("+")]
        return planner.greedy_combine(profiles, cfg).total
    if kind == "repl_peak":
        alt, _, rest = arg.partition(";")
        kw = _kwargs(rest)
        workload = ReplicationWorkloadSpec(compression_ratio=kw.get("ratio", 1.0))
        target = cfg.theoretical() if "theory" in kw else cfg
        return planner.eval_alternative(alt, "replication", target, workload).peak_throughput
    if kind == "sendrecv_peak":
        return cfg.soc_sendrecv_peak if arg == "soc" else cfg.host_sendrecv_peak
    if kind == "reserved_boost":
        return analytic.reserved_core_boost(cfg)
    if kind == "dma_small_ratio":
        return analytic.dma_small_request_ratio(cfg)
    raise ValidationError(f"fixture {fixture.id}: unknown evaluator {kind!r}")


# ---------------------------------------------------------------------------
# fitting

FIT_EVALUATORS = ("alloc",)


def _saturated_links(theory: HardwareConfig, fixture: Fixture) -> set:
    report = analytic.allocate_bandwidth(theory, alloc_flows(fixture))
    return {link for link, util in report.per_link_utilization.items()
            if link in LINKS and util >= 1 - 1e-9}


def covered_links(cfg: HardwareConfig, fixtures) -> list[str]:
    """Links saturated in the theoretical allocation of some fitted fixture."""
    theory = cfg.theoretical()
    hit = set()
    for fixture in fixtures:
        if fixture.evaluator in FIT_EVALUATORS:
            hit |= _saturated_links(theory, fixture)
    return [link for link in LINKS if link in hit]


def link_groups(cfg: HardwareConfig, fixtures) -> list[tuple[str, ...]]:
    """Covered links grouped by the exact set of fixtures that saturate them.

    Links in one group are indistinguishable to the data, so they share a
    single fitted factor.
    """
    theory = cfg.theoretical()
    signature: dict = {}
    for index, fixture in enumerate(fixtures):
        if fixture.evaluator in FIT_EVALUATORS:
            for link in _saturated_links(theory, fixture):
                signature.setdefault(link, []).append(index)
    groups: dict = {}
    for link in LINKS:
        if link in signature:
            groups.setdefault(tuple(signature[link]), []).append(link)
    return [tuple(g) for g in groups.values()]


def fit_efficiency(cfg: HardwareConfig, fixtures) -> dict:
    """Per-link efficiency factors minimizing the relative error of allocation fixtures.

    Links no fixture saturates keep factor 1.0; an :class:`Underdetermined`
    warning lists them.
    """
    fixtures = [f for f in fixtures if f.evaluator in FIT_EVALUATORS]
    base = cfg.theoretical()
    groups = link_groups(base, fixtures)
    covered = {link for group in groups for link in group}
    uncovered = [link for link in LINKS if link not in covered]
    if uncovered:
        warnings.warn(f"no fixture constrains efficiency of: {', '.join(uncovered)}", Underdetermined,
                      stacklevel=2)
    fitted = {link: 1.0 for link in LINKS}
    if not groups:
        return fitted
    observed = np.array([f.value for f in fixtures])

    def expand(x):
        return {link: float(v) for group, v in zip(groups, x) for link in group}

    def residuals(x):
        trial = base.replace(efficiency=expand(x))
        model = np.array([evaluate_fixture(trial, f) for f in fixtures])
        return (model - observed) / observed

    result = least_squares(residuals, np.ones(len(groups)), bounds=(1e-6, 1.0),
                           xtol=1e-12, ftol=1e-12, gtol=1e-12)
    fitted.update({link: min(1.0, v) for link, v in expand(result.x).items()})
    return fitted


@dataclass(frozen=True)
class FixtureResult:
    id: str
    model: float
    observed: float
    relative_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.relative_error <= self.tol


@dataclass
class ValidationReport:
    results: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self) -> list:
        return [r for r in self.results if not r.passed]

    def table(self) -> str:
        lines = [f"{'id':<28}{'model':>12}{'observed':>12}{'error':>9}{'tol':>7}  status"]
        for r in self.results:
            lines.append(f"{r.id:<28}{r.model:>12.4f}{r.observed:>12.4f}{r.relative_error:>9.4f}"
                         f"{r.tol:>7.2f}  {'pass' if r.passed else 'FAIL'}")
        return "\n".join(lines)


def validate_against_fixtures(cfg: HardwareConfig, efficiency, fixtures) -> ValidationReport:
    """Evaluate every fixture; pass iff relative error is within its tolerance."""
    if efficiency is not None:
        cfg = cfg.with_efficiency(efficiency)
    results = []
    for fixture in fixtures:
        model = evaluate_fixture(cfg, fixture)
        error = abs(model - fixture.value) / abs(fixture.value)
        results.append(FixtureResult(fixture.id, model, fixture.value, error, fixture.tol))
    return ValidationReport(results)
