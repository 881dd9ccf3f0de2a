import io
from dataclasses import replace
import math
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from offpath.analytic import path_latency
from offpath.errors import NotComparable, ParseError, UnsupportedVerbForPath, ValidationError
from offpath.hw import CLIENT_HOST, CLIENT_SOC, DMA_S2H, RDMA_S2H, FlowSpec, Verb, default_config
from offpath.simulator import Scenario, SimFlow, build_scenario, compare_with_analytic, run_simulation

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
KB = 1024


def scenario(*flows, duration=0.0004, warmup=0.0001, seed=42, cfg=None):
    return Scenario(cfg or default_config(), flows, duration=duration, warmup=warmup, seed=seed)


def closed(path, verb, payload, clients=2, depth=8, **kw):
    return SimFlow(FlowSpec(path, verb, payload, **kw), clients=clients, depth=depth)


def test_deterministic_for_same_seed():
    sc = scenario(closed(CLIENT_HOST, Verb.READ, 4 * KB), closed(CLIENT_HOST, Verb.WRITE, 4 * KB))
    assert run_simulation(sc).to_json() == run_simulation(sc).to_json()


def test_seed_changes_open_loop_trace():
    flow = SimFlow(FlowSpec(CLIENT_HOST, Verb.READ, 4 * KB, demand=50), open_loop=True)
    a = run_simulation(scenario(flow, seed=1))
    b = run_simulation(scenario(flow, seed=2))
    assert a.issued != b.issued or a.p99_us != b.p99_us


def test_request_conservation():
    m = run_simulation(scenario(closed(CLIENT_SOC, Verb.READ, 16 * KB), closed(RDMA_S2H, Verb.WRITE, 64 * KB)))
    assert m.issued == m.completed + m.in_flight
    assert m.in_flight <= 2 * 16


def test_single_request_latency_matches_model():
    m = run_simulation(scenario(closed(CLIENT_HOST, Verb.READ, 64, clients=1, depth=1)))
    assert m.p50_us[0] == pytest.approx(path_latency(default_config(), CLIENT_HOST, Verb.READ, 64), rel=1e-6)


def test_littles_law_closed_loop():
    window = 4
    m = run_simulation(scenario(closed(CLIENT_HOST, Verb.READ, 64, clients=1, depth=window)))
    # with no queueing every request takes the unloaded latency
    assert m.mreqs[0] * m.p50_us[0] == pytest.approx(window, rel=0.02)


def test_link_rates_never_exceed_capacity():
    cfg = default_config()
    m = run_simulation(scenario(closed(CLIENT_HOST, Verb.READ, 64 * KB), closed(CLIENT_HOST, Verb.WRITE, 64 * KB),
                                closed(RDMA_S2H, Verb.READ, 64 * KB)))
    for link, gbps in m.link_gbps.items():
        assert gbps <= cfg.capacity(link) * 1.01
    for util in m.utilization.values():
        assert util <= 1.0 + 1e-9


def test_bidirectional_near_analytic():
    sc = build_scenario((SCENARIOS / "bidir.scn").read_text())
    report = compare_with_analytic(sc)
    assert report.max_error < 0.05
    assert sum(report.simulated) == pytest.approx(400, rel=0.05)


def test_dma_engine_limits_rate():
    m = run_simulation(scenario(closed(DMA_S2H, Verb.WRITE, 64 * KB, depth=16)))
    assert m.gbps[0] == pytest.approx(160, rel=0.05)


def test_reserved_cores_help_small_requests():
    base = default_config()
    flows = (closed(CLIENT_HOST, Verb.READ, 64, clients=8, depth=64),
             closed(CLIENT_SOC, Verb.READ, 64, clients=8, depth=64))
    no_reserve = base.replace(core_counts=replace(base.core_counts, nic_cores_reserved_per_endpoint=0))
    shared = run_simulation(scenario(*flows, cfg=no_reserve))
    reserved = run_simulation(scenario(*flows, cfg=base))
    assert sum(reserved.mreqs) > sum(shared.mreqs) * 1.04


def test_metrics_csv():
    m = run_simulation(scenario(closed(CLIENT_HOST, Verb.READ, 64, clients=1, depth=1, name="r")))
    buf = io.StringIO()
    m.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "flow,gbps,mreqs_per_s,p50_us,p99_us"
    assert lines[1].startswith("r,")


@settings(max_examples=15)
@given(st.sampled_from([CLIENT_HOST, CLIENT_SOC, RDMA_S2H]), st.sampled_from([Verb.READ, Verb.WRITE]),
       st.sampled_from([64, 4 * KB, 64 * KB]), st.integers(1, 3), st.integers(1, 8))
def test_conservation_property(path, verb, payload, clients, depth):
    m = run_simulation(scenario(closed(path, verb, payload, clients, depth), duration=0.0002, warmup=0.00005))
    assert m.issued == m.completed + m.in_flight
    assert 0 <= m.in_flight <= clients * depth
    assert all(p50 <= p99 + 1e-9 for p50, p99 in zip(m.p50_us, m.p99_us))


# ---------------------------------------------------------------- scenario files


@pytest.mark.parametrize("name", sorted(p.name for p in SCENARIOS.glob("*.scn")))
def test_bundled_scenarios_parse(name):
    sc = build_scenario((SCENARIOS / name).read_text())
    assert sc.flows


def test_unknown_key_reports_line():
    text = "[scenario]\nduration = 0.01\n\n[flow.a]\npath = client_host\nverb = read\npayload = 64\nspeed = 3\n"
    with pytest.raises(ValidationError, match="line 8"):
        build_scenario(text)


def test_malformed_file_is_parse_error():
    with pytest.raises(ParseError):
        build_scenario("[scenario\nduration = 1\n")


def test_unsupported_verb_in_scenario():
    text = "[flow.a]\npath = hostsoc_dma.s2h\nverb = sendrecv\npayload = 64\n"
    with pytest.raises(UnsupportedVerbForPath):
        build_scenario(text)


def test_bad_window_and_times():
    with pytest.raises(ValidationError):
        SimFlow(FlowSpec(CLIENT_HOST, Verb.READ, 64), clients=0)
    with pytest.raises(ValidationError):
        SimFlow(FlowSpec(CLIENT_HOST, Verb.READ, 64), open_loop=True)
    with pytest.raises(ValidationError):
        scenario(closed(CLIENT_HOST, Verb.READ, 64), duration=0.1, warmup=0.2)


def test_not_comparable_cases():
    with pytest.raises(NotComparable):
        compare_with_analytic(scenario())
    with pytest.raises(NotComparable):
        compare_with_analytic(scenario(closed(CLIENT_SOC, Verb.READ, 16 * 2**20, clients=1, depth=1)))
    assert math.isfinite(compare_with_analytic(scenario(closed(CLIENT_HOST, Verb.READ, 64 * KB))).max_error)
