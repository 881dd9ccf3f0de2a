import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from offpath.errors import Infeasible, InvalidCapacities, NegativeRatio, UnknownAlternative, ValidationError
from offpath.planner import (
    KV_ALTERNATIVES, KvModel, a1_limit, break_even_ratio, eval_alternative, greedy_combine,
    kv_switch_point, plan_hybrid_replication, resource_capacities,
)
from tests import oracles


def test_a1_limit_examples():
    assert a1_limit(256, 1.0) == 128
    assert a1_limit(256, 0.0) == 256
    assert a1_limit(256, 1.0, N=100) == 100
    with pytest.raises(NegativeRatio):
        a1_limit(256, -1)


def test_break_even():
    assert break_even_ratio(256, 200) == pytest.approx(0.28)
    with pytest.raises(InvalidCapacities):
        break_even_ratio(200, 256)


def test_hybrid_example():
    plan = plan_hybrid_replication(256, 200, 0.5)
    assert (plan.S, plan.H, plan.goodput) == (56, 172, 228)
    assert plan.pcie_residual == pytest.approx(0)
    assert plan.network_residual == pytest.approx(0)
    assert json.loads(plan.to_json())["goodput"] == 228


def test_hybrid_no_offload_when_ratio_high():
    plan = plan_hybrid_replication(256, 200, 1.0)
    assert plan.S == 0 and plan.H == 200


def test_hybrid_full_offload_branch():
    # constraints meet at negative H; best is all offload
    plan = plan_hybrid_replication(256, 10, 0.05)
    assert plan.H == 0
    assert plan.S == pytest.approx(min(256 / 1.05, 10 / 0.05))


@settings(max_examples=80)
@given(st.floats(1, 400), st.floats(1, 400), st.floats(0, 3))
def test_hybrid_matches_grid_oracle(P, N, ratio):
    plan = plan_hybrid_replication(P, N, ratio)
    assert plan.S >= -1e-9 and plan.H >= -1e-9
    assert plan.pcie_residual >= -1e-6 and plan.network_residual >= -1e-6
    best, _, _ = oracles.hybrid_grid_search(P, N, ratio, step=0.1)
    assert plan.goodput >= best - 1e-6
    # grid can trail the optimum by at most one step per variable
    assert plan.goodput <= best + 0.2 + 1e-6


@given(st.floats(1, 400), st.floats(1, 400), st.floats(0, 3))
def test_hybrid_dominates_pure_strategies(P, N, ratio):
    plan = plan_hybrid_replication(P, N, ratio)
    assert plan.goodput >= min(P, N) - 1e-9
    assert plan.goodput >= a1_limit(P, ratio, N) - 1e-9


@pytest.mark.parametrize("alt,latency,peak", [
    ("A1", 5.2, 50), ("A2", 8.3, 21.6), ("A4", 4.88, 58.33),
    ("A5-sendrecv", 4.58, 17.6), ("A5-read", 4.56, 70),
])
def test_kv_alternatives(cfg, alt, latency, peak):
    p = eval_alternative(alt, "kv", cfg)
    assert p.latency_us == pytest.approx(latency, abs=0.01)
    assert p.peak_throughput == pytest.approx(peak, rel=0.01)
    assert p.unit == "Mreqs/s"


def test_a5_alias(cfg):
    assert eval_alternative("A5", "kv", cfg).peak_throughput == eval_alternative("A5-sendrecv", "kv", cfg).peak_throughput


def test_misses_cost_latency(cfg):
    hit = eval_alternative("A5-sendrecv", "kv", cfg, model=KvModel(miss_rate=0.0))
    miss = eval_alternative("A5-sendrecv", "kv", cfg, model=KvModel(miss_rate=0.5))
    assert miss.latency_us > hit.latency_us


def test_replication_alternatives(cfg):
    a2 = eval_alternative("A2", "replication", cfg)
    assert a2.peak_throughput == pytest.approx(133, rel=0.01)
    a3 = eval_alternative("A3", "replication", cfg)
    assert a3.unit == "Gbps" and a3.resource_vector["host_cpu"] > 0


def test_unknown_alternative(cfg):
    with pytest.raises(UnknownAlternative):
        eval_alternative("A9", "kv", cfg)


def test_greedy_kv_combination(cfg):
    profiles = [eval_alternative(a, "kv", cfg) for a in ("A5-sendrecv", "A4")]
    plan = greedy_combine(profiles, cfg)
    assert [a for a, _ in plan.assignments] == ["A5-sendrecv", "A4"]
    assert plan.total == pytest.approx(68, rel=0.10)
    assert plan.switch_points == [pytest.approx(17.6, rel=0.01)]
    assert all(0 <= u <= 1 + 1e-9 for u in plan.utilization.values())
    assert "total" in plan.table()


def test_greedy_respects_demand(cfg):
    profiles = [eval_alternative(a, "kv", cfg) for a in ("A5-sendrecv", "A4")]
    assert greedy_combine(profiles, cfg, demand=10).total == pytest.approx(10)


def test_greedy_rejects_empty(cfg):
    with pytest.raises(ValidationError):
        greedy_combine([], cfg)


def test_greedy_infeasible_with_zero_caps(cfg):
    p = eval_alternative("A4", "kv", cfg)
    p.peak_throughput = 0
    with pytest.raises(Infeasible):
        greedy_combine([p], cfg)


@settings(max_examples=30)
@given(st.lists(st.sampled_from(KV_ALTERNATIVES), min_size=1, max_size=6, unique=True))
def test_greedy_feasible_and_prefix_monotone(alts):
    from offpath.hw import default_config
    cfg = default_config()
    caps = resource_capacities(cfg)
    profiles = [eval_alternative(a, "kv", cfg) for a in alts]
    plan = greedy_combine(profiles, cfg)
    by_id = {p.id: p for p in profiles}
    used = {r: 0.0 for r in caps}
    for alt, load in plan.assignments:
        for r, per_unit in by_id[alt].resource_vector.items():
            used[r] += per_unit * load
    assert all(used[r] <= caps[r] * (1 + 1e-9) for r in caps)
    # the combination never does worse than its first-ranked member alone
    first = by_id[plan.assignments[0][0]]
    assert plan.total >= first.peak_throughput - 1e-6


def test_switch_point():
    assert kv_switch_point(17.6, 12) == 1
    assert kv_switch_point(17.6, 4) == 4
    assert kv_switch_point(17.6, 4, rho_max=0.5) == 2
    with pytest.raises(ValidationError):
        kv_switch_point(17.6, 0)
    assert math.isclose(kv_switch_point(24, 12), 2)
