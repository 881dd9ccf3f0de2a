"""Choosing where to run a key-value store and a replication service."""

# %%
from offpath import fitted_config
from offpath.planner import (
    KV_ALTERNATIVES, a1_limit, break_even_ratio, eval_alternative, greedy_combine,
    kv_switch_point, plan_hybrid_replication,
)
from offpath.workloads import KvWorkloadSpec, cache_fit_miss_rate

cfg = fitted_config()

# %% Key-value alternatives: latency, peak rate and what limits each
for alt in KV_ALTERNATIVES:
    p = eval_alternative(alt, "kv", cfg)
    print(f"{alt:12s}{p.latency_us:6.2f} us {p.peak_throughput:7.1f} {p.unit:8s} limited by {p.binding}")

# %% Fill the low-latency SoC path first, spill to one-sided reads
plan = greedy_combine([eval_alternative(a, "kv", cfg) for a in ("A5-sendrecv", "A4")], cfg)
print(plan.table())
print("clients served on the fast path:", kv_switch_point(plan.assignments[0][1], 12.0))

# %% How much of a Zipf keyspace fits in SoC memory?
for gib in (0.25, 1, 4, 16):
    spec = KvWorkloadSpec(keyspace_size=10**8, soc_cache_bytes=int(gib * 2**30))
    print(f"{gib:5} GiB cache -> miss rate {cache_fit_miss_rate(spec):.3f}")

# %% Replication: offloading compression only pays off for good ratios
print("full offload at ratio 1:", a1_limit(256, 1.0), "Gbps")
print("break-even ratio:", round(break_even_ratio(256, 200), 3))
for ratio in (0.1, 0.3, 0.5, 0.8):
    hp = plan_hybrid_replication(256, 200, ratio)
    print(f"ratio {ratio}: offload {hp.S:6.1f} + host {hp.H:6.1f} = {hp.goodput:6.1f} Gbps")
