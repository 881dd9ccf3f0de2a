"""Where does bandwidth go on an off-path SmartNIC?

Run with ``python demos/01_where_bandwidth_goes.py``.
"""

# %% Setup: the bundled profile with theoretical link capacities
from offpath import Verb, allocate_bandwidth, default_config, effective_path_cap, link_loads
from offpath.hw import CLIENT_HOST, CLIENT_SOC, DMA_S2H, RDMA_S2H, FlowSpec

cfg = default_config()
KB = 1024


def show(title, flows):
    report = allocate_bandwidth(cfg, flows)
    print(f"\n== {title}")
    for f, rate, why in zip(flows, report.per_flow_rate, report.per_flow_limit):
        print(f"  {str(f.path):18s}{f.verb.value:7s}{rate:7.1f} Gbps  ({why})")
    print(f"  total {report.total_goodput:.1f} Gbps, bottleneck: {report.bottleneck}")


# %% A client reading host memory crosses the wire, the NIC and both PCIe links
for link, mult in link_loads(CLIENT_HOST, Verb.READ).items():
    if mult:
        print(f"{link:22s} x{mult}")

# %% READ and WRITE move data in opposite directions, so they do not compete
show("read + write", [FlowSpec(CLIENT_HOST, Verb.READ, 4 * KB), FlowSpec(CLIENT_HOST, Verb.WRITE, 4 * KB)])
show("read + read", [FlowSpec(CLIENT_HOST, Verb.READ, 4 * KB), FlowSpec(CLIENT_HOST, Verb.READ, 4 * KB)])

# %% Host <-> SoC traffic through the NIC loads PCIe1 in both directions
show("host-SoC RDMA alone", [FlowSpec(RDMA_S2H, Verb.READ, 64 * KB)])

# %% ...so a small host-SoC flow can ride along with saturated client traffic
show("client read + write + 56 Gbps host-SoC", [
    FlowSpec(CLIENT_HOST, Verb.READ, 64 * KB),
    FlowSpec(CLIENT_HOST, Verb.WRITE, 64 * KB),
    FlowSpec(RDMA_S2H, Verb.READ, 64 * KB, demand=56),
])

# %% The on-board DMA engine skips PCIe1 but time-shares its read and write units
show("DMA read + write", [FlowSpec(DMA_S2H, Verb.READ, 64 * KB), FlowSpec(DMA_S2H, Verb.WRITE, 64 * KB)])

# %% Large SoC reads fall off a cliff
for size in (64 * KB, 4 * 2**20, 16 * 2**20):
    print(f"SoC READ {size:>9d} B -> {effective_path_cap(cfg, CLIENT_SOC, Verb.READ, size):6.1f} Gbps")
