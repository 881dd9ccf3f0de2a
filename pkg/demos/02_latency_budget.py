"""Unloaded latency of each path compared with a plain RDMA NIC."""

# %%
from offpath import Verb, default_config, path_latency
from offpath.analytic import doorbell_multiplier, rnic_latency
from offpath.hw import CLIENT_HOST, CLIENT_SOC, DMA_S2H, RDMA_S2H

cfg = default_config()

# %% Small requests: the SmartNIC pays PCIe switch crossings on every hop
print(f"{'path':22s}{'verb':10s}{'SmartNIC us':>12s}{'RNIC us':>10s}")
for verb in Verb:
    print(f"{'client_host':22s}{verb.value:10s}{path_latency(cfg, CLIENT_HOST, verb, 64):12.2f}"
          f"{rnic_latency(cfg, verb, 64):10.2f}")

# %% Host <-> SoC: DMA avoids the NIC round trip entirely
for path in (RDMA_S2H, DMA_S2H):
    print(f"{str(path):22s}read      {path_latency(cfg, path, Verb.READ, 64):12.2f}")

# %% SoC as the target: cheaper memory for READ, slower handlers for SEND/RECV
for verb in (Verb.READ, Verb.SENDRECV):
    print(f"client_soc {verb.value:10s} {path_latency(cfg, CLIENT_SOC, verb, 64):.2f} us")

# %% Doorbell batching helps the wimpy SoC cores far more than the host
for batch in (1, 4, 16, 32, 64):
    print(f"batch {batch:3d}: SoC x{doorbell_multiplier(cfg, 'soc', batch):.2f}  "
          f"host x{doorbell_multiplier(cfg, 'host', batch):.2f}")
