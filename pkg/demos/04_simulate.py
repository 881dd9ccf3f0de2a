"""Queueing simulation against the fluid model, plus a look at tail latency."""

# %%
from pathlib import Path

from offpath import build_scenario, compare_with_analytic, run_simulation

root = Path(__file__).resolve().parent.parent / "scenarios"

# %% Steady-state rates agree with the max-min allocation
for name in ("bidir.scn", "samedir.scn"):
    scenario = build_scenario((root / name).read_text())
    report = compare_with_analytic(scenario)
    for flow, sim, model in zip(report.flow_names, report.simulated, report.analytic):
        print(f"{name:12s}{flow:8s} simulated {sim:7.1f}  model {model:7.1f} Gbps")

# %% Latency percentiles come only from the simulator
metrics = run_simulation(build_scenario((root / "kv_small.scn").read_text()))
for row in metrics.csv_rows():
    print(",".join(map(str, row)))
