"""Performance models, simulator and offload planner for off-path SmartNICs."""

from .analytic import (
    AllocationReport,
    allocate_bandwidth,
    doorbell_multiplier,
    effective_path_cap,
    path_latency,
    segment_transfer,
    skew_throughput,
)
from .calibration import fit_efficiency, load_fixtures, validate_against_fixtures
from .hw import (
    Direction,
    FlowSpec,
    HardwareConfig,
    Path,
    PathKind,
    Verb,
    default_config,
    fitted_config,
    link_loads,
    load_profile,
    pcie_packet_counts,
    validate_config,
)
from .planner import (
    a1_limit,
    break_even_ratio,
    eval_alternative,
    greedy_combine,
    kv_switch_point,
    plan_hybrid_replication,
)
from .simulator import Scenario, SimFlow, build_scenario, compare_with_analytic, run_simulation
from .workloads import (
    KvWorkloadSpec,
    ReplicationWorkloadSpec,
    cache_fit_miss_rate,
    gen_kv_requests,
    gen_replication_stream,
)

__version__ = "0.1.0"
