"""cmmhsim: discrete-event simulation of a DRAM-cached flash memory expander.

The package models a hybrid CXL-attached memory device (a DRAM page cache in
front of NAND flash), the host access path to it and to plain DRAM nodes,
synthetic workload generators, a crash-consistency harness built on
WAR-free re-executable trace regions, and a statistics/report pipeline with
a CLI.
"""

__version__ = "0.1.0"

from ._accel import NUMBA_ENABLED, backend_name
from .device import (CmmhDevice, DeviceConfig, FlushReport, LatencyModel,
                     UndefinedStatisticError)
from .engine import (AccessKind, AccessRequest, BatchResult,
                     ConfigurationError, CrashSemanticsError, Engine,
                     HostConfig, SimTime)
from .flash import FlashBackend, FlashConfig, FlashOp, READ_PAGE, WRITE_PAGE
from .stats import StatsSummary, summarize
from .topology import (AllocPolicy, AllocationError, MemNode, Topology,
                       default_topology)
from .workloads import (Trace, gen_irregular, gen_kv, gen_parallel_random,
                        gen_pointer_chase, gen_tail_sweep)

__all__ = [
    "AccessKind", "AccessRequest", "AllocPolicy", "AllocationError",
    "BatchResult", "CmmhDevice", "ConfigurationError", "CrashSemanticsError",
    "DeviceConfig", "Engine", "FlashBackend", "FlashConfig", "FlashOp",
    "FlushReport", "HostConfig", "LatencyModel", "MemNode", "NUMBA_ENABLED",
    "READ_PAGE", "SimTime", "StatsSummary", "Topology", "Trace",
    "UndefinedStatisticError", "WRITE_PAGE", "backend_name",
    "default_topology", "gen_irregular", "gen_kv", "gen_parallel_random",
    "gen_pointer_chase", "gen_tail_sweep", "summarize",
]
