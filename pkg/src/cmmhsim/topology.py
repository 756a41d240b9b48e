"""Multi-node memory system: flat-latency DRAM nodes next to the hybrid device.

The remote-DRAM node folds inter-socket coherence costs into its flat
constants.  Page placement is either single-node or weighted interleave at
4 KB granularity, and the virtual-to-node mapping is a pure function of
(vpage, policy).
"""

from dataclasses import dataclass, field

from . import _kernels
from .device import CmmhDevice, PAGE_BYTES

FLAT_DRAM = "flat_dram"
CMMH = "cmmh"


class AllocationError(Exception):
    pass


@dataclass
class FlatDramModel:
    """Flat serialized latencies plus pipe/port intervals (ns)."""

    read_ns: float = 122.9
    write_ns: float = 448.9        # full temporal-store transaction
    ii_read: float = 0.292         # node admission; 64 B / 0.292 ns ~ DDR5 scale
    ii_write: float = 0.292
    t_post_write: float = 13.5     # posted-store handoff at the host port

    @property
    def read_int(self) -> int:
        return _kernels.round_ns(self.read_ns)

    @property
    def write_int(self) -> int:
        return _kernels.round_ns(self.write_ns)


def ddr5_local_model() -> FlatDramModel:
    return FlatDramModel()


def ddr5_remote_model() -> FlatDramModel:
    return FlatDramModel(read_ns=216.0, write_ns=820.2, t_post_write=21.8)


@dataclass
class MemNode:
    node_id: int
    name: str
    kind: str                      # FLAT_DRAM or CMMH
    capacity_bytes: int
    dram: FlatDramModel | None = None
    device: CmmhDevice | None = None

    def __post_init__(self):
        if self.kind == FLAT_DRAM and self.dram is None:
            raise ValueError("flat_dram node needs a FlatDramModel")
        if self.kind == CMMH and self.device is None:
            raise ValueError("cmmh node needs a CmmhDevice")

    @property
    def capacity_pages(self) -> int:
        return self.capacity_bytes // PAGE_BYTES


@dataclass(frozen=True)
class AllocPolicy:
    """SingleNode or WeightedInterleave over named nodes."""

    weights: tuple[tuple[str, int], ...]  # (node name, positive weight)

    def __post_init__(self):
        if not self.weights:
            raise ValueError("policy needs at least one node")
        for name, w in self.weights:
            if w < 1 or w != int(w):
                raise ValueError(f"weight for {name} must be a positive integer")

    @classmethod
    def single(cls, name: str) -> "AllocPolicy":
        return cls(weights=((name, 1),))

    @classmethod
    def interleave(cls, *weights: tuple[str, int]) -> "AllocPolicy":
        return cls(weights=tuple(weights))

    @property
    def period(self) -> int:
        return sum(w for _, w in self.weights)


class Topology:
    def __init__(self, nodes: list[MemNode]):
        if not nodes:
            raise ValueError("empty topology")
        self.nodes = nodes
        self.by_name = {n.name: n for n in nodes}
        self.by_id = {n.node_id: n for n in nodes}
        if len(self.by_name) != len(nodes) or len(self.by_id) != len(nodes):
            raise ValueError("duplicate node names or ids")

    def node(self, name: str) -> MemNode:
        return self.by_name[name]

    def allocate(self, vpage: int, policy: AllocPolicy):
        """Deterministic weighted round-robin: (node_id, physical page).

        Same vpage always maps to the same (node, page); per-node page ids
        are dense so capacity fills exactly in allocation order.
        """
        period = policy.period
        pos = vpage % period
        cycle = vpage // period
        base = 0
        for name, w in policy.weights:
            if pos < base + w:
                node = self.by_name[name]
                ppage = cycle * w + (pos - base)
                if ppage >= node.capacity_pages:
                    raise AllocationError(
                        f"node {name} exhausted at virtual page {vpage}")
                return node.node_id, ppage
            base += w
        raise AssertionError("unreachable")


def default_topology(device: CmmhDevice | None = None,
                     dram_capacity_bytes: int = 256 << 30,
                     device_capacity_bytes: int = 1 << 40) -> Topology:
    """Two DDR5 nodes plus the hybrid device, mirroring the test platform."""
    dev = device or CmmhDevice()
    return Topology([
        MemNode(0, "ddr5_local", FLAT_DRAM, dram_capacity_bytes,
                dram=ddr5_local_model()),
        MemNode(1, "ddr5_remote", FLAT_DRAM, dram_capacity_bytes,
                dram=ddr5_remote_model()),
        MemNode(2, "cmmh", CMMH, device_capacity_bytes, device=dev),
    ])
