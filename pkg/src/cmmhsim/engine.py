"""Deterministic host access engine.

Translates typed 64 B accesses into device transactions, honoring per-thread
memory-level parallelism, same-line ordering, fences, and posted
(non-temporal) store semantics.  Host CPU caches are not modeled: every
generated access is treated as an LLC miss.

Timing model per node: a transaction admitted to a pipe no earlier than the
previous admission plus the pipe's initiation interval, then serviced with
the node's serialized latency.  Temporal stores to the hybrid device are a
read-for-ownership on the read pipe followed by a write transaction on the
write pipe.  Non-temporal stores occupy the issuing thread's port for the
posted handoff cost and complete at the host right there; their device-side
completion is only visible through a fence.
"""

import heapq
from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction

from ._kernels import round_ns
from .device import LINE_BYTES, PAGE_SHIFT, PAGE_BYTES
from .topology import CMMH, AllocPolicy, MemNode, Topology, default_topology

SimTime = int  # integer nanoseconds since simulation start


class ConfigurationError(Exception):
    pass


class CrashSemanticsError(Exception):
    pass


class AccessKind(IntEnum):
    TEMPORAL_LOAD = 0
    NON_TEMPORAL_LOAD = 1
    TEMPORAL_STORE = 2
    NON_TEMPORAL_STORE = 3


_LOADS = (AccessKind.TEMPORAL_LOAD, AccessKind.NON_TEMPORAL_LOAD)


@dataclass(frozen=True)
class AccessRequest:
    thread_id: int
    kind: AccessKind
    addr: int
    size: int = LINE_BYTES
    issue_time: SimTime = 0


@dataclass(frozen=True)
class BatchResult:
    start: SimTime
    end: SimTime
    per_request_completions: tuple[SimTime, ...]

    @property
    def n(self) -> int:
        return len(self.per_request_completions)

    @property
    def amortized_latency(self) -> Fraction:
        """(end - start) / N, exact."""
        return Fraction(self.end - self.start, self.n)


@dataclass
class HostConfig:
    mlp_window: int = 16        # max outstanding waited requests per thread
    fence_drain: bool = True    # fences wait for posted stores at the device
    t_issue_ns: float = 5.8     # per-thread port cost of a waited issue

    def __post_init__(self):
        if self.mlp_window < 1:
            raise ValueError("mlp_window must be >= 1")


class _ThreadState:
    __slots__ = ("outstanding", "port_free", "max_waited", "max_device",
                 "line_last")

    def __init__(self):
        self.outstanding: list[int] = []   # heap of waited completions
        self.port_free = float("-inf")
        self.max_waited = 0
        self.max_device = 0
        self.line_last: dict[tuple[int, int], int] = {}


class _NodePipes:
    __slots__ = ("read_next", "write_next")

    def __init__(self):
        self.read_next = 0.0
        self.write_next = 0.0


class Engine:
    """Single-threaded deterministic event loop over one topology."""

    def __init__(self, topology: Topology | None = None,
                 host: HostConfig | None = None,
                 policy: AllocPolicy | None = None):
        self.topology = topology or default_topology()
        self.host = host or HostConfig()
        self.policy = policy or AllocPolicy.single(self._default_node().name)
        self._pipes = {n.node_id: _NodePipes() for n in self.topology.nodes}
        self._threads: dict[int, _ThreadState] = {}
        self._crash_window: tuple[int, int] | None = None
        self._last_admission: SimTime = 0

    def _default_node(self) -> MemNode:
        for n in self.topology.nodes:
            if n.kind == CMMH:
                return n
        return self.topology.nodes[0]

    def _thread(self, tid: int) -> _ThreadState:
        ts = self._threads.get(tid)
        if ts is None:
            ts = self._threads[tid] = _ThreadState()
        return ts

    def declare_power_failure(self, start: SimTime, end: SimTime):
        self._crash_window = (start, end)

    def clear_power_failure(self):
        self._crash_window = None

    # -- issue path ----------------------------------------------------------

    def issue_access(self, req: AccessRequest, node: MemNode | None = None,
                     window: int | None = None) -> SimTime:
        """Issue one access; returns its host-visible completion time."""
        node = node or self._default_node()
        if req.size != LINE_BYTES:
            raise ConfigurationError(f"access size must be {LINE_BYTES}")
        if not 0 <= req.addr < node.capacity_bytes:
            raise ConfigurationError(
                f"address {req.addr:#x} outside node {node.name}")
        cw = self._crash_window
        if cw is not None and cw[0] <= req.issue_time < cw[1]:
            raise CrashSemanticsError(
                f"issue at {req.issue_time} during power-failure window {cw}")

        ts = self._thread(req.thread_id)
        w = window if window is not None else self.host.mlp_window
        line = (node.node_id, req.addr // LINE_BYTES)
        ready = float(req.issue_time)
        prev_same = ts.line_last.get(line)
        if prev_same is not None and prev_same > ready:
            ready = float(prev_same)

        pipes = self._pipes[node.node_id]
        if req.kind == AccessKind.NON_TEMPORAL_STORE:
            t_post = (node.device.config.latency.t_post_write
                      if node.kind == CMMH else node.dram.t_post_write)
            if ts.port_free + t_post > ready:
                ready = ts.port_free + t_post
            a = max(ready, pipes.write_next)
            pipes.write_next = a + self._ii_write(node)
            ts.port_free = a
            self._last_admission = round_ns(a)
            host_c = round_ns(a + t_post)
            dev_c = self._device_store(node, req.addr, round_ns(a))
            ts.max_device = max(ts.max_device, dev_c)
            ts.line_last[line] = dev_c
            return host_c

        # waited kinds: gate on the MLP window, then the thread port
        while len(ts.outstanding) >= w:
            c = heapq.heappop(ts.outstanding)
            if c > ready:
                ready = float(c)
        if ts.port_free + self.host.t_issue_ns > ready:
            ready = ts.port_free + self.host.t_issue_ns

        if req.kind in _LOADS:
            a = max(ready, pipes.read_next)
            pipes.read_next = a + self._ii_read(node)
            ts.port_free = a
            ai = round_ns(a)
            self._last_admission = ai
            if node.kind == CMMH:
                lat, _ = node.device.access_read(
                    req.addr >> PAGE_SHIFT, req.addr % PAGE_BYTES, ai)
                c = ai + lat
            else:
                c = ai + node.dram.read_int
        elif req.kind == AccessKind.TEMPORAL_STORE:
            if node.kind == CMMH:
                a = max(ready, pipes.read_next)
                pipes.read_next = a + self._ii_read(node)
                ts.port_free = a
                ai = round_ns(a)
                self._last_admission = ai
                rfo, _ = node.device.access_write_rfo(
                    req.addr >> PAGE_SHIFT, req.addr % PAGE_BYTES, ai)
                wadm = max(float(ai + rfo), pipes.write_next)
                pipes.write_next = wadm + self._ii_write(node)
                c = round_ns(wadm) + node.device.write_txn_ns
            else:
                a = max(ready, pipes.write_next)
                pipes.write_next = a + self._ii_write(node)
                ts.port_free = a
                ai = round_ns(a)
                self._last_admission = ai
                c = ai + node.dram.write_int
        else:
            raise ConfigurationError(f"unknown access kind {req.kind!r}")

        heapq.heappush(ts.outstanding, c)
        ts.max_waited = max(ts.max_waited, c)
        ts.max_device = max(ts.max_device, c)
        ts.line_last[line] = c
        return c

    def _ii_read(self, node: MemNode) -> float:
        return (node.device.config.latency.ii_read if node.kind == CMMH
                else node.dram.ii_read)

    def _ii_write(self, node: MemNode) -> float:
        return (node.device.config.latency.ii_write if node.kind == CMMH
                else node.dram.ii_write)

    def _device_store(self, node: MemNode, addr: int, now: int) -> int:
        """Device-side completion of a 64 B store merged at the device."""
        if node.kind == CMMH:
            rfo, _ = node.device.access_write_rfo(
                addr >> PAGE_SHIFT, addr % PAGE_BYTES, now)
            return now + rfo + node.device.write_txn_ns
        return now + node.dram.write_int

    # -- batch / fence --------------------------------------------------------

    def run_batch(self, reqs: list[AccessRequest], window: int | None = None,
                  node: MemNode | None = None) -> BatchResult:
        """Issue requests in order with up to `window` outstanding."""
        if not reqs:
            raise ValueError("empty batch")
        if window is not None and window < 1:
            raise ValueError("window must be >= 1")
        completions = []
        start = None
        for req in reqs:
            c = self.issue_access(req, node=node, window=window)
            if start is None:
                start = self._last_admission
            completions.append(c)
        return BatchResult(start=start, end=max(completions),
                           per_request_completions=tuple(completions))

    def fence(self, thread_id: int) -> SimTime:
        """Time at which all prior requests of the thread are complete."""
        ts = self._threads.get(thread_id)
        if ts is None:
            return 0
        return ts.max_device if self.host.fence_drain else ts.max_waited

    # -- routed access ---------------------------------------------------------

    def route_access(self, req: AccessRequest,
                     policy: AllocPolicy | None = None) -> SimTime:
        """Map the request's page through the allocation policy, then issue."""
        policy = policy or self.policy
        vpage = req.addr >> PAGE_SHIFT
        node_id, ppage = self.topology.allocate(vpage, policy)
        node = self.topology.by_id[node_id]
        paddr = (ppage << PAGE_SHIFT) | (req.addr % PAGE_BYTES)
        routed = AccessRequest(req.thread_id, req.kind, paddr, req.size,
                               req.issue_time)
        return self.issue_access(routed, node=node)
