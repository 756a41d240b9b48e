"""Crash-consistency harness over abstract op traces.

A trace of 8-byte loads/stores/computes runs against simulated persistent
memory (host cache -> device cache -> flash).  The harness partitions the
trace into re-executable regions that contain no memory write-after-read
dependence, checkpoints live-out registers at every region boundary, injects
power failures with device-flush (GPF) semantics, replays from the last
checkpoint, and verifies the result against a crash-free oracle.

Region boundaries drain the host cache to the device and persist a
checkpoint record; that is what makes replay from the interrupted region
sufficient.  Write-ahead-log mode instead precedes every store with a
barriered log append, which is the traffic the region scheme eliminates.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ._kernels import round_ns
from .device import CmmhDevice, DeviceConfig, LatencyModel, LINE_BYTES, PAGE_SHIFT
from .flash import FlashBackend

WORD_BYTES = 8
RESERVED_BASE = 1 << 40          # user data must sit below this
CKPT_BASE = RESERVED_BASE        # checkpoint record: magic, count, reg pairs
WAL_BASE = RESERVED_BASE + (1 << 20)
CKPT_MAGIC = 0x434B5054          # "CKPT"

DEFAULT_MAX_REGION_OPS = 64


class UnrecoverableError(Exception):
    """No usable checkpoint record in the persistent image."""


class OpKind(Enum):
    LOAD = "LOAD"
    STORE = "STORE"
    COMPUTE = "COMPUTE"
    CHECKPOINT = "CHECKPOINT"


@dataclass(frozen=True)
class AbstractOp:
    kind: OpKind
    reg: int = -1                   # LOAD destination / STORE source register
    addr: int = -1
    const: int | None = None        # STORE immediate when no source register
    srcs: tuple[int, ...] = ()      # COMPUTE sources (reg is the destination)

    def __post_init__(self):
        if self.kind in (OpKind.LOAD, OpKind.STORE):
            if self.addr < 0 or self.addr % WORD_BYTES:
                raise ValueError(f"address {self.addr:#x} must be 8-aligned")
            if self.addr >= RESERVED_BASE:
                raise ValueError("address collides with the reserved range")


def load(reg: int, addr: int) -> AbstractOp:
    return AbstractOp(OpKind.LOAD, reg=reg, addr=addr)


def store(addr: int, src) -> AbstractOp:
    if isinstance(src, int) and src < 0:
        raise ValueError("store constant must be non-negative")
    if isinstance(src, str):
        raise TypeError("use store_reg/store const helpers")
    return AbstractOp(OpKind.STORE, addr=addr, const=src, reg=-1)


def store_reg(addr: int, reg: int) -> AbstractOp:
    return AbstractOp(OpKind.STORE, addr=addr, reg=reg, const=None)


def compute(dst: int, *srcs: int) -> AbstractOp:
    return AbstractOp(OpKind.COMPUTE, reg=dst, srcs=tuple(srcs))


def checkpoint_marker() -> AbstractOp:
    return AbstractOp(OpKind.CHECKPOINT)


def _defs(op: AbstractOp) -> frozenset:
    if op.kind in (OpKind.LOAD, OpKind.COMPUTE):
        return frozenset((op.reg,))
    return frozenset()


def _uses(op: AbstractOp) -> frozenset:
    if op.kind == OpKind.STORE and op.const is None:
        return frozenset((op.reg,))
    if op.kind == OpKind.COMPUTE:
        return frozenset(op.srcs)
    return frozenset()


# -- trace text format ------------------------------------------------------

def parse_trace_text(text: str) -> list[AbstractOp]:
    """Line format: LOAD r1 0x100 | STORE 0x108 r1 | STORE 0x108 42 |
    COMPUTE r2 r1 r3 | CHECKPOINT.  '#' starts a comment."""
    ops = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            kw = parts[0].upper()
            if kw == "LOAD":
                ops.append(load(_reg(parts[1]), int(parts[2], 0)))
            elif kw == "STORE":
                addr = int(parts[1], 0)
                src = parts[2]
                if src.lower().startswith("r"):
                    ops.append(store_reg(addr, _reg(src)))
                else:
                    ops.append(store(addr, int(src, 0)))
            elif kw == "COMPUTE":
                ops.append(compute(_reg(parts[1]),
                                   *(_reg(p) for p in parts[2:])))
            elif kw == "CHECKPOINT":
                ops.append(checkpoint_marker())
            else:
                raise ValueError(f"unknown op {parts[0]!r}")
        except (IndexError, ValueError) as e:
            raise ValueError(f"trace line {ln}: {e}") from e
    return ops


def _reg(tok: str) -> int:
    if not tok.lower().startswith("r"):
        raise ValueError(f"expected register, got {tok!r}")
    return int(tok[1:])


def format_trace(ops) -> str:
    out = []
    for op in ops:
        if op.kind == OpKind.LOAD:
            out.append(f"LOAD r{op.reg} {op.addr:#x}")
        elif op.kind == OpKind.STORE:
            src = f"r{op.reg}" if op.const is None else str(op.const)
            out.append(f"STORE {op.addr:#x} {src}")
        elif op.kind == OpKind.COMPUTE:
            out.append("COMPUTE " + " ".join(f"r{r}" for r in (op.reg,) + op.srcs))
        else:
            out.append("CHECKPOINT")
    return "\n".join(out) + "\n"


# -- region formation --------------------------------------------------------

@dataclass(frozen=True)
class Region:
    start: int
    end: int                      # exclusive
    live_in: frozenset
    live_out: frozenset


def form_regions(trace, max_ops: int = DEFAULT_MAX_REGION_OPS) -> list[Region]:
    """Greedy left-to-right partition into WAR-free regions.

    A region is cut immediately before a store whose address an earlier op
    of the open region loaded, when the region hits max_ops, or after an
    explicit checkpoint marker.  Live-in/out register sets come from a
    backward liveness pass over the whole trace.
    """
    if not trace:
        raise ValueError("empty trace")
    cuts = [0]
    loaded: set[int] = set()
    count = 0
    for i, op in enumerate(trace):
        if op.kind == OpKind.STORE and op.addr in loaded:
            cuts.append(i)
            loaded.clear()
            count = 0
        elif count >= max_ops:
            cuts.append(i)
            loaded.clear()
            count = 0
        if op.kind == OpKind.LOAD:
            loaded.add(op.addr)
        count += 1
        if op.kind == OpKind.CHECKPOINT and i + 1 < len(trace):
            cuts.append(i + 1)
            loaded.clear()
            count = 0
    cuts.append(len(trace))

    n = len(trace)
    live_at = [frozenset()] * (n + 1)
    live: frozenset = frozenset()
    for p in range(n - 1, -1, -1):
        live = (live - _defs(trace[p])) | _uses(trace[p])
        live_at[p] = live

    regions = []
    for k in range(len(cuts) - 1):
        s, e = cuts[k], cuts[k + 1]
        if s == e:
            continue
        regions.append(Region(s, e, live_at[s], live_at[e]))
    return regions


def region_is_war_free(trace, region: Region) -> bool:
    """Independent check: no store hits an address loaded earlier within."""
    seen_loads: set[int] = set()
    for op in trace[region.start:region.end]:
        if op.kind == OpKind.STORE and op.addr in seen_loads:
            return False
        if op.kind == OpKind.LOAD:
            seen_loads.add(op.addr)
    return True


# -- machine & persistent domain ---------------------------------------------

def mix(values) -> int:
    """Deterministic compute function for COMPUTE ops."""
    h = 0x9E3779B97F4A7C15
    for v in values:
        h = ((h ^ (v & 0xFFFFFFFFFFFFFFFF)) * 0x100000001B3) % (1 << 64)
    return h % (1 << 63)


class PersistentDomain:
    """Word values behind the device: DRAM-cache layer plus flash image."""

    def __init__(self, initial_memory=None,
                 device_config: DeviceConfig | None = None):
        cfg = device_config or DeviceConfig(cache_capacity_bytes=1 << 20)
        self.device = CmmhDevice(cfg, FlashBackend(record_ops=False))
        self.device_words: dict[int, dict[int, int]] = {}   # page -> words
        self.flash_words: dict[int, int] = dict(initial_memory or {})

    def read(self, addr: int) -> int:
        page = addr >> PAGE_SHIFT
        words = self.device_words.get(page)
        if words is not None and addr in words:
            return words[addr]
        return self.flash_words.get(addr, 0)

    def write_line(self, line_addr: int, words: dict[int, int]):
        """64 B write reaching the device (a drained host line)."""
        page = line_addr >> PAGE_SHIFT
        _, evicted = self.device.access_write(page, line_addr % (1 << PAGE_SHIFT), 0)
        if evicted is not None:
            self._spill(evicted)
        self.device_words.setdefault(page, {}).update(words)

    def _spill(self, page: int):
        for addr, val in self.device_words.pop(page, {}).items():
            self.flash_words[addr] = val

    def gpf_flush(self, budget_bytes: int | None):
        flushed, _ = self.device.flush_dirty_pages(0, budget_bytes)
        for page in flushed:
            self._spill(page)
        return flushed

    def flash_snapshot(self) -> dict[int, int]:
        return dict(self.flash_words)


@dataclass
class MachineState:
    registers: dict[int, int]
    host_words: dict[int, int]
    domain: PersistentDomain

    def read(self, addr: int) -> int:
        if addr in self.host_words:
            return self.host_words[addr]
        return self.domain.read(addr)


@dataclass(frozen=True)
class Event:
    kind: str                    # "persist_write" | "barrier"
    cause: str = ""              # line_drain | checkpoint | wal_append | gpf
    addr: int = -1
    op_index: int = -1


@dataclass(frozen=True)
class CrashPlan:
    crash_point: int                         # ops fully executed before loss
    gpf_budget_bytes: int | None = None      # None = unlimited
    host_flush_order: tuple[int, ...] = ()   # line addresses drained pre-crash


class Mode(Enum):
    PLAIN = "plain"          # no regions, no logging
    IDEMPOTENT = "idempotent"
    WAL = "wal"


@dataclass
class ExecutionResult:
    trace: list
    regions: list[Region] | None
    mode: Mode
    initial_memory: dict[int, int]
    state: MachineState
    events: list[Event]
    executed_ops: int

    def persist_write_count(self) -> int:
        return sum(1 for e in self.events if e.kind == "persist_write")

    def barrier_count(self) -> int:
        return sum(1 for e in self.events if e.kind == "barrier")


class _Machine:
    def __init__(self, initial_memory, mode: Mode, regions):
        self.mode = mode
        self.regions = regions or []
        self.domain = PersistentDomain(initial_memory)
        self.regs: dict[int, int] = {}
        self.host: dict[int, int] = {}
        self.events: list[Event] = []
        self.wal_cursor = WAL_BASE
        self._ends = {r.end: k for k, r in enumerate(self.regions)}

    def read(self, addr):
        if addr in self.host:
            return self.host[addr]
        return self.domain.read(addr)

    def reg(self, r):
        return self.regs.get(r, 0)

    def dirty_lines(self):
        return sorted({a - a % LINE_BYTES for a in self.host})

    def drain_line(self, line, op_index=-1, cause="line_drain"):
        words = {a: v for a, v in self.host.items()
                 if a - a % LINE_BYTES == line}
        if not words:
            return
        self.domain.write_line(line, words)
        for a in words:
            del self.host[a]
        self.events.append(Event("persist_write", cause, line, op_index))

    def drain_all(self, op_index=-1, cause="line_drain"):
        for line in self.dirty_lines():
            self.drain_line(line, op_index, cause)

    def write_checkpoint(self, completed: int, live: frozenset, op_index=-1):
        words = {CKPT_BASE: CKPT_MAGIC, CKPT_BASE + 8: completed}
        for k, r in enumerate(sorted(live)):
            words[CKPT_BASE + 16 + 16 * k] = r
            words[CKPT_BASE + 24 + 16 * k] = self.reg(r)
        # group into 64 B lines; each line is one persistent write
        by_line: dict[int, dict[int, int]] = {}
        for a, v in words.items():
            by_line.setdefault(a - a % LINE_BYTES, {})[a] = v
        for line in sorted(by_line):
            self.domain.write_line(line, by_line[line])
            self.events.append(Event("persist_write", "checkpoint", line,
                                     op_index))
        self.events.append(Event("barrier", "checkpoint", -1, op_index))

    def step(self, i, op):
        if self.mode == Mode.WAL and op.kind == OpKind.STORE:
            # barriered log append ahead of the data store
            self.domain.write_line(self.wal_cursor - self.wal_cursor % LINE_BYTES,
                                   {self.wal_cursor: op.addr})
            self.events.append(Event("persist_write", "wal_append",
                                     self.wal_cursor, i))
            self.events.append(Event("barrier", "wal_append", -1, i))
            self.wal_cursor += WORD_BYTES
        if op.kind == OpKind.LOAD:
            self.regs[op.reg] = self.read(op.addr)
        elif op.kind == OpKind.STORE:
            val = op.const if op.const is not None else self.reg(op.reg)
            self.host[op.addr] = val
        elif op.kind == OpKind.COMPUTE:
            self.regs[op.reg] = mix([self.reg(r) for r in op.srcs])
        if self.mode == Mode.IDEMPOTENT:
            k = self._ends.get(i + 1)
            if k is not None:
                self.drain_all(i)
                self.write_checkpoint(k + 1, self.regions[k].live_out, i)


def execute(trace, regions=None, initial_memory=None,
            mode: Mode = Mode.IDEMPOTENT, stop_after: int | None = None,
            finalize: bool = True) -> ExecutionResult:
    """Run a trace; returns the final state and the persistence event log.

    In idempotent mode every region boundary drains the host cache and
    writes a checkpoint record.  `stop_after` executes only that many ops
    (used for crash injection) and skips finalization.
    """
    if mode == Mode.IDEMPOTENT and regions is None:
        regions = form_regions(trace) if trace else []
    m = _Machine(initial_memory, mode, regions)
    if mode == Mode.IDEMPOTENT and regions:
        m.write_checkpoint(0, regions[0].live_in)
    n = len(trace) if stop_after is None else min(stop_after, len(trace))
    for i in range(n):
        m.step(i, trace[i])
    if stop_after is None and finalize and mode != Mode.IDEMPOTENT:
        m.drain_all(cause="line_drain")
    state = MachineState(dict(m.regs), dict(m.host), m.domain)
    return ExecutionResult(list(trace), regions, mode,
                           dict(initial_memory or {}), state, m.events, n)


def crash_free_image(trace, initial_memory=None) -> dict[int, int]:
    """Oracle: straight-line execution, everything drained and flushed."""
    res = execute(trace, regions=None, initial_memory=initial_memory,
                  mode=Mode.PLAIN)
    res.state.domain.gpf_flush(None)
    return res.state.domain.flash_snapshot()


def inject_crash(execution: ExecutionResult, plan: CrashPlan) -> dict[int, int]:
    """Re-run to the crash point, apply the plan, return the surviving image.

    Host registers and any host line not named by the plan are lost; the
    device then runs its energy-bounded flush.
    """
    if not 0 <= plan.crash_point <= len(execution.trace):
        raise ValueError("crash point outside trace")
    res = execute(execution.trace, execution.regions,
                  execution.initial_memory, execution.mode,
                  stop_after=plan.crash_point)
    m_host = res.state.host_words
    domain = res.state.domain
    dirty = {a - a % LINE_BYTES for a in m_host}
    for line in plan.host_flush_order:
        if line not in dirty:
            continue
        words = {a: v for a, v in m_host.items() if a - a % LINE_BYTES == line}
        domain.write_line(line, words)
        dirty.discard(line)
    domain.gpf_flush(plan.gpf_budget_bytes)
    return domain.flash_snapshot()


def recover_replay(image: dict[int, int], trace, regions) -> MachineState:
    """Reload the interrupted region's live-ins and re-execute to the end."""
    if image.get(CKPT_BASE) != CKPT_MAGIC:
        raise UnrecoverableError("checkpoint record absent")
    completed = image.get(CKPT_BASE + 8, 0)
    if not 0 <= completed <= len(regions):
        raise UnrecoverableError("checkpoint record corrupt")
    memory = dict(image)
    regs: dict[int, int] = {}
    if completed == len(regions):
        return MachineState(regs, {}, _image_domain(memory))
    live = sorted(regions[completed].live_in)
    for k, r in enumerate(live):
        rid = image.get(CKPT_BASE + 16 + 16 * k)
        if rid != r:
            raise UnrecoverableError("checkpoint register table corrupt")
        regs[r] = image.get(CKPT_BASE + 24 + 16 * k, 0)
    for op in trace[regions[completed].start:]:
        if op.kind == OpKind.LOAD:
            regs[op.reg] = memory.get(op.addr, 0)
        elif op.kind == OpKind.STORE:
            memory[op.addr] = (op.const if op.const is not None
                               else regs.get(op.reg, 0))
        elif op.kind == OpKind.COMPUTE:
            regs[op.reg] = mix([regs.get(r, 0) for r in op.srcs])
    return MachineState(regs, {}, _image_domain(memory))


def _image_domain(memory: dict[int, int]) -> PersistentDomain:
    d = PersistentDomain(memory)
    return d


@dataclass(frozen=True)
class VerifyResult:
    consistent: bool
    first_divergent_addr: int | None = None

    def __bool__(self):
        return self.consistent


def verify(final_image: dict[int, int], oracle_image: dict[int, int],
           user_only: bool = True) -> VerifyResult:
    """Word-wise comparison; reports the lowest differing address."""
    keys = set(final_image) | set(oracle_image)
    if user_only:
        keys = {a for a in keys if a < RESERVED_BASE}
    for addr in sorted(keys):
        if final_image.get(addr, 0) != oracle_image.get(addr, 0):
            return VerifyResult(False, addr)
    return VerifyResult(True, None)


def diff_report(final_image, oracle_image, user_only=True, limit=16) -> str:
    keys = set(final_image) | set(oracle_image)
    if user_only:
        keys = {a for a in keys if a < RESERVED_BASE}
    lines = []
    for addr in sorted(keys):
        a, b = final_image.get(addr, 0), oracle_image.get(addr, 0)
        if a != b:
            lines.append(f"  {addr:#012x}: got {a:#x}, expected {b:#x}")
            if len(lines) >= limit:
                lines.append("  ...")
                break
    if not lines:
        return "images identical over the compared domain\n"
    return "divergent words:\n" + "\n".join(lines) + "\n"


# -- WAL accounting -----------------------------------------------------------

def estimate_runtime_ns(n_persist_writes: int, n_barriers: int,
                        ii_write_ns: float = 16.0,
                        barrier_ns: int | None = None) -> int:
    """Throughput estimate: pipelined writes plus serialized barriers.

    The barrier cost defaults to the device's serialized store latency; it
    is a knob, and the event counts are the robust comparison.
    """
    if barrier_ns is None:
        lat = LatencyModel()
        barrier_ns = lat.hit_read_ns + lat.write_txn_ns
    return round_ns(n_persist_writes * ii_write_ns) + n_barriers * barrier_ns


def wal_comparison(trace, max_region_ops: int = DEFAULT_MAX_REGION_OPS,
                   initial_memory=None) -> dict:
    """Persistent-write event counts and runtime estimates, WAL vs regions."""
    wal = execute(trace, mode=Mode.WAL, initial_memory=initial_memory)
    regions = form_regions(trace, max_region_ops)
    idem = execute(trace, regions, initial_memory=initial_memory,
                   mode=Mode.IDEMPOTENT)
    wal_writes, wal_barriers = wal.persist_write_count(), wal.barrier_count()
    idem_writes, idem_barriers = idem.persist_write_count(), idem.barrier_count()
    wal_ns = estimate_runtime_ns(wal_writes, wal_barriers)
    idem_ns = estimate_runtime_ns(idem_writes, idem_barriers)
    return {
        "wal_persist_writes": wal_writes,
        "wal_barriers": wal_barriers,
        "idem_persist_writes": idem_writes,
        "idem_barriers": idem_barriers,
        "event_ratio": wal_writes / max(1, idem_writes),
        "wal_est_ns": wal_ns,
        "idem_est_ns": idem_ns,
        "speedup_est": wal_ns / max(1, idem_ns),
        "regions": len(regions),
    }


# -- scenario builders ---------------------------------------------------------

def linked_list_insert_scenario():
    """Two-store list insertion: set new->next, then swing the head.

    Returns (trace, initial_memory, addrs) where addrs names head, first
    node, the new node, and the new node's next field.
    """
    head, first, new = 0x100, 0x200, 0x300
    new_next = new + 8
    initial = {head: first, new: 42, new_next: 0}
    trace = [
        store(new_next, first),   # str A: new node links to the old first
        store(head, new),         # str B: head now points at the new node
    ]
    addrs = {"head": head, "first": first, "new": new, "new_next": new_next}
    return trace, initial, addrs


def gen_random_ops(n_ops: int, seed: int, n_regs: int = 8,
                   n_words: int = 24, const_frac: float = 0.3) -> list:
    """Random load/store/compute traces for soundness sweeps."""
    rng = np.random.default_rng(seed)
    ops = []
    base = 0x1000
    for _ in range(n_ops):
        r = rng.random()
        addr = base + int(rng.integers(0, n_words)) * WORD_BYTES
        if r < 0.4:
            ops.append(load(int(rng.integers(0, n_regs)), addr))
        elif r < 0.8:
            if rng.random() < const_frac:
                ops.append(store(addr, int(rng.integers(0, 1 << 16))))
            else:
                ops.append(store_reg(addr, int(rng.integers(0, n_regs))))
        else:
            k = int(rng.integers(1, 4))
            srcs = [int(x) for x in rng.integers(0, n_regs, k)]
            ops.append(compute(int(rng.integers(0, n_regs)), *srcs))
    return ops


def gen_random_crash_plans(trace, n_plans: int, seed: int,
                           gpf_budget_bytes=None) -> list[CrashPlan]:
    rng = np.random.default_rng(seed)
    lines = sorted({op.addr - op.addr % LINE_BYTES
                    for op in trace if op.kind == OpKind.STORE})
    plans = []
    for _ in range(n_plans):
        point = int(rng.integers(0, len(trace) + 1))
        if lines:
            perm = [lines[i] for i in rng.permutation(len(lines))]
            k = int(rng.integers(0, len(perm) + 1))
            order = tuple(perm[:k])
        else:
            order = ()
        plans.append(CrashPlan(point, gpf_budget_bytes, order))
    return plans
