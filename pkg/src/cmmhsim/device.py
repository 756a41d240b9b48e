"""Hybrid memory device model: set-associative page cache over a flash backend.

The device-internal DRAM cache is 8-way, 4 KB-block, write-back, with LRU
replacement and MRU insertion.  Tag lookup and data probing are sequential,
so the serialized read-hit latency is the plain sum of the link round trip,
controller processing, tag lookup, and data access.

Default latency components are calibrated so that, composed with the host
model, the simulator reproduces the measured medians of the real prototype
(728.9 ns serialized read, 56.7/114.9/16.0 ns amortized ld/st/nt-st).  Only
the sums are observable; the split is a configuration choice.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .flash import FlashBackend, READ_PAGE, WRITE_PAGE

PAGE_SHIFT = 12
PAGE_BYTES = 1 << PAGE_SHIFT
LINE_BYTES = 64


class UndefinedStatisticError(Exception):
    """Raised when a rate is requested before any event was recorded."""


@dataclass
class LatencyModel:
    """Component delays (ns).  Sub-ns parts round half-up at composition."""

    t_link_rt: float = 200.0     # host<->device round trip
    t_ctrl: float = 300.0        # controller processing
    t_tag: float = 100.0         # tag lookup
    t_data: float = 128.9        # DRAM cache data access
    t_write_txn: float = 869.4   # second transaction of a temporal store
    ii_read: float = 14.0        # read-pipe initiation interval
    ii_write: float = 16.0       # write-pipe initiation interval
    t_post_write: float = 16.0   # posted-store handoff cost at the host port

    def __post_init__(self):
        for name in ("t_link_rt", "t_ctrl", "t_tag", "t_data", "t_write_txn",
                     "ii_read", "ii_write", "t_post_write"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def hit_read_ns(self) -> int:
        """Serialized read-hit latency."""
        return _kernels.round_ns(self.t_link_rt + self.t_ctrl + self.t_tag
                                 + self.t_data)

    @property
    def pre_flash_ns(self) -> int:
        """Path up to the point a miss reaches the flash backend."""
        return _kernels.round_ns(self.t_link_rt + self.t_ctrl + self.t_tag)

    @property
    def fill_tail_ns(self) -> int:
        """Cache fill and data return after the flash read completes."""
        return self.hit_read_ns - self.pre_flash_ns

    @property
    def write_txn_ns(self) -> int:
        return _kernels.round_ns(self.t_write_txn)


@dataclass
class DeviceConfig:
    cache_capacity_bytes: int = 16 << 30
    ways: int = 8
    block_bytes: int = PAGE_BYTES
    latency: LatencyModel = field(default_factory=LatencyModel)
    warmup_accesses: int = 0

    def __post_init__(self):
        if self.block_bytes != PAGE_BYTES:
            raise ValueError("block size is fixed at 4096 bytes")
        if self.ways < 1:
            raise ValueError("ways must be >= 1")
        if self.cache_capacity_bytes % (self.ways * self.block_bytes):
            raise ValueError("capacity must be a multiple of ways * block size")

    @property
    def num_sets(self) -> int:
        return self.cache_capacity_bytes // (self.ways * self.block_bytes)


@dataclass(frozen=True)
class FlushReport:
    dirty_pages_flushed: int
    bytes: int
    flush_time_ns: int
    complete: bool


class CmmhDevice:
    """Device cache state plus the timed access operations."""

    def __init__(self, config: DeviceConfig | None = None,
                 flash: FlashBackend | None = None):
        self.config = config or DeviceConfig()
        self.flash = flash or FlashBackend()
        s, w = self.config.num_sets, self.config.ways
        self.tags = np.full((s, w), -1, np.int64)
        self.valid = np.zeros((s, w), np.uint8)
        self.dirty = np.zeros((s, w), np.uint8)
        self.stamp = np.zeros((s, w), np.int64)
        # [tick, hits, misses, evictions_clean, evictions_dirty]
        self.meta = np.zeros(5, np.int64)
        lat = self.config.latency
        self.hit_read_ns = lat.hit_read_ns
        self.pre_flash_ns = lat.pre_flash_ns
        self.fill_tail_ns = lat.fill_tail_ns
        self.write_txn_ns = lat.write_txn_ns
        # pre-seeded flash service-time factors; a single 1.0 means no jitter
        self.jit_draws = np.ones(1, np.float64)
        self.jit_idx = np.zeros(1, np.int64)

    # -- kernel plumbing ----------------------------------------------------

    def cache_args(self):
        return self.tags, self.valid, self.dirty, self.stamp, self.meta

    def timing_args(self):
        return (self.hit_read_ns, self.pre_flash_ns, self.fill_tail_ns,
                float(self.flash.config.read_service_ns),
                float(self.flash.config.write_service_ns))

    def kernel_args(self):
        return (self.cache_args() + self.timing_args()
                + self.flash.kernel_args() + (self.jit_draws, self.jit_idx))

    def set_service_jitter(self, jitter_frac: float, n_draws: int, seed):
        """Pre-draw flash service factors for the device's own accesses."""
        if jitter_frac <= 0.0:
            self.jit_draws = np.ones(1, np.float64)
        else:
            rng = np.random.default_rng(seed)
            self.jit_draws = rng.uniform(1.0 - jitter_frac, 1.0 + jitter_frac,
                                         max(1, n_draws))
        self.jit_idx[0] = 0

    # -- queries ------------------------------------------------------------

    def lookup(self, page: int):
        """Way index on hit, None on miss.  Pure: no recency/counter update."""
        s = page % self.config.num_sets
        tag = page // self.config.num_sets
        for w in range(self.config.ways):
            if self.valid[s, w] and self.tags[s, w] == tag:
                return w
        return None

    def hit_rate(self) -> float:
        total = int(self.meta[1] + self.meta[2])
        if total == 0:
            raise UndefinedStatisticError("no lookups recorded")
        return int(self.meta[1]) / total

    @property
    def hits(self) -> int:
        return int(self.meta[1])

    @property
    def misses(self) -> int:
        return int(self.meta[2])

    @property
    def evictions_clean(self) -> int:
        return int(self.meta[3])

    @property
    def evictions_dirty(self) -> int:
        return int(self.meta[4])

    def reset_counters(self):
        """Clear hit/miss/eviction statistics (post-warm-up measurement)."""
        self.meta[1:] = 0

    def recency_rank(self, page: int):
        """0 = MRU among the valid blocks of the page's set, None if absent."""
        w = self.lookup(page)
        if w is None:
            return None
        s = page % self.config.num_sets
        rank = 0
        for k in range(self.config.ways):
            if self.valid[s, k] and self.stamp[s, k] > self.stamp[s, w]:
                rank += 1
        return rank

    def resident_pages(self):
        nsets = self.config.num_sets
        for s in range(nsets):
            for w in range(self.config.ways):
                if self.valid[s, w]:
                    yield int(self.tags[s, w]) * nsets + s

    def dirty_pages(self):
        """Dirty pages in set-major order (the deterministic flush order)."""
        nsets = self.config.num_sets
        for s in range(nsets):
            for w in range(self.config.ways):
                if self.valid[s, w] and self.dirty[s, w]:
                    yield int(self.tags[s, w]) * nsets + s

    # -- timed accesses -----------------------------------------------------

    def _check_offset(self, offset: int):
        if not 0 <= offset < self.config.block_bytes:
            raise ValueError(f"offset {offset} outside block")

    def _fetch(self, page: int, is_write: bool, now: int):
        """Shared hit/miss path; mirrors the bulk kernels op for op, but
        routes flash traffic through the logging backend."""
        hit, ev_page, ev_dirty = _kernels.cache_access(
            page, is_write, *self.cache_args())
        if hit:
            return self.hit_read_ns, None
        t0 = now + self.pre_flash_ns
        if ev_dirty:
            self.flash.submit(WRITE_PAGE, ev_page, t0)
        done = self.flash.submit(READ_PAGE, page, t0)
        return done - now + self.fill_tail_ns, ev_page if ev_page >= 0 else None

    def access_read(self, page: int, offset: int, now: int):
        """Returns (latency_ns, evicted_page | None); updates state once."""
        self._check_offset(offset)
        return self._fetch(page, False, now)

    def access_write_rfo(self, page: int, offset: int, now: int):
        """Fetch/merge half of a store; caller owns the write transaction."""
        self._check_offset(offset)
        return self._fetch(page, True, now)

    def access_write(self, page: int, offset: int, now: int):
        """Serialized store: read-for-ownership path plus the write txn."""
        lat, ev = self.access_write_rfo(page, offset, now)
        return lat + self.write_txn_ns, ev

    def gpf_flush(self, now: int, energy_budget_bytes: int | None = None) -> FlushReport:
        """Write dirty blocks back to flash in set-major order.

        A finite energy budget bounds how many pages can be flushed; the
        report's `complete` flag says whether the device came out clean.
        """
        flushed, last_done = self.flush_dirty_pages(now, energy_budget_bytes)
        remaining = int(((self.valid == 1) & (self.dirty == 1)).sum())
        n = len(flushed)
        return FlushReport(
            dirty_pages_flushed=n,
            bytes=n * self.config.block_bytes,
            flush_time_ns=max(0, last_done - now) if n else 0,
            complete=remaining == 0,
        )

    def flush_dirty_pages(self, now: int, energy_budget_bytes: int | None = None):
        """Flush mechanics shared with the persistence harness.

        Returns (flushed_pages, last_completion_ns).
        """
        if energy_budget_bytes is None:
            limit = None
        else:
            limit = energy_budget_bytes // self.config.block_bytes
        nsets = self.config.num_sets
        flushed: list[int] = []
        last_done = now
        # argwhere is row-major, i.e. exactly the set-major flush order
        for s, w in np.argwhere((self.valid == 1) & (self.dirty == 1)):
            if limit is not None and len(flushed) >= limit:
                return flushed, last_done
            page = int(self.tags[s, w]) * nsets + s
            done = self.flash.submit(WRITE_PAGE, page, now)
            last_done = max(last_done, done)
            self.dirty[s, w] = 0
            flushed.append(page)
        return flushed, last_done
