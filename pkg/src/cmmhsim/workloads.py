"""Seeded synthetic access-trace generators.

All generators are pure functions of (params, seed): the same inputs always
produce the same trace.  Addresses are 64 B line-granular and stay inside
the declared footprint.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .device import LINE_BYTES, PAGE_BYTES
from .engine import AccessKind, AccessRequest

LINES_PER_PAGE = PAGE_BYTES // LINE_BYTES

KV_PATTERNS = ("fillseq", "fillrandom", "readseq", "readrandom", "deleteseq")

GENERATORS = ("pointer_chase", "parallel_random", "tail_sweep", "irregular",
              "kv")


class StatisticValidityWarning(UserWarning):
    pass


@dataclass
class Trace:
    name: str
    seed: int
    footprint_bytes: int
    kinds: np.ndarray          # uint8 AccessKind values
    addrs: np.ndarray          # int64 byte addresses
    threads: np.ndarray        # int32
    dependent: bool = False    # each access depends on the previous (window 1)

    @property
    def n(self) -> int:
        return int(self.addrs.shape[0])

    def iter_requests(self, issue_time: int = 0):
        for i in range(self.n):
            yield AccessRequest(int(self.threads[i]),
                                AccessKind(int(self.kinds[i])),
                                int(self.addrs[i]), LINE_BYTES, issue_time)

    def pages(self) -> np.ndarray:
        return self.addrs >> 12

    def writes(self) -> np.ndarray:
        k = self.kinds
        return ((k == int(AccessKind.TEMPORAL_STORE))
                | (k == int(AccessKind.NON_TEMPORAL_STORE))).astype(np.uint8)


def _trace(name, seed, footprint, kind, addrs, dependent=False) -> Trace:
    n = addrs.shape[0]
    kinds = np.full(n, int(kind), np.uint8)
    return Trace(name, seed, footprint, kinds, addrs.astype(np.int64),
                 np.zeros(n, np.int32), dependent)


def single_cycle_permutation(n: int, rng) -> np.ndarray:
    """Sattolo shuffle: a uniformly random permutation with one full cycle."""
    p = np.arange(n, dtype=np.int64)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i))
        p[i], p[j] = p[j], p[i]
    return p


def gen_pointer_chase(region_size: int, n_hops: int, seed: int) -> Trace:
    """Dependent load chain over a random single cycle of 64 B lines.

    Each load's target is the previous load's value, so downstream execution
    is forced to one outstanding access.  One lap visits every line exactly
    once.
    """
    if region_size < LINE_BYTES:
        raise ValueError("region must hold at least one line")
    n_lines = region_size // LINE_BYTES
    rng = np.random.default_rng(seed)
    nxt = single_cycle_permutation(n_lines, rng)
    order = np.empty(n_hops, np.int64)
    cur = 0
    for i in range(n_hops):
        order[i] = cur
        cur = int(nxt[cur])
    return _trace("pointer_chase", seed, region_size, AccessKind.TEMPORAL_LOAD,
                  order * LINE_BYTES, dependent=True)


def distinct_lines(rng, n_lines: int, rows: int, k: int) -> np.ndarray:
    """rows x k random line indices, distinct within each row."""
    if k > n_lines:
        raise ValueError("more lines requested than the region holds")
    if n_lines <= 4 * k:
        out = np.empty((rows, k), np.int64)
        for r in range(rows):
            out[r] = rng.choice(n_lines, size=k, replace=False)
        return out
    x = rng.integers(0, n_lines, (rows, k), dtype=np.int64)
    while True:
        s = np.sort(x, axis=1)
        bad = np.flatnonzero((s[:, 1:] == s[:, :-1]).any(axis=1))
        if bad.size == 0:
            return x
        x[bad] = rng.integers(0, n_lines, (bad.size, k), dtype=np.int64)


def gen_parallel_random(region_size: int, kind: AccessKind, seed: int,
                        n: int = 16) -> Trace:
    """One batch of n accesses to distinct random lines."""
    if region_size < n * LINE_BYTES:
        raise ValueError("region too small for the batch")
    rng = np.random.default_rng(seed)
    lines = distinct_lines(rng, region_size // LINE_BYTES, 1, n)[0]
    return _trace("parallel_random", seed, region_size, kind,
                  lines * LINE_BYTES)


@dataclass
class TailSweepPlan:
    """Per-size batched-read measurement plan with cold-start warm-up.

    Host cachelines are conceptually flushed between batches; with no host
    cache in the model that reduces to warming the device once per size and
    measuring steady-state batches.
    """

    region_sizes: list[int]
    batches_per_size: int
    seed: int
    batch_width: int = 16

    def batch_lines(self, size_index: int) -> np.ndarray:
        """batches_per_size x width distinct line indices for one region."""
        region = self.region_sizes[size_index]
        rng = np.random.default_rng((self.seed, size_index))
        return distinct_lines(rng, region // LINE_BYTES,
                              self.batches_per_size, self.batch_width)


def gen_tail_sweep(region_sizes, batches_per_size: int, seed: int,
                   min_batches: int = 100_000) -> TailSweepPlan:
    if batches_per_size < 1:
        raise ValueError("batches_per_size must be >= 1")
    if batches_per_size < min_batches:
        warnings.warn(
            f"{batches_per_size} batches per size is below {min_batches}; "
            "high percentiles will not be statistically valid",
            StatisticValidityWarning, stacklevel=2)
    return TailSweepPlan(list(region_sizes), batches_per_size, seed)


def gen_irregular(footprint: int, n_lookups: int, seed: int) -> Trace:
    """Uniform-random 64 B reads: the irregular lookup-table access shape."""
    if footprint < PAGE_BYTES:
        raise ValueError("footprint must be at least one page")
    rng = np.random.default_rng(seed)
    lines = rng.integers(0, footprint // LINE_BYTES, n_lookups, dtype=np.int64)
    return _trace("irregular", seed, footprint, AccessKind.TEMPORAL_LOAD,
                  lines * LINE_BYTES)


def gen_kv(pattern: str, n_ops: int, value_size: int = 100, seed: int = 0,
           footprint: int | None = None, key_size: int = 16) -> Trace:
    """Key-value store access shapes (memory traffic only, no key compute).

    fillseq writes entries at an ascending line cursor, so pages are touched
    in order with every line of a page written before moving on; fillrandom
    scatters entries uniformly over the footprint.  Read patterns mirror the
    fills with loads; deleteseq is sequential read-modify-write pairs.
    """
    if pattern not in KV_PATTERNS:
        raise ValueError(f"unknown pattern {pattern!r}")
    if n_ops < 1:
        raise ValueError("n_ops must be >= 1")
    entry_lines = -(-(key_size + value_size) // LINE_BYTES)
    seq_footprint = n_ops * entry_lines * LINE_BYTES
    if footprint is None:
        footprint = seq_footprint
    n_slots = footprint // (entry_lines * LINE_BYTES)
    if n_slots < 1:
        raise ValueError("footprint smaller than one entry")
    rng = np.random.default_rng(seed)

    if pattern in ("fillseq", "readseq", "deleteseq"):
        slots = np.arange(n_ops, dtype=np.int64) % n_slots
    else:
        slots = rng.integers(0, n_slots, n_ops, dtype=np.int64)
    entry = (slots[:, None] * entry_lines
             + np.arange(entry_lines, dtype=np.int64)[None, :])

    if pattern == "deleteseq":
        # read-modify-write: each entry's lines loaded, then stored
        pairs = np.concatenate([entry, entry], axis=1).ravel() * LINE_BYTES
        kinds = np.tile(
            np.concatenate([
                np.full(entry_lines, int(AccessKind.TEMPORAL_LOAD), np.uint8),
                np.full(entry_lines, int(AccessKind.TEMPORAL_STORE), np.uint8),
            ]), n_ops)
        return Trace("kv_deleteseq", seed, footprint, kinds,
                     pairs.astype(np.int64),
                     np.zeros(pairs.shape[0], np.int32))

    kind = (AccessKind.TEMPORAL_STORE if pattern.startswith("fill")
            else AccessKind.TEMPORAL_LOAD)
    return _trace(f"kv_{pattern}", seed, footprint, kind,
                  entry.ravel() * LINE_BYTES)
