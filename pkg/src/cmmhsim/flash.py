"""NAND flash service model: page reads/writes over a few parallel channels.

The backend represents the device-internal NVMe link (PCIe Gen4 x4 class):
page-granular operations, FCFS dispatch, bounded queue with backpressure.
Service times default to the tens-of-microseconds range of TLC flash and are
calibration knobs.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels

READ_PAGE = 0
WRITE_PAGE = 1

_KIND_NAMES = {READ_PAGE: "ReadPage", WRITE_PAGE: "WritePage"}


class FlashQueueError(Exception):
    pass


@dataclass
class FlashConfig:
    read_service_ns: int = 25_000
    write_service_ns: int = 40_000
    channels: int = 4
    queue_capacity: int = 256
    jitter_frac: float = 0.0  # +/- fraction of service time, seeded
    jitter_seed: int = 0

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.read_service_ns <= 0 or self.write_service_ns <= 0:
            raise ValueError("service times must be positive")
        if not 0.0 <= self.jitter_frac < 1.0:
            raise ValueError("jitter_frac must be in [0, 1)")


@dataclass(frozen=True)
class FlashOp:
    kind: int
    page: int
    enqueue_ns: int
    start_ns: int
    complete_ns: int

    @property
    def kind_name(self) -> str:
        return _KIND_NAMES[self.kind]


class FlashBackend:
    """Event-level flash interface; shares its state with the bulk kernels."""

    def __init__(self, config: FlashConfig | None = None, record_ops: bool = True):
        self.config = config or FlashConfig()
        self.record_ops = record_ops
        self.ops: list[FlashOp] = []
        c = self.config
        self.chan_free = np.zeros(c.channels, np.float64)
        self.ring = np.zeros(c.queue_capacity, np.float64)
        self.fpos = np.zeros(1, np.int64)
        self.fbusy = np.zeros(1, np.float64)
        self._rng = np.random.default_rng(c.jitter_seed)

    def kernel_args(self):
        return self.chan_free, self.ring, self.fpos, self.fbusy

    def _service(self, kind: int) -> float:
        base = (self.config.read_service_ns if kind == READ_PAGE
                else self.config.write_service_ns)
        j = self.config.jitter_frac
        if j > 0.0:
            return base * float(self._rng.uniform(1.0 - j, 1.0 + j))
        return float(base)

    def submit(self, kind: int, page: int, now: int) -> int:
        """Enqueue one page op at `now`; returns its absolute completion time.

        A full queue delays acceptance until a waiting op has started
        (backpressure: the caller's access simply observes a later
        completion).
        """
        if kind not in (READ_PAGE, WRITE_PAGE):
            raise ValueError(f"unknown flash op kind {kind!r}")
        svc = self._service(kind)
        slot = self.fpos[0] % self.ring.shape[0]
        t_eff = max(float(now), float(self.ring[slot]))
        done = _kernels.flash_submit(float(now), svc, self.chan_free,
                                     self.ring, self.fpos, self.fbusy)
        if self.record_ops:
            start = done - svc
            self.ops.append(FlashOp(kind, page, _kernels.round_ns(t_eff),
                                    _kernels.round_ns(start),
                                    _kernels.round_ns(done)))
        return _kernels.round_ns(done)

    def utilization(self, window_ns: int) -> float:
        """Busy-channel-time over [0, window_ns] divided by total capacity."""
        if window_ns <= 0:
            raise ValueError("window must be positive")
        if self.record_ops:
            busy = 0.0
            for op in self.ops:
                busy += max(0, min(op.complete_ns, window_ns) - min(op.start_ns, window_ns))
        else:
            busy = float(self.fbusy[0])
        return busy / (self.config.channels * window_ns)

    @property
    def submitted(self) -> int:
        return int(self.fpos[0])

    def count(self, kind: int) -> int:
        return sum(1 for op in self.ops if op.kind == kind)
