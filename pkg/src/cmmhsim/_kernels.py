"""Hot simulation kernels shared by the event-level API and the bulk runners.

Every function here is numba-njit'able and doubles as the pure-Python
fallback (see _accel).  State is passed as flat arrays so that the scalar
device methods and the bulk experiment loops run the exact same logic:

  cache arrays : tags int64[S,W], valid uint8[S,W], dirty uint8[S,W],
                 stamp int64[S,W], meta int64[5]
                 meta = [tick, hits, misses, evictions_clean, evictions_dirty]
  flash arrays : chan_free float64[C], ring float64[queue_capacity],
                 fpos int64[1], fbusy float64[1]

Times are integer nanoseconds at every host-visible point; pipe-admission
bookkeeping is float so fractional initiation intervals compose exactly.
"""

import math

import numpy as np

from ._accel import accelerated

KIND_LOAD = 0
KIND_NT_LOAD = 1
KIND_STORE = 2
KIND_NT_STORE = 3


@accelerated
def round_ns(x):
    """Half-up rounding to integer nanoseconds."""
    return int(math.floor(x + 0.5))


@accelerated
def cache_access(page, is_write, tags, valid, dirty, stamp, meta):
    """One tag-store access: MRU insertion, LRU victim selection.

    Returns (hit, evicted_page, evicted_dirty); evicted_page is -1 when no
    valid block was displaced.  Counters and recency stamps are updated.
    """
    nsets = tags.shape[0]
    nways = tags.shape[1]
    s = page % nsets
    tag = page // nsets
    meta[0] += 1
    tick = meta[0]
    for w in range(nways):
        if valid[s, w] == 1 and tags[s, w] == tag:
            meta[1] += 1
            stamp[s, w] = tick
            if is_write:
                dirty[s, w] = 1
            return True, -1, False
    meta[2] += 1
    victim = -1
    for w in range(nways):
        if valid[s, w] == 0:
            victim = w
            break
    ev_page = -1
    ev_dirty = False
    if victim < 0:
        victim = 0
        for w in range(1, nways):
            if stamp[s, w] < stamp[s, victim]:
                victim = w
        ev_page = tags[s, victim] * nsets + s
        ev_dirty = dirty[s, victim] == 1
        if ev_dirty:
            meta[4] += 1
        else:
            meta[3] += 1
    tags[s, victim] = tag
    valid[s, victim] = 1
    dirty[s, victim] = 1 if is_write else 0
    stamp[s, victim] = tick
    return False, ev_page, ev_dirty


@accelerated
def flash_submit(t, service, chan_free, ring, fpos, fbusy):
    """FCFS dispatch onto the earliest-free channel; returns completion.

    The ring buffer holds the start times of the last queue_capacity
    submissions: an op `capacity` submissions back must have started before
    a new one is accepted, which bounds the number of waiting ops.
    """
    cap = ring.shape[0]
    slot = fpos[0] % cap
    t_eff = t
    if ring[slot] > t_eff:
        t_eff = ring[slot]
    c = 0
    for k in range(1, chan_free.shape[0]):
        if chan_free[k] < chan_free[c]:
            c = k
    start = t_eff
    if chan_free[c] > start:
        start = chan_free[c]
    chan_free[c] = start + service
    ring[slot] = start
    fpos[0] += 1
    fbusy[0] += service
    return start + service


@accelerated
def device_read(page, now, tags, valid, dirty, stamp, meta,
                hit_ns, pre_ns, fill_ns, rd_svc, wr_svc,
                chan_free, ring, fpos, fbusy, jit, jidx):
    """Timed 64 B read: hit path, or flash fill with optional dirty writeback.

    `now` is the admission time at the device; returns (completion,
    evicted_page).  Dirty victims are enqueued to flash before the fill read;
    the access waits only on the fill.  jit holds pre-seeded service-time
    factors consumed one per flash op (a single 1.0 disables jitter).
    """
    hit, ev_page, ev_dirty = cache_access(page, False, tags, valid, dirty,
                                          stamp, meta)
    if hit:
        return now + hit_ns, -1
    t0 = float(now + pre_ns)
    if ev_dirty:
        svc = wr_svc * jit[jidx[0] % jit.shape[0]]
        jidx[0] += 1
        flash_submit(t0, svc, chan_free, ring, fpos, fbusy)
    svc = rd_svc * jit[jidx[0] % jit.shape[0]]
    jidx[0] += 1
    done = flash_submit(t0, svc, chan_free, ring, fpos, fbusy)
    return round_ns(done) + fill_ns, ev_page


@accelerated
def device_write_rfo(page, now, tags, valid, dirty, stamp, meta,
                     hit_ns, pre_ns, fill_ns, rd_svc, wr_svc,
                     chan_free, ring, fpos, fbusy, jit, jidx):
    """Read-for-ownership half of a temporal store: fetch/merge, mark dirty.

    Returns (rfo_completion, evicted_page); the caller appends the write
    transaction on the write pipe.
    """
    hit, ev_page, ev_dirty = cache_access(page, True, tags, valid, dirty,
                                          stamp, meta)
    if hit:
        return now + hit_ns, -1
    t0 = float(now + pre_ns)
    if ev_dirty:
        svc = wr_svc * jit[jidx[0] % jit.shape[0]]
        jidx[0] += 1
        flash_submit(t0, svc, chan_free, ring, fpos, fbusy)
    svc = rd_svc * jit[jidx[0] % jit.shape[0]]
    jidx[0] += 1
    done = flash_submit(t0, svc, chan_free, ring, fpos, fbusy)
    return round_ns(done) + fill_ns, ev_page


@accelerated
def run_access_stream(pages, writes, tags, valid, dirty, stamp, meta):
    """Timing-free metadata pass over an access stream (hit-rate studies)."""
    for i in range(pages.shape[0]):
        cache_access(pages[i], writes[i] == 1, tags, valid, dirty, stamp, meta)


@accelerated
def run_access_trace(pages, writes, tags, valid, dirty, stamp, meta,
                     out_hit, out_evicted, out_evdirty):
    """Like run_access_stream but records the per-access decision sequence."""
    for i in range(pages.shape[0]):
        hit, ev_page, ev_dirty = cache_access(pages[i], writes[i] == 1, tags,
                                              valid, dirty, stamp, meta)
        out_hit[i] = 1 if hit else 0
        out_evicted[i] = ev_page
        out_evdirty[i] = 1 if ev_dirty else 0


@accelerated
def run_serial_reads(pages, clock0, tags, valid, dirty, stamp, meta,
                     hit_ns, pre_ns, fill_ns, rd_svc, wr_svc,
                     chan_free, ring, fpos, fbusy, jit, jidx, out_ns):
    """Dependent (window-1) read chain; out_ns gets per-access latencies."""
    t = clock0
    for i in range(pages.shape[0]):
        c, _ = device_read(pages[i], t, tags, valid, dirty, stamp, meta,
                           hit_ns, pre_ns, fill_ns, rd_svc, wr_svc,
                           chan_free, ring, fpos, fbusy, jit, jidx)
        out_ns[i] = c - t
        t = c
    return t


@accelerated
def run_read_batches(pages, n_per_batch, window, clock0, ii_read, t_issue,
                     tags, valid, dirty, stamp, meta,
                     hit_ns, pre_ns, fill_ns, rd_svc, wr_svc,
                     chan_free, ring, fpos, fbusy, jit, jidx, radm,
                     out_batch_ns, out_flash_reads):
    """Back-to-back batches of parallel reads through the read pipe.

    pages holds n_per_batch consecutive page ids per batch.  Each batch is
    fenced: the next starts at the previous batch's last completion.
    out_batch_ns[b] is the fenced batch duration, out_flash_reads[b] the
    number of flash fills it triggered.
    """
    nb = out_batch_ns.shape[0]
    comp = np.zeros(n_per_batch, np.int64)
    t = clock0
    for b in range(nb):
        start = -1
        end = t
        m0 = meta[2]
        last_issue = -1.0e18
        for i in range(n_per_batch):
            ready = float(t)
            if i >= window and float(comp[i - window]) > ready:
                ready = float(comp[i - window])
            if last_issue + t_issue > ready:
                ready = last_issue + t_issue
            a = ready
            if radm[0] > a:
                a = radm[0]
            radm[0] = a + ii_read
            last_issue = a
            ai = round_ns(a)
            if start < 0:
                start = ai
            c, _ = device_read(pages[b * n_per_batch + i], ai,
                               tags, valid, dirty, stamp, meta,
                               hit_ns, pre_ns, fill_ns, rd_svc, wr_svc,
                               chan_free, ring, fpos, fbusy, jit, jidx)
            comp[i] = c
            if c > end:
                end = c
        out_batch_ns[b] = end - start
        out_flash_reads[b] = meta[2] - m0
        t = end
    return t


@accelerated
def run_bandwidth(kind, pages, nthreads, per_thread, window,
                  ii_read, ii_write, t_issue, t_post, write_txn_ns,
                  tags, valid, dirty, stamp, meta,
                  hit_ns, pre_ns, fill_ns, rd_svc, wr_svc,
                  chan_free, ring, fpos, fbusy, jit, jidx, radm, wadm):
    """All threads stream one access kind at full window; returns makespan.

    Threads are merged in global ready-time order (ties to the lowest id),
    which keeps the interleaving deterministic.
    """
    ready = np.zeros(nthreads, np.float64)
    idx = np.zeros(nthreads, np.int64)
    last_issue = np.full(nthreads, -1.0e18)
    hist = np.zeros((nthreads, window), np.int64)
    makespan = 0
    total = nthreads * per_thread
    for _ in range(total):
        tid = -1
        for k in range(nthreads):
            if idx[k] < per_thread and (tid < 0 or ready[k] < ready[tid]):
                tid = k
        page = pages[tid * per_thread + idx[tid]]
        r = ready[tid]
        if kind == KIND_NT_STORE:
            if last_issue[tid] + t_post > r:
                r = last_issue[tid] + t_post
            a = r
            if wadm[0] > a:
                a = wadm[0]
            wadm[0] = a + ii_write
            last_issue[tid] = a
            device_write_rfo(page, round_ns(a), tags, valid, dirty, stamp,
                             meta, hit_ns, pre_ns, fill_ns, rd_svc, wr_svc,
                             chan_free, ring, fpos, fbusy, jit, jidx)
            c = round_ns(a + t_post)
            ready[tid] = a + t_post
            idx[tid] += 1
        else:
            if last_issue[tid] + t_issue > r:
                r = last_issue[tid] + t_issue
            a = r
            if radm[0] > a:
                a = radm[0]
            radm[0] = a + ii_read
            last_issue[tid] = a
            ai = round_ns(a)
            if kind == KIND_STORE:
                rfo, _ = device_write_rfo(page, ai, tags, valid, dirty, stamp,
                                          meta, hit_ns, pre_ns, fill_ns,
                                          rd_svc, wr_svc, chan_free, ring,
                                          fpos, fbusy, jit, jidx)
                w = float(rfo)
                if wadm[0] > w:
                    w = wadm[0]
                wadm[0] = w + ii_write
                c = round_ns(w) + write_txn_ns
            else:
                c, _ = device_read(page, ai, tags, valid, dirty, stamp, meta,
                                   hit_ns, pre_ns, fill_ns, rd_svc, wr_svc,
                                   chan_free, ring, fpos, fbusy, jit, jidx)
            j = idx[tid] % window
            hist[tid, j] = c
            idx[tid] += 1
            if idx[tid] >= window:
                ready[tid] = float(hist[tid, idx[tid] % window])
            else:
                ready[tid] = 0.0
        if c > makespan:
            makespan = c
    return makespan
