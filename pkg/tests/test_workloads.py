import numpy as np
import pytest
import scipy.stats

from cmmhsim import _kernels
from cmmhsim.device import CmmhDevice, DeviceConfig
from cmmhsim.engine import AccessKind
from cmmhsim.flash import FlashBackend
from cmmhsim.workloads import (StatisticValidityWarning, distinct_lines,
                               gen_irregular, gen_kv, gen_parallel_random,
                               gen_pointer_chase, gen_tail_sweep)


def test_chase_two_line_region_alternates():
    tr = gen_pointer_chase(128, 6, seed=1)
    lines = (tr.addrs // 64).tolist()
    assert lines == [0, 1, 0, 1, 0, 1]
    assert tr.dependent


def test_chase_visits_every_line_once_per_lap():
    region = 64 * 257
    tr = gen_pointer_chase(region, 2 * 257, seed=2)
    lines = (tr.addrs // 64)
    lap1, lap2 = lines[:257], lines[257:]
    assert sorted(lap1.tolist()) == list(range(257))
    assert sorted(lap2.tolist()) == list(range(257))
    assert (lap1 == lap2).all()   # same cycle every lap


def test_chase_addresses_inside_region():
    tr = gen_pointer_chase(4096, 100, seed=3)
    assert (tr.addrs < 4096).all()
    assert (tr.addrs >= 0).all()


def test_parallel_random_lines_distinct_and_seeded():
    a = gen_parallel_random(1 << 20, AccessKind.TEMPORAL_LOAD, seed=4)
    b = gen_parallel_random(1 << 20, AccessKind.TEMPORAL_LOAD, seed=4)
    assert a.n == 16
    assert len(set(a.addrs.tolist())) == 16
    assert (a.addrs == b.addrs).all()
    c = gen_parallel_random(1 << 20, AccessKind.TEMPORAL_LOAD, seed=5)
    assert (a.addrs != c.addrs).any()


def test_distinct_lines_tiny_region():
    rng = np.random.default_rng(0)
    rows = distinct_lines(rng, 16, 50, 16)
    for r in rows:
        assert sorted(r.tolist()) == list(range(16))


def test_tail_sweep_warns_below_threshold():
    with pytest.warns(StatisticValidityWarning):
        gen_tail_sweep([1 << 20], 10, seed=0)


def test_tail_sweep_plan_batches_shape_and_bounds():
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        plan = gen_tail_sweep([1 << 20, 2 << 20], 500, seed=6)
    for k, size in enumerate(plan.region_sizes):
        lines = plan.batch_lines(k)
        assert lines.shape == (500, 16)
        assert (lines < size // 64).all()
        for row in lines[:50]:
            assert len(set(row.tolist())) == 16


def test_irregular_bounds_and_purity():
    tr = gen_irregular(1 << 22, 10_000, seed=7)
    tr2 = gen_irregular(1 << 22, 10_000, seed=7)
    assert (tr.addrs == tr2.addrs).all()
    assert (tr.addrs < (1 << 22)).all()
    assert tr.kinds[0] == int(AccessKind.TEMPORAL_LOAD)


def test_irregular_uniformity_chi_square():
    n = 1_000_000
    footprint = 1 << 22          # 65536 lines
    tr = gen_irregular(footprint, n, seed=8)
    lines = tr.addrs // 64
    counts = np.bincount(lines, minlength=footprint // 64)
    _, p = scipy.stats.chisquare(counts)
    assert p > 0.01


def test_fillseq_touches_pages_in_order_64_writes_per_page():
    tr = gen_kv("fillseq", 256, value_size=100, seed=9)
    pages = (tr.addrs // 4096).tolist()
    assert pages == sorted(pages)
    first_page_writes = [a for a in tr.addrs if a < 4096]
    assert len(first_page_writes) == 64
    assert sorted(set(a // 64 for a in first_page_writes)) == list(range(64))
    assert all(k == int(AccessKind.TEMPORAL_STORE) for k in tr.kinds)


def test_fillrandom_lower_hit_rate_than_fillseq():
    # footprint well beyond the cache: sequential fills coalesce per page,
    # random fills mostly miss
    def run(pattern):
        dev = CmmhDevice(DeviceConfig(cache_capacity_bytes=1 << 22),
                         FlashBackend(record_ops=False))
        tr = gen_kv(pattern, 50_000, seed=10, footprint=1 << 25)
        _kernels.run_access_stream(tr.pages(), tr.writes(), *dev.cache_args())
        return dev.hit_rate()

    assert run("fillrandom") < run("fillseq")


def test_readseq_within_cache_hits_after_warmup():
    dev = CmmhDevice(DeviceConfig(cache_capacity_bytes=1 << 22),
                     FlashBackend(record_ops=False))
    tr = gen_kv("readseq", 1000, seed=11)
    _kernels.run_access_stream(tr.pages(), tr.writes(), *dev.cache_args())
    dev.reset_counters()
    _kernels.run_access_stream(tr.pages(), tr.writes(), *dev.cache_args())
    assert dev.hit_rate() == 1.0


def test_deleteseq_is_read_modify_write_pairs():
    tr = gen_kv("deleteseq", 10, value_size=100, seed=12)
    kinds = tr.kinds.reshape(10, 4)
    for row in kinds:
        assert row.tolist() == [int(AccessKind.TEMPORAL_LOAD)] * 2 + \
            [int(AccessKind.TEMPORAL_STORE)] * 2
    addrs = tr.addrs.reshape(10, 4)
    assert (addrs[:, :2] == addrs[:, 2:]).all()


def test_kv_addresses_within_footprint():
    for pattern in ("fillseq", "fillrandom", "readrandom", "deleteseq"):
        tr = gen_kv(pattern, 5_000, seed=13, footprint=1 << 22)
        assert (tr.addrs < (1 << 22)).all(), pattern


def test_generators_reject_bad_params():
    with pytest.raises(ValueError):
        gen_pointer_chase(32, 10, 0)
    with pytest.raises(ValueError):
        gen_parallel_random(64, AccessKind.TEMPORAL_LOAD, 0)
    with pytest.raises(ValueError):
        gen_irregular(1024, 10, 0)
    with pytest.raises(ValueError):
        gen_kv("bogus", 10)
    with pytest.raises(ValueError):
        gen_kv("fillseq", 0)
