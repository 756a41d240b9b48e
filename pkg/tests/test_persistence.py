import numpy as np
import pytest

from cmmhsim import persistence as pers
from cmmhsim.persistence import (CKPT_BASE, CKPT_MAGIC, CrashPlan, Mode,
                                 OpKind, UnrecoverableError, compute,
                                 crash_free_image, execute, form_regions,
                                 format_trace, gen_random_crash_plans,
                                 gen_random_ops, inject_crash,
                                 linked_list_insert_scenario, load,
                                 parse_trace_text, recover_replay,
                                 region_is_war_free, store, store_reg, verify,
                                 wal_comparison)


# -- region formation ---------------------------------------------------------

def spans(regions):
    return [(r.start, r.end) for r in regions]


def test_load_then_store_same_address_cuts():
    trace = [load(1, 0x100), store_reg(0x100, 1)]
    assert spans(form_regions(trace)) == [(0, 1), (1, 2)]


def test_store_then_load_is_one_region():
    trace = [store(0x100, 5), load(1, 0x100)]
    assert spans(form_regions(trace)) == [(0, 2)]


def test_war_after_compute_cuts_before_the_store():
    trace = [load(1, 0x100), compute(2, 1), store_reg(0x108, 2),
             store_reg(0x100, 2)]
    regions = form_regions(trace)
    assert spans(regions) == [(0, 3), (3, 4)]
    for r in regions:
        assert region_is_war_free(trace, r)


def test_max_region_length_cuts():
    trace = [store(0x100 + 8 * i, i) for i in range(10)]
    regions = form_regions(trace, max_ops=4)
    assert spans(regions) == [(0, 4), (4, 8), (8, 10)]


def test_checkpoint_marker_forces_boundary():
    trace = [store(0x100, 1), pers.checkpoint_marker(), store(0x108, 2)]
    assert spans(form_regions(trace)) == [(0, 2), (2, 3)]


def test_regions_partition_trace_exactly():
    rng = np.random.default_rng(0)
    for seed in range(200):
        trace = gen_random_ops(int(rng.integers(1, 80)), seed)
        regions = form_regions(trace)
        assert regions[0].start == 0
        assert regions[-1].end == len(trace)
        for a, b in zip(regions, regions[1:]):
            assert a.end == b.start
        for r in regions:
            assert region_is_war_free(trace, r)


def test_liveness_sets():
    trace = [load(1, 0x100),          # r1 live until redefined
             store_reg(0x100, 1),     # region cut here (WAR)
             compute(1, 1),           # uses then redefines r1
             store_reg(0x108, 1)]
    regions = form_regions(trace)
    assert spans(regions) == [(0, 1), (1, 4)]
    assert regions[0].live_out == frozenset({1})
    assert regions[1].live_in == frozenset({1})
    assert regions[1].live_out == frozenset()


# -- execution ----------------------------------------------------------------

def test_empty_trace_executes_to_unchanged_state():
    res = execute([], regions=[], initial_memory={0x100: 7}, mode=Mode.PLAIN)
    assert res.events == []
    assert res.state.read(0x100) == 7


def test_linked_list_insert_no_crash_reaches_consistent_state():
    trace, init, addrs = linked_list_insert_scenario()
    res = execute(trace, initial_memory=init, mode=Mode.PLAIN)
    assert res.state.read(addrs["head"]) == addrs["new"]
    assert res.state.read(addrs["new_next"]) == addrs["first"]


def test_checkpoint_event_count_matches_live_out_sizes():
    trace = [load(1, 0x100), compute(2, 1), store_reg(0x100, 2),
             load(3, 0x108), store_reg(0x108, 3)]
    regions = form_regions(trace)
    res = execute(trace, regions, mode=Mode.IDEMPOTENT)
    ckpt_events = [e for e in res.events if e.cause == "checkpoint"
                   and e.kind == "persist_write"]
    # one record per boundary: initial + one per region
    assert len(ckpt_events) >= len(regions)


def test_store_const_and_reg_semantics():
    trace = [store(0x100, 41), load(1, 0x100), compute(2, 1),
             store_reg(0x200, 2)]
    res = execute(trace, mode=Mode.PLAIN)
    assert res.state.read(0x100) == 41
    assert res.state.read(0x200) == compute_val([41])


def compute_val(vals):
    return pers.mix(vals)


# -- crash injection ----------------------------------------------------------

def test_crash_at_zero_preserves_initial_image():
    trace, init, addrs = linked_list_insert_scenario()
    run = execute(trace, initial_memory=init, mode=Mode.PLAIN)
    image = inject_crash(run, CrashPlan(0, None, ()))
    for addr, val in init.items():
        assert image.get(addr, 0) == val


def test_unlimited_budget_persists_everything_drained():
    trace = [store(0x100, 1), store(0x140, 2)]
    run = execute(trace, mode=Mode.PLAIN)
    image = inject_crash(run, CrashPlan(2, None, (0x100, 0x140)))
    assert image[0x100] == 1
    assert image[0x140] == 2


def test_limited_budget_loses_unflushed_device_blocks():
    # two stores to different pages, zero flush budget: nothing persists
    trace = [store(0x1000, 1), store(0x2000, 2)]
    run = execute(trace, mode=Mode.PLAIN)
    image = inject_crash(run, CrashPlan(2, 0, (0x1000, 0x2000)))
    assert image.get(0x1000, 0) == 0
    assert image.get(0x2000, 0) == 0


def test_linked_list_str_b_first_crash_reproduces_dangling_pointer():
    trace, init, addrs = linked_list_insert_scenario()
    oracle = crash_free_image(trace, init)
    run = execute(trace, initial_memory=init, mode=Mode.PLAIN)
    head_line = addrs["head"] - addrs["head"] % 64
    image = inject_crash(run, CrashPlan(2, None, (head_line,)))
    # head points at the new node, but its next pointer never persisted
    assert image[addrs["head"]] == addrs["new"]
    assert image.get(addrs["new_next"], 0) != addrs["first"]
    v = verify(image, oracle)
    assert not v.consistent
    assert v.first_divergent_addr == addrs["new_next"]


# -- recovery -----------------------------------------------------------------

def test_crash_exactly_at_boundary_replays_rest():
    trace = [store(0x100, 1), load(1, 0x100), store_reg(0x100, 1),
             store(0x108, 9)]
    regions = form_regions(trace)
    assert spans(regions) == [(0, 2), (2, 4)]
    oracle = crash_free_image(trace)
    run = execute(trace, regions, mode=Mode.IDEMPOTENT)
    image = inject_crash(run, CrashPlan(2, None, ()))
    final = recover_replay(image, trace, regions)
    assert verify(final.domain.flash_snapshot(), oracle).consistent


def test_linked_list_with_regions_and_replay_is_consistent():
    trace, init, addrs = linked_list_insert_scenario()
    regions = form_regions(trace)
    oracle = crash_free_image(trace, init)
    run = execute(trace, regions, initial_memory=init, mode=Mode.IDEMPOTENT)
    head_line = addrs["head"] - addrs["head"] % 64
    for point in range(len(trace) + 1):
        image = inject_crash(run, CrashPlan(point, None, (head_line,)))
        final = recover_replay(image, trace, regions)
        assert verify(final.domain.flash_snapshot(), oracle).consistent


def test_recover_without_checkpoint_record_raises():
    trace, init, _ = linked_list_insert_scenario()
    regions = form_regions(trace)
    run = execute(trace, initial_memory=init, mode=Mode.PLAIN)
    image = inject_crash(run, CrashPlan(1, None, ()))
    with pytest.raises(UnrecoverableError):
        recover_replay(image, trace, regions)


def test_idempotence_region_reexecution_converges():
    # re-executing a region from its live-in state over any mid-region
    # partial memory state gives the same exit memory and registers
    rng = np.random.default_rng(1)
    for seed in range(30):
        trace = gen_random_ops(40, seed + 1000)
        regions = form_regions(trace)
        run = execute(trace, regions, mode=Mode.IDEMPOTENT)
        oracle = crash_free_image(trace)
        region = regions[int(rng.integers(0, len(regions)))]
        for _ in range(3):
            point = int(rng.integers(region.start, region.end + 1))
            image = inject_crash(run, CrashPlan(point, None, ()))
            final = recover_replay(image, trace, regions)
            assert verify(final.domain.flash_snapshot(), oracle).consistent


def test_verify_trivials():
    assert verify({0x100: 1}, {0x100: 1}).consistent
    v = verify({0x100: 1, 0x108: 2}, {0x100: 1, 0x108: 3})
    assert not v.consistent and v.first_divergent_addr == 0x108


def test_random_crash_plans_with_replay_all_consistent():
    trace = gen_random_ops(150, seed=77)
    regions = form_regions(trace)
    oracle = crash_free_image(trace)
    run = execute(trace, regions, mode=Mode.IDEMPOTENT)
    for plan in gen_random_crash_plans(trace, 50, seed=78):
        image = inject_crash(run, plan)
        final = recover_replay(image, trace, regions)
        assert verify(final.domain.flash_snapshot(), oracle).consistent


# -- WAL accounting -----------------------------------------------------------

def test_wal_mode_events_exceed_idempotent_mode():
    ops = [store(0x1000 + 8 * i, i) for i in range(1000)]
    cmp = wal_comparison(ops)
    assert cmp["wal_persist_writes"] >= 2 * cmp["idem_persist_writes"]
    assert cmp["wal_barriers"] == 1000
    assert cmp["wal_est_ns"] > cmp["idem_est_ns"]
    assert cmp["speedup_est"] > 1.0


def test_wal_event_log_causes():
    ops = [store(0x1000, 1), store(0x1008, 2)]
    run = execute(ops, mode=Mode.WAL)
    causes = {e.cause for e in run.events if e.kind == "persist_write"}
    assert "wal_append" in causes
    assert run.barrier_count() == 2


# -- trace text format ----------------------------------------------------------

def test_trace_text_round_trip():
    trace = [load(1, 0x100), store_reg(0x108, 1), store(0x110, 42),
             compute(2, 1, 3), pers.checkpoint_marker()]
    text = format_trace(trace)
    assert parse_trace_text(text) == trace


def test_trace_text_examples():
    ops = parse_trace_text("""
        # list insertion
        LOAD r1 0x100
        STORE 0x108 r1
        STORE 0x110 42
        COMPUTE r2 r1
        CHECKPOINT
    """)
    assert ops[0].kind == OpKind.LOAD and ops[0].addr == 0x100
    assert ops[1].reg == 1 and ops[1].const is None
    assert ops[2].const == 42
    assert ops[3].srcs == (1,)
    assert ops[4].kind == OpKind.CHECKPOINT


def test_trace_text_errors_carry_line_numbers():
    with pytest.raises(ValueError, match="line 2"):
        parse_trace_text("LOAD r1 0x100\nSTORE oops r1\n")


def test_misaligned_or_reserved_addresses_rejected():
    with pytest.raises(ValueError):
        load(1, 0x101)
    with pytest.raises(ValueError):
        store(pers.RESERVED_BASE, 1)
