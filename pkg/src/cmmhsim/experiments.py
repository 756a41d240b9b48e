"""Experiment runners, report emission, and report comparison.

Every runner is deterministic given (config, seed): reports carry a
determinism hash over everything except the timestamp.
"""

import csv
import hashlib
import json
import os
import warnings
from datetime import datetime, timezone

import numpy as np

from . import __version__
from ._accel import backend_name
from . import _kernels
from .config import ConfigError, ExperimentConfig, parse_policy
from .device import CmmhDevice, DeviceConfig, LatencyModel, PAGE_BYTES
from .engine import AccessKind, AccessRequest, Engine, HostConfig
from .flash import FlashBackend, FlashConfig
from .stats import p99999_supported, summarize
from .topology import (AllocPolicy, MemNode, Topology, default_topology,
                       FLAT_DRAM, CMMH, ddr5_local_model, ddr5_remote_model,
                       FlatDramModel)
from .workloads import (distinct_lines, gen_irregular, gen_kv,
                        gen_pointer_chase, gen_tail_sweep)
from . import persistence as pers

LINE_BYTES = 64

# ten footprints spanning well-under to 2.5x the device cache, mirroring the
# irregular-workload sweep shape (fractions of cache capacity)
HIT_RATE_FOOTPRINT_MULTS = [80 / 16384, 160 / 16384, 320 / 16384, 640 / 16384,
                            1279 / 16384, 2558 / 16384, 5117 / 16384,
                            10234 / 16384, 20468 / 16384, 40936 / 16384]

_SCALED_CACHE = {"tail_sweep": 256 << 20, "hit_rate": 256 << 20,
                 "kv_hit_rate": 16 << 20}


# -- builders -----------------------------------------------------------------

def build_host(cfg: ExperimentConfig) -> HostConfig:
    s = cfg.section("host")
    return HostConfig(mlp_window=s.get("mlp_window", 16),
                      t_issue_ns=s.get("t_issue_ns", 5.8),
                      fence_drain=s.get("fence_drain", True))


def build_flash(cfg: ExperimentConfig, record_ops=False) -> FlashBackend:
    s = cfg.section("flash")
    fc = FlashConfig(read_service_ns=s.get("read_service_ns", 25_000),
                     write_service_ns=s.get("write_service_ns", 40_000),
                     channels=s.get("channels", 4),
                     queue_capacity=s.get("queue_capacity", 256),
                     jitter_frac=s.get("jitter_frac", 0.0),
                     jitter_seed=s.get("jitter_seed", 0))
    return FlashBackend(fc, record_ops=record_ops)


def build_device(cfg: ExperimentConfig, flash=None) -> CmmhDevice:
    s = cfg.section("device")
    cap = s.get("cache_capacity_bytes")
    if cap is None:
        cap = _SCALED_CACHE.get(cfg.kind, 16 << 30)
    lat = LatencyModel(
        t_link_rt=s.get("t_link_rt_ns", 200.0),
        t_ctrl=s.get("t_ctrl_ns", 300.0),
        t_tag=s.get("t_tag_ns", 100.0),
        t_data=s.get("t_data_ns", 128.9),
        t_write_txn=s.get("t_write_txn_ns", 869.4),
        ii_read=s.get("ii_read_ns", 14.0),
        ii_write=s.get("ii_write_ns", 16.0),
        t_post_write=s.get("t_post_write_ns", 16.0),
    )
    dc = DeviceConfig(cache_capacity_bytes=cap, ways=s.get("ways", 8),
                      block_bytes=s.get("block_bytes", PAGE_BYTES), latency=lat)
    return CmmhDevice(dc, flash or build_flash(cfg))


def _flat_model(overrides: dict, base: FlatDramModel) -> FlatDramModel:
    return FlatDramModel(
        read_ns=overrides.get("read_ns", base.read_ns),
        write_ns=overrides.get("write_ns", base.write_ns),
        ii_read=overrides.get("ii_read_ns", base.ii_read),
        ii_write=overrides.get("ii_write_ns", base.ii_write),
        t_post_write=overrides.get("t_post_write_ns", base.t_post_write),
    )


def build_topology(cfg: ExperimentConfig, device: CmmhDevice) -> Topology:
    local = _flat_model(cfg.section("node.ddr5_local"), ddr5_local_model())
    remote = _flat_model(cfg.section("node.ddr5_remote"), ddr5_remote_model())
    dev_cap = cfg.get("device", "node_capacity_bytes", 1 << 40)
    dram_cap = cfg.get("node.ddr5_local", "capacity_bytes", 256 << 30)
    dram_cap_r = cfg.get("node.ddr5_remote", "capacity_bytes", 256 << 30)
    return Topology([
        MemNode(0, "ddr5_local", FLAT_DRAM, dram_cap, dram=local),
        MemNode(1, "ddr5_remote", FLAT_DRAM, dram_cap_r, dram=remote),
        MemNode(2, "cmmh", CMMH, dev_cap, device=device),
    ])


def warm_pages(device: CmmhDevice, n_pages: int):
    """Touch pages 0..n_pages-1 once (reads), then clear the counters."""
    pages = np.arange(n_pages, dtype=np.int64)
    writes = np.zeros(n_pages, np.uint8)
    _kernels.run_access_stream(pages, writes, *device.cache_args())
    device.reset_counters()


def prewarm_kernels():
    """Trigger JIT compilation of all bulk kernels on tiny inputs."""
    dev = CmmhDevice(DeviceConfig(cache_capacity_bytes=1 << 20), FlashBackend())
    warm_pages(dev, 4)
    pages = np.zeros(4, np.int64)
    out = np.zeros(4, np.int64)
    _kernels.run_serial_reads(pages, 0, *dev.kernel_args(), out)
    radm = np.zeros(1, np.float64)
    ob = np.zeros(2, np.int64)
    of = np.zeros(2, np.int64)
    _kernels.run_read_batches(pages, 2, 2, 0, 14.0, 5.8, *dev.kernel_args(),
                              radm, ob, of)
    wadm = np.zeros(1, np.float64)
    for kind in (_kernels.KIND_LOAD, _kernels.KIND_STORE,
                 _kernels.KIND_NT_STORE):
        _kernels.run_bandwidth(kind, pages, 2, 2, 2, 14.0, 16.0, 5.8, 16.0,
                               dev.write_txn_ns, *dev.kernel_args(),
                               radm, wadm)
    hit = np.zeros(4, np.uint8)
    ev = np.zeros(4, np.int64)
    evd = np.zeros(4, np.uint8)
    _kernels.run_access_trace(pages, hit, *dev.cache_args(), hit, ev, evd)


# -- runners ------------------------------------------------------------------

def _fenced_batches(engine: Engine, node, kind: AccessKind, region: int,
                    n_batches: int, seed: int, window: int = 16):
    """Amortized latency samples for fenced 16-wide batches on one node."""
    rng = np.random.default_rng(seed)
    lines = distinct_lines(rng, region // LINE_BYTES, n_batches, window)
    samples = []
    t = 0
    for b in range(n_batches):
        reqs = [AccessRequest(0, kind, int(lines[b, i]) * LINE_BYTES,
                              issue_time=t) for i in range(window)]
        br = engine.run_batch(reqs, window=window, node=node)
        samples.append(float(br.amortized_latency))
        t = max(br.end, engine.fence(0))
    return samples


def _chase_serialized_ns(device: CmmhDevice, region: int, seed: int):
    """Median per-access latency of the second lap of a pointer chase."""
    n_lines = region // LINE_BYTES
    trace = gen_pointer_chase(region, 2 * n_lines, seed)
    pages = trace.pages()
    out = np.zeros(pages.shape[0], np.int64)
    _kernels.run_serial_reads(pages, 0, *device.kernel_args(), out)
    return float(np.median(out[n_lines:]))


def run_calibration(cfg: ExperimentConfig, seed: int):
    host = build_host(cfg)
    device = build_device(cfg)
    topo = build_topology(cfg, device)
    engine = Engine(topo, host)
    w = cfg.section("workload")
    region = w.get("region_bytes", 4 << 20)
    n_batches = w.get("n_batches", 64)

    warm_pages(device, region // PAGE_BYTES)
    cmmh = topo.node("cmmh")
    metrics = {
        "cmmh_serialized_read_ns": _chase_serialized_ns(device, region, seed),
        "cmmh_ld_amortized_ns": float(np.median(_fenced_batches(
            engine, cmmh, AccessKind.TEMPORAL_LOAD, region, n_batches, seed + 1))),
        "cmmh_st_amortized_ns": float(np.median(_fenced_batches(
            engine, cmmh, AccessKind.TEMPORAL_STORE, region, n_batches, seed + 2))),
        "cmmh_ntst_amortized_ns": float(np.median(_fenced_batches(
            engine, cmmh, AccessKind.NON_TEMPORAL_STORE, region, n_batches,
            seed + 3))),
    }
    for n_idx, name in enumerate(("ddr5_local", "ddr5_remote")):
        node = topo.node(name)
        t = 0
        lat = []
        rng = np.random.default_rng((seed, 100 + n_idx))
        addrs = rng.integers(0, region // LINE_BYTES, 2048) * LINE_BYTES
        for a in addrs:
            c = engine.issue_access(
                AccessRequest(1, AccessKind.TEMPORAL_LOAD, int(a), issue_time=t),
                node=node, window=1)
            lat.append(c - t)
            t = c
        metrics[f"{name}_serialized_read_ns"] = float(np.median(lat))
        metrics[f"{name}_ld_amortized_ns"] = float(np.median(_fenced_batches(
            engine, node, AccessKind.TEMPORAL_LOAD, region, n_batches,
            seed + 4)))

    rows = [{"metric": k, "value_ns": v} for k, v in sorted(metrics.items())]
    baseline = cfg.get("output", "normalize_to")
    if baseline:
        ref = metrics.get(f"{baseline}_serialized_read_ns")
        if ref:
            for row in rows:
                row["normalized"] = row["value_ns"] / ref
    return metrics, rows, []


def run_bandwidth(cfg: ExperimentConfig, seed: int):
    w = cfg.section("workload")
    threads = w.get("threads", list(range(1, 33)))
    per_thread = w.get("lines_per_thread", 2048)
    region = w.get("region_bytes", 64 << 20)
    kind_name = w.get("kind", "ld")
    kind = {"ld": _kernels.KIND_LOAD, "st": _kernels.KIND_STORE,
            "nt-st": _kernels.KIND_NT_STORE}.get(kind_name)
    if kind is None:
        raise ConfigError(f"bandwidth kind must be ld, st or nt-st, "
                          f"got {kind_name!r}", cfg.path, 0)
    host = build_host(cfg)
    rows = []
    n_lines = region // LINE_BYTES
    for t_idx, nthreads in enumerate(threads):
        device = build_device(cfg)
        lat = device.config.latency
        warm_pages(device, region // PAGE_BYTES)
        rng = np.random.default_rng((seed, t_idx))
        pages = (rng.integers(0, n_lines, nthreads * per_thread,
                              dtype=np.int64) * LINE_BYTES) >> 12
        radm = np.zeros(1, np.float64)
        wadm = np.zeros(1, np.float64)
        makespan = _kernels.run_bandwidth(
            kind, pages, nthreads, per_thread, host.mlp_window,
            lat.ii_read, lat.ii_write, host.t_issue_ns, lat.t_post_write,
            device.write_txn_ns, *device.kernel_args(), radm, wadm)
        gbps = nthreads * per_thread * LINE_BYTES / max(1, makespan)
        rows.append({"threads": nthreads, "gbps": gbps})
    peak = max(r["gbps"] for r in rows)
    plateau_from = None
    for i, r in enumerate(rows):
        if all(x["gbps"] >= 0.95 * peak for x in rows[i:]):
            plateau_from = r["threads"]
            break
    metrics = {"kind": kind_name, "max_gbps": peak,
               "plateau_from_threads": plateau_from}
    return metrics, rows, []


def run_tail_sweep(cfg: ExperimentConfig, seed: int):
    w = cfg.section("workload")
    cache_bytes = build_device(cfg).config.cache_capacity_bytes
    mults = w.get("region_mults", [0.25, 0.5, 1.0, 2.0, 4.0])
    batches = w.get("batches_per_size", 200_000)
    width = w.get("batch_width", 16)
    window = w.get("window", 16)
    host = build_host(cfg)
    sizes = [int(m * cache_bytes) for m in mults]
    caught: list[str] = []
    with warnings.catch_warnings(record=True) as wlist:
        warnings.simplefilter("always")
        plan = gen_tail_sweep(sizes, batches, seed)
        caught = [str(x.message) for x in wlist]
    rows = []
    jitter = build_flash(cfg).config.jitter_frac
    for k, size in enumerate(sizes):
        device = build_device(cfg)
        lat = device.config.latency
        warm_pages(device, size // PAGE_BYTES)
        lines = plan.batch_lines(k)
        pages = (lines >> 6).ravel().astype(np.int64)
        if jitter > 0:
            device.set_service_jitter(jitter, pages.size + 16,
                                      (seed, k, 0x5EED))
        out_ns = np.zeros(batches, np.int64)
        out_fr = np.zeros(batches, np.int64)
        radm = np.zeros(1, np.float64)
        _kernels.run_read_batches(pages, width, window, 0, lat.ii_read,
                                  host.t_issue_ns, *device.kernel_args(),
                                  radm, out_ns, out_fr)
        s = summarize(out_ns)
        worst = int(np.argmax(out_ns))
        rows.append({
            "region_bytes": size,
            "region_mult": mults[k],
            "count": s.count,
            "median_ns": s.median_ns,
            "p9999_ns": s.p9999_ns,
            "p99999_ns": s.p99999_ns if p99999_supported(s.count) else None,
            "max_ns": s.max_ns,
            "flash_reads_in_max_batch": int(out_fr[worst]),
            "hit_rate": device.hit_rate(),
        })
    metrics = {"cache_bytes": cache_bytes,
               "flash_read_service_ns": build_flash(cfg).config.read_service_ns}
    return metrics, rows, caught


def run_hit_rate(cfg: ExperimentConfig, seed: int):
    w = cfg.section("workload")
    mults = w.get("footprint_mults", HIT_RATE_FOOTPRINT_MULTS)
    n_lookups = w.get("n_lookups", 1_000_000)
    rows = []
    for k, mult in enumerate(mults):
        device = build_device(cfg)
        cap_pages = device.config.cache_capacity_bytes // PAGE_BYTES
        fp_pages = max(1, int(round(mult * cap_pages)))
        footprint = fp_pages * PAGE_BYTES
        warm_pages(device, fp_pages)
        trace = gen_irregular(footprint, n_lookups, seed + k)
        _kernels.run_access_stream(trace.pages(), trace.writes(),
                                   *device.cache_args())
        rows.append({"footprint_bytes": footprint, "footprint_mult": mult,
                     "hit_rate": device.hit_rate()})
    metrics = {"n_lookups": n_lookups}
    return metrics, rows, []


def run_kv_hit_rate(cfg: ExperimentConfig, seed: int):
    w = cfg.section("workload")
    patterns = w.get("patterns", ["fillseq", "fillrandom"])
    n_ops = w.get("n_ops", 200_000)
    value_size = w.get("value_size", 100)
    rows = []
    for pattern in patterns:
        device = build_device(cfg)
        footprint = w.get("footprint_bytes",
                          8 * device.config.cache_capacity_bytes)
        trace = gen_kv(pattern, n_ops, value_size, seed, footprint=footprint)
        _kernels.run_access_stream(trace.pages(), trace.writes(),
                                   *device.cache_args())
        rows.append({"pattern": pattern, "n_ops": n_ops,
                     "hit_rate": device.hit_rate(),
                     "dirty_evictions": device.evictions_dirty})
    metrics = {r["pattern"]: r["hit_rate"] for r in rows}
    return metrics, rows, []


def run_wal_accounting(cfg: ExperimentConfig, seed: int):
    w = cfg.section("workload")
    n_stores = w.get("n_stores", 10_000)
    max_ops = w.get("max_region_ops", 64)
    ops = [pers.store(0x1000 + 8 * i, i % (1 << 16)) for i in range(n_stores)]
    metrics = pers.wal_comparison(ops, max_region_ops=max_ops)
    rows = [dict(metrics)]
    return metrics, rows, []


def run_crash_replay(cfg: ExperimentConfig, seed: int):
    w = cfg.section("workload")
    scenario = w.get("scenario", "both")
    metrics: dict = {}
    rows = []
    if scenario in ("linked_list", "both"):
        trace, init, addrs = pers.linked_list_insert_scenario()
        oracle = pers.crash_free_image(trace, init)
        plain = pers.execute(trace, None, init, pers.Mode.PLAIN)
        head_line = addrs["head"] - addrs["head"] % LINE_BYTES
        plan = pers.CrashPlan(len(trace), None, (head_line,))
        image = pers.inject_crash(plain, plan)
        v = pers.verify(image, oracle)
        metrics["linked_list_divergent_addr"] = v.first_divergent_addr
        metrics["linked_list_expected_addr"] = addrs["new_next"]
        rows.append({"scenario": "linked_list_no_replay",
                     "consistent": v.consistent,
                     "divergent_addr": v.first_divergent_addr})
        regions = pers.form_regions(trace)
        idem = pers.execute(trace, regions, init, pers.Mode.IDEMPOTENT)
        image2 = pers.inject_crash(idem, plan)
        final = pers.recover_replay(image2, trace, regions)
        v2 = pers.verify(final.domain.flash_snapshot(), oracle)
        metrics["linked_list_replay_consistent"] = v2.consistent
        rows.append({"scenario": "linked_list_replay",
                     "consistent": v2.consistent,
                     "divergent_addr": v2.first_divergent_addr})
    if scenario in ("random", "both"):
        n_plans = w.get("n_plans", 1000)
        if "trace_file" in w:
            with open(w["trace_file"], encoding="utf-8") as f:
                trace = pers.parse_trace_text(f.read())
        else:
            trace = pers.gen_random_ops(w.get("n_ops", 200), seed)
        budget = w.get("gpf_budget_bytes")
        regions = pers.form_regions(trace)
        oracle = pers.crash_free_image(trace)
        run = pers.execute(trace, regions, None, pers.Mode.IDEMPOTENT)
        plans = pers.gen_random_crash_plans(trace, n_plans, seed + 1, budget)
        ok = 0
        for plan in plans:
            image = pers.inject_crash(run, plan)
            final = pers.recover_replay(image, trace, regions)
            if pers.verify(final.domain.flash_snapshot(), oracle).consistent:
                ok += 1
        metrics["random_plans"] = n_plans
        metrics["random_consistent"] = ok
        rows.append({"scenario": "random_replay", "n_plans": n_plans,
                     "consistent_count": ok})
    return metrics, rows, []


RUNNERS = {
    "calibration": run_calibration,
    "bandwidth": run_bandwidth,
    "tail_sweep": run_tail_sweep,
    "hit_rate": run_hit_rate,
    "kv_hit_rate": run_kv_hit_rate,
    "wal_accounting": run_wal_accounting,
    "crash_replay": run_crash_replay,
}


# -- reports ------------------------------------------------------------------

def report_hash(report: dict) -> str:
    d = {k: v for k, v in report.items()
         if k not in ("timestamp", "determinism_hash")}
    blob = json.dumps(d, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def run_experiment(cfg: ExperimentConfig, seed: int | None = None,
                   out_dir: str | None = None, fmt: str = "both") -> dict:
    """Run one experiment; returns (and optionally writes) the report."""
    runner = RUNNERS.get(cfg.kind)
    if runner is None:
        raise ConfigError(f"no runner for kind {cfg.kind!r}", cfg.path, 0)
    used_seed = cfg.seed if seed is None else seed
    metrics, rows, warns = runner(cfg, used_seed)
    report = {
        "experiment": cfg.kind,
        "version": __version__,
        "backend": backend_name(),
        "seed": used_seed,
        "config": cfg.sections,
        "metrics": metrics,
        "rows": rows,
        "warnings": warns,
    }
    report["determinism_hash"] = report_hash(report)
    report["timestamp"] = datetime.now(timezone.utc).isoformat()
    if out_dir:
        write_report(report, out_dir, fmt)
    return report


def write_report(report: dict, out_dir: str, fmt: str = "both") -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.join(out_dir, report["experiment"])
    paths = []
    if fmt in ("json", "both"):
        p = base + ".json"
        with open(p, "w", encoding="utf-8") as f:
            json.dump(report, f, sort_keys=True, indent=2)
            f.write("\n")
        paths.append(p)
    if fmt in ("csv", "both"):
        p = base + ".csv"
        with open(p, "w", encoding="utf-8", newline="") as f:
            rows = report["rows"]
            if rows:
                cols = list(rows[0].keys())
                w = csv.DictWriter(f, fieldnames=cols)
                w.writeheader()
                for r in rows:
                    w.writerow(r)
        paths.append(p)
    return paths


def load_report(path: str) -> dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def compare_reports(a: dict, b: dict, tolerances) -> tuple[bool, list[dict]]:
    """Relative-error check of shared numeric metrics; b is the reference."""
    if a.get("experiment") != b.get("experiment"):
        raise ValueError("reports come from different experiment kinds")
    if isinstance(tolerances, (int, float)):
        tolerances = {"default": float(tolerances)}
    default = tolerances.get("default", 0.05)
    table = []
    all_pass = True
    keys = sorted(set(a.get("metrics", {})) & set(b.get("metrics", {})))
    for k in keys:
        va, vb = a["metrics"][k], b["metrics"][k]
        if not (isinstance(va, (int, float)) and isinstance(vb, (int, float))):
            continue
        if isinstance(va, bool) or isinstance(vb, bool):
            continue
        tol = tolerances.get(k, default)
        err = abs(va - vb) / abs(vb) if vb != 0 else (0.0 if va == 0 else float("inf"))
        ok = err <= tol
        all_pass &= ok
        table.append({"metric": k, "a": va, "b": vb, "rel_err": err,
                      "tol": tol, "pass": ok})
    return all_pass, table
