"""Experiment driver: phase execution, overhead equations, write ledger.

One experiment measures, for a single kernel/pattern/layout-edit/model
combination, the phases

  original  build the version-1 pool by running the generated workload
  retain    manual lane: the migration pass; reset lane: the full rebuild
  manual    the updated program over manually migrated records
  auto      the updated program over lazily extendible records

and derives the two overhead ratios

  overhead_manual_pct = 100 * t_retain / t_manual
  overhead_auto_pct   = 100 * (t_auto - t_manual) / t_manual

An automatic-model run therefore always carries a manual baseline. Timed
phases repeat `trials` times, each from a fresh file copy of the original
pool, and wall-clock means/standard deviations are reported. Everything
except wall time is required to be identical across trials: byte ledgers,
migration counts, and final map content (checked against the in-memory
shadow replay); any drift marks the report invalid.
"""

from __future__ import annotations

import json
import os
import shutil
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

from .. import leds
from ..errors import ConfigError
from ..kernels import make_auto_schema, make_kernel, make_manual_migrator
from ..pool import create_pool, open_pool
from ..retention import (
    AUTOMATIC,
    RESET,
    RetentionPolicy,
    open_with_policy,
)
from .workload import WorkloadConfig, gen_workload, shadow_replay

PHASE_COUNTERS = ("allocations", "translations", "checks", "deep_copies",
                  "ext_bytes", "n_allocs", "n_frees")


@dataclass
class BenchReport:
    kernel: str
    pattern: str
    n: int
    seed: int
    layout: str
    model: str
    trials: int
    ratio: float = 1.0
    t_original: float = 0.0
    t_retain: float | None = None
    t_manual: float | None = None
    t_auto: float | None = None
    t_retain_std: float = 0.0
    t_manual_std: float = 0.0
    t_auto_std: float = 0.0
    overhead_manual_pct: float | None = None
    overhead_auto_pct: float | None = None
    bytes_user: int = 0
    bytes_log: int = 0
    bytes_meta: int = 0
    migrations: int = 0
    migration_bytes: int = 0
    breakdown: dict | None = None
    counters: dict = field(default_factory=dict)
    valid: bool = True
    t_auto_samples: list = field(default_factory=list)  # raw trials, not serialized

    @property
    def migration_bytes_per_node(self) -> float:
        return self.migration_bytes / self.migrations if self.migrations else 0.0

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel,
            "pattern": self.pattern,
            "n": self.n,
            "seed": self.seed,
            "layout": self.layout,
            "model": self.model,
            "trials": self.trials,
            "ratio": self.ratio,
            "t_original": self.t_original,
            "t_retain": self.t_retain,
            "t_manual": self.t_manual,
            "t_auto": self.t_auto,
            "t_retain_std": self.t_retain_std,
            "t_manual_std": self.t_manual_std,
            "t_auto_std": self.t_auto_std,
            "overhead_manual_pct": self.overhead_manual_pct,
            "overhead_auto_pct": self.overhead_auto_pct,
            "bytes": {"user": self.bytes_user, "log": self.bytes_log,
                      "meta": self.bytes_meta},
            "migrations": self.migrations,
            "migration_bytes": self.migration_bytes,
            "migration_bytes_per_node": self.migration_bytes_per_node,
            "breakdown": self.breakdown,
            "counters": self.counters,
            "valid": self.valid,
        }


def _exec_ops(pool, kernel, ops) -> float:
    """Run one phase, one transaction per operation; returns wall seconds."""
    t0 = time.perf_counter()
    for op, key, value in ops:
        with pool.tx_begin() as tx:
            if op == "ins":
                kernel.insert(tx, key, value)
            elif op == "del":
                kernel.remove(tx, key)
            elif kernel.lookup(key) is None:
                kernel.insert(tx, key, value)
            else:
                kernel.remove(tx, key)
    return time.perf_counter() - t0


def _rng_for(cfg: WorkloadConfig, salt: int):
    import random

    return random.Random((cfg.seed << 4) ^ salt)


class _Lane:
    """One lane's original pool, built once, copied per trial."""

    def __init__(self, cfg: WorkloadConfig, mode: str, workdir: Path, ops_orig):
        self.cfg = cfg
        self.mode = mode
        self.workdir = workdir
        self.path = str(workdir / f"orig-{cfg.kernel}-{mode}.pool")
        pool = create_pool(self.path, cfg.layout_name, cfg.pool_capacity())
        if mode == "auto":
            fp = leds.manifest_fingerprint(make_auto_schema(cfg.kernel, None))
            pool.set_schema_fingerprint(fp)
        kernel = make_kernel(pool, cfg.kernel, mode=mode, version=1,
                             rng=_rng_for(cfg, 0x0516))
        kernel.create()
        self.t_original = _exec_ops(pool, kernel, ops_orig)
        pool.close()

    def trial_copy(self, tag: str) -> str:
        dst = str(self.workdir / f"trial-{self.mode}-{tag}.pool")
        shutil.copyfile(self.path, dst)
        return dst

    def cleanup(self) -> None:
        for stale in (self.path,):
            if os.path.exists(stale):
                os.unlink(stale)


def _agg(xs) -> tuple[float, float]:
    return statistics.fmean(xs), statistics.pstdev(xs) if len(xs) > 1 else 0.0


def _auto_policy(cfg: WorkloadConfig, workdir: Path) -> RetentionPolicy:
    """Build the automatic policy through the schema-manifest file format."""
    manifest = str(workdir / f"schema-{cfg.kernel}-{cfg.layout}.json")
    leds.dump_manifest(make_auto_schema(cfg.kernel, cfg.layout), manifest)
    fp = leds.manifest_fingerprint(leds.load_manifest(manifest))
    return RetentionPolicy(AUTOMATIC, cfg.layout_name, layout_version=2,
                           schema_fingerprint=fp)


def _same_across_trials(rows: list[dict]) -> bool:
    return all(r == rows[0] for r in rows[1:])


def run_experiment(cfg: WorkloadConfig) -> BenchReport:
    cfg.validate()
    workdir = Path(cfg.pool_dir)
    workdir.mkdir(parents=True, exist_ok=True)
    ops_orig, ops_upd = gen_workload(cfg.pattern, cfg.n, cfg.seed, cfg.ratio)
    expected = shadow_replay(ops_orig, ops_upd)

    report = BenchReport(cfg.kernel, cfg.pattern, cfg.n, cfg.seed, cfg.layout,
                         cfg.model, cfg.trials, cfg.ratio)
    lanes: list[_Lane] = []
    try:
        if cfg.model == RESET:
            _run_reset(cfg, workdir, ops_orig, ops_upd, expected, report, lanes)
        else:
            _run_manual_baseline(cfg, workdir, ops_orig, ops_upd, expected,
                                 report, lanes)
            if cfg.model == "auto":
                _run_auto(cfg, workdir, ops_orig, ops_upd, expected, report, lanes)
        if report.t_retain is not None and report.t_manual:
            report.overhead_manual_pct = 100.0 * report.t_retain / report.t_manual
        if report.t_auto is not None and report.t_manual:
            report.overhead_auto_pct = (
                100.0 * (report.t_auto - report.t_manual) / report.t_manual
            )
    finally:
        for lane in lanes:
            lane.cleanup()
    return report


def _run_manual_baseline(cfg, workdir, ops_orig, ops_upd, expected, report, lanes):
    lane = _Lane(cfg, "manual", workdir, ops_orig)
    lanes.append(lane)
    report.t_original = lane.t_original
    retains, manuals, rows = [], [], []
    for trial in range(cfg.trials):
        path = lane.trial_copy(f"m{trial}")
        pool = open_pool(path, cfg.layout_name)
        ms = None
        try:
            from ..retention import run_migration

            ms = run_migration(pool, make_manual_migrator(cfg.kernel, cfg.layout))
            kernel = make_kernel(pool, cfg.kernel, mode="manual", version=2,
                                 change=cfg.layout, rng=_rng_for(cfg, 0x0A11))
            kernel.attach()
            manuals.append(_exec_ops(pool, kernel, ops_upd))
            retains.append(ms.duration_s)
            rows.append({
                "nodes_migrated": ms.nodes_migrated,
                "bytes_node_records": ms.bytes_node_records,
                "bytes_user": ms.bytes_user,
                "bytes_log": ms.bytes_log,
                "bytes_meta": ms.bytes_meta,
            })
            if trial == cfg.trials - 1:
                if dict(kernel.scan()) != expected:
                    report.valid = False
                kernel.validate()
        finally:
            pool.close()
            os.unlink(path)
    report.t_retain, report.t_retain_std = _agg(retains)
    report.t_manual, report.t_manual_std = _agg(manuals)
    if not _same_across_trials(rows):
        report.valid = False
    if cfg.model == "manual":
        report.migrations = rows[0]["nodes_migrated"]
        report.migration_bytes = rows[0]["bytes_node_records"]
        report.bytes_user = rows[0]["bytes_user"]
        report.bytes_log = rows[0]["bytes_log"]
        report.bytes_meta = rows[0]["bytes_meta"]
    report.counters["manual"] = rows[0]


def _run_auto(cfg, workdir, ops_orig, ops_upd, expected, report, lanes):
    lane = _Lane(cfg, "auto", workdir, ops_orig)
    lanes.append(lane)
    report.t_original = lane.t_original
    policy = _auto_policy(cfg, workdir)
    autos, rows, ledgers = [], [], []
    for trial in range(cfg.trials):
        path = lane.trial_copy(f"a{trial}")
        pool = open_with_policy(path, policy)
        try:
            if cfg.cache_translations:
                leds.translation_cache(pool, True)
            kernel = make_kernel(pool, cfg.kernel, mode="auto", version=2,
                                 change=cfg.layout, shallow_copy=cfg.shallow_copy,
                                 rng=_rng_for(cfg, 0x0A11))
            kernel.attach()
            before = pool.stats.snapshot()
            autos.append(_exec_ops(pool, kernel, ops_upd))
            delta = pool.stats.delta(before)
            rows.append({k: delta[k] for k in PHASE_COUNTERS})
            ledgers.append({k: delta[k] for k in ("bytes_user", "bytes_log", "bytes_meta")})
            if trial == cfg.trials - 1:
                if dict(kernel.scan()) != expected:
                    report.valid = False
                kernel.validate()
        finally:
            pool.close()
            os.unlink(path)
    report.t_auto, report.t_auto_std = _agg(autos)
    report.t_auto_samples = autos
    if not (_same_across_trials(rows) and _same_across_trials(ledgers)):
        report.valid = False
    report.migrations = rows[0]["allocations"]
    report.migration_bytes = rows[0]["ext_bytes"]
    report.bytes_user = ledgers[0]["bytes_user"]
    report.bytes_log = ledgers[0]["bytes_log"]
    report.bytes_meta = ledgers[0]["bytes_meta"]
    report.counters["auto"] = rows[0]


def _run_reset(cfg, workdir, ops_orig, ops_upd, expected, report, lanes):
    lane = _Lane(cfg, "manual", workdir, ops_orig)
    lanes.append(lane)
    report.t_original = lane.t_original
    rebuilds, manuals, ledgers = [], [], []
    policy = RetentionPolicy(RESET, cfg.layout_name, layout_version=2,
                             create_capacity=cfg.pool_capacity())
    for trial in range(cfg.trials):
        path = lane.trial_copy(f"r{trial}")
        pool = open_with_policy(path, policy)   # discards: version mismatch
        try:
            before = pool.stats.snapshot()
            t0 = time.perf_counter()
            kernel = make_kernel(pool, cfg.kernel, mode="manual", version=2,
                                 change=cfg.layout, rng=_rng_for(cfg, 0x0516))
            kernel.create()
            _exec_ops(pool, kernel, ops_orig)
            rebuilds.append(time.perf_counter() - t0)
            delta = pool.stats.delta(before)
            ledgers.append({k: delta[k] for k in ("bytes_user", "bytes_log", "bytes_meta")})
            manuals.append(_exec_ops(pool, kernel, ops_upd))
            if trial == cfg.trials - 1:
                if dict(kernel.scan()) != expected:
                    report.valid = False
                kernel.validate()
        finally:
            pool.close()
            os.unlink(path)
    report.t_retain, report.t_retain_std = _agg(rebuilds)
    report.t_manual, report.t_manual_std = _agg(manuals)
    if not _same_across_trials(ledgers):
        report.valid = False
    report.bytes_user = ledgers[0]["bytes_user"]
    report.bytes_log = ledgers[0]["bytes_log"]
    report.bytes_meta = ledgers[0]["bytes_meta"]
    report.migration_bytes = ledgers[0]["bytes_user"]
    report.counters["reset"] = ledgers[0]


# ---------------------------------------------------------------------- sweeps

def sweep_dataset_size(cfg: WorkloadConfig,
                       sizes=(100, 1000, 10000, 100000)) -> list[BenchReport]:
    reports = []
    for size in sizes:
        sub = WorkloadConfig(**{**cfg.__dict__, "n": size, "extras": dict(cfg.extras)})
        sub.pool_dir = str(Path(cfg.pool_dir) / f"size-{size}")
        reports.append(run_experiment(sub))
    return reports


def sweep_working_set(cfg: WorkloadConfig,
                      ratios=(0.001, 0.01, 0.1, 1.0)) -> list[BenchReport]:
    if cfg.pattern != "del":
        raise ConfigError("working-set sweep is defined for the del pattern")
    reports = []
    for ratio in ratios:
        sub = WorkloadConfig(**{**cfg.__dict__, "ratio": ratio, "extras": dict(cfg.extras)})
        sub.pool_dir = str(Path(cfg.pool_dir) / f"ratio-{ratio}")
        reports.append(run_experiment(sub))
    return reports


def breakdown_report(cfg: WorkloadConfig) -> BenchReport:
    """Attribute the automatic model's extra cost by differential runs:
    pre-materializing removes allocation+init, the translation cache removes
    translation, the shallow-copy toggle removes deep copies; the remainder
    is the extra indirection. Fractions are normalized.

    Variant trials are interleaved round-robin and aggregated by median, so
    ambient machine load drifts hit every variant alike instead of biasing
    one differential.
    """
    if cfg.model != "auto":
        raise ConfigError("breakdown is defined for the automatic model")
    cfg.validate()
    workdir = Path(cfg.pool_dir)
    workdir.mkdir(parents=True, exist_ok=True)
    ops_orig, ops_upd = gen_workload(cfg.pattern, cfg.n, cfg.seed, cfg.ratio)
    expected = shadow_replay(ops_orig, ops_upd)

    report = BenchReport(cfg.kernel, cfg.pattern, cfg.n, cfg.seed, cfg.layout,
                         cfg.model, cfg.trials, cfg.ratio)
    lanes: list[_Lane] = []
    variants = ["base", "premat", "cached"]
    if not cfg.shallow_copy:
        variants.append("shallow")
    times: dict[str, list[float]] = {v: [] for v in variants}
    counters: dict[str, dict] = {}
    try:
        _run_manual_baseline(cfg, workdir, ops_orig, ops_upd, expected,
                             report, lanes)
        lane = _Lane(cfg, "auto", workdir, ops_orig)
        lanes.append(lane)
        policy = _auto_policy(cfg, workdir)
        for trial in range(cfg.trials):
            for v in variants:
                path = lane.trial_copy(f"bd-{v}{trial}")
                pool = open_with_policy(path, policy)
                try:
                    leds.translation_cache(
                        pool, v == "cached" or cfg.cache_translations)
                    kernel = make_kernel(
                        pool, cfg.kernel, mode="auto", version=2,
                        change=cfg.layout,
                        shallow_copy=(v == "shallow") or cfg.shallow_copy,
                        rng=_rng_for(cfg, 0x0A11))
                    kernel.attach()
                    if v == "premat":
                        for _ in kernel.scan():   # materialize everything, untimed
                            pass
                    before = pool.stats.snapshot()
                    times[v].append(_exec_ops(pool, kernel, ops_upd))
                    delta = pool.stats.delta(before)
                    row = {k: delta[k] for k in PHASE_COUNTERS}
                    if counters.setdefault(v, row) != row:
                        report.valid = False
                    if v == "base" and trial == cfg.trials - 1:
                        if dict(kernel.scan()) != expected:
                            report.valid = False
                finally:
                    pool.close()
                    os.unlink(path)
    finally:
        for l in lanes:
            l.cleanup()

    report.t_auto, report.t_auto_std = _agg(times["base"])
    report.t_auto_samples = times["base"]
    base_row = counters["base"]
    report.migrations = base_row["allocations"]
    report.migration_bytes = base_row["ext_bytes"]
    report.counters["auto"] = base_row
    if report.t_retain is not None and report.t_manual:
        report.overhead_manual_pct = 100.0 * report.t_retain / report.t_manual
    if report.t_manual:
        report.overhead_auto_pct = (
            100.0 * (report.t_auto - report.t_manual) / report.t_manual)

    med = {v: statistics.median(ts) for v, ts in times.items()}
    overhead = max(med["base"] - report.t_manual, 0.0)
    alloc_t = max(med["base"] - med["premat"], 0.0)
    translate_t = max(med["base"] - med["cached"], 0.0)
    deep_t = max(med["base"] - med["shallow"], 0.0) if "shallow" in med else 0.0
    if base_row["deep_copies"] == 0:
        deep_t = 0.0
    other = max(overhead - alloc_t - translate_t - deep_t, 0.0)
    total = alloc_t + translate_t + deep_t + other
    if total <= 0.0:
        report.breakdown = {"alloc": 0.0, "translate": 0.0, "deepcopy": 0.0,
                            "other": 1.0}
    else:
        report.breakdown = {
            "alloc": alloc_t / total,
            "translate": translate_t / total,
            "deepcopy": deep_t / total,
            "other": other / total,
        }
    report.counters["breakdown"] = {
        "translations_base": base_row["translations"],
        "translations_cached": counters["cached"]["translations"],
        "allocations_base": base_row["allocations"],
        "allocations_premat": counters["premat"]["allocations"],
        "deep_copies_base": base_row["deep_copies"],
        "deep_copies_shallow": counters.get("shallow", {}).get("deep_copies", 0),
    }
    return report


# ---------------------------------------------------------------------- output

def emit_report(report, fmt: str, path: str) -> None:
    """Write one report or a sweep series; stable field order, 2-decimal
    percentages in CSV."""
    reports = report if isinstance(report, list) else [report]
    rows = [r.to_dict() for r in reports]
    if fmt == "json":
        payload = rows[0] if not isinstance(report, list) else rows
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return
    if fmt != "csv":
        raise ConfigError(f"unknown report format {fmt!r}")
    cols = ["kernel", "pattern", "n", "seed", "layout", "model", "trials", "ratio",
            "t_original", "t_retain", "t_manual", "t_auto",
            "overhead_manual_pct", "overhead_auto_pct",
            "bytes_user", "bytes_log", "bytes_meta",
            "migrations", "migration_bytes", "migration_bytes_per_node",
            "breakdown_alloc", "breakdown_translate", "breakdown_deepcopy",
            "breakdown_other", "valid"]

    def cell(row, col):
        if col.startswith("bytes_"):
            return str(row["bytes"][col[6:]])
        if col.startswith("breakdown_"):
            bd = row["breakdown"]
            return "" if bd is None else f"{bd[col[10:]]:.4f}"
        val = row[col]
        if col.startswith("overhead_"):
            return "" if val is None else f"{val:.2f}"
        if isinstance(val, float):
            return f"{val:.6f}"
        return "" if val is None else str(val)

    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(cell(row, c) for c in cols) + "\n")
