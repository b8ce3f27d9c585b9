"""Sweeps and benchmark suites built on the engine.

Every MER is normalised to the vanilla run of the same side/scheme at
60 ns with 50 aggressors, averaged over the same seed list.
"""
from __future__ import annotations

import csv
import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .detector import DetectorConfig, run_detector
from .dram import TimingConfig
from .engine import SimConfig, build_schedule, evaluate
from .metrics import DetectionTimeline, RunReport, recognition_rate
from .patterns import AttackSpec, ComboSpec, SHORT_POOL, gen_attack, gen_trc_combo

BASELINE_TRC = 60
BASELINE_AGGRESSORS = 50


@dataclass
class PointResult:
    """Seed statistics of one (pattern, side, scheme, marc) point."""

    pattern_id: str
    trc_ns: int | None
    n_aggressors: int | None
    cfg: SimConfig
    exposures: list
    acts: int
    refs: int
    rfms: int
    cures: float
    recognition: float

    @property
    def mean(self) -> float:
        return float(np.mean(self.exposures))

    def report(self, baseline: float | None) -> RunReport:
        m = self.mean / baseline if baseline else None
        return RunReport(self.pattern_id, self.cfg.mitigation.side.value, self.cfg.mitigation.label,
                         self.cfg.marc_enabled, self.trc_ns, self.n_aggressors, self.mean, m,
                         self.recognition, self.acts, self.refs, self.rfms, int(round(self.cures)),
                         extra={"n_seeds": len(self.exposures),
                                "max_exposure_min": min(self.exposures),
                                "max_exposure_max": max(self.exposures)})


def attack_point(cfg: SimConfig, n_aggressors: int, trc: int, seeds, duration: int | None = None,
                 mode: str = "multi") -> PointResult:
    duration = duration or cfg.timing.t_refw
    trace = gen_attack(AttackSpec(n_aggressors, trc, mode, duration), cfg.timing)
    sched = build_schedule(trace, cfg)
    mit = cfg.mitigation
    run_seeds = list(seeds) if mit.stochastic else list(seeds)[:1]
    results = [evaluate(sched, mit, s) for s in run_seeds]
    exposures = [r.max_exposure for r in results]
    if not mit.stochastic:
        exposures = exposures * len(list(seeds))
    return PointResult(f"attack-n{n_aggressors}-t{trc}", trc, n_aggressors, cfg, exposures,
                       sched.n_acts, len(sched.ref_times), len(sched.rfm_pos),
                       float(np.mean([r.cures for r in results])), sched.recognition)


def _point_job(args):
    return attack_point(*args)


def _run_points(jobs_args, jobs: int):
    if jobs and jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_point_job, jobs_args))
    return [_point_job(a) for a in jobs_args]


def baseline_exposure(cfg: SimConfig, seeds, duration=None) -> PointResult:
    vanilla = cfg.replace(marc_enabled=False)
    return attack_point(vanilla, BASELINE_AGGRESSORS, BASELINE_TRC, seeds, duration)


def _sweep(cfg, points, seeds, marc_values, duration, jobs):
    base = baseline_exposure(cfg, seeds, duration)
    args = []
    for n, trc in points:
        for marc in marc_values:
            args.append((cfg.replace(marc_enabled=marc), n, trc, seeds, duration))
    results = _run_points(args, jobs)
    return [r.report(base.mean) for r in results], base


def sweep_trc(cfg: SimConfig, trc_values, seeds, marc_values=(False, True),
              n_aggressors: int = BASELINE_AGGRESSORS, duration=None, jobs: int = 1):
    """MER over tRC at a fixed aggressor count; returns (reports, baseline point)."""
    return _sweep(cfg, [(n_aggressors, t) for t in trc_values], seeds, marc_values, duration, jobs)


def sweep_aggressors(cfg: SimConfig, counts, seeds, marc_values=(False, True),
                     trc: int = BASELINE_TRC, duration=None, jobs: int = 1):
    return _sweep(cfg, [(n, trc) for n in counts], seeds, marc_values, duration, jobs)


TRC_SWEEP = list(range(60, 151, 10))
AGGR_SWEEP = list(range(10, 91, 10))


def benchmark_patterns(trc_values=TRC_SWEEP, aggr_values=AGGR_SWEEP) -> list[tuple[int, int]]:
    """(n_aggressors, trc) of both sweeps, in sweep order.

    The 50-aggressor 60 ns point belongs to both sweeps and is listed twice,
    once per sweep.
    """
    return ([(BASELINE_AGGRESSORS, t) for t in trc_values]
            + [(n, BASELINE_TRC) for n in aggr_values])


def improvement(reports, key: str = "trc_ns") -> dict:
    """vanilla / MARC max-exposure ratio per sweep value."""
    van = {getattr(r, key): r.max_exposure for r in reports if not r.marc}
    marc = {getattr(r, key): r.max_exposure for r in reports if r.marc}
    return {k: van[k] / marc[k] for k in van if k in marc and marc[k] > 0}


SIDECAR_COLUMNS = ["pattern_id", "side", "scheme", "marc", "n_seeds", "max_exposure_mean",
                   "max_exposure_min", "max_exposure_max", "mer", "mer_min", "mer_max"]


def write_sidecar(reports, path, baseline: float):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SIDECAR_COLUMNS)
        for r in reports:
            lo, hi = r.extra.get("max_exposure_min", r.max_exposure), r.extra.get("max_exposure_max", r.max_exposure)
            w.writerow([r.pattern_id, r.side, r.scheme, int(r.marc), r.extra.get("n_seeds", 1),
                        f"{r.max_exposure:.6g}", lo, hi,
                        "" if r.mer is None else f"{r.mer:.6g}",
                        f"{lo / baseline:.6g}" if baseline else "",
                        f"{hi / baseline:.6g}" if baseline else ""])


def detect_only(trace, detector: DetectorConfig | None = None, timing: TimingConfig | None = None):
    """Detector alone over a trace; returns (window records, recognition rate)."""
    timing = timing or TimingConfig()
    acts = trace.acts()
    records = run_detector(acts.times, acts.banks, trace.duration, detector, timing)
    rate = recognition_rate(DetectionTimeline([r.verdict for r in records], timing.t_refi,
                                              max(trace.duration, len(records) * timing.t_refi)))
    return records, rate


BENCH_CASES = list(range(1, 21)) + [50, 70, 90]


@dataclass(frozen=True)
class BenchRow:
    n_distinct: int
    traces: int
    mean_rate: float
    min_rate: float
    max_rate: float


def bench_detect(cases=BENCH_CASES, traces_per_case: int = 100, windows: int = 200,
                 pool=SHORT_POOL, seed: int = 0, detector: DetectorConfig | None = None,
                 timing: TimingConfig | None = None) -> list[BenchRow]:
    """Recognition rate of pinned-seed combo traces per period length."""
    timing = timing or TimingConfig()
    rows = []
    for n in cases:
        rates = []
        for i in range(traces_per_case):
            spec = ComboSpec(n, seed=seed * 1_000_003 + n * 1000 + i, trc_pool=tuple(pool),
                             duration=windows * timing.t_refi)
            trace = gen_trc_combo(spec, timing)
            rates.append(detect_only(trace, detector, timing)[1])
        rows.append(BenchRow(n, traces_per_case, float(np.mean(rates)), float(min(rates)),
                             float(max(rates))))
    return rows


def write_bench(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f.name for f in dataclasses.fields(BenchRow)])
        for r in rows:
            w.writerow([r.n_distinct, r.traces, f"{r.mean_rate:.6g}", f"{r.min_rate:.6g}",
                        f"{r.max_rate:.6g}"])
