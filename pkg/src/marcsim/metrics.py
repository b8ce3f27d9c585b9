"""Max exposure, MER, recognition rate and command-count statistics.

Exposure of a row is the number of ACTs it received since it was last
refreshed, either by a cure (the row was a victim in an NRR/RFM slot) or by
the normal refresh that every row gets once per tREFW. Max exposure is the
peak over all rows and the whole run.

Rows on different banks are distinct; ``row_key`` folds (bank, row) into one
integer for the array code paths.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, asdict
from typing import Iterable, Sequence

import numpy as np

from .detector import Verdict
from .errors import ZeroBaseline

ROW_BITS = 32


def row_key(bank, row):
    return (np.asarray(bank, dtype=np.int64) << ROW_BITS) | np.asarray(row, dtype=np.int64)


class ExposureLedger:
    """Incremental per-row exposure counters."""

    def __init__(self, t_refw: int | None = 128_000_000):
        self.t_refw = t_refw
        self.counts: dict[int, int] = {}
        self.running_max = 0
        self.window = 0

    def _advance(self, time):
        if time is None or not self.t_refw:
            return
        w = int(time) // self.t_refw
        if w > self.window:
            self.counts.clear()
            self.window = w

    def record_act(self, row: int, time: int | None = None):
        self._advance(time)
        c = self.counts.get(row, 0) + 1
        self.counts[row] = c
        if c > self.running_max:
            self.running_max = c
        return self

    def record_cure(self, rows: Iterable[int], time: int | None = None):
        self._advance(time)
        for r in rows:
            if r in self.counts:
                self.counts[r] = 0
        return self

    def max_exposure(self) -> int:
        return self.running_max


def max_exposure(ledger: ExposureLedger) -> int:
    return ledger.max_exposure()


class ActGrouping:
    """Per-tREFW-window grouping of an ACT stream by row key.

    Built once per ACT stream; ``max_exposure`` can then be evaluated for any
    number of cure logs (one per seed or scheme) without re-sorting the ACTs.
    """

    def __init__(self, act_times, act_keys, t_refw: int | None):
        times = np.asarray(act_times, dtype=np.int64)
        keys = np.asarray(act_keys, dtype=np.int64)
        self.n = len(times)
        self.t_refw = t_refw
        if self.n and t_refw:
            wins = times // t_refw
        else:
            wins = np.zeros(self.n, dtype=np.int64)
        # windows are contiguous because ACTs are time-sorted
        self.window_ids, starts = np.unique(wins, return_index=True)
        self.bounds = np.append(starts, self.n).astype(np.int64)
        self.parts = []
        for i in range(len(self.window_ids)):
            lo, hi = self.bounds[i], self.bounds[i + 1]
            uniq, inv, counts = np.unique(keys[lo:hi], return_inverse=True, return_counts=True)
            order = np.argsort(inv, kind="stable")
            pos_sorted = order.astype(np.int64) + lo
            comp = inv[order].astype(np.int64) * (self.n + 1) + pos_sorted
            group_start = np.concatenate(([0], np.cumsum(counts)[:-1])).astype(np.int64)
            self.parts.append((uniq, counts.astype(np.int64), comp, group_start))

    def max_exposure(self, cure_pos, cure_keys, cure_times=None) -> int:
        """Max exposure given cures at ACT positions ``cure_pos``.

        A cure at position p refreshes its row before the p-th ACT (0-based)
        is counted. ``cure_times`` picks the tREFW window of each cure; when
        omitted the window of the ACT at that position is used.
        """
        if self.n == 0:
            return 0
        cure_pos = np.asarray(cure_pos, dtype=np.int64)
        cure_keys = np.asarray(cure_keys, dtype=np.int64)
        if cure_times is not None and self.t_refw:
            cwin = np.asarray(cure_times, dtype=np.int64) // self.t_refw
            cwin_idx = np.searchsorted(self.window_ids, cwin)
            ok = (cwin_idx < len(self.window_ids))
            ok[ok] &= self.window_ids[cwin_idx[ok]] == cwin[ok]
        else:
            cwin_idx = np.searchsorted(self.bounds, cure_pos, "right") - 1
            cwin_idx = np.clip(cwin_idx, 0, len(self.window_ids) - 1)
            ok = np.ones(len(cure_pos), dtype=bool)
        best = 0
        for i, (uniq, counts, comp, gstart) in enumerate(self.parts):
            sel = ok & (cwin_idx == i)
            best = max(best, _window_max(uniq, counts, comp, gstart, self.n,
                                         cure_pos[sel], cure_keys[sel]))
        return int(best)


def _window_max(uniq, counts, comp, gstart, n, cpos, ckeys) -> int:
    if len(cpos):
        g = np.searchsorted(uniq, ckeys)
        g = np.minimum(g, len(uniq) - 1)
        hit = uniq[g] == ckeys
        g, p = g[hit], cpos[hit]
    else:
        g = p = np.zeros(0, dtype=np.int64)
    if len(g) == 0:
        return int(counts.max())
    # number of ACTs of the group that precede each cure
    before = np.searchsorted(comp, g * (n + 1) + p, "left") - gstart[g]
    ng = len(uniq)
    all_g = np.concatenate((np.arange(ng), np.arange(ng), g))
    all_c = np.concatenate((np.zeros(ng, np.int64), counts, before))
    order = np.lexsort((all_c, all_g))
    sg, sc = all_g[order], all_c[order]
    diffs = np.diff(sc)
    same = sg[1:] == sg[:-1]
    return int(diffs[same].max()) if same.any() else 0


def exposure_from_events(act_times, act_keys, cure_pos, cure_keys, t_refw=None,
                         cure_times=None) -> int:
    return ActGrouping(act_times, act_keys, t_refw).max_exposure(cure_pos, cure_keys, cure_times)


def brute_force_exposure(act_times, act_keys, cure_pos, cure_keys, t_refw=None,
                         cure_times=None) -> int:
    """Independent replay with plain dicts, used as a test oracle."""
    by_pos: dict[int, list] = {}
    for i, (p, k) in enumerate(zip(cure_pos, cure_keys)):
        t = None if cure_times is None else int(cure_times[i])
        by_pos.setdefault(int(p), []).append((int(k), t))
    counts: dict[int, int] = {}
    window = None
    best = 0
    n = len(act_times)
    for i in range(n + 1):
        for k, t in by_pos.get(i, ()):
            if t is not None and t_refw:
                if window is not None and t // t_refw != window:
                    continue
            counts[k] = 0
        if i == n:
            break
        t = int(act_times[i])
        if t_refw:
            w = t // t_refw
            if window is not None and w != window:
                counts = {}
            window = w
        k = int(act_keys[i])
        counts[k] = counts.get(k, 0) + 1
        best = max(best, counts[k])
    return best


def mer(value: float, baseline: float) -> float:
    if baseline <= 0:
        raise ZeroBaseline(f"baseline must be > 0, got {baseline}")
    return value / baseline


@dataclass
class DetectionTimeline:
    verdicts: list
    window_ns: int = 15_600
    total_duration: int | None = None

    def __post_init__(self):
        if self.total_duration is None:
            self.total_duration = len(self.verdicts) * self.window_ns

    def window_durations(self) -> np.ndarray:
        n = len(self.verdicts)
        d = np.full(n, self.window_ns, dtype=np.int64)
        if n:
            d[-1] = max(0, self.total_duration - (n - 1) * self.window_ns)
        return d

    @property
    def recognized_duration(self) -> int:
        active = np.array([Verdict(v) != Verdict.INACTIVE for v in self.verdicts], dtype=bool)
        return int(self.window_durations()[active].sum()) if len(active) else 0


def recognition_rate(timeline) -> float:
    if not isinstance(timeline, DetectionTimeline):
        timeline = DetectionTimeline(list(timeline))
    if not timeline.total_duration:
        return 0.0
    return timeline.recognized_duration / timeline.total_duration


@dataclass(frozen=True)
class CommandStats:
    acts: int = 0
    refs: int = 0
    rfms: int = 0
    cures: int = 0

    @property
    def total(self) -> int:
        return self.acts + self.refs + self.rfms

    @property
    def rfm_share(self) -> float:
        return self.rfms / self.total if self.total else 0.0


def command_stats(trace, cures: int | Sequence = 0) -> CommandStats:
    from .dram import CommandKind
    n_cures = cures if isinstance(cures, (int, np.integer)) else len(cures)
    return CommandStats(trace.count(CommandKind.ACT), trace.count(CommandKind.REF),
                        trace.count(CommandKind.RFM), int(n_cures))


REPORT_COLUMNS = ["pattern_id", "side", "scheme", "marc", "trc_ns", "n_aggressors",
                  "max_exposure", "mer", "recognition_rate", "acts", "refs", "rfms", "cures"]


@dataclass
class RunReport:
    pattern_id: str
    side: str
    scheme: str
    marc: bool
    trc_ns: int | None
    n_aggressors: int | None
    max_exposure: float
    mer: float | None
    recognition_rate: float
    acts: int
    refs: int
    rfms: int
    cures: int
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.mer is not None and self.mer < 0:
            raise ValueError("mer must be >= 0")
        if not 0.0 <= self.recognition_rate <= 1.0:
            raise ValueError("recognition_rate must be in [0, 1]")

    @property
    def cmd_counts(self) -> dict:
        return {"act": self.acts, "ref": self.refs, "rfm": self.rfms, "cures": self.cures}

    def row(self) -> dict:
        d = asdict(self)
        d.pop("extra")
        d["marc"] = int(self.marc)
        for k in ("trc_ns", "n_aggressors", "mer"):
            if d[k] is None:
                d[k] = ""
        return d


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return v


def write_reports(reports: Iterable[RunReport], path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        for r in reports:
            w.writerow({k: _fmt(v) for k, v in r.row().items()})


def read_reports(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
