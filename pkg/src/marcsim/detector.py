"""tRC-pattern attack detector.

Measured ACT-to-ACT periods are quantised into four short labels and one
long label. Each tREFi window the detector counts short labels and runs them
through a latch pipeline:

* Point: the first short label fills the point latch; repeats of it raise
  ``point_cmp``; the first different label opens Capture. The point latch
  keeps its value, and its comparator stays active, until a reset.
* Capture: labels that differ from the newest captured entry are appended,
  repeats raise ``capture_cmp``; the k-th slot fills unconditionally and the
  pipeline moves to Monitor.
* Monitor: the next label raises the loop control signal. Incoming labels are
  matched against the captured sequence; a full recurrence while the loop
  signal is up marks the window as looping. Labels that are not part of the
  captured sequence go to the eviction latch; one already held there raises
  ``eviction_flag``. When the eviction count passes the threshold with no
  compare flag up, the pipeline resets to Point.

Long labels occupy buffer slots but never enter the latches. Compare flags
and window signals clear at every window boundary; latch contents persist.
A window counts as attack-like when its short count reaches ``s_trc_th`` and
either a compare flag (dup) or a loop recurrence was seen. Consecutive
attack windows escalate the verdict from level A to level C.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .dram import TimingConfig
from .errors import BelowTrcMin, ConfigError, WindowFull
from .rfm import ArfmLevel


class TrcLabel(enum.IntEnum):
    SHORT_A = 0
    SHORT_B = 1
    SHORT_C = 2
    SHORT_D = 3
    LONG = 4

    @property
    def short(self) -> bool:
        return self != TrcLabel.LONG


LONG = int(TrcLabel.LONG)
N_SHORT_LABELS = 4


class Phase(enum.IntEnum):
    POINT = 0
    CAPTURE = 1
    MONITOR = 2


class Verdict(enum.IntEnum):
    INACTIVE = 0
    LEVEL_A = 1
    LEVEL_B = 2
    LEVEL_C = 3

    def arfm_level(self) -> ArfmLevel:
        return ArfmLevel(int(self))


@dataclass(frozen=True)
class DetectorConfig:
    k: int = 3
    s_trc_th: int = 130
    eviction_threshold: int = 2
    escalation_step: int = 4
    clean_windows_to_reset: int = 2
    short_trc_max: int = 100
    resolution: int = 10
    min_attack_windows: int = 2
    # ">" instead of ">=" for the minimum attack-window count
    strict_window_count: bool = False

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError("k must be >= 2")
        if self.resolution < 1:
            raise ConfigError("resolution must be >= 1")
        if self.s_trc_th < 0 or self.eviction_threshold < 0:
            raise ConfigError("thresholds must be non-negative")
        if self.escalation_step < 1 or self.clean_windows_to_reset < 1:
            raise ConfigError("escalation_step and clean_windows_to_reset must be >= 1")

    @property
    def eviction_capacity(self) -> int:
        return max(1, self.k - 2)

    @property
    def first_attack_count(self) -> int:
        return self.min_attack_windows + (1 if self.strict_window_count else 0)


def buffer_capacity(timing: TimingConfig) -> int:
    return timing.t_refi // timing.t_rc_min


def encode_trc(trc_ns: int, config: DetectorConfig | None = None,
               timing: TimingConfig | None = None) -> TrcLabel:
    config = config or DetectorConfig()
    t_min = (timing or TimingConfig()).t_rc_min
    if trc_ns < t_min:
        raise BelowTrcMin(f"tRC {trc_ns} ns below tRCmin {t_min} ns")
    if trc_ns > config.short_trc_max:
        return TrcLabel.LONG
    return TrcLabel(min((trc_ns - t_min) // config.resolution, N_SHORT_LABELS - 1))


def encode_many(trc_ns, config: DetectorConfig | None = None,
                timing: TimingConfig | None = None) -> np.ndarray:
    """Vectorised :func:`encode_trc`; returns int8 label codes."""
    config = config or DetectorConfig()
    t_min = (timing or TimingConfig()).t_rc_min
    trc = np.asarray(trc_ns, dtype=np.int64)
    if len(trc) and trc.min() < t_min:
        raise BelowTrcMin(f"tRC {int(trc.min())} ns below tRCmin {t_min} ns")
    labels = np.minimum((trc - t_min) // config.resolution, N_SHORT_LABELS - 1)
    labels[trc > config.short_trc_max] = LONG
    return labels.astype(np.int8)


class WindowSummary(NamedTuple):
    short_count: int
    dup_signal: bool
    loop_signal: bool


class ShortTrcBuffer:
    def __init__(self, capacity: int):
        self.capacity = capacity
        self.entries: list[int] = []
        self.short_count = 0

    def push(self, label: int):
        if len(self.entries) >= self.capacity:
            raise WindowFull(f"more than {self.capacity} labels in one tREFi window")
        self.entries.append(int(label))
        if label != LONG:
            self.short_count += 1

    def extend(self, labels: np.ndarray):
        if len(self.entries) + len(labels) > self.capacity:
            raise WindowFull(f"more than {self.capacity} labels in one tREFi window")
        self.entries.extend(labels.tolist())
        self.short_count += int(np.count_nonzero(labels != LONG))

    def clear(self):
        self.entries.clear()
        self.short_count = 0

    def __len__(self):
        return len(self.entries)


@dataclass
class DetectorState:
    buffer: ShortTrcBuffer
    phase: Phase = Phase.POINT
    point_latch: int | None = None
    capture_latch: list[int] = field(default_factory=list)
    eviction_latch: list[int] = field(default_factory=list)
    eviction_count: int = 0
    match_pos: int = 0
    point_cmp: bool = False
    capture_cmp: bool = False
    eviction_flag: bool = False
    loop: bool = False
    loop_armed: bool = False
    dup_seen: bool = False
    loop_seen: bool = False
    attack_windows: int = 0
    clean_windows: int = 0
    verdict: Verdict = Verdict.INACTIVE

    @property
    def any_flag(self) -> bool:
        return self.point_cmp or self.capture_cmp or self.eviction_flag

    def latch_key(self) -> tuple:
        return (int(self.phase), self.point_latch, tuple(self.capture_latch),
                tuple(self.eviction_latch), self.eviction_count, self.match_pos,
                self.loop, self.loop_armed)

    def load_latches(self, key: tuple):
        (phase, self.point_latch, capture, eviction, self.eviction_count,
         self.match_pos, self.loop, self.loop_armed) = key
        self.phase = Phase(phase)
        self.capture_latch = list(capture)
        self.eviction_latch = list(eviction)


class MarcDetector:
    """One detector instance per channel; never looks at row addresses."""

    def __init__(self, config: DetectorConfig | None = None,
                 timing: TimingConfig | None = None):
        self.config = config or DetectorConfig()
        self.timing = timing or TimingConfig()
        self.state = DetectorState(ShortTrcBuffer(buffer_capacity(self.timing)))
        self._memo: dict[tuple, tuple] = {}

    @property
    def capacity(self) -> int:
        return self.state.buffer.capacity

    def encode(self, trc_ns: int) -> TrcLabel:
        return encode_trc(trc_ns, self.config, self.timing)

    def push_trc(self, label: int):
        self.state.buffer.push(label)

    def capture_step(self, label: int):
        """Advance the latch pipeline by one label (long labels are ignored)."""
        if label == LONG:
            return
        s = self.state
        if s.phase == Phase.POINT:
            if s.point_latch is None:
                s.point_latch = label
            elif label == s.point_latch:
                s.point_cmp = True
            else:
                s.capture_latch = [label]
                s.phase = Phase.CAPTURE
        else:
            # the point comparator keeps watching after the point process ends
            if label == s.point_latch:
                s.point_cmp = True
            if s.phase == Phase.CAPTURE:
                self._capture_fill(label)
            else:
                self._monitor_step(label)
        if s.any_flag:
            s.dup_seen = True

    def _capture_fill(self, label: int):
        s = self.state
        if len(s.capture_latch) < self.config.k - 1:
            if label == s.capture_latch[-1]:
                s.capture_cmp = True
            else:
                s.capture_latch.append(label)
        else:
            # last slot fills regardless of similarity
            s.capture_latch.append(label)
            s.phase = Phase.MONITOR
            s.match_pos = 0
            s.loop_armed = True

    def _monitor_step(self, label: int):
        s = self.state
        cfg = self.config
        if s.loop_armed:
            s.loop = True
            s.loop_armed = False
        seq = s.capture_latch
        if label == seq[s.match_pos]:
            s.match_pos += 1
            if s.match_pos == len(seq):
                s.match_pos = 0
                s.eviction_count = 0
                if s.loop:
                    s.loop_seen = True
            return
        s.match_pos = 1 if label == seq[0] else 0
        if label in seq:
            return
        if label in s.eviction_latch:
            s.eviction_flag = True
        else:
            s.eviction_latch.append(label)
            if len(s.eviction_latch) > cfg.eviction_capacity:
                s.eviction_latch.pop(0)
            s.eviction_count += 1
        if s.eviction_count > cfg.eviction_threshold:
            self.reset()

    def reset(self, full: bool = False) -> bool:
        """Return the latch pipeline to Point.

        A pending compare flag suppresses a non-full reset. A full reset also
        clears the verdict and the attack-window counters.
        """
        s = self.state
        if not full and s.any_flag:
            return False
        s.phase = Phase.POINT
        s.point_latch = None
        s.capture_latch = []
        s.eviction_latch = []
        s.eviction_count = 0
        s.match_pos = 0
        s.point_cmp = s.capture_cmp = s.eviction_flag = False
        s.loop = s.loop_armed = False
        if full:
            s.buffer.clear()
            s.dup_seen = s.loop_seen = False
            s.attack_windows = 0
            s.clean_windows = 0
            s.verdict = Verdict.INACTIVE
        return True

    def finalize_window(self) -> WindowSummary:
        s = self.state
        summary = WindowSummary(s.buffer.short_count, s.dup_seen or s.any_flag, s.loop_seen)
        s.buffer.clear()
        s.point_cmp = s.capture_cmp = s.eviction_flag = False
        s.dup_seen = s.loop_seen = False
        return summary

    def is_attack_window(self, summary: WindowSummary) -> bool:
        return (summary.short_count >= self.config.s_trc_th
                and (summary.dup_signal or summary.loop_signal))

    def inspect(self, summary: WindowSummary) -> Verdict:
        s = self.state
        cfg = self.config
        if self.is_attack_window(summary):
            s.attack_windows += 1
            s.clean_windows = 0
        else:
            s.clean_windows += 1
            if s.clean_windows >= cfg.clean_windows_to_reset:
                s.attack_windows = 0
        first = cfg.first_attack_count
        n = s.attack_windows
        if n >= first + 2 * cfg.escalation_step:
            s.verdict = Verdict.LEVEL_C
        elif n >= first + cfg.escalation_step:
            s.verdict = Verdict.LEVEL_B
        elif n >= first:
            s.verdict = Verdict.LEVEL_A
        else:
            s.verdict = Verdict.INACTIVE
        return s.verdict

    def feed(self, label: int):
        self.push_trc(label)
        self.capture_step(label)

    def run_window(self, labels) -> tuple[WindowSummary, Verdict]:
        """Consume one tREFi window of labels, then finalize and inspect it.

        The latch pipeline is deterministic, so its effect on a window is
        memoised on (latch state, label sequence); periodic traces replay
        cached windows instead of stepping every label.
        """
        labels = np.asarray(labels, dtype=np.int8)
        s = self.state
        s.buffer.extend(labels)
        short = labels[labels != LONG]
        key = (s.latch_key(), s.point_cmp, s.capture_cmp, s.eviction_flag,
               s.dup_seen, s.loop_seen, short.tobytes())
        hit = self._memo.get(key)
        if hit is None:
            for lab in short.tolist():
                self.capture_step(lab)
            hit = (s.latch_key(), s.point_cmp, s.capture_cmp, s.eviction_flag,
                   s.dup_seen, s.loop_seen)
            if len(self._memo) < 200_000:
                self._memo[key] = hit
        else:
            s.load_latches(hit[0])
            s.point_cmp, s.capture_cmp, s.eviction_flag, s.dup_seen, s.loop_seen = hit[1:]
        summary = self.finalize_window()
        return summary, self.inspect(summary)


@dataclass
class WindowRecord:
    window_index: int
    short_count: int
    dup: bool
    loop: bool
    verdict: Verdict


def run_detector(act_times, act_banks, duration: int,
                 config: DetectorConfig | None = None,
                 timing: TimingConfig | None = None) -> list[WindowRecord]:
    """Run a fresh detector over an ACT stream and return one record per tREFi window.

    Window ``w`` covers ``[w*tREFi, (w+1)*tREFi)``; a label belongs to the
    window in which its closing ACT falls. The verdict in a record is the one
    produced by inspecting that window.
    """
    from .dram import per_bank_gaps

    timing = timing or TimingConfig()
    det = MarcDetector(config, timing)
    times = np.asarray(act_times, dtype=np.int64)
    gaps = per_bank_gaps(times, act_banks)
    has_gap = gaps >= 0
    labels = encode_many(gaps[has_gap], det.config, timing)
    label_times = times[has_gap]
    n_windows = max(1, -(-duration // timing.t_refi)) if duration else 1
    if len(label_times):
        n_windows = max(n_windows, int(label_times[-1] // timing.t_refi) + 1)
    bounds = np.searchsorted(label_times, np.arange(n_windows + 1) * timing.t_refi, "left")
    records = []
    for w in range(n_windows):
        summary, verdict = det.run_window(labels[bounds[w]:bounds[w + 1]])
        records.append(WindowRecord(w, summary.short_count, summary.dup_signal,
                                    summary.loop_signal, verdict))
    return records


def verdict_timeline(records: Iterable[WindowRecord]) -> list[Verdict]:
    return [r.verdict for r in records]


def write_event_log(records: Iterable[WindowRecord], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window_index", "short_count", "dup", "loop", "verdict"])
        for r in records:
            w.writerow([r.window_index, r.short_count, int(r.dup), int(r.loop), r.verdict.name])
