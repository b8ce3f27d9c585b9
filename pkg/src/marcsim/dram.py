"""DRAM timing configuration, the command/trace data model and refresh scheduling.

Times are integer nanoseconds throughout. A :class:`CommandTrace` keeps its
commands column-wise in numpy arrays because attack traces covering a full
refresh window hold millions of ACTs; :class:`Command` objects are produced
on demand for small traces and tests.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, TimingViolation, UnorderedTrace

NO_ROW = -1


class CommandKind(enum.IntEnum):
    ACT = 0
    REF = 1
    RFM = 2


@dataclass(frozen=True)
class TimingConfig:
    """DRAM timing constants (ns). Defaults are LPDDR5 values."""

    t_rc_min: int = 60
    t_refi: int = 15_600
    t_refw: int = 128_000_000
    t_rfc: int = 280
    t_ras: int | None = None
    t_rp: int | None = None
    nrr_per_refresh: int = 10
    short_trc_max: int = 100
    per_bank_refresh: bool = False

    def __post_init__(self):
        if self.t_rc_min <= 0:
            raise ConfigError("t_rc_min must be > 0")
        if self.t_refi <= self.t_rc_min:
            raise ConfigError("t_refi must exceed t_rc_min")
        if self.t_refw < self.t_refi:
            raise ConfigError("t_refw must span at least one t_refi")
        if self.t_ras is not None and self.t_rp is not None:
            if self.t_ras + self.t_rp != self.t_rc_min:
                raise ConfigError("t_ras + t_rp must equal t_rc_min")
        if self.short_trc_max < self.t_rc_min:
            raise ConfigError("short_trc_max must be >= t_rc_min")
        if self.nrr_per_refresh < 1:
            raise ConfigError("nrr_per_refresh must be >= 1")

    @property
    def acts_per_refi(self) -> int:
        return self.t_refi // self.t_rc_min


class Command(NamedTuple):
    time: int
    kind: CommandKind
    bank: int
    row: int | None = None

    def check(self):
        if self.kind == CommandKind.ACT and self.row is None:
            raise ValueError("ACT requires a row")
        if self.kind != CommandKind.ACT and self.row is not None:
            raise ValueError(f"{self.kind.name} carries no row")


@dataclass(eq=False)
class CommandTrace:
    """Time-ordered command stream stored column-wise."""

    times: np.ndarray
    kinds: np.ndarray
    banks: np.ndarray
    rows: np.ndarray
    duration: int = 0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.int64)
        self.kinds = np.asarray(self.kinds, dtype=np.int8)
        self.banks = np.asarray(self.banks, dtype=np.int64)
        self.rows = np.asarray(self.rows, dtype=np.int64)
        n = len(self.times)
        if not (len(self.kinds) == len(self.banks) == len(self.rows) == n):
            raise ValueError("column length mismatch")
        is_act = self.kinds == CommandKind.ACT
        if np.any(is_act & (self.rows < 0)):
            raise ValueError("ACT requires a row")
        if np.any(~is_act & (self.rows != NO_ROW)):
            raise ValueError("REF/RFM carry no row")
        if not self.duration and n:
            self.duration = int(self.times[-1])

    @classmethod
    def from_commands(cls, commands: Iterable[Command], duration: int = 0) -> "CommandTrace":
        commands = list(commands)
        for c in commands:
            Command(*c).check()
        return cls(
            times=[c[0] for c in commands],
            kinds=[int(c[1]) for c in commands],
            banks=[c[2] for c in commands],
            rows=[NO_ROW if len(c) < 4 or c[3] is None else c[3] for c in commands],
            duration=duration,
        )

    @classmethod
    def from_acts(cls, times, rows, bank=0, duration: int = 0) -> "CommandTrace":
        times = np.asarray(times, dtype=np.int64)
        banks = np.broadcast_to(np.asarray(bank, dtype=np.int64), times.shape).copy()
        return cls(times, np.zeros(len(times), np.int8), banks, rows, duration)

    @classmethod
    def empty(cls, duration: int = 0) -> "CommandTrace":
        return cls([], [], [], [], duration)

    def __len__(self):
        return len(self.times)

    def __iter__(self) -> Iterator[Command]:
        for t, k, b, r in zip(self.times.tolist(), self.kinds.tolist(),
                              self.banks.tolist(), self.rows.tolist()):
            yield Command(t, CommandKind(k), b, None if r == NO_ROW else r)

    @property
    def commands(self) -> list[Command]:
        return list(self)

    def __eq__(self, other):
        if not isinstance(other, CommandTrace):
            return NotImplemented
        return (self.duration == other.duration
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.kinds, other.kinds)
                and np.array_equal(self.banks, other.banks)
                and np.array_equal(self.rows, other.rows))

    def select(self, mask) -> "CommandTrace":
        return CommandTrace(self.times[mask], self.kinds[mask], self.banks[mask],
                            self.rows[mask], self.duration)

    def acts(self) -> "CommandTrace":
        return self.select(self.kinds == CommandKind.ACT)

    def count(self, kind: CommandKind) -> int:
        return int(np.count_nonzero(self.kinds == kind))


@dataclass
class TrcSeries:
    """Per-bank ACT-to-ACT gaps; act_index is the ordinal among ACTs."""

    act_index: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    bank: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    trc: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @property
    def entries(self) -> list[tuple[int, int, int]]:
        return list(zip(self.act_index.tolist(), self.bank.tolist(), self.trc.tolist()))

    def __len__(self):
        return len(self.trc)


def per_bank_gaps(times: np.ndarray, banks: np.ndarray) -> np.ndarray:
    """Gap to the previous ACT on the same bank, -1 for a bank's first ACT."""
    times = np.asarray(times, dtype=np.int64)
    banks = np.asarray(banks, dtype=np.int64)
    gaps = np.full(len(times), -1, dtype=np.int64)
    if len(times) < 2:
        return gaps
    order = np.argsort(banks, kind="stable")
    t_sorted = times[order]
    same_bank = banks[order][1:] == banks[order][:-1]
    d = t_sorted[1:] - t_sorted[:-1]
    gaps[order[1:][same_bank]] = d[same_bank]
    return gaps


def validate_trace(trace: CommandTrace, timing: TimingConfig) -> CommandTrace:
    """Return ``trace`` unchanged if it is ordered and every per-bank ACT gap >= tRCmin."""
    times = trace.times
    if len(times) > 1:
        dec = np.flatnonzero(times[1:] < times[:-1])
        if len(dec):
            raise UnorderedTrace(int(dec[0]) + 1)
    act_idx = np.flatnonzero(trace.kinds == CommandKind.ACT)
    gaps = per_bank_gaps(times[act_idx], trace.banks[act_idx])
    bad = np.flatnonzero((gaps >= 0) & (gaps < timing.t_rc_min))
    if len(bad):
        first = bad[0]
        raise TimingViolation(int(act_idx[first]), int(gaps[first]))
    return trace


def compute_trc_series(trace: CommandTrace) -> TrcSeries:
    act_idx = np.flatnonzero(trace.kinds == CommandKind.ACT)
    banks = trace.banks[act_idx]
    gaps = per_bank_gaps(trace.times[act_idx], banks)
    keep = np.flatnonzero(gaps >= 0)
    return TrcSeries(keep.astype(np.int64), banks[keep], gaps[keep])


def schedule_refresh(timing: TimingConfig, duration: int,
                     banks: Sequence[int] = (0,)) -> list[Command]:
    """REF commands at k*tREFi for k = 1..floor(duration / tREFi).

    One all-bank REF per slot (reported on bank 0) unless the timing
    config asks for per-bank refresh.
    """
    if duration <= 0:
        raise ValueError("duration must be > 0")
    n = duration // timing.t_refi
    ref_banks = list(banks) if timing.per_bank_refresh else [0]
    return [Command(k * timing.t_refi, CommandKind.REF, b)
            for k in range(1, n + 1) for b in ref_banks]


def _as_trace(commands) -> CommandTrace:
    if isinstance(commands, CommandTrace):
        return commands
    return CommandTrace.from_commands(commands)


def merge_streams(act_trace: CommandTrace, refreshes) -> CommandTrace:
    """Merge two time-sorted streams; REF sorts before any other command at equal time."""
    ref = _as_trace(refreshes)
    times = np.concatenate([act_trace.times, ref.times])
    kinds = np.concatenate([act_trace.kinds, ref.kinds])
    banks = np.concatenate([act_trace.banks, ref.banks])
    rows = np.concatenate([act_trace.rows, ref.rows])
    priority = (kinds != CommandKind.REF).astype(np.int8)
    order = np.lexsort((priority, times))
    duration = max(act_trace.duration, ref.duration)
    return CommandTrace(times[order], kinds[order], banks[order], rows[order], duration)


def drop_ref_collisions(act_trace: CommandTrace, refreshes) -> CommandTrace:
    """Remove ACTs whose timestamp coincides with a REF slot."""
    ref = _as_trace(refreshes)
    ref_times = ref.times[ref.kinds == CommandKind.REF]
    if not len(ref_times) or not len(act_trace):
        return act_trace
    hit = np.isin(act_trace.times, ref_times) & (act_trace.kinds == CommandKind.ACT)
    return act_trace.select(~hit)
