"""Trace generators (attacks, tRC combinations, normal workloads) and trace I/O."""
from __future__ import annotations

import enum
import io
from dataclasses import dataclass

import numpy as np

from .dram import CommandKind, CommandTrace, NO_ROW, TimingConfig
from .errors import ConfigError, ParseError


class AttackMode(str, enum.Enum):
    SINGLE = "single"
    DOUBLE = "double"
    MULTI = "multi"


@dataclass(frozen=True)
class AttackSpec:
    n_aggressors: int = 50
    trc: int = 60
    mode: AttackMode = AttackMode.MULTI
    duration: int = 128_000_000
    bank: int = 0
    # first aggressor row; for double-sided attacks this is the victim row
    row_base: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", AttackMode(self.mode))
        if self.n_aggressors < 1:
            raise ConfigError("n_aggressors must be >= 1")
        if self.duration <= 0:
            raise ConfigError("duration must be > 0")
        if self.mode == AttackMode.DOUBLE and self.row_base < 1:
            raise ConfigError("double-sided victim row must be >= 1")


def attack_rows(spec: AttackSpec) -> np.ndarray:
    if spec.mode == AttackMode.SINGLE:
        return np.array([spec.row_base], dtype=np.int64)
    if spec.mode == AttackMode.DOUBLE:
        return np.array([spec.row_base - 1, spec.row_base + 1], dtype=np.int64)
    return spec.row_base + np.arange(spec.n_aggressors, dtype=np.int64)


def gen_attack(spec: AttackSpec, timing: TimingConfig | None = None) -> CommandTrace:
    timing = timing or TimingConfig()
    if spec.trc < timing.t_rc_min:
        raise ConfigError(f"trc {spec.trc} below tRCmin {timing.t_rc_min}")
    n = spec.duration // spec.trc
    times = np.arange(n, dtype=np.int64) * spec.trc
    pool = attack_rows(spec)
    rows = pool[np.arange(n) % len(pool)]
    return CommandTrace.from_acts(times, rows, spec.bank, duration=spec.duration)


SHORT_POOL = (60, 100)


@dataclass(frozen=True)
class ComboSpec:
    n_distinct: int = 1
    total_acts: int | None = None
    trc_pool: tuple[int, int] = SHORT_POOL
    seed: int = 0
    # alternative to total_acts: emit ACTs until this time is reached
    duration: int | None = None
    values: tuple[int, ...] | None = None
    n_rows: int = 8
    bank: int = 0

    def __post_init__(self):
        if self.n_distinct < 1:
            raise ConfigError("n_distinct must be >= 1")
        if self.total_acts is None and self.duration is None:
            raise ConfigError("combo needs total_acts or duration")
        if self.total_acts is not None and self.n_distinct > self.total_acts:
            raise ConfigError("n_distinct must not exceed total_acts")
        lo, hi = self.trc_pool
        if lo > hi:
            raise ConfigError("trc_pool must be (low, high)")


def combo_values(spec: ComboSpec) -> np.ndarray:
    """The gap sequence of one period, drawn with replacement from the pool."""
    if spec.values is not None:
        return np.asarray(spec.values, dtype=np.int64)
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.trc_pool
    return rng.integers(lo, hi + 1, size=spec.n_distinct).astype(np.int64)


def gen_trc_combo(spec: ComboSpec, timing: TimingConfig | None = None) -> CommandTrace:
    timing = timing or TimingConfig()
    vals = combo_values(spec)
    if vals.min() < timing.t_rc_min:
        raise ConfigError("combo values below tRCmin")
    if spec.total_acts is not None:
        n = spec.total_acts
    else:
        # enough gaps to cover the duration, trimmed below
        n = int(spec.duration // vals.min()) + 2
    gaps = np.resize(vals, max(n - 1, 0))
    times = np.concatenate(([0], np.cumsum(gaps))).astype(np.int64)[:n]
    if spec.duration is not None:
        times = times[times < spec.duration]
    rows = np.arange(len(times), dtype=np.int64) % spec.n_rows
    duration = spec.duration if spec.duration is not None else (int(times[-1]) if len(times) else 0)
    return CommandTrace.from_acts(times, rows, spec.bank, duration=duration)


@dataclass(frozen=True)
class NormalSpec:
    short_fraction: float = 0.005
    trc_long_range: tuple[int, int] = (110, 1000)
    duration: int | None = None
    seed: int = 0
    n_acts: int | None = None
    n_rows: int = 65536
    bank: int = 0

    def __post_init__(self):
        if not 0.0 <= self.short_fraction <= 1.0:
            raise ConfigError("short_fraction must be in [0, 1]")
        if self.duration is None and self.n_acts is None:
            raise ConfigError("normal workload needs duration or n_acts")
        lo, hi = self.trc_long_range
        if lo > hi:
            raise ConfigError("trc_long_range must be (low, high)")


def gen_normal(spec: NormalSpec, timing: TimingConfig | None = None) -> CommandTrace:
    timing = timing or TimingConfig()
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.trc_long_range
    lo = max(lo, timing.short_trc_max + 1)
    hi = max(hi, lo)
    if spec.n_acts is not None:
        n_gaps = max(spec.n_acts - 1, 0)
    else:
        n_gaps = int(spec.duration // lo) + 1
    gaps = rng.integers(lo, hi + 1, size=n_gaps)
    short = rng.random(n_gaps) < spec.short_fraction
    s_lo, s_hi = timing.t_rc_min, timing.short_trc_max
    gaps[short] = rng.integers(s_lo, s_hi + 1, size=int(short.sum()))
    times = np.concatenate(([0], np.cumsum(gaps))).astype(np.int64)
    if spec.duration is not None:
        times = times[times < spec.duration]
    rows = rng.integers(0, spec.n_rows, size=len(times)).astype(np.int64)
    duration = spec.duration if spec.duration is not None else (int(times[-1]) if len(times) else 0)
    return CommandTrace.from_acts(times, rows, spec.bank, duration=duration)


_KINDS = {k.name: k for k in CommandKind}


def parse_trace(text: str) -> CommandTrace:
    """Parse ``<time_ns> <ACT|REF|RFM> <bank> [<row>]`` lines.

    ``#`` starts a comment. A ``# duration <ns>`` comment, as written by
    :func:`write_trace`, sets the trace duration.
    """
    times, kinds, banks, rows = [], [], [], []
    duration = 0
    last = None
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.rstrip("\n")
        body, _, comment = line.partition("#")
        words = comment.split()
        if len(words) == 2 and words[0] == "duration":
            try:
                duration = int(words[1])
            except ValueError:
                raise ParseError(lineno, line, "bad duration") from None
        fields = body.split()
        if not fields:
            continue
        if len(fields) not in (3, 4):
            raise ParseError(lineno, line, "expected 3 or 4 fields")
        kind = _KINDS.get(fields[1].upper())
        if kind is None:
            raise ParseError(lineno, line, f"unknown command {fields[1]!r}")
        try:
            t = int(fields[0])
            bank = int(fields[2])
            row = int(fields[3]) if len(fields) == 4 else None
        except ValueError:
            raise ParseError(lineno, line, "non-integer field") from None
        if t < 0 or bank < 0 or (row is not None and row < 0):
            raise ParseError(lineno, line, "negative field")
        if kind == CommandKind.ACT and row is None:
            raise ParseError(lineno, line, "ACT needs a row")
        if kind != CommandKind.ACT and row is not None:
            raise ParseError(lineno, line, f"{kind.name} takes no row")
        if last is not None and t < last:
            raise ParseError(lineno, line, "timestamp decreases")
        last = t
        times.append(t)
        kinds.append(int(kind))
        banks.append(bank)
        rows.append(NO_ROW if row is None else row)
    return CommandTrace(times, kinds, banks, rows, duration)


def write_trace(trace: CommandTrace) -> str:
    out = [f"# duration {trace.duration}"]
    names = [k.name for k in CommandKind]
    for t, k, b, r in zip(trace.times.tolist(), trace.kinds.tolist(),
                          trace.banks.tolist(), trace.rows.tolist()):
        if r == NO_ROW:
            out.append(f"{t} {names[k]} {b}")
        else:
            out.append(f"{t} {names[k]} {b} {r}")
    return "\n".join(out) + "\n"


def load_trace(path) -> CommandTrace:
    with open(path) as fh:
        return parse_trace(fh.read())


def save_trace(trace: CommandTrace, path):
    with open(path, "w") as fh:
        fh.write(write_trace(trace))
