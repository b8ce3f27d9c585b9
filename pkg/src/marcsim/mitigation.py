"""Row-hammer mitigation schemes and cure delivery.

Two integration points are modelled. A DRAM-side IP cures victims in the
neighbour-row-refresh (NRR) slot of every ``nrr_per_refresh``-th REF and in
every RFM. An MC-side IP has no NRR path: detected aggressors wait in a cure
queue and ride the next RFM as a directed refresh.

Each side pairs with a probabilistic scheme (DRAM: sample the ACT nearest a
random instant; MC: PARA) or a counter-based one (a Misra-Gries tracker
standing in for Graphene).
"""
from __future__ import annotations

import bisect
import enum
from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence

from .errors import ConfigError


class Side(str, enum.Enum):
    DRAM = "dram"
    MC = "mc"


class Scheme(str, enum.Enum):
    PROBABILISTIC = "probabilistic"
    COUNTER = "counter"


@dataclass(frozen=True)
class ProbabilisticConfig:
    sample_window_multiple: int = 10
    rng_seed: int = 0

    def __post_init__(self):
        if self.sample_window_multiple < 1:
            raise ConfigError("sample_window_multiple must be >= 1")


@dataclass(frozen=True)
class CounterConfig:
    table_size: int = 214
    logic_threshold: int = 1024
    eviction_policy: str = "misra_gries"
    # subtract the threshold on a hit instead of zeroing the counter
    subtract_on_hit: bool = False

    def __post_init__(self):
        if self.table_size < 1 or self.logic_threshold < 1:
            raise ConfigError("table_size and logic_threshold must be >= 1")
        if self.eviction_policy != "misra_gries":
            raise ConfigError(f"unknown eviction policy {self.eviction_policy!r}")


# alternative tracker sizing: 2^14 entries
TABLE_SIZE_2POW14 = 16384


@dataclass(frozen=True)
class ParaConfig:
    probability: float = 0.01
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 < self.probability <= 1:
            raise ConfigError("PARA probability must be in (0, 1]")


def prob_sample(window: tuple[float, float], acts: Sequence[tuple[int, int]], rng):
    """Row of the ACT nearest a uniform instant in ``window``.

    One uniform draw is consumed per call, even for an empty window, so a
    slot always costs the same amount of randomness. Ties go to the earlier ACT.
    """
    start, end = window
    t_star = start + rng.random() * (end - start)
    if not acts:
        return None
    times = [a[0] for a in acts]
    i = bisect.bisect_left(times, t_star)
    if i == 0:
        return acts[0][1]
    if i == len(acts):
        return acts[-1][1]
    before, after = times[i - 1], times[i]
    if t_star - before <= after - t_star:
        return acts[i - 1][1]
    return acts[i][1]


class TrackerTable:
    """Bounded activation-count table with Misra-Gries replacement."""

    def __init__(self, config: CounterConfig | None = None):
        self.config = config or CounterConfig()
        self.entries: dict[int, int] = {}
        self.decrements = 0

    def __len__(self):
        return len(self.entries)

    def __contains__(self, row):
        return row in self.entries

    def update(self, row: int):
        """Count one ACT of ``row``; returns the row if it just reached the threshold."""
        entries = self.entries
        c = entries.get(row)
        if c is not None:
            c += 1
        elif len(entries) < self.config.table_size:
            c = 1
        else:
            self.decrements += 1
            self.entries = {r: n - 1 for r, n in entries.items() if n > 1}
            return None
        thr = self.config.logic_threshold
        if c >= thr:
            entries[row] = c - thr if self.config.subtract_on_hit else 0
            return row
        entries[row] = c
        return None


def counter_update(table: TrackerTable, row: int, config: CounterConfig | None = None):
    if config is not None and config is not table.config:
        table.config = config
    hit = table.update(row)
    return table, hit


class CureQueue:
    """FIFO of aggressor rows awaiting a neighbour refresh; no duplicates."""

    def __init__(self):
        self._rows: OrderedDict[int, None] = OrderedDict()

    def push(self, row: int) -> bool:
        if row in self._rows:
            return False
        self._rows[row] = None
        return True

    def pop(self):
        if not self._rows:
            return None
        return self._rows.popitem(last=False)[0]

    def __len__(self):
        return len(self._rows)

    def __contains__(self, row):
        return row in self._rows

    @property
    def pending(self) -> list[int]:
        return list(self._rows)


def neighbours(row: int, blast_radius: int = 1, min_row: int = 0,
               max_row: int | None = None) -> list[int]:
    out = []
    for d in range(1, blast_radius + 1):
        for r in (row - d, row + d):
            if r < min_row or (max_row is not None and r > max_row):
                continue
            out.append(r)
    return sorted(out)


def nrr_execute(queue: CureQueue, ledger=None, blast_radius: int = 1,
                min_row: int = 0, max_row: int | None = None) -> list[int]:
    """Spend one cure slot: pop one aggressor and refresh its neighbours."""
    aggressor = queue.pop()
    if aggressor is None:
        return []
    rows = neighbours(aggressor, blast_radius, min_row, max_row)
    if ledger is not None:
        ledger.record_cure(rows)
    return rows


def para_on_act(row: int, config: ParaConfig, rng):
    """With probability p, request a neighbour refresh around ``row``."""
    if rng.random() < config.probability:
        return row
    return None


@dataclass(frozen=True)
class MitigationConfig:
    side: Side = Side.DRAM
    scheme: Scheme = Scheme.PROBABILISTIC
    enabled: bool = True
    probabilistic: ProbabilisticConfig = ProbabilisticConfig()
    counter: CounterConfig = CounterConfig()
    para: ParaConfig = ParaConfig()
    blast_radius: int = 1
    min_row: int = 0
    max_row: int | None = None
    # MC-side PARA refreshes at once instead of waiting for an RFM slot
    immediate_cure: bool = False

    def __post_init__(self):
        object.__setattr__(self, "side", Side(self.side))
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.blast_radius < 1:
            raise ConfigError("blast_radius must be >= 1")

    @property
    def label(self) -> str:
        if self.side == Side.MC:
            return "para" if self.scheme == Scheme.PROBABILISTIC else "graphene"
        return self.scheme.value

    @property
    def stochastic(self) -> bool:
        return self.enabled and self.scheme == Scheme.PROBABILISTIC


@dataclass(frozen=True)
class CurePolicy:
    """Which command slots give the mitigation IP a chance to cure."""

    side: Side
    scheme: Scheme
    nrr_per_refresh: int = 10

    def ref_slot(self, ref_index: int) -> bool:
        """``ref_index`` counts REFs from 1."""
        return self.side == Side.DRAM and ref_index % self.nrr_per_refresh == 0

    def rfm_slot(self) -> bool:
        return True


def attach_policy(side, scheme, nrr_per_refresh: int = 10) -> CurePolicy:
    return CurePolicy(Side(side), Scheme(scheme), nrr_per_refresh)
