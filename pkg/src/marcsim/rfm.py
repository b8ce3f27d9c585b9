"""RFM accounting: per-bank RAA counters against RAAIMT/RAAMMT, and ARFM levels."""
from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field

from .dram import Command, CommandKind
from .errors import ConfigError, NotPending


class ArfmLevel(enum.IntEnum):
    BASE = 0
    A = 1
    B = 2
    C = 3


@dataclass(frozen=True)
class RfmConfig:
    raaimt_base: int = 248
    # None -> successive halving of the base value
    raaimt_a: int | None = None
    raaimt_b: int | None = None
    raaimt_c: int | None = None
    raammt_multiplier: int = 8
    raadec_ref: int | None = None
    raadec_rfm: int | None = None
    rfm_enabled: bool = True
    strict_threshold: bool = False
    scale_raadec_with_level: bool = False

    def __post_init__(self):
        if self.raaimt_base < 1:
            raise ConfigError("raaimt must be >= 1")
        if self.raammt_multiplier < 1:
            raise ConfigError("raammt_mult must be >= 1")
        a, b, c = (self.level_value(lv) for lv in (ArfmLevel.A, ArfmLevel.B, ArfmLevel.C))
        if not (a >= b >= c >= 1):
            raise ConfigError("ARFM thresholds must satisfy A >= B >= C >= 1")
        if self.dec_ref < 0 or self.dec_rfm < 1:
            raise ConfigError("raadec_ref must be >= 0 and raadec_rfm >= 1")

    def level_value(self, level: ArfmLevel) -> int:
        level = ArfmLevel(level)
        if level == ArfmLevel.BASE:
            return self.raaimt_base
        explicit = {ArfmLevel.A: self.raaimt_a, ArfmLevel.B: self.raaimt_b,
                    ArfmLevel.C: self.raaimt_c}[level]
        if explicit is not None:
            return explicit
        return max(1, self.raaimt_base >> int(level))

    @property
    def raammt(self) -> int:
        return self.raammt_multiplier * self.raaimt_base

    @property
    def dec_ref(self) -> int:
        return 4 * self.raaimt_base if self.raadec_ref is None else self.raadec_ref

    @property
    def dec_rfm(self) -> int:
        return 4 * self.raaimt_base if self.raadec_rfm is None else self.raadec_rfm

    def rfmth(self, t_rc_min: int) -> int:
        """RFM threshold time, RAAIMT x tRCmin (ns)."""
        return self.raaimt_base * t_rc_min


def effective_raaimt(config: RfmConfig, level: ArfmLevel) -> int:
    return config.level_value(level)


@dataclass
class RfmState:
    raa_cnt: dict[int, int] = field(default_factory=lambda: defaultdict(int))
    active_level: ArfmLevel = ArfmLevel.BASE
    rfm_pending: dict[int, bool] = field(default_factory=lambda: defaultdict(bool))


class RfmEngine:
    """Mutable RFM accounting for one channel.

    ``on_act``/``on_ref``/``issue_rfm``/``set_arfm_level`` mirror the
    controller's bookkeeping; ``act_greedy`` adds the issue-whenever-pending
    policy used by the simulator.
    """

    def __init__(self, config: RfmConfig | None = None):
        self.config = config or RfmConfig()
        self.state = RfmState()
        self.rfm_issued = 0
        self._threshold = self.config.level_value(ArfmLevel.BASE)

    @property
    def level(self) -> ArfmLevel:
        return self.state.active_level

    @property
    def threshold(self) -> int:
        return self._threshold

    def count(self, bank: int) -> int:
        return self.state.raa_cnt[bank]

    def pending(self, bank: int) -> bool:
        return self.state.rfm_pending[bank]

    def _is_pending(self, cnt: int) -> bool:
        if self.config.strict_threshold:
            return cnt > self._threshold
        return cnt >= self._threshold

    def _refresh_pending(self, bank: int):
        self.state.rfm_pending[bank] = self._is_pending(self.state.raa_cnt[bank])

    def _decrement(self, base: int) -> int:
        if not self.config.scale_raadec_with_level:
            return base
        return max(1, base * self._threshold // self.config.raaimt_base)

    def on_act(self, bank: int) -> bool:
        """Count one ACT; returns the bank's pending flag."""
        if not self.config.rfm_enabled:
            return False
        cnt = self.state.raa_cnt[bank] + 1
        if cnt > self.config.raammt:
            cnt = self.config.raammt
        self.state.raa_cnt[bank] = cnt
        pend = self._is_pending(cnt)
        self.state.rfm_pending[bank] = pend
        return pend

    def on_ref(self, bank: int):
        cnt = self.state.raa_cnt[bank] - self._decrement(self.config.dec_ref)
        self.state.raa_cnt[bank] = max(0, cnt)
        self._refresh_pending(bank)

    def issue_rfm(self, bank: int, now: int) -> Command:
        if not self.state.rfm_pending[bank]:
            raise NotPending(f"bank {bank} has no pending RFM")
        cnt = self.state.raa_cnt[bank] - self._decrement(self.config.dec_rfm)
        self.state.raa_cnt[bank] = max(0, cnt)
        self._refresh_pending(bank)
        self.rfm_issued += 1
        return Command(now, CommandKind.RFM, bank)

    def set_arfm_level(self, level: ArfmLevel):
        self.state.active_level = ArfmLevel(level)
        self._threshold = self.config.level_value(self.state.active_level)
        for bank in list(self.state.raa_cnt):
            self._refresh_pending(bank)

    def drain(self, bank: int, now: int) -> list[Command]:
        """Issue RFMs on ``bank`` until it is no longer pending."""
        out = []
        while self.state.rfm_pending[bank]:
            out.append(self.issue_rfm(bank, now))
        return out

    def act_greedy(self, bank: int, now: int) -> list[Command]:
        if self.on_act(bank):
            return self.drain(bank, now)
        return []

    def banks(self) -> list[int]:
        return sorted(self.state.raa_cnt)
