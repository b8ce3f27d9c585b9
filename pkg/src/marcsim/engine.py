"""Simulation engine.

A run is split in three phases so sweeps can share work:

* ``build_schedule`` (phase A) depends only on the ACT stream and the
  timing/RFM/detector settings. It runs the detector, turns its verdicts
  into ARFM levels, and places every REF and RFM relative to the ACT stream.
* ``replay_mitigation`` (phase B) runs one mitigation scheme with one seed
  over a schedule and returns the cure log.
* ``ActGrouping.max_exposure`` (phase C) scores a cure log.

``reference_run`` is a plain event-by-event loop over the same model. It is
slow and exists to cross-check the fast paths.

A position ``p`` in a schedule means "after the first p ACTs": an RFM issued
right after ACT ``i`` sits at ``i + 1``, a REF at time ``t`` sits before every
ACT at ``t`` or later.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .detector import DetectorConfig, run_detector
from .dram import CommandKind, CommandTrace, NO_ROW, TimingConfig, drop_ref_collisions, schedule_refresh
from .errors import ConfigError
from .metrics import ActGrouping, DetectionTimeline, ExposureLedger, RunReport, recognition_rate, row_key
from .mitigation import (CureQueue, MitigationConfig, Scheme, Side, TrackerTable, neighbours,
                         prob_sample)
from .rfm import ArfmLevel, RfmConfig, RfmEngine


@dataclass(frozen=True)
class SimConfig:
    timing: TimingConfig = TimingConfig()
    rfm: RfmConfig = RfmConfig()
    detector: DetectorConfig = DetectorConfig()
    mitigation: MitigationConfig = MitigationConfig()
    marc_enabled: bool = True
    # "auto": RFM is issued only when MARC drives the ARFM level
    rfm_mode: str = "auto"
    drop_ref_collisions: bool = True
    rfm_blocking_ns: int = 0

    def __post_init__(self):
        if self.rfm_mode not in ("auto", "on", "off"):
            raise ConfigError(f"rfm_mode must be auto/on/off, got {self.rfm_mode!r}")
        if self.rfm_blocking_ns < 0:
            raise ConfigError("rfm_blocking_ns must be >= 0")

    @property
    def rfm_active(self) -> bool:
        if self.rfm_mode == "on":
            return True
        if self.rfm_mode == "off":
            return False
        return self.marc_enabled

    def replace(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)


@dataclass
class Schedule:
    act_times: np.ndarray
    act_banks: np.ndarray
    act_rows: np.ndarray
    duration: int
    timing: TimingConfig
    ref_times: np.ndarray
    ref_banks: np.ndarray        # -1 = all banks
    ref_pos: np.ndarray
    rfm_times: np.ndarray
    rfm_banks: np.ndarray
    rfm_pos: np.ndarray
    window_levels: np.ndarray    # level in force during each tREFi window
    records: list | None = None
    recognition: float = 0.0
    _grouping: ActGrouping | None = field(default=None, repr=False)

    @property
    def n_acts(self) -> int:
        return len(self.act_times)

    @property
    def banks(self) -> np.ndarray:
        return np.unique(self.act_banks)

    @property
    def act_keys(self) -> np.ndarray:
        return row_key(self.act_banks, self.act_rows)

    @property
    def grouping(self) -> ActGrouping:
        if self._grouping is None:
            self._grouping = ActGrouping(self.act_times, self.act_keys, self.timing.t_refw)
        return self._grouping

    def cure_slots(self, mit: MitigationConfig):
        """(pos, time, bank) of every cure opportunity, in execution order."""
        nrr = self.timing.nrr_per_refresh
        pos, times, banks, kinds = [], [], [], []
        if mit.side == Side.DRAM and len(self.ref_times):
            if self.timing.per_bank_refresh:
                sel = np.zeros(len(self.ref_times), dtype=bool)
                for b in np.unique(self.ref_banks):
                    idx = np.flatnonzero(self.ref_banks == b)
                    sel[idx[nrr - 1::nrr]] = True
            else:
                sel = np.zeros(len(self.ref_times), dtype=bool)
                sel[nrr - 1::nrr] = True
            pos.append(self.ref_pos[sel])
            times.append(self.ref_times[sel])
            banks.append(self.ref_banks[sel])
            kinds.append(np.zeros(int(sel.sum()), np.int8))
        pos.append(self.rfm_pos)
        times.append(self.rfm_times)
        banks.append(self.rfm_banks)
        kinds.append(np.ones(len(self.rfm_pos), np.int8))
        pos, times, banks, kinds = (np.concatenate(x) for x in (pos, times, banks, kinds))
        order = np.lexsort((kinds, times, pos))
        return pos[order], times[order], banks[order]

    def command_trace(self) -> CommandTrace:
        """The full ACT/REF/RFM stream this schedule stands for."""
        n_ref, n_rfm = len(self.ref_times), len(self.rfm_times)
        times = np.concatenate([self.act_times, self.ref_times, self.rfm_times])
        kinds = np.concatenate([np.full(self.n_acts, CommandKind.ACT, np.int8),
                                np.full(n_ref, CommandKind.REF, np.int8),
                                np.full(n_rfm, CommandKind.RFM, np.int8)])
        banks = np.concatenate([self.act_banks, np.maximum(self.ref_banks, 0), self.rfm_banks])
        rows = np.concatenate([self.act_rows, np.full(n_ref + n_rfm, NO_ROW, np.int64)])
        # sort by position in the stream: ACT i at 2i+1, slots at 2p
        key = np.concatenate([2 * np.arange(self.n_acts) + 1, 2 * self.ref_pos, 2 * self.rfm_pos])
        sub = np.concatenate([np.zeros(self.n_acts), np.zeros(n_ref), np.ones(n_rfm)])
        order = np.lexsort((sub, key))
        return CommandTrace(times[order], kinds[order], banks[order], rows[order], self.duration)


def window_levels_from_records(records, n_windows: int) -> np.ndarray:
    levels = np.zeros(n_windows + 1, dtype=np.int8)
    for r in records:
        if r.window_index + 1 <= n_windows:
            levels[r.window_index + 1] = int(r.verdict.arfm_level())
    return levels


def _level_params(rfm: RfmConfig):
    thr = np.array([rfm.level_value(lv) for lv in ArfmLevel], dtype=np.int64)
    if rfm.scale_raadec_with_level:
        dec_ref = np.maximum(1, rfm.dec_ref * thr // rfm.raaimt_base)
        dec_rfm = np.maximum(1, rfm.dec_rfm * thr // rfm.raaimt_base)
    else:
        dec_ref = np.full(len(thr), rfm.dec_ref)
        dec_rfm = np.full(len(thr), rfm.dec_rfm)
    period = thr + (1 if rfm.strict_threshold else 0)
    return thr, period, dec_ref, dec_rfm


def _fast_rfm_ok(rfm: RfmConfig, blocking: int) -> bool:
    """True when every RFM and every REF brings RAACNT back to zero."""
    if blocking:
        return False
    thr, period, dec_ref, dec_rfm = _level_params(rfm)
    return bool(np.all(dec_rfm >= period) and np.all(dec_ref >= period - 1)
                and np.all(period <= rfm.raammt))


def _segment_levels(ref_times, window_levels, t_refi):
    """Level in force after each REF (index 0 = before the first REF)."""
    if len(ref_times) == 0:
        return window_levels[:1].astype(np.int64)
    w = np.minimum(ref_times // t_refi, len(window_levels) - 1)
    return np.concatenate(([window_levels[0]], window_levels[w])).astype(np.int64)


def _rfm_fast(act_times, act_banks, ref_times, ref_banks, window_levels, rfm, timing):
    _, period, _, _ = _level_params(rfm)
    out_pos = []
    for b in np.unique(act_banks):
        idx = np.flatnonzero(act_banks == b)
        bt = act_times[idx]
        if timing.per_bank_refresh:
            rt = ref_times[(ref_banks == b) | (ref_banks < 0)]
        else:
            rt = ref_times
        seg_level = _segment_levels(rt, window_levels, timing.t_refi)
        seg = np.searchsorted(rt, bt, "right")
        # rank of each ACT inside its segment
        starts = np.searchsorted(seg, np.arange(len(rt) + 1), "left")
        rank = np.arange(len(bt)) - starts[seg]
        per = period[seg_level[seg]]
        fire = (rank + 1) % per == 0
        out_pos.append(idx[fire] + 1)
    pos = np.sort(np.concatenate(out_pos)) if out_pos else np.zeros(0, np.int64)
    return pos.astype(np.int64)


def _rfm_loop(act_times, act_banks, ref_times, ref_banks, window_levels, rfm, timing, blocking):
    """Event loop over RfmEngine; returns (rfm positions, rfm times, rfm banks, kept-ACT mask)."""
    eng = RfmEngine(rfm)
    banks_all = np.unique(act_banks).tolist()
    n = len(act_times)
    keep = np.ones(n, dtype=bool)
    blocked_until: dict[int, int] = {}
    rpos, rtimes, rbanks = [], [], []
    j = 0
    nref = len(ref_times)
    at, ab = act_times.tolist(), act_banks.tolist()
    rt, rb = ref_times.tolist(), ref_banks.tolist()
    nlev = len(window_levels)
    for i in range(n + 1):
        t_next = at[i] if i < n else None
        while j < nref and (t_next is None or rt[j] <= t_next):
            targets = banks_all if rb[j] < 0 or not timing.per_bank_refresh else [rb[j]]
            for b in targets:
                eng.on_ref(b)
            lvl = window_levels[min(rt[j] // timing.t_refi, nlev - 1)]
            if lvl != eng.level:
                eng.set_arfm_level(ArfmLevel(int(lvl)))
            j += 1
        if i == n:
            break
        t, b = at[i], ab[i]
        if blocking and t < blocked_until.get(b, -1):
            keep[i] = False
            continue
        issued = eng.act_greedy(b, t)
        for k, cmd in enumerate(issued):
            rpos.append(i + 1)
            rtimes.append(t)
            rbanks.append(b)
        if issued and blocking:
            blocked_until[b] = t + blocking * len(issued)
    return (np.array(rpos, np.int64), np.array(rtimes, np.int64),
            np.array(rbanks, np.int64), keep)


def build_schedule(act_trace: CommandTrace, cfg: SimConfig, force_loop: bool = False) -> Schedule:
    """Phase A: detector, ARFM levels and REF/RFM placement for an ACT stream."""
    timing = cfg.timing
    acts = act_trace.acts()
    duration = max(int(act_trace.duration), int(acts.times[-1]) + 1 if len(acts) else 1)
    banks_present = np.unique(acts.banks).tolist() or [0]
    refs = schedule_refresh(timing, duration, banks_present) if duration >= timing.t_refi else []
    ref_times = np.array([c.time for c in refs], dtype=np.int64)
    if timing.per_bank_refresh:
        ref_banks = np.array([c.bank for c in refs], dtype=np.int64)
    else:
        ref_banks = np.full(len(refs), -1, dtype=np.int64)
    if cfg.drop_ref_collisions and len(refs):
        acts = drop_ref_collisions(acts, refs)
    n_windows = max(1, -(-duration // timing.t_refi))
    records = None
    recog = 0.0
    levels = np.zeros(n_windows + 1, dtype=np.int8)
    if cfg.marc_enabled:
        records = run_detector(acts.times, acts.banks, duration, cfg.detector, timing)
        levels = window_levels_from_records(records, max(n_windows, len(records)))
        recog = recognition_rate(DetectionTimeline([r.verdict for r in records],
                                                   timing.t_refi, duration))
    times, banks, rows = acts.times, acts.banks, acts.rows
    rfm = dataclasses.replace(cfg.rfm, rfm_enabled=cfg.rfm_active and cfg.rfm.rfm_enabled)
    if not rfm.rfm_enabled:
        rpos = rtimes = rbanks = np.zeros(0, np.int64)
    elif _fast_rfm_ok(rfm, cfg.rfm_blocking_ns) and not force_loop:
        rpos = _rfm_fast(times, banks, ref_times, ref_banks, levels, rfm, timing)
        rtimes = times[rpos - 1] if len(rpos) else np.zeros(0, np.int64)
        rbanks = banks[rpos - 1] if len(rpos) else np.zeros(0, np.int64)
    else:
        rpos, rtimes, rbanks, keep = _rfm_loop(times, banks, ref_times, ref_banks, levels,
                                               rfm, timing, cfg.rfm_blocking_ns)
        if not keep.all():
            kept_before = np.concatenate(([0], np.cumsum(keep)))
            rpos = kept_before[rpos]
            times, banks, rows = times[keep], banks[keep], rows[keep]
    ref_pos = np.searchsorted(times, ref_times, "left").astype(np.int64)
    return Schedule(
        act_times=times, act_banks=banks, act_rows=rows, duration=duration, timing=timing,
        ref_times=ref_times, ref_banks=ref_banks, ref_pos=ref_pos,
        rfm_times=rtimes, rfm_banks=rbanks, rfm_pos=rpos, window_levels=levels,
        records=records, recognition=recog)


@dataclass
class CureLog:
    """Cured (victim) rows, one entry per refreshed row."""

    pos: np.ndarray
    times: np.ndarray
    keys: np.ndarray
    n_cures: int            # cure operations (aggressors serviced)
    aggressors: list = field(default_factory=list)

    @classmethod
    def from_ops(cls, ops, mit: MitigationConfig) -> "CureLog":
        """``ops`` is a list of (pos, time, bank, aggressor_row)."""
        pos, times, keys = [], [], []
        for p, t, b, a in ops:
            for r in neighbours(a, mit.blast_radius, mit.min_row, mit.max_row):
                pos.append(p)
                times.append(t)
                keys.append((b << 32) | r)
        return cls(np.array(pos, np.int64), np.array(times, np.int64),
                   np.array(keys, np.int64), len(ops), ops)


def _expand_slots(slot_pos, slot_times, slot_banks, banks):
    """Replace all-bank slots (bank -1) by one slot per bank, keeping order."""
    if not len(slot_pos) or np.all(slot_banks >= 0):
        return slot_pos, slot_times, slot_banks
    nb = len(banks)
    rep = np.where(slot_banks < 0, nb, 1)
    pos = np.repeat(slot_pos, rep)
    times = np.repeat(slot_times, rep)
    out_banks = np.repeat(slot_banks, rep)
    allb = np.repeat(slot_banks < 0, rep)
    # within each all-bank slot, enumerate the banks in ascending order
    starts = np.cumsum(rep) - rep
    offset = np.arange(len(pos)) - np.repeat(starts, rep)
    out_banks[allb] = np.asarray(banks)[offset[allb]]
    return pos, times, out_banks


def _prob_dram(s: Schedule, mit: MitigationConfig, rng):
    slot_pos, slot_times, slot_banks = _expand_slots(*s.cure_slots(mit), s.banks)
    u = rng.random(len(slot_pos))
    W = mit.probabilistic.sample_window_multiple * s.timing.t_refi
    ops_pos, ops_times, ops_banks, ops_rows = [], [], [], []
    for b in s.banks.tolist():
        sel = np.flatnonzero(slot_banks == b)
        if not len(sel):
            continue
        gidx = np.flatnonzero(s.act_banks == b)
        bt = s.act_times[gidx]
        br = s.act_rows[gidx]
        sp, st, su = slot_pos[sel], slot_times[sel], u[sel]
        prev_t = np.concatenate(([0], st[:-1]))
        start = np.maximum(np.maximum(st - W, prev_t), 0)
        hi = np.searchsorted(gidx, sp, "left")
        prev_hi = np.concatenate(([0], hi[:-1]))
        lo = np.maximum(np.searchsorted(bt, start, "left"), prev_hi)
        t_star = start + su * (st - start)
        j = np.searchsorted(bt, t_star, "left")
        j = np.clip(j, lo, hi)
        ok = hi > lo
        left = np.maximum(j - 1, 0)
        right = np.minimum(j, len(bt) - 1)
        has_left = j > lo
        has_right = j < hi
        dl = np.where(has_left, t_star - bt[left], np.inf)
        dr = np.where(has_right, bt[right] - t_star, np.inf)
        pick = np.where(dl <= dr, left, right)
        ok &= has_left | has_right
        ops_pos.append(sp[ok])
        ops_times.append(st[ok])
        ops_banks.append(np.full(int(ok.sum()), b, np.int64))
        ops_rows.append(br[pick[ok]])
    if not ops_pos:
        return []
    p, t, bk, r = (np.concatenate(x) for x in (ops_pos, ops_times, ops_banks, ops_rows))
    order = np.lexsort((bk, p))
    return list(zip(p[order].tolist(), t[order].tolist(), bk[order].tolist(), r[order].tolist()))


def _counter_hits(s: Schedule, mit: MitigationConfig):
    """ACT indices at which the tracker reports an aggressor."""
    cc = mit.counter
    keys = s.act_keys
    distinct_ok = True
    for b in s.banks.tolist():
        if len(np.unique(s.act_rows[s.act_banks == b])) > cc.table_size:
            distinct_ok = False
            break
    if distinct_ok:
        # no Misra-Gries decrement can happen: every row hits on multiples of the threshold
        order = np.argsort(keys, kind="stable")
        sk = keys[order]
        first = np.concatenate(([True], sk[1:] != sk[:-1]))
        gstart = np.maximum.accumulate(np.where(first, np.arange(len(sk)), 0))
        ordinal = np.empty(len(sk), np.int64)
        ordinal[order] = np.arange(len(sk)) - gstart + 1
        return np.flatnonzero(ordinal % cc.logic_threshold == 0)
    tables: dict[int, TrackerTable] = {}
    hits = []
    for i, (b, r) in enumerate(zip(s.act_banks.tolist(), s.act_rows.tolist())):
        tab = tables.get(b)
        if tab is None:
            tab = tables[b] = TrackerTable(cc)
        if tab.update(r) is not None:
            hits.append(i)
    return np.array(hits, np.int64)


def _queue_replay(s: Schedule, mit: MitigationConfig, hit_idx: np.ndarray):
    slot_pos, slot_times, slot_banks = s.cure_slots(mit)
    hp = hit_idx + 1
    if mit.immediate_cure and mit.side == Side.MC:
        return [(int(p), int(s.act_times[i]), int(s.act_banks[i]), int(s.act_rows[i]))
                for p, i in zip(hp, hit_idx)]
    pos = np.concatenate([hp, slot_pos])
    kind = np.concatenate([np.zeros(len(hp), np.int8), np.ones(len(slot_pos), np.int8)])
    ref = np.concatenate([hit_idx, np.arange(len(slot_pos))])
    order = np.lexsort((ref, kind, pos))
    banks = s.banks.tolist()
    queues = {b: CureQueue() for b in banks}
    ops = []
    ab, ar = s.act_banks, s.act_rows
    for o in order.tolist():
        if kind[o] == 0:
            i = ref[o]
            queues[int(ab[i])].push(int(ar[i]))
            continue
        k = ref[o]
        b = int(slot_banks[k])
        for bb in (banks if b < 0 else [b]):
            q = queues.get(bb)
            if q is None:
                continue
            a = q.pop()
            if a is not None:
                ops.append((int(slot_pos[k]), int(slot_times[k]), bb, a))
    return ops


def replay_mitigation(s: Schedule, mit: MitigationConfig, seed: int = 0) -> CureLog:
    """Phase B: cure log of one scheme/seed over a schedule."""
    if not mit.enabled:
        return CureLog.from_ops([], mit)
    rng = np.random.default_rng(seed)
    if mit.scheme == Scheme.PROBABILISTIC and mit.side == Side.DRAM:
        ops = _prob_dram(s, mit, rng)
    elif mit.scheme == Scheme.PROBABILISTIC:
        draws = rng.random(s.n_acts)
        ops = _queue_replay(s, mit, np.flatnonzero(draws < mit.para.probability))
    else:
        ops = _queue_replay(s, mit, _counter_hits(s, mit))
    return CureLog.from_ops(ops, mit)


@dataclass
class SimResult:
    max_exposure: int
    acts: int
    refs: int
    rfms: int
    cures: int
    recognition_rate: float
    schedule: Schedule = field(repr=False)
    cure_log: CureLog = field(repr=False)

    def report(self, cfg: SimConfig, pattern_id="", trc_ns=None, n_aggressors=None,
               baseline: float | None = None) -> RunReport:
        m = None if not baseline else self.max_exposure / baseline
        return RunReport(pattern_id, cfg.mitigation.side.value, cfg.mitigation.label,
                         cfg.marc_enabled, trc_ns, n_aggressors, self.max_exposure, m,
                         self.recognition_rate, self.acts, self.refs, self.rfms, self.cures)


def evaluate(s: Schedule, mit: MitigationConfig, seed: int = 0) -> SimResult:
    log = replay_mitigation(s, mit, seed)
    mx = s.grouping.max_exposure(log.pos, log.keys, log.times)
    return SimResult(mx, s.n_acts, len(s.ref_times), len(s.rfm_pos), log.n_cures,
                     s.recognition, s, log)


def run_simulation(trace: CommandTrace, cfg: SimConfig | None = None, seed: int = 0) -> SimResult:
    cfg = cfg or SimConfig()
    return evaluate(build_schedule(trace, cfg), cfg.mitigation, seed)


def reference_run(trace: CommandTrace, cfg: SimConfig | None = None, seed: int = 0) -> SimResult:
    """Event-by-event replay through the scalar primitives.

    Uses the same schedule placement rules as the fast path, but drives
    RfmEngine, TrackerTable, CureQueue, prob_sample and ExposureLedger one
    command at a time.
    """
    cfg = cfg or SimConfig()
    s = build_schedule(trace, cfg, force_loop=True)
    mit = cfg.mitigation
    rng = np.random.default_rng(seed)
    ledger = ExposureLedger(cfg.timing.t_refw)
    slot_pos, slot_times, slot_banks = s.cure_slots(mit)
    if mit.scheme == Scheme.PROBABILISTIC and mit.side == Side.DRAM:
        slot_pos, slot_times, slot_banks = _expand_slots(slot_pos, slot_times, slot_banks, s.banks)
    banks = s.banks.tolist()
    queues = {b: CureQueue() for b in banks}
    tables = {b: TrackerTable(mit.counter) for b in banks}
    last_slot: dict[int, tuple[int, int]] = {}
    W = mit.probabilistic.sample_window_multiple * cfg.timing.t_refi
    ops = []
    k = 0
    n = s.n_acts
    at, ab, ar = s.act_times.tolist(), s.act_banks.tolist(), s.act_rows.tolist()
    for i in range(n + 1):
        while mit.enabled and k < len(slot_pos) and slot_pos[k] == i:
            b, t = int(slot_banks[k]), int(slot_times[k])
            for bb in (banks if b < 0 else [b]):
                if mit.scheme == Scheme.PROBABILISTIC and mit.side == Side.DRAM:
                    prev_t, prev_i = last_slot.get(bb, (0, 0))
                    start = max(t - W, prev_t, 0)
                    window = [(at[x], ar[x]) for x in range(prev_i, i)
                              if ab[x] == bb and at[x] >= start]
                    a = prob_sample((start, t), window, rng)
                    last_slot[bb] = (t, i)
                else:
                    a = queues[bb].pop()
                if a is not None:
                    rows = neighbours(a, mit.blast_radius, mit.min_row, mit.max_row)
                    ledger.record_cure([(bb << 32) | r for r in rows], t)
                    ops.append((i, t, bb, a))
            k += 1
        if i == n:
            break
        b, r, t = ab[i], ar[i], at[i]
        ledger.record_act((b << 32) | r, t)
        if not mit.enabled:
            continue
        hit = None
        if mit.scheme == Scheme.COUNTER:
            hit = tables[b].update(r)
        elif mit.side == Side.MC:
            hit = r if rng.random() < mit.para.probability else None
        if hit is not None:
            if mit.immediate_cure and mit.side == Side.MC:
                rows = neighbours(hit, mit.blast_radius, mit.min_row, mit.max_row)
                ledger.record_cure([(b << 32) | x for x in rows], t)
                ops.append((i + 1, t, b, hit))
            else:
                queues[b].push(hit)
    log = CureLog.from_ops(ops, mit)
    return SimResult(ledger.max_exposure(), n, len(s.ref_times), len(s.rfm_pos), len(ops),
                     s.recognition, s, log)
