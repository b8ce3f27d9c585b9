import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from marcsim.detector import (DetectorConfig, MarcDetector, Phase, ShortTrcBuffer, TrcLabel, Verdict,
                              buffer_capacity, encode_many, encode_trc, run_detector,
                              verdict_timeline, write_event_log)
from marcsim.dram import TimingConfig
from marcsim.errors import BelowTrcMin, ConfigError, WindowFull
from marcsim.rfm import ArfmLevel

A, B, C, D, L = (TrcLabel.SHORT_A, TrcLabel.SHORT_B, TrcLabel.SHORT_C, TrcLabel.SHORT_D, TrcLabel.LONG)


class TestEncode:
    @pytest.mark.parametrize("trc,label", [(60, A), (65, A), (69, A), (70, B), (80, C), (90, D),
                                           (99, D), (100, D), (101, L), (5000, L)])
    def test_bins(self, trc, label):
        assert encode_trc(trc) == label

    def test_below(self):
        with pytest.raises(BelowTrcMin):
            encode_trc(59)

    @given(st.integers(60, 10_000))
    def test_total_and_vectorised(self, trc):
        lab = encode_trc(trc)
        assert lab.short == (trc <= 100)
        assert encode_many([trc])[0] == lab

    def test_many_below(self):
        with pytest.raises(BelowTrcMin):
            encode_many([60, 10])


class TestBuffer:
    def test_capacity_default(self, timing):
        assert buffer_capacity(timing) == 260

    def test_short_count(self):
        buf = ShortTrcBuffer(260)
        for _ in range(3):
            buf.push(A)
        assert buf.short_count == 3

    def test_long_not_counted(self):
        buf = ShortTrcBuffer(260)
        for _ in range(5):
            buf.push(L)
        assert buf.short_count == 0 and len(buf) == 5

    def test_overflow(self):
        buf = ShortTrcBuffer(260)
        for _ in range(260):
            buf.push(A)
        with pytest.raises(WindowFull):
            buf.push(A)

    def test_random_timings(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            t_rc = int(rng.integers(20, 80))
            t_refi = int(rng.integers(t_rc + 1, 40_000))
            tm = TimingConfig(t_rc_min=t_rc, t_refi=t_refi, t_refw=t_refi * 100,
                              short_trc_max=max(t_rc, 100))
            assert MarcDetector(timing=tm).capacity == t_refi // t_rc


class TestConfig:
    def test_defaults(self):
        c = DetectorConfig()
        assert (c.k, c.s_trc_th, c.eviction_threshold, c.escalation_step,
                c.clean_windows_to_reset) == (3, 130, 2, 4, 2)
        assert c.eviction_capacity == 1

    def test_k_min(self):
        with pytest.raises(ConfigError):
            DetectorConfig(k=1)


def feed(det, labels):
    for lab in labels:
        det.capture_step(lab)
    return det.state


class TestFsm:
    def test_duplication(self):
        s = feed(MarcDetector(), [A, A, A, A])
        assert s.point_latch == A and s.point_cmp and s.phase == Phase.POINT
        assert s.dup_seen

    def test_capture_and_loop(self):
        det = MarcDetector()
        s = feed(det, [A, B, D, C])
        assert s.capture_latch == [B, D, C] and s.phase == Phase.MONITOR
        assert s.loop_armed and not s.loop
        feed(det, [B])
        assert s.loop

    def test_capture_repeat_sets_flag(self):
        s = feed(MarcDetector(), [A, B, B])
        assert s.capture_latch == [B] and s.capture_cmp

    def test_last_slot_unconditional(self):
        s = feed(MarcDetector(), [A, B, C, C])
        assert s.capture_latch == [B, C, C] and s.phase == Phase.MONITOR

    def test_long_ignored(self):
        s = feed(MarcDetector(), [L, L, A, L])
        assert s.point_latch == A and not s.point_cmp

    def test_wrong_pattern_resets_to_point(self):
        # k=2: point latch A, capture [B, C]; D is the only label outside both
        det = MarcDetector(DetectorConfig(k=2, eviction_threshold=0))
        feed(det, [A, B, C])
        det.finalize_window()
        s = det.state
        assert s.phase == Phase.MONITOR and s.capture_latch == [B, C]
        det.capture_step(D)
        assert s.phase == Phase.POINT and s.capture_latch == [] and s.point_latch is None

    def test_eviction_reset_suppressed_by_flag(self):
        det = MarcDetector(DetectorConfig(k=2, eviction_threshold=0))
        feed(det, [A, B, C])
        det.finalize_window()
        det.capture_step(A)               # point comparator fires
        det.capture_step(D)
        assert det.state.phase == Phase.MONITOR

    def test_repeated_outsider_sets_eviction_flag(self):
        det = MarcDetector(DetectorConfig(k=2))
        feed(det, [A, B, C])
        det.finalize_window()
        feed(det, [D, D])
        s = det.state
        assert s.eviction_latch == [D] and s.eviction_flag and s.eviction_count == 1

    def test_reset_suppressed_by_flag(self):
        det = MarcDetector()
        feed(det, [A, A])
        assert det.state.point_cmp
        assert det.reset() is False
        assert det.state.point_latch == A

    def test_reset_clears(self):
        det = MarcDetector()
        feed(det, [A, B, C, D])
        det.finalize_window()
        assert det.reset() is True
        s = det.state
        assert s.phase == Phase.POINT and s.capture_latch == [] and s.point_latch is None

    def test_full_reset(self):
        det = MarcDetector()
        for _ in range(3):
            det.run_window([A] * 260)
        assert det.state.verdict == Verdict.LEVEL_A
        det.reset(full=True)
        assert det.state.verdict == Verdict.INACTIVE and det.state.attack_windows == 0


class TestWindows:
    def test_all_short_a(self):
        det = MarcDetector()
        summary, _ = det.run_window([A] * 260)
        assert summary == (260, True, False)

    def test_all_long(self):
        summary, verdict = MarcDetector().run_window([L] * 260)
        assert summary == (0, False, False) and verdict == Verdict.INACTIVE

    def test_cyclic_abd(self):
        det = MarcDetector()
        det.run_window(([A, B, D] * 87)[:260])
        summary, _ = det.run_window(([A, B, D] * 87)[:260])
        assert summary.short_count == 260 and summary.loop_signal

    def test_two_windows_level_a(self):
        det = MarcDetector()
        v1 = det.run_window([A] * 260)[1]
        v2 = det.run_window([A] * 260)[1]
        assert (v1, v2) == (Verdict.INACTIVE, Verdict.LEVEL_A)

    def test_escalation(self):
        det = MarcDetector()
        verdicts = [det.run_window([A] * 260)[1] for _ in range(10)]
        assert verdicts[1] == Verdict.LEVEL_A
        assert verdicts[5] == Verdict.LEVEL_B
        assert verdicts[9] == Verdict.LEVEL_C
        assert verdicts[8] == Verdict.LEVEL_B

    def test_clean_windows_reset(self):
        det = MarcDetector()
        for _ in range(5):
            det.run_window([A] * 260)
        det.run_window([L] * 260)
        v = det.run_window([L] * 260)[1]
        assert v == Verdict.INACTIVE and det.state.attack_windows == 0

    def test_one_clean_window_keeps_count(self):
        det = MarcDetector()
        for _ in range(5):
            det.run_window([A] * 260)
        v = det.run_window([L] * 260)[1]
        assert v == Verdict.LEVEL_A

    def test_below_threshold(self):
        det = MarcDetector()
        for _ in range(5):
            v = det.run_window([A] * 129 + [L] * 131)[1]
        assert v == Verdict.INACTIVE

    def test_strict_window_count(self):
        det = MarcDetector(DetectorConfig(strict_window_count=True))
        vs = [det.run_window([A] * 260)[1] for _ in range(3)]
        assert vs == [Verdict.INACTIVE, Verdict.INACTIVE, Verdict.LEVEL_A]

    def test_verdict_to_level(self):
        assert [v.arfm_level() for v in Verdict] == [ArfmLevel.BASE, ArfmLevel.A, ArfmLevel.B, ArfmLevel.C]

    def test_memo_matches_stepping(self):
        rng = np.random.default_rng(3)
        windows = [rng.integers(0, 5, size=200).astype(np.int8) for _ in range(30)]
        windows += windows[:10]
        d1 = MarcDetector()
        fast = [d1.run_window(w) for w in windows]
        d2 = MarcDetector()
        slow = []
        for w in windows:
            for lab in w.tolist():
                d2.feed(lab)
            summ = d2.finalize_window()
            slow.append((summ, d2.inspect(summ)))
        assert fast == slow


def single_label_trace(trc, windows, timing):
    n = windows * timing.t_refi // trc
    return np.arange(n, dtype=np.int64) * trc


class TestRunDetector:
    def test_all_long_inactive(self, timing):
        t = single_label_trace(150, 20, timing)
        recs = run_detector(t, np.zeros(len(t), int), 20 * timing.t_refi)
        assert all(v == Verdict.INACTIVE for v in verdict_timeline(recs))

    @pytest.mark.parametrize("trc", [60, 65, 75, 85, 95, 100])
    def test_single_label_escalates(self, trc, timing):
        t = single_label_trace(trc, 12, timing)
        recs = run_detector(t, np.zeros(len(t), int), 12 * timing.t_refi)
        vs = verdict_timeline(recs)
        assert vs[1] >= Verdict.LEVEL_A
        assert vs[9] == Verdict.LEVEL_C

    def test_event_log(self, tmp_path, timing):
        t = single_label_trace(60, 3, timing)
        recs = run_detector(t, np.zeros(len(t), int), 3 * timing.t_refi)
        p = tmp_path / "ev.csv"
        write_event_log(recs, p)
        lines = p.read_text().splitlines()
        assert lines[0] == "window_index,short_count,dup,loop,verdict"
        assert len(lines) == 4 and lines[2].endswith("LEVEL_A")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 12))
def test_determinism_and_address_independence(seed, n_vals):
    rng = np.random.default_rng(seed)
    vals = rng.integers(60, 130, size=n_vals)
    gaps = np.resize(vals, 2000)
    times = np.concatenate(([0], np.cumsum(gaps)))
    banks = np.zeros(len(times), int)
    dur = int(times[-1]) + 1
    a = verdict_timeline(run_detector(times, banks, dur))
    b = verdict_timeline(run_detector(times, banks, dur))
    assert a == b
