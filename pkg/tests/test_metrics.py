import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from marcsim.detector import Verdict
from marcsim.dram import Command, CommandKind, CommandTrace
from marcsim.errors import ZeroBaseline
from marcsim.metrics import (REPORT_COLUMNS, ActGrouping, CommandStats, DetectionTimeline, ExposureLedger,
                             RunReport, brute_force_exposure, command_stats, exposure_from_events, mer,
                             read_reports, recognition_rate, row_key, write_reports)


class TestLedger:
    def test_counts_and_cure(self):
        led = ExposureLedger()
        for _ in range(5):
            led.record_act(1)
        led.record_cure([1])
        for _ in range(3):
            led.record_act(1)
        assert led.max_exposure() == 5
        assert led.counts[1] == 3

    def test_cure_unknown_row(self):
        led = ExposureLedger().record_act(2).record_cure([9])
        assert led.counts == {2: 1}

    def test_refw_rollover(self):
        led = ExposureLedger(t_refw=1000)
        for t in range(0, 1000, 100):
            led.record_act(0, t)
        led.record_act(0, 1000)
        assert led.counts[0] == 1 and led.max_exposure() == 10

    def test_row_key(self):
        assert row_key(1, 5) == (1 << 32) + 5
        assert row_key(0, 7) != row_key(1, 7)


def _events(draw_data):
    acts, cures = draw_data
    times = np.cumsum([dt for dt, _ in acts]).astype(np.int64) if acts else np.zeros(0, np.int64)
    keys = np.array([k for _, k in acts], dtype=np.int64)
    cp = np.array(sorted(p for p, _ in cures), dtype=np.int64)
    ck = np.array([k for _, k in sorted(cures)], dtype=np.int64)
    return times, keys, cp, ck


events = st.tuples(
    st.lists(st.tuples(st.integers(1, 300), st.integers(0, 5)), max_size=80),
    st.lists(st.tuples(st.integers(0, 80), st.integers(0, 5)), max_size=30))


class TestGrouping:
    def test_simple(self):
        t = np.arange(6) * 60
        k = np.array([0, 0, 0, 1, 0, 0])
        assert exposure_from_events(t, k, [], []) == 5
        # cure before the 4th ACT (position 3) resets row 0 after 3 ACTs
        assert exposure_from_events(t, k, [3], [0]) == 3

    def test_empty(self):
        assert ActGrouping([], [], 1000).max_exposure([], []) == 0

    @settings(max_examples=200, deadline=None)
    @given(events, st.sampled_from([None, 2000, 5000]))
    def test_matches_brute_force(self, data, t_refw):
        t, k, cp, ck = _events(data)
        cp = np.minimum(cp, len(t))
        assert (exposure_from_events(t, k, cp, ck, t_refw)
                == brute_force_exposure(t, k, cp, ck, t_refw))

    @settings(max_examples=100, deadline=None)
    @given(events, st.integers(0, 80), st.integers(0, 5))
    def test_extra_cure_never_hurts(self, data, p, key):
        t, k, cp, ck = _events(data)
        cp = np.minimum(cp, len(t))
        g = ActGrouping(t, k, None)
        before = g.max_exposure(cp, ck)
        after = g.max_exposure(np.append(cp, min(p, len(t))), np.append(ck, key))
        assert after <= before

    @settings(max_examples=100, deadline=None)
    @given(events)
    def test_bounded_by_counts(self, data):
        t, k, cp, ck = _events(data)
        cp = np.minimum(cp, len(t))
        mx = exposure_from_events(t, k, cp, ck)
        top = np.bincount(k).max() if len(k) else 0
        assert 0 <= mx <= top
        if len(cp) == 0:
            assert mx == top

    def test_cure_times_window(self):
        t = np.array([0, 10, 20, 1000, 1010, 1020])
        k = np.zeros(6, dtype=np.int64)
        # cure stamped in window 0 lands after the last ACT of window 0 only
        assert exposure_from_events(t, k, [2], [0], 1000, [15]) == 3
        assert brute_force_exposure(t, k, [2], [0], 1000, [15]) == 3


class TestMer:
    def test_ratio(self):
        assert mer(50, 100) == 0.5
        assert mer(100, 100) == 1.0

    @pytest.mark.parametrize("b", [0, -1])
    def test_zero_baseline(self, b):
        with pytest.raises(ZeroBaseline):
            mer(1, b)


class TestRecognition:
    def test_first_two_inactive(self):
        v = [Verdict.INACTIVE] * 2 + [Verdict.LEVEL_A] * 98
        assert recognition_rate(v) == pytest.approx(0.98)

    def test_all_inactive(self):
        assert recognition_rate([Verdict.INACTIVE] * 10) == 0.0

    def test_partial_last_window(self):
        tl = DetectionTimeline([Verdict.INACTIVE, Verdict.LEVEL_C], 100, 150)
        assert recognition_rate(tl) == pytest.approx(50 / 150)

    def test_empty(self):
        assert recognition_rate([]) == 0.0


class TestStatsAndReports:
    def test_command_stats(self):
        tr = CommandTrace.from_commands([Command(0, CommandKind.ACT, 0, 1), Command(60, CommandKind.ACT, 0, 2),
                                         Command(100, CommandKind.REF, 0), Command(500, CommandKind.RFM, 0)])
        s = command_stats(tr, [1, 2, 3])
        assert s == CommandStats(2, 1, 1, 3)
        assert s.total == 4 and s.rfm_share == 0.25

    def test_report_roundtrip(self, tmp_path):
        rep = RunReport("p1", "dram", "probabilistic", True, 60, 50, 268.0, 0.0222, 0.99, 100, 5, 7, 12)
        path = tmp_path / "r.csv"
        write_reports([rep, RunReport("p2", "mc", "para", False, None, None, 1.0, None, 0.0, 1, 0, 0, 0)], path)
        rows = read_reports(path)
        assert list(rows[0]) == REPORT_COLUMNS
        assert rows[0]["marc"] == "1" and rows[0]["max_exposure"] == "268"
        assert rows[1]["mer"] == "" and rows[1]["trc_ns"] == ""

    def test_report_validation(self):
        with pytest.raises(ValueError):
            RunReport("p", "dram", "counter", True, 60, 50, 1.0, None, 1.5, 0, 0, 0, 0)
