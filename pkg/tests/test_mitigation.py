import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from marcsim.errors import ConfigError
from marcsim.metrics import ExposureLedger
from marcsim.mitigation import (TABLE_SIZE_2POW14, CounterConfig, CureQueue, MitigationConfig,
                                ParaConfig, ProbabilisticConfig, Scheme, Side, TrackerTable,
                                attach_policy, counter_update, neighbours, nrr_execute,
                                para_on_act, prob_sample)


class TestProbSample:
    def test_empty(self, rng):
        assert prob_sample((0, 100), [], rng) is None

    def test_empty_still_draws(self):
        r1, r2 = np.random.default_rng(1), np.random.default_rng(1)
        prob_sample((0, 100), [], r1)
        r2.random()
        assert r1.random() == r2.random()

    @pytest.mark.parametrize("seed", range(5))
    def test_single(self, seed):
        assert prob_sample((0, 156_000), [(500, 42)], np.random.default_rng(seed)) == 42

    def test_golden(self):
        acts = [(10, 5), (120, 6), (250, 7)]
        assert prob_sample((0, 300), acts, np.random.default_rng(2024)) == 7
        # replay: t* = 300 * u, nearest ACT wins
        t_star = np.random.default_rng(2024).random() * 300
        expect = min(acts, key=lambda a: (abs(a[0] - t_star), a[0]))[1]
        assert expect == 7

    def test_tie_goes_earlier(self):
        class Half:
            def random(self):
                return 0.5
        assert prob_sample((0, 100), [(40, 1), (60, 2)], Half()) == 1

    @given(st.lists(st.integers(0, 999), min_size=1, max_size=30, unique=True), st.integers(0, 2**32))
    def test_nearest(self, times, seed):
        times.sort()
        acts = [(t, i) for i, t in enumerate(times)]
        got = prob_sample((0, 1000), acts, np.random.default_rng(seed))
        t_star = np.random.default_rng(seed).random() * 1000
        best = min(abs(t - t_star) for t in times)
        assert abs(times[got] - t_star) == best

    def test_config(self):
        assert ProbabilisticConfig().sample_window_multiple == 10
        with pytest.raises(ConfigError):
            ProbabilisticConfig(sample_window_multiple=0)


class TestTracker:
    def test_threshold(self):
        cfg = CounterConfig(table_size=4, logic_threshold=3)
        tab = TrackerTable(cfg)
        hits = [counter_update(tab, 9, cfg)[1] for _ in range(3)]
        assert hits == [None, None, 9]
        assert tab.entries[9] == 0

    def test_misra_gries_hand_trace(self):
        tab = TrackerTable(CounterConfig(table_size=1, logic_threshold=100))
        tab.update("A")
        assert tab.entries == {"A": 1}
        tab.update("B")              # full and absent: global decrement evicts A
        assert tab.entries == {} and tab.decrements == 1
        tab.update("A")
        assert tab.entries == {"A": 1}

    def test_no_eviction_when_fits(self):
        tab = TrackerTable(CounterConfig(table_size=5, logic_threshold=10))
        for r in [1, 2, 3, 4, 5] * 2:
            assert tab.update(r) is None
        assert tab.decrements == 0 and len(tab) == 5

    def test_subtract_mode(self):
        tab = TrackerTable(CounterConfig(logic_threshold=2, subtract_on_hit=True))
        assert [tab.update(1) for _ in range(4)] == [None, 1, None, 1]

    def test_presets(self):
        assert CounterConfig().table_size == 214 and TABLE_SIZE_2POW14 == 16384
        with pytest.raises(ConfigError):
            CounterConfig(table_size=0)
        with pytest.raises(ConfigError):
            CounterConfig(logic_threshold=0)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 6), st.lists(st.integers(0, 9), max_size=80))
    def test_misra_gries_guarantee(self, size, stream):
        tab = TrackerTable(CounterConfig(table_size=size, logic_threshold=10**9))
        for r in stream:
            tab.update(r)
            assert len(tab) <= size and all(c >= 0 for c in tab.entries.values())
        n = len(stream)
        for r in set(stream):
            if stream.count(r) > n / (size + 1):
                assert r in tab


class TestQueueAndNrr:
    def test_unique(self):
        q = CureQueue()
        assert q.push(3) and not q.push(3)
        assert len(q) == 1

    def test_single(self):
        q = CureQueue()
        q.push(10)
        assert nrr_execute(q) == [9, 11]

    def test_empty(self):
        led = ExposureLedger()
        assert nrr_execute(CureQueue(), led) == []

    def test_fifo(self):
        q = CureQueue()
        q.push(5)
        q.push(20)
        assert nrr_execute(q) == [4, 6]
        assert nrr_execute(q) == [19, 21]

    def test_ledger_reset(self):
        led = ExposureLedger()
        for _ in range(4):
            led.record_act(11)
        q = CureQueue()
        q.push(10)
        nrr_execute(q, led)
        assert led.counts[11] == 0 and led.max_exposure() == 4

    def test_radius_and_clamp(self):
        assert neighbours(0) == [1]
        assert neighbours(5, 2) == [3, 4, 6, 7]
        assert neighbours(9, 1, max_row=9) == [8]


class TestPara:
    def test_p1(self, rng):
        cfg = ParaConfig(1.0)
        assert all(para_on_act(r, cfg, rng) == r for r in range(100))

    def test_golden_count(self):
        cfg = ParaConfig(0.01)
        rng = np.random.default_rng(7)
        n = sum(para_on_act(1, cfg, rng) is not None for _ in range(10_000))
        assert n == 98
        assert n == int(np.sum(np.random.default_rng(7).random(10_000) < 0.01))

    def test_row0_clamp(self):
        q = CureQueue()
        q.push(para_on_act(0, ParaConfig(1.0), np.random.default_rng(0)))
        assert nrr_execute(q, min_row=0) == [1]

    @pytest.mark.parametrize("p", [0.0, 1.5, -0.1])
    def test_invalid(self, p):
        with pytest.raises(ConfigError):
            ParaConfig(p)


class TestPolicy:
    def test_dram(self):
        pol = attach_policy("dram", "probabilistic")
        assert [i for i in range(1, 31) if pol.ref_slot(i)] == [10, 20, 30]
        assert pol.rfm_slot()

    def test_mc(self):
        pol = attach_policy(Side.MC, Scheme.COUNTER)
        assert not any(pol.ref_slot(i) for i in range(1, 100))

    @pytest.mark.parametrize("side", list(Side))
    @pytest.mark.parametrize("scheme", list(Scheme))
    def test_all_combinations(self, side, scheme):
        cfg = MitigationConfig(side=side, scheme=scheme)
        assert cfg.label in ("probabilistic", "counter", "para", "graphene")

    def test_invalid_side(self):
        with pytest.raises(ValueError):
            MitigationConfig(side="cpu")
