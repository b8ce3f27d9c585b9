import itertools

import numpy as np
import pytest

from marcsim.dram import CommandTrace, CommandKind, TimingConfig, validate_trace
from marcsim.engine import (SimConfig, _rfm_fast, build_schedule, evaluate, reference_run,
                            run_simulation)
from marcsim.metrics import row_key
from marcsim.mitigation import CounterConfig, MitigationConfig, ParaConfig
from marcsim.patterns import AttackSpec, NormalSpec, gen_attack, gen_normal
from marcsim.rfm import RfmConfig

T = TimingConfig()
SHORT = 60 * T.t_refi


def attack(n=50, trc=60, duration=SHORT):
    return gen_attack(AttackSpec(n, trc, duration=duration), T)


def two_bank_trace(seed, n=6000):
    rng = np.random.default_rng(seed)
    times = np.cumsum(rng.integers(60, 110, n)).astype(np.int64)
    banks = rng.integers(0, 2, n).astype(np.int64)
    rows = rng.integers(0, 12, n).astype(np.int64)
    kinds = np.full(n, CommandKind.ACT, np.int8)
    return CommandTrace(times, kinds, banks, rows, int(times[-1]) + 1)


def cfg(side="dram", scheme="probabilistic", marc=True, **kw):
    mit = MitigationConfig(side, scheme, counter=CounterConfig(table_size=8, logic_threshold=64),
                           para=ParaConfig(0.05), **kw)
    return SimConfig(mitigation=mit, marc_enabled=marc)


COMBOS = list(itertools.product(["dram", "mc"], ["probabilistic", "counter"], [False, True]))


@pytest.mark.parametrize("side,scheme,marc", COMBOS)
@pytest.mark.parametrize("trace_id", ["attack", "two_bank"])
def test_fast_matches_reference(side, scheme, marc, trace_id):
    tr = attack() if trace_id == "attack" else two_bank_trace(3)
    c = cfg(side, scheme, marc)
    for seed in (0, 1):
        fast, ref = run_simulation(tr, c, seed), reference_run(tr, c, seed)
        assert (fast.max_exposure, fast.cures, fast.rfms) == (ref.max_exposure, ref.cures, ref.rfms)


def test_fast_matches_reference_immediate():
    c = cfg("mc", "probabilistic", True, immediate_cure=True)
    tr = attack(20)
    assert run_simulation(tr, c, 5).max_exposure == reference_run(tr, c, 5).max_exposure


def test_no_mitigation_is_row_count():
    tr = attack(50)
    c = SimConfig(mitigation=MitigationConfig(enabled=False), marc_enabled=False)
    res = run_simulation(tr, c)
    s = res.schedule
    assert res.max_exposure == np.bincount(s.act_rows).max()
    assert res.cures == 0 and res.rfms == 0


def test_normal_workload_no_rfm():
    tr = gen_normal(NormalSpec(0.0, n_acts=20_000, seed=1))
    res = run_simulation(tr, SimConfig())
    assert res.rfms == 0 and res.recognition_rate == 0.0


def test_attack_marc_issues_rfm():
    res = run_simulation(attack(), SimConfig())
    assert res.rfms > 0 and res.recognition_rate > 0.9


def test_vanilla_has_no_rfm():
    assert run_simulation(attack(), SimConfig(marc_enabled=False)).rfms == 0


def test_rfm_forced_on():
    res = run_simulation(attack(), SimConfig(marc_enabled=False, rfm_mode="on"))
    # base RAAIMT 248: one RFM per 248 ACTs within each REF segment
    assert res.rfms > 0
    s = res.schedule
    assert res.rfms <= s.n_acts // 248


@pytest.mark.parametrize("side,scheme,marc", COMBOS)
def test_deterministic(side, scheme, marc, tmp_path):
    from marcsim.metrics import write_reports
    c = cfg(side, scheme, marc)
    paths = []
    for i in range(2):
        rep = run_simulation(attack(30), c, 9).report(c, "x", 60, 30)
        p = tmp_path / f"r{i}.csv"
        write_reports([rep], p)
        paths.append(p.read_bytes())
    assert paths[0] == paths[1]


@pytest.mark.parametrize("side,scheme", [("dram", "probabilistic"), ("dram", "counter"),
                                         ("mc", "probabilistic"), ("mc", "counter")])
def test_cures_bounded_by_slots(side, scheme):
    c = cfg(side, scheme, True)
    res = run_simulation(attack(), c, 2)
    s = res.schedule
    slots = len(s.cure_slots(c.mitigation)[0])
    assert res.cures <= slots
    if side == "mc":
        assert slots == res.rfms
    else:
        assert slots == len(s.ref_times) // T.nrr_per_refresh + res.rfms


def test_mc_without_rfm_has_no_cures():
    for scheme in ("probabilistic", "counter"):
        res = run_simulation(attack(), cfg("mc", scheme, False), 0)
        assert res.cures == 0


def test_level_c_more_slots():
    tr = attack(duration=SHORT)
    acts = tr.acts()
    ref_times = np.arange(T.t_refi, SHORT, T.t_refi, dtype=np.int64)
    ref_banks = np.full(len(ref_times), -1)
    n_win = SHORT // T.t_refi + 1
    counts = []
    for lv in range(4):
        levels = np.full(n_win, lv, np.int8)
        counts.append(len(_rfm_fast(acts.times, acts.banks, ref_times, ref_banks, levels, RfmConfig(), T)))
    assert counts == sorted(counts) and counts[3] > counts[1] > counts[0]


def test_more_rfm_never_hurts_on_average():
    tr = attack(50, duration=120 * T.t_refi)
    seeds = range(30)
    for scheme in ("probabilistic", "counter"):
        van = build_schedule(tr, cfg("dram", scheme, False))
        marc = build_schedule(tr, cfg("dram", scheme, True))
        mit = cfg("dram", scheme).mitigation
        e_van = np.mean([evaluate(van, mit, s).max_exposure for s in seeds])
        e_marc = np.mean([evaluate(marc, mit, s).max_exposure for s in seeds])
        assert e_marc <= e_van


def test_rfm_blocking_drops_acts():
    tr = attack()
    base = build_schedule(tr, SimConfig())
    blocked = build_schedule(tr, SimConfig(rfm_blocking_ns=350))
    assert blocked.n_acts < base.n_acts
    assert len(blocked.rfm_pos) > 0
    validate_trace(blocked.command_trace(), T)


def test_command_trace_contents():
    res = run_simulation(attack(), SimConfig())
    ct = res.schedule.command_trace()
    assert ct.count(CommandKind.ACT) == res.acts
    assert ct.count(CommandKind.REF) == res.refs
    assert ct.count(CommandKind.RFM) == res.rfms
    assert np.all(np.diff(ct.times) >= 0)


def test_row_keys_separate_banks():
    s = build_schedule(two_bank_trace(1), SimConfig())
    assert np.array_equal(s.act_keys, row_key(s.act_banks, s.act_rows))
