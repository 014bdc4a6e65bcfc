import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oransim import simnet
from oransim.clock import EventScheduler, VirtualClock
from oransim.datagen import JammerProfile
from oransim.ric import ADAPTIVE_MCS, FIXED_MAX_MCS
from oransim.simnet import LinkParams, LinkState, McsTable, RanSimulator, ScenarioSchedule


@settings(max_examples=500)
@given(st.floats(-30, 50), st.floats(0.01, 10), st.integers(0, 28))
def test_bler_monotone_in_sinr(sinr, delta, mcs):
    assert simnet.bler_of(sinr + delta, mcs) <= simnet.bler_of(sinr, mcs)


@settings(max_examples=500)
@given(st.floats(-30, 50), st.integers(0, 27))
def test_bler_monotone_in_mcs(sinr, mcs):
    assert simnet.bler_of(sinr, mcs + 1) >= simnet.bler_of(sinr, mcs)
    assert 0.0 <= simnet.bler_of(sinr, mcs) <= 1.0


def test_mcs_table_strictly_increasing():
    t = McsTable()
    assert all(b > a for a, b in zip(t.thresholds_db, t.thresholds_db[1:]))
    assert all(b > a for a, b in zip(t.peak_mbps, t.peak_mbps[1:]))
    with pytest.raises(ValueError):
        McsTable(thresholds_db=(0.0,) * 29)


def test_jam_penalty_calibration():
    p = LinkParams()
    assert p.jam_penalty(40) == 27.0 and p.jam_penalty(30) == 17.0


@settings(max_examples=300)
@given(st.integers(0, 2**31), st.booleans(), st.sampled_from([FIXED_MAX_MCS, ADAPTIVE_MCS]))
def test_link_step_invariants(seed, jam, policy):
    rng = np.random.default_rng(seed)
    s = LinkState(jammer=JammerProfile(gain_db=35, on=jam), policy=policy)
    for _ in range(5):
        s = simnet.link_step(s, 100, rng)
        assert 0 <= s.bler <= 1 and 0 <= s.mcs <= 28
        assert s.throughput_mbps <= LinkParams().table.peak(s.mcs) + 1e-12


def test_adaptive_beats_fixed_under_jamming():
    def mean_tput(policy):
        rng = np.random.default_rng(0)
        s = LinkState(jammer=JammerProfile(gain_db=40, on=True), policy=policy)
        out = []
        for _ in range(300):
            s = simnet.link_step(s, 100, rng)
            out.append(s.throughput_mbps)
        return np.mean(out)
    assert mean_tput(ADAPTIVE_MCS) > mean_tput(FIXED_MAX_MCS)


def test_apply_control():
    s = LinkState(sinr_db=10.0, mcs=3)
    assert simnet.apply_control(s, FIXED_MAX_MCS).mcs == 28
    a = simnet.apply_control(s, ADAPTIVE_MCS)
    assert a.policy == ADAPTIVE_MCS and a.mcs == simnet.adaptive_mcs(10.0)
    assert LinkParams().table.threshold(a.mcs) <= 10.0 - 3.0
    with pytest.raises(ValueError):
        simnet.apply_control(s, 9)


def test_schedule_validation_and_phases():
    s = ScenarioSchedule()
    assert s.n_ticks == 1800 and s.phase_at(899) == "clean" and s.phase_at(900) == "jam"
    assert sum(s.emits_iq(t) for t in range(s.n_ticks)) == 180
    for kw in (dict(clean_s=80.0), dict(kpm_interval_s=0.15), dict(jam_gain_db=45.0), dict(tick_ms=0)):
        with pytest.raises(ValueError):
            ScenarioSchedule(**kw)


def test_ran_reports_current_state_and_is_seeded():
    sched = ScenarioSchedule(total_s=4.0, clean_s=2.0, jam_s=2.0, iq_frame_interval_s=2.0)
    a, b = RanSimulator(sched, 5), RanSimulator(sched, 5)
    n_iq = 0
    for _ in range(sched.n_ticks):
        sa, ka, ia = a.link_step()
        sb, kb, ib = b.link_step()
        assert sa == sb
        if ka is not None:
            assert ka == sa.kpm()  # no stale reporting
        if ia is not None:
            n_iq += 1
            assert ia.to_bytes() == ib.to_bytes()
    assert n_iq == 2 and a.kpm_seq == 4


def test_frame_cache_does_not_change_frames():
    sched = ScenarioSchedule(total_s=2.0, clean_s=1.0, jam_s=1.0)
    cache = {}
    base = RanSimulator(sched, 3)
    plain = [f for _, _, f in (base.link_step() for _ in range(20)) if f is not None]
    sim = RanSimulator(sched, 3, frame_cache=cache)
    cached = [f for _, _, f in (sim.link_step() for _ in range(20)) if f is not None]
    again = RanSimulator(sched, 3, frame_cache=cache)
    reused = [f for _, _, f in (again.link_step() for _ in range(20)) if f is not None]
    assert len(cache) == 2
    assert [f.to_bytes() for f in plain] == [f.to_bytes() for f in cached] == [f.to_bytes() for f in reused]


def test_control_does_not_change_channel_draws():
    sched = ScenarioSchedule(total_s=2.0, clean_s=1.0, jam_s=1.0)
    a, b = RanSimulator(sched, 8, emit_iq=False), RanSimulator(sched, 8, emit_iq=False)
    for i in range(20):
        if i == 5:
            b.apply_control(ADAPTIVE_MCS)
        assert a.link_step()[0].sinr_db == b.link_step()[0].sinr_db


def test_scheduler_orders_by_time_then_insertion():
    sched = EventScheduler()
    seen = []
    sched.at(5, lambda: seen.append("b"))
    sched.at(1, lambda: seen.append("a"))
    sched.at(5, lambda: seen.append("c"))
    sched.at(1, lambda: sched.after(4, lambda: seen.append("d")))
    assert sched.run(until_ms=4) == 2 and len(sched) == 3
    sched.run()
    assert seen == ["a", "b", "c", "d"] and sched.clock() == 5.0
    with pytest.raises(ValueError):
        sched.at(1, lambda: None)
    with pytest.raises(ValueError):
        VirtualClock(3.0).advance_to(2.0)
