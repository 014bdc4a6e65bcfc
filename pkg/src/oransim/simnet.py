"""Simulated uplink: UE, RAN and CW jammer behind a parametric link model.

The link abstraction is a per-MCS table of SINR thresholds and peak rates. Each
tick draws an SINR around a base value (lowered while the jammer is on), maps it
to a BLER with a logistic curve centred on the current MCS threshold and derives
the delivered throughput. All constants live in :class:`LinkParams`; they are
calibration values and only their ordering properties are relied upon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
import numpy as np

from .datagen import IqFrame, JammerProfile, KpmSample, synth_iq_frame
from .ric import ADAPTIVE_MCS, FIXED_MAX_MCS

MAX_MCS = 28


@dataclass(frozen=True)
class McsTable:
    """Per-MCS SINR threshold (dB) and peak uplink rate (Mbps at 25 PRBs)."""

    thresholds_db: tuple = tuple(round(-4.0 + 24.0 * i / MAX_MCS, 4) for i in range(MAX_MCS + 1))
    peak_mbps: tuple = tuple(round(0.7 + 17.3 * (i / MAX_MCS) ** 1.2, 4) for i in range(MAX_MCS + 1))

    def __post_init__(self):
        for col in (self.thresholds_db, self.peak_mbps):
            if len(col) != MAX_MCS + 1 or any(b <= a for a, b in zip(col, col[1:])):
                raise ValueError("MCS table columns must be strictly increasing over 29 entries")

    def threshold(self, mcs: int) -> float:
        return self.thresholds_db[mcs]

    def peak(self, mcs: int) -> float:
        return self.peak_mbps[mcs]


@dataclass(frozen=True)
class LinkParams:
    base_sinr_db: float = 25.0
    jam_penalty_40db: float = 27.0
    sinr_sigma_db: float = 1.5
    bler_slope: float = 1.2
    adaptive_margin_db: float = 3.0
    table: McsTable = field(default_factory=McsTable)

    def jam_penalty(self, gain_db: float) -> float:
        # interference-limited regime: 1 dB of SINR lost per dB of jammer gain
        return self.jam_penalty_40db + (gain_db - 40.0)


@dataclass(frozen=True)
class LinkState:
    sinr_db: float = 25.0
    mcs: int = MAX_MCS
    bler: float = 0.0
    throughput_mbps: float = 0.0
    jammer: JammerProfile = field(default_factory=JammerProfile)
    clock_ms: int = 0
    policy: int = FIXED_MAX_MCS

    def kpm(self) -> KpmSample:
        return KpmSample(self.sinr_db, self.throughput_mbps, self.bler, self.mcs)


def bler_of(sinr_db: float, mcs: int, params: LinkParams = LinkParams()) -> float:
    """Logistic block error rate around the MCS threshold."""
    x = params.bler_slope * (sinr_db - params.table.threshold(mcs))
    # numerically safe logistic 1 / (1 + e^x)
    if x >= 0:
        e = math.exp(-x)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(x))


def adaptive_mcs(sinr_db: float, params: LinkParams = LinkParams()) -> int:
    """Largest MCS whose threshold sits at least the adaptive margin below ``sinr_db``."""
    limit = sinr_db - params.adaptive_margin_db
    ok = [i for i, thr in enumerate(params.table.thresholds_db) if thr <= limit]
    return ok[-1] if ok else 0


def link_step(state: LinkState, dt_ms: int, rng: np.random.Generator,
              params: LinkParams = LinkParams()) -> LinkState:
    """Advance the link by ``dt_ms`` and redraw SINR, MCS (if adaptive), BLER, throughput."""
    if dt_ms <= 0:
        raise ValueError("dt_ms must be positive")
    penalty = params.jam_penalty(state.jammer.gain_db) if state.jammer.on else 0.0
    sinr = params.base_sinr_db - penalty + rng.normal(0.0, params.sinr_sigma_db)
    # link adaptation acts on the previous report, one tick behind the channel
    mcs = state.mcs if state.policy == FIXED_MAX_MCS else adaptive_mcs(state.sinr_db, params)
    bler = bler_of(sinr, mcs, params)
    return replace(state, sinr_db=float(sinr), mcs=mcs, bler=bler,
                   throughput_mbps=params.table.peak(mcs) * (1.0 - bler),
                   clock_ms=state.clock_ms + dt_ms)


def apply_control(state: LinkState, decision: int, params: LinkParams = LinkParams()) -> LinkState:
    """Switch MCS policy. Fixed-max pins MCS 28; adaptive picks from the current SINR."""
    if decision == FIXED_MAX_MCS:
        return replace(state, mcs=MAX_MCS, policy=FIXED_MAX_MCS)
    if decision == ADAPTIVE_MCS:
        return replace(state, mcs=adaptive_mcs(state.sinr_db, params), policy=ADAPTIVE_MCS)
    raise ValueError(f"unknown control decision {decision}")


# -- scenario and RAN ----------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioSchedule:
    """Clean phase followed by a jammed phase; all intervals in seconds."""

    total_s: float = 180.0
    clean_s: float = 90.0
    jam_s: float = 90.0
    jam_gain_db: float = 40.0
    kpm_interval_s: float = 1.0
    iq_frame_interval_s: float = 1.0
    tick_ms: int = 100

    def __post_init__(self):
        if not math.isclose(self.clean_s + self.jam_s, self.total_s):
            raise ValueError("clean_s + jam_s must equal total_s")
        if self.tick_ms <= 0:
            raise ValueError("tick_ms must be positive")
        for name in ("kpm_interval_s", "iq_frame_interval_s", "clean_s", "total_s"):
            ticks = getattr(self, name) * 1000 / self.tick_ms
            if not math.isclose(ticks, round(ticks)):
                raise ValueError(f"{name} must be a whole number of ticks")
        if self.kpm_interval_s <= 0 or self.iq_frame_interval_s <= 0:
            raise ValueError("report intervals must be positive")
        JammerProfile("CWI", self.jam_gain_db, True)  # validates the gain range

    @property
    def n_ticks(self) -> int:
        return round(self.total_s * 1000 / self.tick_ms)

    def _every(self, interval_s: float) -> int:
        return round(interval_s * 1000 / self.tick_ms)

    def jammer_at(self, tick: int) -> JammerProfile:
        on = tick * self.tick_ms >= self.clean_s * 1000
        return JammerProfile("CWI", self.jam_gain_db, on)

    def phase_at(self, tick: int) -> str:
        return "jam" if self.jammer_at(tick).on else "clean"

    def emits_kpm(self, tick: int) -> bool:
        return (tick + 1) % self._every(self.kpm_interval_s) == 0

    def emits_iq(self, tick: int) -> bool:
        return (tick + 1) % self._every(self.iq_frame_interval_s) == 0


class RanSimulator:
    """UE + RAN + jammer. Each call to :meth:`link_step` advances one tick.

    The link noise and the I/Q content come from separate seeded streams, so
    control decisions never change the random draws: two runs with the same
    seed see the same channel regardless of what the RIC does.
    """

    def __init__(self, schedule: ScenarioSchedule, seed: int, params: LinkParams = LinkParams(),
                 emit_kpm: bool = True, emit_iq: bool = True, frame_cache: dict | None = None):
        self.schedule = schedule
        self.params = params
        self.emit_kpm = emit_kpm
        self.emit_iq = emit_iq
        link_ss, iq_ss = np.random.SeedSequence(seed).spawn(2)
        self.rng = np.random.default_rng(link_ss)
        self._iq_base = int(iq_ss.generate_state(1, np.uint32)[0])
        self.tick = 0
        self.state = LinkState(sinr_db=params.base_sinr_db, mcs=MAX_MCS, jammer=schedule.jammer_at(0),
                               policy=FIXED_MAX_MCS)
        self.kpm_seq = 0
        self.frame_seq = 0
        # frames depend only on (seed, index), so runs sharing a seed may share them
        self.frame_cache = frame_cache

    def link_step(self, dt_ms: int | None = None) -> tuple[LinkState, KpmSample | None, IqFrame | None]:
        dt = self.schedule.tick_ms if dt_ms is None else dt_ms
        jam = self.schedule.jammer_at(self.tick)
        self.state = link_step(replace(self.state, jammer=jam), dt, self.rng, self.params)
        kpm = iq = None
        if self.emit_kpm and self.schedule.emits_kpm(self.tick):
            kpm = self.state.kpm()
            self.kpm_seq += 1
        if self.emit_iq and self.schedule.emits_iq(self.tick):
            iq = self._frame(jam)
            self.frame_seq += 1
        self.tick += 1
        return self.state, kpm, iq

    def _frame(self, jam: JammerProfile) -> IqFrame:
        key = (self._iq_base, self.frame_seq, jam)
        if self.frame_cache is not None and key in self.frame_cache:
            return self.frame_cache[key]
        seed = int(np.random.SeedSequence((self._iq_base, self.frame_seq)).generate_state(1, np.uint64)[0])
        frame = synth_iq_frame(int(jam.on), jam, seed)
        if self.frame_cache is not None:
            self.frame_cache[key] = frame
        return frame

    def apply_control(self, action: int) -> LinkState:
        self.state = apply_control(self.state, action, self.params)
        return self.state
