"""Closed-loop runs: RAN -> RIC -> (attacker) -> xApp -> control -> RAN.

Two execution modes share the same components:

* ``det``: everything runs on one virtual clock. Stage latencies are modeled
  constants, the attacker is scheduled strictly between the store and the
  legitimate read (unless ``racy`` is set), and the trace is bit-reproducible.
* ``live``: the RAN and the RIC are separate threads talking E2-lite over a
  loopback TCP socket; the xApps run as their own threads and timestamps are
  wall-clock. Only live traces are valid input for timing reports.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import queue
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

from .attacks import AttackConfig
from .clock import EventScheduler, VirtualClock
from .e2 import E2Message, MsgType, StreamDecoder, ack_message, encode_message, kpm_payload
from .errors import ProtocolError
from .nn import Model
from .ric import PATH_KEYS, RicController
from .sdl import RicDatabase
from .simnet import RanSimulator, ScenarioSchedule
from .xapps import InterClassXapp, MaliciousXapp

log = logging.getLogger(__name__)

MODES = ("det", "live")


@dataclass(frozen=True)
class LatencyModel:
    """Virtual-time stage costs (ms) used in deterministic mode."""

    link_mbps: float = 1000.0
    base_rx_ms: float = 0.05
    process_ms: dict = field(default_factory=lambda: {"spec": 5.0, "kpm": 0.1})
    read_delay_ms: float = 2.0
    inference_ms: float = 1.0
    control_ms: float = 0.5
    grad_eval_ms: float = 1.0  # attacker cost per gradient evaluation (racy mode)
    attacker_delay_ms: float = 0.0

    def rx_ms(self, nbytes: int) -> float:
        return self.base_rx_ms + nbytes * 8 / (self.link_mbps * 1e3)


@dataclass
class LoopConfig:
    """What runs inside the RIC for one scenario.

    Args:
        variant: ``"spec"`` or ``"kpm"`` data path.
        model: the legitimate xApp's classifier.
        attack: ``None`` (no attacker), ``"fgsm"`` or ``"pgd"``.
        victim_model: the attacker's white-box copy; defaults to ``model``.
        racy: let the attacker and the reader race in virtual time.
    """

    variant: str
    model: Model
    attack: Optional[str] = None
    attack_cfg: AttackConfig = field(default_factory=AttackConfig)
    victim_model: Optional[Model] = None
    racy: bool = False
    latency: LatencyModel = field(default_factory=LatencyModel)
    kpm_t: int = 15
    listen: tuple[str, int] = ("127.0.0.1", 0)
    time_scale: float = 0.1  # live mode: wall seconds per virtual second

    def __post_init__(self):
        if self.variant not in PATH_KEYS:
            raise ValueError(f"variant must be one of {tuple(PATH_KEYS)}")
        if self.attack not in (None, "fgsm", "pgd"):
            raise ValueError(f"unknown attack {self.attack!r}")


@dataclass
class ScenarioTrace:
    mode: str
    variant: str
    ticks: list = field(default_factory=list)      # (tick, clock_ms, phase, sinr, mcs, bler, tput, policy, decision)
    decisions: list = field(default_factory=list)  # (clock_ms, version, predicted, truth, action, perturbed)
    stages: list = field(default_factory=list)     # StageTimes

    TICK_HEADER = ("tick", "clock_ms", "phase", "sinr_db", "mcs", "bler", "throughput_mbps", "policy",
                   "decision")
    DECISION_HEADER = ("clock_ms", "version", "predicted", "truth", "action", "perturbed")

    def column(self, name: str, phase: Optional[str] = None) -> list:
        i = self.TICK_HEADER.index(name)
        return [row[i] for row in self.ticks if phase is None or row[2] == phase]

    def decision_accuracy(self) -> float:
        if not self.decisions:
            return math.nan
        return sum(d[2] == d[3] for d in self.decisions) / len(self.decisions)

    def to_csv(self) -> str:
        return _csv(self.TICK_HEADER, self.ticks)

    def decisions_csv(self) -> str:
        return _csv(self.DECISION_HEADER, self.decisions)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(round(v, 9))
    return str(v)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _indication(variant: str, kpm, iq, seq: int) -> Optional[E2Message]:
    if variant == "spec" and iq is not None:
        return E2Message(MsgType.IND_IQ, iq.to_bytes())
    if variant == "kpm" and kpm is not None:
        return E2Message(MsgType.IND_KPM, kpm_payload(kpm, seq))
    return None


def run_scenario(schedule: ScenarioSchedule, loop: LoopConfig, seed: int, mode: str = "det",
                 frame_cache: Optional[dict] = None) -> ScenarioTrace:
    """Drive one full closed-loop run and return its trace.

    ``frame_cache`` lets several runs with the same seed reuse synthesized I/Q
    frames; it never changes results.
    """
    if mode == "det":
        return _run_det(schedule, loop, seed, frame_cache)
    if mode == "live":
        return _run_live(schedule, loop, seed, frame_cache)
    raise ValueError(f"mode must be one of {MODES}")


class _Tracker:
    """Ground truth and perturbation bookkeeping per database version."""

    def __init__(self):
        self.truth: dict[int, int] = {}
        self.perturbed: set[int] = set()

    def stored(self, version: int, truth: int) -> None:
        self.truth[version] = truth

    def rewritten(self, old: int, new: int) -> None:
        self.truth[new] = self.truth[old]
        self.perturbed.add(new)


def _components(loop: LoopConfig, db: RicDatabase, controller_send, clock):
    key = PATH_KEYS[loop.variant]
    ctrl = RicController(db, controller_send, clock, kpm_t=loop.kpm_t)
    xapp = InterClassXapp(loop.variant, loop.model, db.handle("interclass", read=True))
    mal = None
    if loop.attack is not None:
        mal = MaliciousXapp(loop.attack, loop.attack_cfg, loop.victim_model or loop.model,
                            db.handle("malicious", read=True, write=True), key)
    return key, ctrl, xapp, mal


# -- deterministic mode --------------------------------------------------------------

def _run_det(schedule: ScenarioSchedule, loop: LoopConfig, seed: int, frame_cache) -> ScenarioTrace:
    sched = EventScheduler(VirtualClock())
    clock = sched.clock
    lat = loop.latency
    ran = RanSimulator(schedule, seed, emit_kpm=loop.variant == "kpm", emit_iq=loop.variant == "spec",
                       frame_cache=frame_cache)
    db = RicDatabase(clock)
    trace = ScenarioTrace("det", loop.variant)
    track = _Tracker()
    pending_decision = {"value": ""}

    def ran_send(data: bytes) -> bytes:
        msg = E2Message(MsgType.CONTROL, data[5:]) if data[0] == MsgType.CONTROL else None
        if msg is None:
            raise ProtocolError("RAN expected a CONTROL message")
        ran.apply_control(msg.payload[0])
        pending_decision["value"] = msg.payload[0]
        return encode_message(ack_message())

    key, ctrl, xapp, mal = _components(loop, db, ran_send, clock)

    def legit_read():
        decision = xapp.step()
        if decision is None:
            return
        version = xapp.last_version
        sched.after(lat.inference_ms, lambda: finish(decision, version))

    def finish(decision, version):
        ctrl.note_inference(key)
        trace.decisions.append((clock(), version, decision.cause, track.truth[version], decision.action,
                                int(version in track.perturbed)))
        sched.after(lat.control_ms, lambda: ctrl.send_control(decision, key))

    def attack_now():
        got = mal.craft()
        if got is None:
            return
        if loop.racy:
            cost = lat.attacker_delay_ms + mal.gradient_evals * lat.grad_eval_ms
            sched.after(cost, lambda: commit(*got))
        else:
            commit(*got)

    def commit(read_version, value):
        new = mal.commit(read_version, value)
        if new is not None:
            track.rewritten(read_version, new)

    def deliver(msg: E2Message, sent: float, received: float, truth: int):
        stored = ctrl.handle_indication(msg, sent_ms=sent, received_ms=received)
        if stored is None:
            return
        _, version = stored
        track.stored(version, truth)
        if mal is not None:
            attack_now()
        sched.after(lat.read_delay_ms, legit_read)

    def ran_tick():
        state, kpm, iq = ran.link_step()
        msg = _indication(loop.variant, kpm, iq, ran.kpm_seq)
        tick = ran.tick - 1
        decision = pending_decision["value"]
        pending_decision["value"] = ""
        trace.ticks.append((tick, state.clock_ms, schedule.phase_at(tick), state.sinr_db, state.mcs,
                            state.bler, state.throughput_mbps, state.policy, decision))
        if msg is not None:
            sent = clock()
            received = sent + lat.rx_ms(len(msg.payload))
            sched.at(received + lat.process_ms[loop.variant],
                     lambda: deliver(msg, sent, received, int(state.jammer.on)))
        if ran.tick < schedule.n_ticks:
            sched.after(schedule.tick_ms, ran_tick)

    sched.at(0.0, ran_tick)
    sched.run()
    trace.stages = ctrl.records
    return trace


# -- live mode ----------------------------------------------------------------------

def _recv_loop(sock: socket.socket, on_msg, stop: threading.Event, errors: list) -> None:
    dec = StreamDecoder()
    try:
        while not stop.is_set():
            try:
                chunk = sock.recv(1 << 20)
            except socket.timeout:
                continue
            if not chunk:
                break
            for msg in dec.feed(chunk):
                on_msg(msg)
    except (OSError, ProtocolError) as exc:
        if not stop.is_set():
            errors.append(exc)


def _run_live(schedule: ScenarioSchedule, loop: LoopConfig, seed: int, frame_cache) -> ScenarioTrace:
    def wall_ms() -> float:
        return time.perf_counter() * 1000.0

    ran = RanSimulator(schedule, seed, emit_kpm=loop.variant == "kpm", emit_iq=loop.variant == "spec",
                       frame_cache=frame_cache)
    ran_lock = threading.Lock()
    db = RicDatabase(wall_ms)
    trace = ScenarioTrace("live", loop.variant)
    track = _Tracker()
    stop = threading.Event()
    errors: list = []

    listener = socket.create_server(loop.listen)
    ran_sock = socket.create_connection(listener.getsockname()[:2])
    ric_sock, _ = listener.accept()
    listener.close()
    for s in (ran_sock, ric_sock):
        s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        s.settimeout(0.2)
    ran_send_lock = threading.Lock()
    ric_send_lock = threading.Lock()
    sent_times: queue.Queue = queue.Queue()  # ordered stream: FIFO pairs with arrivals
    truths: queue.Queue = queue.Queue()
    acks: queue.Queue = queue.Queue()
    decisions_out = {"value": ""}
    # indications sent but not yet fully handled (stored and, if stored, decided on)
    pending = {"n": 0}
    pending_lock = threading.Lock()

    def settle_one():
        with pending_lock:
            pending["n"] -= 1

    def ric_transport(data: bytes):
        with ric_send_lock:
            ric_sock.sendall(data)
        try:
            return acks.get(timeout=2.0)
        except queue.Empty:
            raise OSError("no ACK from the RAN within 2 s") from None

    key, ctrl, xapp, mal = _components(loop, db, ric_transport, wall_ms)
    notify_x: queue.Queue = queue.Queue()
    notify_m: queue.Queue = queue.Queue()
    ctrl_lock = threading.Lock()

    def ric_on_msg(msg: E2Message):
        received = wall_ms()
        if msg.msg_type == MsgType.ACK:
            acks.put(msg)
            return
        sent, truth = sent_times.get(), truths.get()
        with ctrl_lock:
            stored = ctrl.handle_indication(msg, sent_ms=sent, received_ms=received)
        if stored is None:
            settle_one()
            return
        version = stored[1]
        track.stored(version, truth)
        if mal is not None:
            notify_m.put(version)
        notify_x.put(version)

    def xapp_loop():
        while not stop.is_set():
            try:
                notify_x.get(timeout=0.1)
            except queue.Empty:
                continue
            try:
                time.sleep(loop.latency.read_delay_ms / 1000.0)
                decide_and_send()
            finally:
                settle_one()

    def decide_and_send():
        decision = xapp.step()
        if decision is None:
            return
        version = xapp.last_version
        with ctrl_lock:
            ctrl.note_inference(key)
        trace.decisions.append((wall_ms(), version, decision.cause, track.truth.get(version, -1),
                                decision.action, int(version in track.perturbed)))
        try:
            ctrl.send_control(decision, key)
        except OSError as exc:
            errors.append(exc)

    def attacker_loop():
        while not stop.is_set():
            try:
                notify_m.get(timeout=0.1)
            except queue.Empty:
                continue
            if loop.latency.attacker_delay_ms:
                time.sleep(loop.latency.attacker_delay_ms / 1000.0)
            got = mal.craft()
            if got is not None:
                new = mal.commit(*got)
                if new is not None:
                    track.rewritten(got[0], new)

    def ran_on_msg(msg: E2Message):
        if msg.msg_type != MsgType.CONTROL:
            errors.append(ProtocolError(f"RAN got unexpected {msg.msg_type.name}"))
            return
        with ran_lock:
            ran.apply_control(msg.payload[0])
            decisions_out["value"] = msg.payload[0]
        with ran_send_lock:
            ran_sock.sendall(encode_message(ack_message()))

    threads = [threading.Thread(target=_recv_loop, args=(ric_sock, ric_on_msg, stop, errors), daemon=True),
               threading.Thread(target=_recv_loop, args=(ran_sock, ran_on_msg, stop, errors), daemon=True),
               threading.Thread(target=xapp_loop, daemon=True)]
    if mal is not None:
        threads.append(threading.Thread(target=attacker_loop, daemon=True))
    for t in threads:
        t.start()

    period = schedule.tick_ms / 1000.0 * loop.time_scale
    start = time.perf_counter()
    try:
        for tick in range(schedule.n_ticks):
            with ran_lock:
                state, kpm, iq = ran.link_step()
                decision = decisions_out["value"]
                decisions_out["value"] = ""
            trace.ticks.append((tick, state.clock_ms, schedule.phase_at(tick), state.sinr_db, state.mcs,
                                state.bler, state.throughput_mbps, state.policy, decision))
            msg = _indication(loop.variant, kpm, iq, ran.kpm_seq)
            if msg is not None:
                data = encode_message(msg)
                with pending_lock:
                    pending["n"] += 1
                truths.put(int(state.jammer.on))
                sent_times.put(wall_ms())
                with ran_send_lock:
                    ran_sock.sendall(data)
            if errors:
                break
            delay = start + (tick + 1) * period - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
        # let in-flight items finish their round trips
        deadline = time.perf_counter() + 2.0
        while time.perf_counter() < deadline and (pending["n"] or any(not r.complete() for r in ctrl.records[-1:])):
            time.sleep(0.01)
    finally:
        stop.set()
        for t in threads:
            t.join(timeout=2.0)
        ran_sock.close()
        ric_sock.close()
    if errors:
        raise OSError(f"live run failed: {errors[0]}") from errors[0]
    trace.stages = list(ctrl.records)
    return trace
