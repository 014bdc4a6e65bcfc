"""Near-RT RIC core: indication handling, control decisions and stage timing.

The controller is the single logical event loop of the RIC. It turns
indications into database entries (spectrograms or KPM windows) and relays
xApp decisions to the RAN as CONTROL messages. Every data item gets a
:class:`StageTimes` record so the timing breakdown can be rebuilt later.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .datagen import CWI, KPM_BOUNDS, SOI, IqFrame, gen_kpm_window, iq_to_spectrogram
from .e2 import E2Message, MsgType, control_message, decode_message, encode_message, parse_kpm_payload
from .errors import ProtocolError
from .sdl import RicDatabase, pack_array, sdl_put

log = logging.getLogger(__name__)

FIXED_MAX_MCS = 0
ADAPTIVE_MCS = 1
ACTION_NAMES = ("FIXED_MAX_MCS", "ADAPTIVE_MCS")

SPEC_KEY = "spec/latest"
KPM_KEY = "kpm/latest"
PATH_KEYS = {"spec": SPEC_KEY, "kpm": KPM_KEY}

STAGES = ("receive_data", "forward_to_processing", "process_and_store", "model_inference",
          "control_to_ran")


@dataclass(frozen=True)
class ControlDecision:
    action: int
    cause: int  # predicted class

    def __post_init__(self):
        if self.cause not in (SOI, CWI):
            raise ValueError(f"unknown class {self.cause}")
        if self.action != decision_action(self.cause):
            raise ValueError("action must follow from the predicted class")


def decision_action(predicted: int) -> int:
    """No jammer: run at the highest MCS. Jammer: fall back to link adaptation."""
    return ADAPTIVE_MCS if predicted == CWI else FIXED_MAX_MCS


def decide(predicted: int) -> ControlDecision:
    return ControlDecision(decision_action(int(predicted)), int(predicted))


@dataclass
class StageTimes:
    """Timestamps (ms) of one data item through the pipeline.

    ``sent`` is taken by the RAN just before writing the indication, ``acked``
    when the RIC sees the RAN's ACK for the resulting CONTROL message.
    """

    path: str
    seq: int
    nbytes: int
    sent: float = math.nan
    received: float = math.nan
    forwarded: float = math.nan
    stored: float = math.nan
    inferred: float = math.nan
    acked: float = math.nan
    version: int = 0

    def complete(self) -> bool:
        return not any(math.isnan(t) for t in self.marks())

    def marks(self) -> tuple:
        return (self.sent, self.received, self.forwarded, self.stored, self.inferred, self.acked)

    def durations(self) -> dict:
        m = self.marks()
        out = {name: m[i + 1] - m[i] for i, name in enumerate(STAGES)}
        out["total"] = m[-1] - m[0]
        return out


class RicController:
    """Routes indications into the RIC database and control decisions out to the RAN.

    Args:
        db: RIC database shared with the xApps.
        send: transport callable taking encoded bytes of a CONTROL message and
            returning the RAN's reply (an ACK message or its encoding). It may
            raise ``OSError`` on transport failure.
        clock: ms clock used for stage timestamps (virtual or wall).
        kpm_t: KPM window length in reports.
    """

    def __init__(self, db: RicDatabase, send: Optional[Callable[[bytes], object]] = None,
                 clock: Optional[Callable[[], float]] = None, kpm_t: int = 15,
                 kpm_bounds: Sequence = KPM_BOUNDS):
        self.db = db
        self.send = send
        self.clock = clock or db.clock
        self.kpm_t = kpm_t
        self.kpm_bounds = kpm_bounds
        self.sdl = db.handle("ric-processing", read=True, write=True)
        self._window: deque = deque(maxlen=kpm_t)
        self.records: list[StageTimes] = []
        self._current: dict[str, StageTimes] = {}

    def handle_indication(self, msg: E2Message, sent_ms: float = math.nan,
                          received_ms: Optional[float] = None) -> Optional[tuple[str, int]]:
        """Process and store one indication. Returns (key, version), or None while
        the KPM window is still filling."""
        received = self.clock() if received_ms is None else received_ms
        forwarded = self.clock()
        if msg.msg_type == MsgType.IND_IQ:
            path, key = "spec", SPEC_KEY
            try:
                frame = IqFrame.from_bytes(msg.payload)
            except ValueError as exc:
                raise ProtocolError(str(exc)) from None
            value = pack_array(iq_to_spectrogram(frame))
            seq = len(self.records)
        elif msg.msg_type == MsgType.IND_KPM:
            path, key = "kpm", KPM_KEY
            sample, seq = parse_kpm_payload(msg.payload)
            self._window.append(sample)
            if len(self._window) < self.kpm_t:
                return None
            value = pack_array(gen_kpm_window(list(self._window), self.kpm_t, bounds=self.kpm_bounds))
        else:
            raise ProtocolError(f"{msg.msg_type.name} is not an indication")
        version = sdl_put(self.sdl, key, value)
        rec = StageTimes(path, seq, len(msg.payload), sent_ms, received, forwarded, self.clock(),
                         version=version)
        self.records.append(rec)
        self._current[key] = rec
        return key, version

    def note_inference(self, key: str, when: Optional[float] = None) -> None:
        rec = self._current.get(key)
        if rec is not None and math.isnan(rec.inferred):
            rec.inferred = self.clock() if when is None else when

    def send_control(self, decision: ControlDecision, key: Optional[str] = None) -> E2Message:
        """Send a CONTROL message for ``decision`` and wait for the RAN's ACK."""
        msg = control_message(decision.action)
        if self.send is None:
            raise OSError("no RAN transport attached")
        reply = self.send(encode_message(msg))
        if isinstance(reply, (bytes, bytearray)):
            reply = decode_message(bytes(reply))
        if reply is not None and reply.msg_type != MsgType.ACK:
            raise ProtocolError(f"expected ACK, got {reply.msg_type.name}")
        if reply is not None:
            self.note_ack(key)
        return msg

    def note_ack(self, key: Optional[str], when: Optional[float] = None) -> None:
        rec = self._current.get(key) if key else None
        if rec is not None and math.isnan(rec.acked):
            rec.acked = self.clock() if when is None else when
