"""E2-lite framing between the RAN and the RIC.

Every message on the wire is ``[type u8][length u32 big-endian][payload]``.
The stream is assumed reliable and ordered (a local socket in practice), so
there is no sync marker or checksum.

Payload conventions:

* ``IND_IQ``: one I/Q frame, interleaved little-endian float32 (614,400 bytes).
* ``IND_KPM``: four little-endian int32 KPMs (SINR in centi-dB, bitrate in
  kbit/s, BLER in permille, MCS) followed by a u32 report sequence number.
* ``CONTROL``: a single action byte (0 = fixed max MCS, 1 = adaptive MCS).
* ``SETUP`` and ``ACK``: free-form, usually empty.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from .datagen import FRAME_SAMPLES, KpmSample
from .errors import ProtocolError

HEADER = struct.Struct(">BI")
HEADER_BYTES = HEADER.size
MAX_PAYLOAD = 2 ** 32 - 1
IQ_PAYLOAD_BYTES = 8 * FRAME_SAMPLES
KPM = struct.Struct("<iiiiI")
KPM_PAYLOAD_BYTES = KPM.size


class MsgType(enum.IntEnum):
    SETUP = 0
    IND_IQ = 1
    IND_KPM = 2
    CONTROL = 3
    ACK = 4


_FIXED_SIZES = {MsgType.IND_IQ: IQ_PAYLOAD_BYTES, MsgType.IND_KPM: KPM_PAYLOAD_BYTES,
                MsgType.CONTROL: 1}


@dataclass(frozen=True)
class E2Message:
    msg_type: MsgType
    payload: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "msg_type", MsgType(self.msg_type))
        object.__setattr__(self, "payload", bytes(self.payload))
        want = _FIXED_SIZES.get(self.msg_type)
        if want is not None and len(self.payload) != want:
            raise ValueError(f"{self.msg_type.name} payload must be {want} bytes, "
                             f"got {len(self.payload)}")

    @property
    def length(self) -> int:
        return len(self.payload)


def encode_message(msg: E2Message) -> bytes:
    if len(msg.payload) > MAX_PAYLOAD:
        raise ValueError("payload does not fit a u32 length field")
    return HEADER.pack(int(msg.msg_type), len(msg.payload)) + msg.payload


def _parse_header(buf) -> tuple[MsgType, int]:
    code, length = HEADER.unpack_from(buf, 0)
    try:
        kind = MsgType(code)
    except ValueError:
        raise ProtocolError(f"unknown message type {code}") from None
    want = _FIXED_SIZES.get(kind)
    if want is not None and length != want:
        raise ProtocolError(f"{kind.name} declares {length} payload bytes, expected {want}")
    return kind, length


def decode_message(data: bytes) -> E2Message:
    """Decode exactly one framed message."""
    if len(data) < HEADER_BYTES:
        raise ProtocolError("truncated header")
    kind, length = _parse_header(data)
    if len(data) != HEADER_BYTES + length:
        raise ProtocolError(f"declared length {length} but {len(data) - HEADER_BYTES} payload bytes present")
    return E2Message(kind, data[HEADER_BYTES:])


class StreamDecoder:
    """Incremental decoder: feed arbitrary chunks, collect whole messages.

    A bad header poisons the stream; every later ``feed`` raises too, since
    framing cannot be recovered without a sync marker.
    """

    def __init__(self):
        self._buf = bytearray()
        self._broken: ProtocolError | None = None

    def feed(self, chunk: bytes) -> list[E2Message]:
        if self._broken is not None:
            raise self._broken
        self._buf += chunk
        out = []
        while len(self._buf) >= HEADER_BYTES:
            try:
                kind, length = _parse_header(self._buf)
            except ProtocolError as exc:
                self._broken = exc
                raise
            end = HEADER_BYTES + length
            if len(self._buf) < end:
                break
            out.append(E2Message(kind, bytes(self._buf[HEADER_BYTES:end])))
            del self._buf[:end]
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)

    def close(self) -> None:
        """Signal end of stream; leftover bytes mean a message was cut short."""
        if self._buf:
            raise ProtocolError(f"stream ended with {len(self._buf)} bytes of an incomplete message")


# -- payload helpers ---------------------------------------------------------------

def kpm_payload(sample: KpmSample, seq: int) -> bytes:
    """Integer-cast KPM report plus sequence number (20 bytes)."""
    return KPM.pack(round(sample.ul_sinr * 100), round(sample.bitrate * 1000),
                    round(sample.bler * 1000), int(sample.mcs), seq & 0xFFFFFFFF)


def parse_kpm_payload(payload: bytes) -> tuple[KpmSample, int]:
    if len(payload) != KPM_PAYLOAD_BYTES:
        raise ProtocolError(f"KPM payload must be {KPM_PAYLOAD_BYTES} bytes")
    sinr, rate, bler, mcs, seq = KPM.unpack(payload)
    try:
        return KpmSample(sinr / 100, rate / 1000, bler / 1000, mcs), seq
    except ValueError as exc:
        raise ProtocolError(f"KPM values out of range: {exc}") from None


def control_message(action: int) -> E2Message:
    if action not in (0, 1):
        raise ValueError(f"unknown control action {action}")
    return E2Message(MsgType.CONTROL, bytes([action]))


def ack_message(payload: bytes = b"") -> E2Message:
    return E2Message(MsgType.ACK, payload)
