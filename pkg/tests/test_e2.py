import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oransim import e2
from oransim.datagen import KpmSample
from oransim.e2 import E2Message, MsgType, StreamDecoder, decode_message, encode_message
from oransim.errors import ProtocolError

IQ = E2Message(MsgType.IND_IQ, os.urandom(614_400))
KPM = E2Message(MsgType.IND_KPM, e2.kpm_payload(KpmSample(12.34, 5.678, 0.125, 17), 42))


def _messages():
    free = st.sampled_from([MsgType.SETUP, MsgType.ACK])
    return st.one_of(
        st.builds(E2Message, free, st.binary(max_size=300)),
        st.builds(E2Message, st.just(MsgType.IND_KPM), st.binary(min_size=20, max_size=20)),
        st.builds(lambda a: e2.control_message(a), st.sampled_from([0, 1])),
    )


def test_header_layout():
    raw = encode_message(KPM)
    assert raw[0] == 2 and struct.unpack(">I", raw[1:5])[0] == 20 and len(raw) == 25


@pytest.mark.parametrize("msg", [IQ, KPM, e2.control_message(1), e2.ack_message(), E2Message(MsgType.SETUP)])
def test_round_trip_every_type(msg):
    assert decode_message(encode_message(msg)) == msg


def test_payload_sizes():
    assert len(IQ.payload) == 614_400 and len(KPM.payload) == 20
    assert e2.IQ_PAYLOAD_BYTES == 614_400 and e2.KPM_PAYLOAD_BYTES == 20


def test_large_setup_payload_round_trip():
    msg = E2Message(MsgType.SETUP, bytes(2_000_000))
    assert decode_message(encode_message(msg)) == msg


def test_fixed_sizes_enforced():
    with pytest.raises(ValueError):
        E2Message(MsgType.IND_KPM, bytes(19))
    with pytest.raises(ValueError):
        E2Message(MsgType.IND_IQ, bytes(10))
    with pytest.raises(ProtocolError):
        decode_message(struct.pack(">BI", 2, 19) + bytes(19))


@pytest.mark.parametrize("raw", [b"\x00\x00", struct.pack(">BI", 9, 0), struct.pack(">BI", 0, 5) + b"ab",
                                 struct.pack(">BI", 0, 1) + b"ab"])
def test_malformed_rejected(raw):
    with pytest.raises(ProtocolError):
        decode_message(raw)


@settings(max_examples=300)
@given(st.lists(_messages(), max_size=8), st.lists(st.integers(1, 64), min_size=1, max_size=20))
def test_stream_fragmentation_and_concatenation(msgs, cuts):
    data = b"".join(encode_message(m) for m in msgs)
    dec = StreamDecoder()
    out, pos, i = [], 0, 0
    while pos < len(data):
        n = cuts[i % len(cuts)]
        out += dec.feed(data[pos:pos + n])
        pos += n
        i += 1
    assert out == msgs and dec.pending == 0
    dec.close()


def test_stream_with_iq_byte_by_byte_header():
    data = encode_message(KPM) + encode_message(IQ) + encode_message(e2.ack_message())
    dec = StreamDecoder()
    got = []
    for b in data[:7]:
        got += dec.feed(bytes([b]))
    got += dec.feed(data[7:100_000])
    got += dec.feed(data[100_000:])
    assert got == [KPM, IQ, e2.ack_message()]


def test_stream_poisoned_and_truncated():
    dec = StreamDecoder()
    with pytest.raises(ProtocolError):
        dec.feed(struct.pack(">BI", 77, 0))
    with pytest.raises(ProtocolError):
        dec.feed(encode_message(KPM))
    dec2 = StreamDecoder()
    dec2.feed(encode_message(KPM)[:10])
    with pytest.raises(ProtocolError):
        dec2.close()


def test_kpm_payload_round_trip():
    sample, seq = e2.parse_kpm_payload(KPM.payload)
    assert seq == 42 and sample == KpmSample(12.34, 5.678, 0.125, 17)
    sinr, rate, bler, mcs, s = struct.unpack("<iiiiI", KPM.payload)
    assert (sinr, rate, bler, mcs, s) == (1234, 5678, 125, 17, 42)


@settings(max_examples=300)
@given(st.floats(-20, 40), st.floats(0, 30), st.floats(0, 1), st.integers(0, 28), st.integers(0, 2**32 - 1))
def test_kpm_quantization(sinr, rate, bler, mcs, seq):
    back, s = e2.parse_kpm_payload(e2.kpm_payload(KpmSample(sinr, rate, bler, mcs), seq))
    assert s == seq and back.mcs == mcs
    assert abs(back.ul_sinr - sinr) <= 0.005 + 1e-9 and abs(back.bler - bler) <= 0.0005 + 1e-9
    assert np.isclose(back.bitrate, rate, atol=0.0005 + 1e-9)


def test_kpm_out_of_range_is_protocol_error():
    with pytest.raises(ProtocolError):
        e2.parse_kpm_payload(struct.pack("<iiiiI", 0, 0, 2000, 3, 0))


def test_control_payload():
    assert e2.control_message(1).payload == b"\x01"
    with pytest.raises(ValueError):
        e2.control_message(5)
