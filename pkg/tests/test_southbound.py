"""Frame codec and transports for the control plane."""

import pytest

from qkdnet.eventsim import EventEngine
from qkdnet.southbound import (
    HEARTBEAT,
    REGISTER,
    TELEMETRY,
    FrameError,
    LoopbackTransport,
    TcpFrameClient,
    TcpFrameServer,
    decode_frames,
    encode_frame,
)


def test_frame_round_trip():
    raw = encode_frame(REGISTER, {"node_id": "a", "n": 1})
    buf = bytearray(raw)
    frames = decode_frames(buf)
    assert frames == [(REGISTER, {"node_id": "a", "n": 1})]
    assert not buf


def test_decoder_handles_partial_and_concatenated_frames():
    raw = encode_frame(HEARTBEAT, {"node_id": "a"}) + encode_frame(
        TELEMETRY, {"node_id": "a", "channels": []}
    )
    buf = bytearray()
    seen = []
    for byte in raw:
        buf.append(byte)
        seen.extend(decode_frames(buf))
    assert [m for m, _ in seen] == [HEARTBEAT, TELEMETRY]


def test_unknown_message_type_rejected():
    with pytest.raises(FrameError):
        encode_frame(99, {})
    raw = bytearray(b"\x01\x63\x00\x00\x00\x02{}")
    with pytest.raises(FrameError):
        decode_frames(raw)


def test_bad_version_rejected():
    raw = bytearray(encode_frame(HEARTBEAT, {}))
    raw[0] = 9
    with pytest.raises(FrameError, match="version"):
        decode_frames(raw)


def test_loopback_transport_orders_frames_deterministically():
    engine = EventEngine()
    transport = LoopbackTransport(engine)
    got = []
    transport.attach("x", lambda mt, body: got.append((mt, body["i"])))
    for i in range(5):
        transport.send("x", HEARTBEAT, {"i": i})
    engine.run_until(0.0)
    assert got == [(HEARTBEAT, i) for i in range(5)]


def test_tcp_transport_round_trip():
    received = []

    def handler(msg_type, payload):
        received.append((msg_type, payload))
        return (msg_type, {"ack": payload.get("n")})

    server = TcpFrameServer("127.0.0.1", 0, handler).start()
    try:
        client = TcpFrameClient("127.0.0.1", server.port)
        client.send(REGISTER, {"node_id": "remote", "n": 7})
        msg_type, reply = client.recv()
        assert msg_type == REGISTER
        assert reply == {"ack": 7}
        client.close()
    finally:
        server.close()
    assert received == [(REGISTER, {"node_id": "remote", "n": 7})]
