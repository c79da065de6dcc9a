"""Control-plane framing: length-prefixed binary frames over a byte stream.

Frame layout: version (1 B) | msg_type (1 B) | payload length (4 B, BE) |
JSON payload. The same codec runs over the in-process loopback used in
simulation and over TCP in live deployments.
"""

from __future__ import annotations

import json
import socket
import struct
import threading

PROTOCOL_VERSION = 1
_HEADER = struct.Struct(">BBI")

REGISTER = 1
HEARTBEAT = 2
TELEMETRY = 3
SWITCH_CMD = 4
CHANNEL_EVENT = 5
RELAY_CMD = 6
RELAY_RESULT = 7

MSG_NAMES = {
    REGISTER: "REGISTER",
    HEARTBEAT: "HEARTBEAT",
    TELEMETRY: "TELEMETRY",
    SWITCH_CMD: "SWITCH_CMD",
    CHANNEL_EVENT: "CHANNEL_EVENT",
    RELAY_CMD: "RELAY_CMD",
    RELAY_RESULT: "RELAY_RESULT",
}

MAX_PAYLOAD = 1 << 22


class FrameError(ValueError):
    pass


def encode_frame(msg_type: int, payload: dict, version: int = PROTOCOL_VERSION) -> bytes:
    if msg_type not in MSG_NAMES:
        raise FrameError(f"unknown msg_type {msg_type}")
    body = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    if len(body) > MAX_PAYLOAD:
        raise FrameError("payload too large")
    return _HEADER.pack(version, msg_type, len(body)) + body


def decode_frames(buffer: bytearray):
    """Consume complete frames from the front of a byte buffer."""
    frames = []
    while len(buffer) >= _HEADER.size:
        version, msg_type, length = _HEADER.unpack_from(buffer)
        if version != PROTOCOL_VERSION:
            raise FrameError(f"unsupported protocol version {version}")
        if msg_type not in MSG_NAMES:
            raise FrameError(f"unknown msg_type {msg_type}")
        if length > MAX_PAYLOAD:
            raise FrameError("payload too large")
        if len(buffer) < _HEADER.size + length:
            break
        body = bytes(buffer[_HEADER.size : _HEADER.size + length])
        del buffer[: _HEADER.size + length]
        frames.append((msg_type, json.loads(body)))
    return frames


class LoopbackTransport:
    """Deterministic in-process frame channel riding the event engine.

    Frames still round-trip through encode/decode so the wire format is
    exercised on every message.
    """

    def __init__(self, engine, latency_s: float = 0.0):
        self.engine = engine
        self.latency_s = latency_s
        self._handlers = {}

    def attach(self, endpoint: str, handler) -> None:
        self._handlers[endpoint] = handler

    def send(self, to: str, msg_type: int, payload: dict) -> None:
        raw = encode_frame(msg_type, payload)
        handler = self._handlers.get(to)
        if handler is None:
            raise FrameError(f"no endpoint '{to}' attached")

        def deliver():
            buf = bytearray(raw)
            for mt, body in decode_frames(buf):
                handler(mt, body)

        self.engine.call_after(self.latency_s, deliver)


class TcpFrameServer:
    """Accepts framed connections; each decoded frame goes to the handler."""

    def __init__(self, host: str, port: int, handler):
        self.handler = handler
        self._sock = socket.create_server((host, port))
        self.port = self._sock.getsockname()[1]
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)

    def start(self):
        self._thread.start()
        return self

    def _accept_loop(self):
        self._sock.settimeout(0.2)
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            threading.Thread(target=self._serve, args=(conn,), daemon=True).start()

    def _serve(self, conn: socket.socket):
        buf = bytearray()
        with conn:
            while not self._stop.is_set():
                try:
                    chunk = conn.recv(65536)
                except OSError:
                    break
                if not chunk:
                    break
                buf.extend(chunk)
                for msg_type, payload in decode_frames(buf):
                    reply = self.handler(msg_type, payload)
                    if reply is not None:
                        conn.sendall(encode_frame(reply[0], reply[1]))

    def close(self):
        self._stop.set()
        self._sock.close()


class TcpFrameClient:
    def __init__(self, host: str, port: int):
        self._sock = socket.create_connection((host, port))
        self._buf = bytearray()

    def send(self, msg_type: int, payload: dict) -> None:
        self._sock.sendall(encode_frame(msg_type, payload))

    def recv(self, timeout: float = 5.0):
        self._sock.settimeout(timeout)
        while True:
            frames = decode_frames(self._buf)
            if frames:
                return frames[0]
            chunk = self._sock.recv(65536)
            if not chunk:
                raise FrameError("connection closed mid-frame")
            self._buf.extend(chunk)

    def close(self):
        self._sock.close()
