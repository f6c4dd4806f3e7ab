"""Length-prefixed binary framing spoken over stdin/stdout.

Every message is [u32 payload_length][u8 msg_type][payload]; integers are
unsigned little-endian and floats are float32 little-endian throughout.

    HELLO      0x01  server -> client, once at startup:
                     [u32 num_classes][u32 channels][u32 H][u32 W]
    INFER_REQ  0x02  client -> server: [u32 B][B*channels*H*W floats]
    INFER_RESP 0x03  server -> client: [u32 B][B*num_classes floats]
    ERROR      0x7F  server -> client: UTF-8 diagnostic; the server exits
                     with status 2 immediately after writing it
    SHUTDOWN   0xFF  client -> server: empty payload; the server exits 0

INFER_REQ data is sample-major, then channel-major.  The conversation is
strictly half-duplex: the client writes one request and blocks on the one
response, so the server never has to interleave reads and writes.

This module is self-contained on purpose: the byte format above is the
entire contract between this package and any client, and nothing here may
import from one.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

MSG_HELLO = 0x01
MSG_INFER_REQ = 0x02
MSG_INFER_RESP = 0x03
MSG_ERROR = 0x7F
MSG_SHUTDOWN = 0xFF

_HEADER = struct.Struct("<IB")
HEADER_SIZE = _HEADER.size
MAX_PAYLOAD = 1 << 30  # reject absurd length prefixes before allocating


class ProtocolViolation(Exception):
    """A frame that breaks the contract above (the server answers ERROR, exits 2)."""


class UnexpectedEOF(Exception):
    """The peer closed the stream mid-conversation."""


def read_exact(stream: BinaryIO, n: int) -> bytes:
    """Read exactly n bytes or raise UnexpectedEOF."""
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            got = n - remaining
            raise UnexpectedEOF(f"stream ended after {got} of {n} bytes")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream: BinaryIO) -> tuple[int, bytes]:
    """Read one complete frame, returning (msg_type, payload)."""
    length, msg_type = decode_header(read_exact(stream, HEADER_SIZE))
    payload = read_exact(stream, length) if length else b""
    return msg_type, payload


def write_frame(stream: BinaryIO, msg_type: int, payload: bytes = b"") -> None:
    stream.write(encode_frame(msg_type, payload))
    stream.flush()


def encode_frame(msg_type: int, payload: bytes = b"") -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolViolation(f"payload of {len(payload)} bytes exceeds maximum")
    return _HEADER.pack(len(payload), msg_type) + payload


def decode_header(blob: bytes) -> tuple[int, int]:
    """(payload_length, msg_type) from the 5 header bytes."""
    if len(blob) != HEADER_SIZE:
        raise ProtocolViolation(f"short frame header: {len(blob)} bytes")
    length, msg_type = _HEADER.unpack(blob)
    if length > MAX_PAYLOAD:
        raise ProtocolViolation(
            f"declared payload of {length} bytes exceeds maximum"
        )
    return length, msg_type


def hello_payload(num_classes: int, channels: int, height: int, width: int) -> bytes:
    return struct.pack("<IIII", num_classes, channels, height, width)


def parse_hello(payload: bytes) -> tuple[int, int, int, int]:
    if len(payload) != 16:
        raise ProtocolViolation(f"HELLO payload must be 16 bytes, got {len(payload)}")
    c, channels, h, w = struct.unpack("<IIII", payload)
    if c < 2 or channels < 1 or h < 1 or w < 1:
        raise ProtocolViolation(f"implausible HELLO fields: C={c} ch={channels} {h}x{w}")
    return c, channels, h, w


def infer_req_payload(batch: np.ndarray) -> bytes:
    """batch: (B, channels, H, W), cast to little-endian float32."""
    if batch.ndim != 4:
        raise ProtocolViolation(f"INFER_REQ batch must be 4-D, got shape {batch.shape}")
    return struct.pack("<I", batch.shape[0]) + np.ascontiguousarray(
        batch, dtype="<f4"
    ).tobytes()


def parse_infer_req(
    payload: bytes, channels: int, height: int, width: int
) -> np.ndarray:
    """Validate one INFER_REQ against the served geometry; return (B,ch,H,W) f32."""
    if len(payload) < 4:
        raise ProtocolViolation("INFER_REQ payload too short for batch count")
    (b,) = struct.unpack("<I", payload[:4])
    expected = 4 + b * channels * height * width * 4
    if len(payload) != expected:
        raise ProtocolViolation(
            f"INFER_REQ payload is {len(payload)} bytes, expected {expected} "
            f"for B={b} with input {channels}x{height}x{width}"
        )
    flat = np.frombuffer(payload, dtype="<f4", offset=4)
    return flat.reshape(b, channels, height, width)


def infer_resp_payload(logits: np.ndarray) -> bytes:
    if logits.ndim != 2:
        raise ProtocolViolation(f"INFER_RESP logits must be 2-D, got shape {logits.shape}")
    return struct.pack("<I", logits.shape[0]) + np.ascontiguousarray(
        logits, dtype="<f4"
    ).tobytes()


def parse_infer_resp(payload: bytes, num_classes: int) -> np.ndarray:
    if len(payload) < 4:
        raise ProtocolViolation("INFER_RESP payload too short for batch count")
    (b,) = struct.unpack("<I", payload[:4])
    expected = 4 + b * num_classes * 4
    if len(payload) != expected:
        raise ProtocolViolation(
            f"INFER_RESP payload is {len(payload)} bytes, expected {expected} for B={b}"
        )
    flat = np.frombuffer(payload, dtype="<f4", offset=4)
    return flat.reshape(b, num_classes)
