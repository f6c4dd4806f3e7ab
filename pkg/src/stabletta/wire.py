"""Length-prefixed binary framing for subprocess logit servers.

Every message is [u32 payload_length][u8 msg_type][payload], all integers
unsigned little-endian, all floats float32 little-endian.

    HELLO      0x01  adapter -> engine, once: [u32 C][u32 channels][u32 H][u32 W]
    INFER_REQ  0x02  engine -> adapter: [u32 B][B*channels*H*W floats]
    INFER_RESP 0x03  adapter -> engine: [u32 B][B*C floats]
    ERROR      0x7F  adapter -> engine: UTF-8 diagnostic, then the adapter exits
    SHUTDOWN   0xFF  engine -> adapter: empty payload

The payload layout of INFER_REQ is sample-major, channel-major.  No message
is ever in flight in both directions at once: the engine writes one request
and blocks for one response.
"""

from __future__ import annotations

import struct

import numpy as np

MSG_HELLO = 0x01
MSG_INFER_REQ = 0x02
MSG_INFER_RESP = 0x03
MSG_ERROR = 0x7F
MSG_SHUTDOWN = 0xFF

_HEADER = struct.Struct("<IB")
MAX_PAYLOAD = 1 << 30  # sanity bound against corrupted length prefixes


class ProviderError(Exception):
    """Base class for every provider/protocol failure (CLI exit code 2)."""


class ProtocolError(ProviderError):
    pass


def encode_frame(msg_type: int, payload: bytes = b"") -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {len(payload)} bytes exceeds maximum")
    return _HEADER.pack(len(payload), msg_type) + payload


def decode_header(blob: bytes) -> tuple[int, int]:
    """(payload_length, msg_type) from the 5 header bytes."""
    if len(blob) != _HEADER.size:
        raise ProtocolError(f"short frame header: {len(blob)} bytes")
    length, msg_type = _HEADER.unpack(blob)
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"declared payload of {length} bytes exceeds maximum")
    return length, msg_type


HEADER_SIZE = _HEADER.size


def hello_payload(num_classes: int, channels: int, height: int, width: int) -> bytes:
    return struct.pack("<IIII", num_classes, channels, height, width)


def parse_hello(payload: bytes) -> tuple[int, int, int, int]:
    if len(payload) != 16:
        raise ProtocolError(f"HELLO payload must be 16 bytes, got {len(payload)}")
    c, channels, h, w = struct.unpack("<IIII", payload)
    if c < 2 or channels < 1 or h < 1 or w < 1:
        raise ProtocolError(f"implausible HELLO fields: C={c} ch={channels} {h}x{w}")
    return c, channels, h, w


def infer_req_payload(batch: np.ndarray) -> bytes:
    """batch: (B, channels, H, W), cast to little-endian float32."""
    if batch.ndim != 4:
        raise ProtocolError(f"INFER_REQ batch must be 4-D, got shape {batch.shape}")
    return struct.pack("<I", batch.shape[0]) + np.ascontiguousarray(
        batch, dtype="<f4"
    ).tobytes()


def parse_infer_req(payload: bytes, channels: int, height: int, width: int) -> np.ndarray:
    if len(payload) < 4:
        raise ProtocolError("INFER_REQ payload too short for batch count")
    (b,) = struct.unpack("<I", payload[:4])
    expected = 4 + b * channels * height * width * 4
    if len(payload) != expected:
        raise ProtocolError(
            f"INFER_REQ payload is {len(payload)} bytes, expected {expected} for B={b}"
        )
    flat = np.frombuffer(payload, dtype="<f4", offset=4)
    return flat.reshape(b, channels, height, width)


def infer_resp_payload(logits: np.ndarray) -> bytes:
    if logits.ndim != 2:
        raise ProtocolError(f"INFER_RESP logits must be 2-D, got shape {logits.shape}")
    return struct.pack("<I", logits.shape[0]) + np.ascontiguousarray(
        logits, dtype="<f4"
    ).tobytes()


def parse_infer_resp(payload: bytes, num_classes: int) -> np.ndarray:
    if len(payload) < 4:
        raise ProtocolError("INFER_RESP payload too short for batch count")
    (b,) = struct.unpack("<I", payload[:4])
    expected = 4 + b * num_classes * 4
    if len(payload) != expected:
        raise ProtocolError(
            f"INFER_RESP payload is {len(payload)} bytes, expected {expected} for B={b}"
        )
    flat = np.frombuffer(payload, dtype="<f4", offset=4)
    return flat.reshape(b, num_classes)
