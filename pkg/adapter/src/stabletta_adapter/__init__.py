"""Subprocess model server: a small pretrained classifier zoo spoken over a
length-prefixed stdin/stdout byte protocol.

The package has two jobs and deliberately nothing else: resolve a model name
to a frozen network (`zoo`), and answer inference requests for it over the
wire format (`wire`, `serve`).  It performs no augmentation, no input
normalization, and no training; clients own preprocessing end to end.
"""

from .serve import serve
from .wire import (
    HEADER_SIZE,
    MAX_PAYLOAD,
    MSG_ERROR,
    MSG_HELLO,
    MSG_INFER_REQ,
    MSG_INFER_RESP,
    MSG_SHUTDOWN,
    ProtocolViolation,
    UnexpectedEOF,
    decode_header,
    encode_frame,
    hello_payload,
    infer_req_payload,
    infer_resp_payload,
    parse_hello,
    parse_infer_req,
    parse_infer_resp,
    read_exact,
    read_frame,
    write_frame,
)
from .zoo import (
    MODEL_SPECS,
    ModelLoadError,
    ModelSpec,
    UnknownModelError,
    list_models,
    load_model,
    resolve_device,
)

__version__ = "0.1.0"

__all__ = sorted(
    name for name in dir() if not name.startswith("_") and name != "annotations"
)
