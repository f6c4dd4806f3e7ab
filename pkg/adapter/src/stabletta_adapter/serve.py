"""The request loop: HELLO once, then answer INFER_REQ until SHUTDOWN.

The server owns no preprocessing: inputs arrive exactly as HELLO declared
them (float32, the model's native geometry) and leave as raw pre-softmax
logits, so a live client and a byte-for-byte recording of this conversation
are interchangeable.  One request is in flight at a time and inference runs
single-threaded, which makes replies a pure function of the request bytes.

Exit codes: 0 after SHUTDOWN, 2 after a protocol violation (reported to the
client in an ERROR frame first) or a severed stream, 3 when the model cannot
be loaded (reported on stderr, before HELLO is ever sent).
"""

from __future__ import annotations

import sys

import numpy as np

from .wire import (
    MSG_ERROR,
    MSG_HELLO,
    MSG_INFER_REQ,
    MSG_INFER_RESP,
    MSG_SHUTDOWN,
    ProtocolViolation,
    UnexpectedEOF,
    hello_payload,
    infer_resp_payload,
    parse_infer_req,
    read_frame,
    write_frame,
)
from .zoo import ModelLoadError, UnknownModelError, load_model


def serve(model_name: str, device: str = "cpu", weights_path=None,
          stdin=None, stdout=None) -> int:
    """Run the protocol loop on the given byte streams; return the exit code."""
    inp = stdin if stdin is not None else sys.stdin.buffer
    out = stdout if stdout is not None else sys.stdout.buffer

    try:
        spec, model, _ = load_model(model_name, device=device, weights_path=weights_path)
    except (UnknownModelError, ModelLoadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3

    import torch

    torch.set_num_threads(1)

    write_frame(out, MSG_HELLO,
                hello_payload(spec.num_classes, spec.channels, spec.height, spec.width))

    while True:
        try:
            msg_type, payload = read_frame(inp)
        except UnexpectedEOF as exc:
            print(f"error: input stream closed without SHUTDOWN ({exc})", file=sys.stderr)
            return 2
        except ProtocolViolation as exc:
            return _protocol_failure(out, str(exc))

        if msg_type == MSG_SHUTDOWN:
            if payload:
                return _protocol_failure(
                    out, f"SHUTDOWN must carry no payload, got {len(payload)} bytes"
                )
            return 0

        if msg_type != MSG_INFER_REQ:
            return _protocol_failure(out, f"unexpected message type 0x{msg_type:02X}")

        try:
            batch = parse_infer_req(payload, spec.channels, spec.height, spec.width)
        except ProtocolViolation as exc:
            return _protocol_failure(out, str(exc))

        # copy: the parsed batch is a read-only view into the payload bytes
        x = torch.from_numpy(np.array(batch, dtype=np.float32))
        with torch.inference_mode():
            logits = model(x).cpu().numpy()
        write_frame(out, MSG_INFER_RESP, infer_resp_payload(logits))


def _protocol_failure(out, message: str) -> int:
    """Tell the client what broke, then report exit code 2."""
    try:
        write_frame(out, MSG_ERROR, message.encode("utf-8"))
    except OSError:
        pass  # client already gone; the exit code still tells the story
    print(f"error: {message}", file=sys.stderr)
    return 2
