"""Shared helpers: a subprocess handle for the server and a digit dataset."""

from __future__ import annotations

import select
import shlex
import subprocess
import sys

import numpy as np
import pytest

from stabletta_adapter import wire
from stabletta_adapter.digits import quantized_digits, save_digit_png, split_indices

SERVE_ARGV = [sys.executable, "-m", "stabletta_adapter", "serve"]
ENGINE_ARGV = [sys.executable, "-m", "stabletta.cli"]
READ_TIMEOUT = 60.0


def serve_proc(*args: str) -> subprocess.Popen:
    """Launch the server subprocess with binary pipes on stdin/stdout."""
    return subprocess.Popen(
        SERVE_ARGV + list(args),
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
    )


def finish(proc: subprocess.Popen) -> tuple[int, str]:
    """Close pipes, reap the process, return (exit_code, stderr_text)."""
    for stream in (proc.stdin, proc.stdout):
        if stream and not stream.closed:
            stream.close()
    err = proc.stderr.read() if proc.stderr else b""
    code = proc.wait(timeout=READ_TIMEOUT)
    if proc.stderr and not proc.stderr.closed:
        proc.stderr.close()
    return code, err.decode("utf-8", errors="replace")


def read_frame(proc: subprocess.Popen) -> tuple[int, bytes]:
    """wire.read_frame with a select() guard so a wedged server fails fast."""
    ready, _, _ = select.select([proc.stdout], [], [], READ_TIMEOUT)
    if not ready:
        raise TimeoutError(f"no frame from server within {READ_TIMEOUT}s")
    return wire.read_frame(proc.stdout)


def send(proc: subprocess.Popen, msg_type: int, payload: bytes = b"") -> None:
    proc.stdin.write(wire.encode_frame(msg_type, payload))
    proc.stdin.flush()


def expect_hello(proc: subprocess.Popen) -> tuple[int, int, int, int]:
    msg_type, payload = read_frame(proc)
    assert msg_type == wire.MSG_HELLO, f"first frame was 0x{msg_type:02X}"
    return wire.parse_hello(payload)


def infer(proc: subprocess.Popen, batch: np.ndarray, num_classes: int) -> np.ndarray:
    send(proc, wire.MSG_INFER_REQ, wire.infer_req_payload(batch))
    msg_type, payload = read_frame(proc)
    assert msg_type == wire.MSG_INFER_RESP, f"expected INFER_RESP, got 0x{msg_type:02X}"
    return wire.parse_infer_resp(payload, num_classes)


def shutdown(proc: subprocess.Popen) -> tuple[int, str]:
    send(proc, wire.MSG_SHUTDOWN)
    return finish(proc)


def adapter_cmd_string(model: str = "tinycnn-digits") -> str:
    """The serve invocation as a single shell string for a client's flag."""
    return shlex.join(SERVE_ARGV + ["--model", model])


def run_engine(*args: str) -> subprocess.CompletedProcess:
    """Invoke the evaluation engine's CLI as a plain subprocess."""
    return subprocess.run(
        ENGINE_ARGV + list(args), capture_output=True, text=True, timeout=600
    )


@pytest.fixture(scope="session")
def digit_dataset(tmp_path_factory):
    """Eight held-out digits as grayscale PNGs with a path,label manifest."""
    root = tmp_path_factory.mktemp("digits")
    images, labels = quantized_digits()
    _, held_out = split_indices(len(images))
    chosen = held_out[:8]
    rows = ["path,label"]
    for j, idx in enumerate(chosen):
        name = f"digit{j}.png"
        save_digit_png(images[idx], root / name)
        rows.append(f"{name},{labels[idx]}")
    manifest = root / "manifest.csv"
    manifest.write_text("\n".join(rows) + "\n")
    return {
        "manifest": str(manifest),
        "images": images[chosen],
        "labels": labels[chosen],
    }
