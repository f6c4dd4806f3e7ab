"""Logit providers: synthetic Gaussian task, bit-exact replay files, and a
subprocess model-adapter client.

Every provider is observationally a pure function of its configuration and
the (sample_index, pass_index) pair — repeated queries return identical
values, so evaluation order and parallelism cannot change results.
"""

from __future__ import annotations

import os
import select
import shlex
import struct
import subprocess
from dataclasses import dataclass

import numpy as np

from .rng import substream
from .wire import (
    HEADER_SIZE,
    MSG_ERROR,
    MSG_HELLO,
    MSG_INFER_REQ,
    MSG_INFER_RESP,
    MSG_SHUTDOWN,
    ProtocolError,
    ProviderError,
    decode_header,
    encode_frame,
    infer_req_payload,
    parse_hello,
    parse_infer_resp,
)

__all__ = [
    "SyntheticTaskSpec",
    "SyntheticProvider",
    "synthetic_logits",
    "replay_write",
    "replay_read",
    "ReplayProvider",
    "AdapterClient",
    "ProviderError",
    "ProtocolError",
    "ReplayFormatError",
    "BadMagicError",
    "TruncatedReplayError",
    "DimensionMismatchError",
    "AdapterExitError",
    "AdapterTimeoutError",
]


# --- synthetic Gaussian task ------------------------------------------------

@dataclass(frozen=True)
class SyntheticTaskSpec:
    """One-hot margin model: z = margin·e_label + N(0, noise_sigma²·I)."""

    num_classes: int
    num_samples: int
    margin: float
    noise_sigma: float
    seed: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        if self.num_samples < 1:
            raise ValueError(f"need at least 1 sample, got {self.num_samples}")
        if not self.margin > 0:
            raise ValueError(f"margin must be positive, got {self.margin}")
        if not self.noise_sigma > 0:
            raise ValueError(f"noise_sigma must be positive, got {self.noise_sigma}")


class SyntheticProvider:
    """Pure-function provider over a SyntheticTaskSpec.

    ``run_seed`` folds an evaluation run's seed into the stream address so
    repeated runs draw fresh noise while staying reproducible.
    """

    def __init__(self, spec: SyntheticTaskSpec, run_seed: int | None = None):
        self.spec = spec
        self._entropy = (
            spec.seed if run_seed is None else (spec.seed, run_seed)
        )

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes

    @property
    def num_samples(self) -> int:
        return self.spec.num_samples

    def label(self, sample_index: int) -> int:
        self._check_sample(sample_index)
        return sample_index % self.spec.num_classes

    def pass_logits(self, sample_index: int, pass_index: int) -> np.ndarray:
        self._check_sample(sample_index)
        if pass_index < 0:
            raise IndexError(f"pass_index {pass_index} out of range")
        z = substream(self._entropy, sample_index, pass_index).standard_normal(
            self.spec.num_classes
        )
        z *= self.spec.noise_sigma
        z[self.label(sample_index)] += self.spec.margin
        return z

    def _check_sample(self, sample_index: int):
        if not 0 <= sample_index < self.spec.num_samples:
            raise IndexError(
                f"sample_index {sample_index} outside [0, {self.spec.num_samples})"
            )


def synthetic_logits(
    spec: SyntheticTaskSpec, sample_index: int, pass_index: int
) -> tuple[np.ndarray, int]:
    """One pass of the synthetic task; deterministic in (seed, indices)."""
    p = SyntheticProvider(spec)
    return p.pass_logits(sample_index, pass_index), p.label(sample_index)


# --- replay files -----------------------------------------------------------

REPLAY_MAGIC = b"STTR"
REPLAY_VERSION = 1
_REPLAY_HEADER = struct.Struct("<4sBIII")  # magic, version, M, N, C


class ReplayFormatError(ProviderError):
    pass


class BadMagicError(ReplayFormatError):
    pass


class TruncatedReplayError(ReplayFormatError):
    pass


class DimensionMismatchError(ReplayFormatError):
    pass


def replay_write(path, labels, logits) -> None:
    """Serialize per-sample, per-pass logits; atomic, bit-exact round-trip.

    ``logits`` is (M, N, C); storage is float32 little-endian, pass-major.
    The file appears only on success — failures leave nothing behind.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 3:
        raise DimensionMismatchError(
            f"logits must be (M, N, C), got shape {logits.shape}"
        )
    m, n, c = logits.shape
    if labels.shape != (m,):
        raise DimensionMismatchError(
            f"{m} logit records but {labels.shape} labels"
        )
    if m < 1 or n < 1 or c < 1:
        raise DimensionMismatchError(f"degenerate dimensions M={m} N={n} C={c}")
    data32 = np.ascontiguousarray(logits, dtype="<f4")
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            fh.write(_REPLAY_HEADER.pack(REPLAY_MAGIC, REPLAY_VERSION, m, n, c))
            for i in range(m):
                fh.write(struct.pack("<I", int(labels[i])))
                fh.write(data32[i].tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def replay_read(path) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of replay_write: returns (labels (M,), logits (M, N, C) f32)."""
    with open(path, "rb") as fh:
        head = fh.read(_REPLAY_HEADER.size)
        if len(head) < _REPLAY_HEADER.size:
            raise TruncatedReplayError("file shorter than the header")
        magic, version, m, n, c = _REPLAY_HEADER.unpack(head)
        if magic != REPLAY_MAGIC:
            raise BadMagicError(f"bad magic {magic!r}, expected {REPLAY_MAGIC!r}")
        if version != REPLAY_VERSION:
            raise BadMagicError(f"unsupported version {version}")
        if m < 1 or n < 1 or c < 1:
            raise DimensionMismatchError(f"degenerate header M={m} N={n} C={c}")
        rec_bytes = 4 + n * c * 4
        labels = np.empty(m, dtype=np.int64)
        logits = np.empty((m, n, c), dtype=np.float32)
        for i in range(m):
            rec = fh.read(rec_bytes)
            if len(rec) < rec_bytes:
                raise TruncatedReplayError(f"file truncated inside record {i}")
            labels[i] = struct.unpack("<I", rec[:4])[0]
            logits[i] = np.frombuffer(rec, dtype="<f4", offset=4).reshape(n, c)
        if fh.read(1):
            raise DimensionMismatchError("trailing bytes after the last record")
    return labels, logits


class ReplayProvider:
    """Row provider over a replay file; engine-side math is float64."""

    def __init__(self, path):
        self.labels, self._logits = replay_read(path)

    @property
    def num_classes(self) -> int:
        return self._logits.shape[2]

    @property
    def num_samples(self) -> int:
        return self._logits.shape[0]

    @property
    def num_passes(self) -> int:
        return self._logits.shape[1]

    def label(self, sample_index: int) -> int:
        return int(self.labels[sample_index])

    def rows(self, sample_index: int, n_passes: int) -> np.ndarray:
        if n_passes > self.num_passes:
            raise DimensionMismatchError(
                f"requested {n_passes} passes but the file holds {self.num_passes}"
            )
        return self._logits[sample_index, :n_passes].astype(np.float64)


# --- subprocess adapter client ----------------------------------------------

class AdapterExitError(ProviderError):
    pass


class AdapterTimeoutError(ProviderError):
    pass


class AdapterClient:
    """Client half of the wire protocol over a subprocess's stdio.

    One request in flight at a time; every read is bounded by ``timeout``
    seconds (default 60) and any violation — malformed frame, unexpected
    message type, process exit, stall — fails the run loudly.
    """

    def __init__(self, command, timeout: float = 60.0):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = float(timeout)
        try:
            self._proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0
            )
        except OSError as e:
            raise AdapterExitError(f"could not launch adapter {argv!r}: {e}") from e
        self.num_classes, self.channels, self.height, self.width = self._handshake()

    def _handshake(self):
        msg_type, payload = self._read_frame()
        if msg_type != MSG_HELLO:
            raise ProtocolError(
                f"expected HELLO (0x01) first, got message type 0x{msg_type:02X}"
            )
        return parse_hello(payload)

    def _read_exact(self, n: int) -> bytes:
        fd = self._proc.stdout.fileno()
        chunks = []
        got = 0
        while got < n:
            ready, _, _ = select.select([fd], [], [], self.timeout)
            if not ready:
                self._proc.kill()
                raise AdapterTimeoutError(
                    f"adapter produced no data for {self.timeout:.0f} s"
                )
            chunk = os.read(fd, n - got)
            if not chunk:
                code = self._proc.poll()
                if code is None:
                    code = self._proc.wait(timeout=5)
                raise AdapterExitError(
                    f"adapter exited with code {code} mid-message"
                )
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def _read_frame(self) -> tuple[int, bytes]:
        length, msg_type = decode_header(self._read_exact(HEADER_SIZE))
        payload = self._read_exact(length) if length else b""
        if msg_type == MSG_ERROR:
            raise ProtocolError(
                f"adapter error: {payload.decode('utf-8', 'replace')}"
            )
        return msg_type, payload

    def _write(self, blob: bytes):
        try:
            self._proc.stdin.write(blob)
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            code = self._proc.poll()
            raise AdapterExitError(
                f"adapter pipe closed (exit code {code}): {e}"
            ) from e

    def infer(self, batch: np.ndarray) -> np.ndarray:
        """Send one image batch (B, channels, H, W); returns float64 (B, C)."""
        if batch.ndim != 4 or batch.shape[1:] != (self.channels, self.height, self.width):
            raise ProtocolError(
                f"batch shape {batch.shape} does not match adapter input "
                f"({self.channels}, {self.height}, {self.width})"
            )
        self._write(encode_frame(MSG_INFER_REQ, infer_req_payload(batch)))
        msg_type, payload = self._read_frame()
        if msg_type != MSG_INFER_RESP:
            raise ProtocolError(
                f"expected INFER_RESP (0x03), got message type 0x{msg_type:02X}"
            )
        logits = parse_infer_resp(payload, self.num_classes)
        if logits.shape[0] != batch.shape[0]:
            raise ProtocolError(
                f"sent batch of {batch.shape[0]}, received {logits.shape[0]} rows"
            )
        return logits.astype(np.float64)

    def shutdown(self) -> int:
        """Send SHUTDOWN and reap the process; returns its exit code."""
        try:
            self._write(encode_frame(MSG_SHUTDOWN))
            self._proc.stdin.close()
            return self._proc.wait(timeout=self.timeout)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            raise AdapterTimeoutError("adapter ignored SHUTDOWN") from None
        except AdapterExitError:
            return self._proc.wait(timeout=5)

    def close(self):
        if self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.shutdown()
        else:
            self.close()
