"""Blackbox classifier oracles.

The defence only ever sees a classifier through :class:`Oracle`: an image
goes in, an integer label comes out.  Oracles must be deterministic; a
nondeterministic oracle is a contract violation (detectable via
``self_test=True`` on the subprocess client).

External classifiers speak the ``neo-oracle/1`` line protocol over their
standard streams:

* handshake (oracle -> client): ``{"proto":"neo-oracle/1","num_classes":<int>}``
* request  (client -> oracle): ``{"id":<u64>,"png":"<base64 PNG bytes>"}``
* response (oracle -> client): ``{"id":<u64>,"label":<int>}`` or
  ``{"id":<u64>,"error":"..."}``

One JSON object per line, UTF-8, newline-terminated.  Replies may arrive
out of order; they are matched by id.
"""

from __future__ import annotations

import base64
import json
import subprocess
import threading
from dataclasses import dataclass

import numpy as np

from .errors import (
    OracleProtocolError,
    OracleQueryError,
    OracleTimeoutError,
)
from .image_ops import decode_png_bytes, encode_png_bytes, validate_image

PROTOCOL_NAME = "neo-oracle/1"
DEFAULT_TIMEOUT_S = 30.0


@dataclass(frozen=True)
class OracleDescriptor:
    kind: str  # "in-process" or "subprocess"
    num_classes: int
    thread_safe: bool


class Oracle:
    """Prediction contract: ``classify`` maps an image to a class index."""

    num_classes: int = 0

    def classify(self, img: np.ndarray) -> int:
        raise NotImplementedError

    def classify_batch(self, imgs) -> list:
        """Element-wise :meth:`classify`, order-preserving."""
        return [self.classify(img) for img in imgs]

    def describe(self) -> OracleDescriptor:
        return OracleDescriptor("in-process", self.num_classes, True)

    def close(self) -> None:
        pass


class FunctionOracle(Oracle):
    """Wrap a plain ``f(img) -> int`` callable as an oracle."""

    def __init__(self, fn, num_classes: int):
        self._fn = fn
        self.num_classes = num_classes

    def classify(self, img: np.ndarray) -> int:
        validate_image(img)
        return int(self._fn(img))


class CountingOracle(Oracle):
    """Delegating wrapper that counts queries; used to assert query budgets."""

    def __init__(self, inner: Oracle):
        self.inner = inner
        self.num_classes = inner.num_classes
        self.queries = 0

    def classify(self, img):
        self.queries += 1
        return self.inner.classify(img)

    def classify_batch(self, imgs):
        imgs = list(imgs)
        self.queries += len(imgs)
        return self.inner.classify_batch(imgs)

    def describe(self):
        return self.inner.describe()


class SubprocessOracle(Oracle):
    """Client side of the neo-oracle/1 protocol.

    Launches ``command`` as a child process, performs the handshake, and
    serializes request writes while a reader thread demultiplexes replies
    by id.  Safe for concurrent callers.
    """

    def __init__(self, command, timeout_s: float = DEFAULT_TIMEOUT_S,
                 self_test_image: np.ndarray | None = None):
        self.timeout_s = timeout_s
        self._next_id = 0
        self._lock = threading.Lock()
        self._cond = threading.Condition()
        self._replies: dict[int, dict] = {}
        self._dead: str | None = None

        try:
            self._proc = subprocess.Popen(
                command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
            )
        except OSError as exc:
            raise OracleProtocolError(f"failed to launch oracle: {exc}") from exc

        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

        hello = self._wait_handshake()
        if hello.get("proto") != PROTOCOL_NAME:
            self.close()
            raise OracleProtocolError(
                f"bad handshake: expected proto {PROTOCOL_NAME!r}, got {hello!r}"
            )
        self.num_classes = int(hello["num_classes"])
        if self.num_classes < 2:
            self.close()
            raise OracleProtocolError(
                f"oracle reports {self.num_classes} classes, need at least 2"
            )

        if self_test_image is not None:
            a = self.classify(self_test_image)
            b = self.classify(self_test_image)
            if a != b:
                self.close()
                raise OracleProtocolError(
                    f"oracle is nondeterministic: {a} != {b} on identical input"
                )

    # -- wire plumbing ----------------------------------------------------

    def _read_loop(self):
        handshake_seen = False
        try:
            for line in self._proc.stdout:
                line = line.strip()
                if not line:
                    continue
                try:
                    msg = json.loads(line)
                except json.JSONDecodeError:
                    self._fail(f"oracle sent malformed JSON: {line[:200]!r}")
                    return
                with self._cond:
                    if not handshake_seen:
                        self._replies[-1] = msg
                        handshake_seen = True
                    else:
                        self._replies[msg.get("id")] = msg
                    self._cond.notify_all()
        except ValueError:
            pass  # stream closed underneath us
        self._fail("oracle process closed its output stream")

    def _fail(self, reason: str):
        with self._cond:
            if self._dead is None:
                self._dead = reason
            self._cond.notify_all()

    def _wait_for(self, key: int) -> dict:
        deadline = threading.TIMEOUT_MAX if self.timeout_s is None else self.timeout_s
        with self._cond:
            ok = self._cond.wait_for(
                lambda: key in self._replies or self._dead is not None,
                timeout=deadline,
            )
            if key in self._replies:
                return self._replies.pop(key)
            if self._dead is not None:
                raise OracleProtocolError(self._dead)
            if not ok:
                raise OracleTimeoutError(
                    f"no reply for request {key} within {self.timeout_s}s"
                )
            raise OracleProtocolError("reply wait ended unexpectedly")

    def _wait_handshake(self) -> dict:
        return self._wait_for(-1)

    def _send(self, msg: dict):
        data = json.dumps(msg, separators=(",", ":")) + "\n"
        with self._lock:
            if self._dead is not None:
                raise OracleProtocolError(self._dead)
            try:
                self._proc.stdin.write(data)
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise OracleProtocolError(f"oracle stdin closed: {exc}") from exc

    # -- oracle interface --------------------------------------------------

    def classify(self, img: np.ndarray) -> int:
        return self.classify_batch([img])[0]

    def classify_batch(self, imgs) -> list:
        imgs = list(imgs)
        ids = []
        for img in imgs:
            validate_image(img)
            with self._lock:
                rid = self._next_id
                self._next_id += 1
            ids.append(rid)
        for rid, img in zip(ids, imgs):
            png = base64.b64encode(encode_png_bytes(img)).decode("ascii")
            self._send({"id": rid, "png": png})
        labels = []
        for i, rid in enumerate(ids):
            reply = self._wait_for(rid)
            if "error" in reply:
                raise OracleQueryError(
                    f"oracle error for request {rid}: {reply['error']}", index=i
                )
            if "label" not in reply:
                raise OracleProtocolError(f"reply missing label: {reply!r}")
            labels.append(int(reply["label"]))
        return labels

    def describe(self) -> OracleDescriptor:
        return OracleDescriptor("subprocess", self.num_classes, True)

    def close(self):
        proc = getattr(self, "_proc", None)
        if proc is None:
            return
        try:
            if proc.stdin:
                proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=2.0)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def run_conformance_suite(command, num_classes: int, fuzz_lines: int = 1000,
                          seed: int = 0, timeout_s: float = DEFAULT_TIMEOUT_S,
                          dims: tuple = (16, 16), channels: int = 3) -> list:
    """Check an external oracle command against the neo-oracle/1 contract.

    Returns a list of human-readable failure strings (empty means pass).
    Exercised checks: handshake fields, id matching over an out-of-order-safe
    batch, determinism on a doubled query, lossless pixel round-trip of the
    PNG framing, and resilience to ``fuzz_lines`` corrupted request lines.
    ``dims``/``channels`` size the probe images; match them to what the
    served model accepts.
    """
    rng = np.random.default_rng(seed)
    failures = []
    w, h = dims
    shape = (h, w, channels)
    img = rng.integers(0, 256, size=shape, dtype=np.uint8)

    try:
        oracle = SubprocessOracle(command, timeout_s=timeout_s)
    except Exception as exc:  # noqa: BLE001 - report, not crash
        return [f"handshake failed: {exc}"]

    try:
        if oracle.num_classes != num_classes:
            failures.append(
                f"handshake num_classes {oracle.num_classes} != expected {num_classes}"
            )

        # determinism + id matching across a batch
        batch = [rng.integers(0, 256, size=shape, dtype=np.uint8)
                 for _ in range(8)]
        first = oracle.classify_batch(batch + [img, img])
        second = oracle.classify_batch(batch)
        if first[:8] != second:
            failures.append("batch replies are not stable across repeats")
        if first[8] != first[9]:
            failures.append("doubled query returned differing labels")
        for lab in first:
            if not 0 <= lab < oracle.num_classes:
                failures.append(f"label {lab} outside [0, {oracle.num_classes})")
                break

        # PNG framing round-trips losslessly on our side of the wire
        if not np.array_equal(decode_png_bytes(encode_png_bytes(img)), img):
            failures.append("PNG encode/decode round-trip lost pixel data")

        # fuzzed garbage must draw error replies, never kill the process
        fuzz_failures = _fuzz_oracle(oracle, fuzz_lines, rng)
        failures.extend(fuzz_failures)

        try:
            if oracle.classify(img) != first[8]:
                failures.append("label changed after fuzzing")
        except Exception as exc:  # noqa: BLE001
            failures.append(f"oracle unusable after fuzzing: {exc}")
    finally:
        oracle.close()
    return failures


def _fuzz_oracle(oracle: SubprocessOracle, count: int, rng: np.random.Generator) -> list:
    failures = []
    with_id = [
        lambda i: json.dumps({"id": int(i)}),  # missing png
        lambda i: json.dumps({"id": int(i), "png": "!!!not-base64!!!"}),
        lambda i: json.dumps({"id": int(i), "png": base64.b64encode(b"not a png").decode()}),
    ]
    without_id = [
        "not json at all",
        "{",
        json.dumps({"png": "AAAA"}),
        json.dumps({"id": "strings-not-allowed", "png": "AAAA"}),
    ]
    expect_error = []
    for j in range(count):
        if rng.integers(2):
            with oracle._lock:
                rid = oracle._next_id
                oracle._next_id += 1
            line = with_id[int(rng.integers(len(with_id)))](rid)
            expect_error.append(rid)
        else:
            line = without_id[int(rng.integers(len(without_id)))]
        try:
            with oracle._lock:
                oracle._proc.stdin.write(line + "\n")
                oracle._proc.stdin.flush()
        except OSError:
            failures.append(f"oracle died on fuzz line {j}")
            return failures
    for rid in expect_error:
        try:
            reply = oracle._wait_for(rid)
        except Exception as exc:  # noqa: BLE001
            failures.append(f"no reply for malformed request {rid}: {exc}")
            break
        if "error" not in reply:
            failures.append(f"malformed request {rid} did not get an error reply")
            break
    if oracle._proc.poll() is not None:
        failures.append("oracle process exited during fuzzing")
    return failures
