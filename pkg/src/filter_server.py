#!/usr/bin/env python3
"""
Mail filter front ends

Pipe mode reads one message on stdin and writes it back with two verdict
headers. Socket mode serves length-prefixed frames (4-byte big-endian length
+ payload) on a Unix socket or 127.0.0.1:port; every request gets one JSON
response frame. Feedback frames start with the line ``PDENFF-FEEDBACK`` and
carry ``{"message_id": ..., "label": ...}``.

The filter never drops mail: it stamps and forwards.
"""

import json
import os
import socket
import socketserver
import struct
import threading
from collections import OrderedDict
from typing import Any, BinaryIO, Dict, Optional, Tuple, Union

import numpy as np

from config import FEEDBACK_MEMORY, FILTER_SCHEMA, MAX_MESSAGE_BYTES
from src.detector import PhishDetector
from src.exceptions import ColdStartError, PdenffError, ProtocolError
from src.fuzzy_inference import Verdict
from src.labels import Label
from src.logger import get_logger

logger = get_logger(__name__)

VERDICT_HEADER = "X-PDENFF-Verdict"
VERSION_HEADER = "X-PDENFF-Version"
FEEDBACK_PREFIX = b"PDENFF-FEEDBACK"
FRAME_HEADER = struct.Struct(">I")
DRAIN_LIMIT_FACTOR = 16
_DRAIN_CHUNK = 64 * 1024

MALFORMED_FRAME = "MALFORMED_FRAME"
OVERSIZED = "OVERSIZED"
BAD_FEEDBACK = "BAD_FEEDBACK"
UNKNOWN_MESSAGE = "UNKNOWN_MESSAGE"
COLD_START = "COLD_START"
INTERNAL = "INTERNAL"


def verdict_header_value(verdict: Verdict) -> str:
    return f"{verdict.label.value}; score={verdict.score:.6f}; profile={verdict.profile_version}"


def _line_ending(raw: bytes) -> bytes:
    end = raw.find(b"\n")
    if end > 0 and raw[end - 1:end] == b"\r":
        return b"\r\n"
    return b"\n"


def stamp_message(raw: bytes, verdict: Verdict) -> bytes:
    """Insert the verdict headers at the top of the header block"""
    eol = _line_ending(raw)
    headers = (
        f"{VERDICT_HEADER}: {verdict_header_value(verdict)}".encode("ascii") + eol
        + f"{VERSION_HEADER}: {FILTER_SCHEMA}".encode("ascii") + eol
    )
    insert_at = 0
    if raw.startswith(b"From "):
        newline = raw.find(b"\n")
        insert_at = newline + 1 if newline >= 0 else len(raw)
    return raw[:insert_at] + headers + raw[insert_at:]


def forward_unclassified(stdin: BinaryIO, stdout: BinaryIO, head: bytes = b"") -> int:
    """Copy the message through untouched; exit code 3"""
    stdout.write(head)
    while True:
        chunk = stdin.read(_DRAIN_CHUNK)
        if not chunk:
            break
        stdout.write(chunk)
    stdout.flush()
    return 3


def run_pipe(detector: PhishDetector, stdin: BinaryIO, stdout: BinaryIO,
             max_message_bytes: int = MAX_MESSAGE_BYTES) -> int:
    """Filter one message; 0 for ham, 1 for phish, 3 when unclassified"""
    raw = stdin.read(max_message_bytes + 1)
    if len(raw) > max_message_bytes:
        logger.warning(f"Message exceeds {max_message_bytes} bytes; forwarding unclassified")
        return forward_unclassified(stdin, stdout, raw)
    try:
        verdict, key, _ = detector.classify_raw(raw)
    except PdenffError as e:
        logger.error(f"Could not classify message, forwarding unclassified: {e}")
        stdout.write(raw)
        stdout.flush()
        return 3
    stdout.write(stamp_message(raw, verdict))
    stdout.flush()
    logger.info(f"{key}: {verdict_header_value(verdict)}")
    return 1 if verdict.is_phish else 0


class FilterService:
    """Request handling independent of the transport"""

    def __init__(self, detector: PhishDetector, max_message_bytes: int = MAX_MESSAGE_BYTES,
                 feedback_memory: int = FEEDBACK_MEMORY):
        self.detector = detector
        self.max_message_bytes = max_message_bytes
        self.feedback_memory = feedback_memory
        self._pending: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self._lock = threading.Lock()

    def _remember(self, key: str, x: np.ndarray) -> None:
        with self._lock:
            self._pending[key] = x
            self._pending.move_to_end(key)
            while len(self._pending) > self.feedback_memory:
                self._pending.popitem(last=False)

    def error(self, code: str, message: str) -> Dict[str, Any]:
        return {
            "schema": FILTER_SCHEMA,
            "status": "error",
            "code": code,
            "error": message,
            "profile_version": self.detector.profile_version,
        }

    def classify(self, raw: bytes) -> Dict[str, Any]:
        verdict, key, x = self.detector.classify_raw(raw)
        self._remember(key, x)
        return {
            "schema": FILTER_SCHEMA,
            "status": "ok",
            "message_id": key,
            "verdict": verdict.label.value,
            "score": verdict.score,
            "profile_version": verdict.profile_version,
            "fired_rules": [[rule_id, weight] for rule_id, weight in verdict.fired_rules],
            "latency_seconds": verdict.latency,
        }

    def feedback(self, body: bytes) -> Dict[str, Any]:
        try:
            document = json.loads(body.decode("utf-8"))
            message_id = document["message_id"]
            label = Label.parse(document["label"])
            if not isinstance(message_id, str) or label is None:
                raise ValueError("message_id must be a string and label phish or ham")
        except (UnicodeDecodeError, ValueError, KeyError, TypeError) as e:
            return self.error(BAD_FEEDBACK, f"Bad feedback record: {e}")

        with self._lock:
            x = self._pending.pop(message_id, None)
        if x is None:
            return self.error(UNKNOWN_MESSAGE, f"No recent verdict for message {message_id}")
        self.detector.learn(x, label)
        return {
            "schema": FILTER_SCHEMA,
            "status": "ok",
            "message_id": message_id,
            "label": label.value,
            "profile_version": self.detector.profile_version,
        }

    def handle(self, payload: bytes) -> Dict[str, Any]:
        """Answer one frame payload; never raises"""
        try:
            if not payload:
                return self.error(MALFORMED_FRAME, "Empty frame")
            if payload.startswith(FEEDBACK_PREFIX):
                head, _, body = payload.partition(b"\n")
                if head.rstrip(b"\r") != FEEDBACK_PREFIX:
                    return self.error(MALFORMED_FRAME, "Feedback prefix must stand on its own line")
                return self.feedback(body)
            return self.classify(payload)
        except ColdStartError as e:
            return self.error(COLD_START, str(e))
        except Exception as e:
            logger.error(f"Request failed: {e}")
            return self.error(INTERNAL, str(e))


def encode_frame(payload: bytes) -> bytes:
    return FRAME_HEADER.pack(len(payload)) + payload


def encode_response(record: Dict[str, Any]) -> bytes:
    return encode_frame(json.dumps(record).encode("utf-8"))


class FilterRequestHandler(socketserver.StreamRequestHandler):
    """One connection: frames in, JSON frames out, until EOF"""

    def _read_exact(self, n: int) -> Optional[bytes]:
        data = self.rfile.read(n)
        return data if len(data) == n else None

    def _drain(self, n: int) -> bool:
        while n > 0:
            chunk = self.rfile.read(min(n, _DRAIN_CHUNK))
            if not chunk:
                return False
            n -= len(chunk)
        return True

    def _reply(self, record: Dict[str, Any]) -> None:
        self.wfile.write(encode_response(record))
        self.wfile.flush()

    def handle(self) -> None:
        service: FilterService = self.server.service
        cap = service.max_message_bytes
        while True:
            header = self._read_exact(FRAME_HEADER.size)
            if header is None:
                return
            (length,) = FRAME_HEADER.unpack(header)
            try:
                if length == 0:
                    logger.warning("Malformed frame: zero length")
                    self._reply(service.error(MALFORMED_FRAME, "Zero-length frame"))
                    continue
                if length > cap:
                    logger.warning(f"Oversized frame of {length} bytes (cap {cap})")
                    if length > DRAIN_LIMIT_FACTOR * cap:
                        self._reply(service.error(OVERSIZED, f"Frame of {length} bytes exceeds {cap}; closing"))
                        return
                    if not self._drain(length):
                        return
                    self._reply(service.error(OVERSIZED, f"Frame of {length} bytes exceeds {cap}"))
                    continue
                payload = self._read_exact(length)
                if payload is None:
                    logger.warning("Connection closed mid-frame")
                    return
                self._reply(service.handle(payload))
            except (BrokenPipeError, ConnectionResetError):
                return


class _TcpFilterServer(socketserver.ThreadingMixIn, socketserver.TCPServer):
    daemon_threads = True
    allow_reuse_address = True


if hasattr(socket, "AF_UNIX"):
    class _UnixFilterServer(socketserver.ThreadingMixIn, socketserver.UnixStreamServer):
        daemon_threads = True


def parse_address(address: str) -> Union[str, Tuple[str, int]]:
    """'127.0.0.1:port' (or 'localhost:port') for TCP, anything else is a Unix socket path"""
    host, sep, port = address.rpartition(":")
    if sep and port.isdigit() and host in ("127.0.0.1", "localhost"):
        return ("127.0.0.1", int(port))
    return address


class FilterServer:
    """Socket-mode filter bound to one address"""

    def __init__(self, service: FilterService, address: str):
        self.service = service
        self.address = parse_address(address)
        if isinstance(self.address, tuple):
            self._server = _TcpFilterServer(self.address, FilterRequestHandler)
        else:
            if os.path.exists(self.address):
                os.unlink(self.address)
            self._server = _UnixFilterServer(self.address, FilterRequestHandler)
        self._server.service = service
        logger.info(f"Filter listening on {self.server_address}")

    @property
    def server_address(self):
        return self._server.server_address

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def shutdown(self) -> None:
        self._server.shutdown()

    def close(self) -> None:
        self._server.server_close()
        if isinstance(self.address, str) and os.path.exists(self.address):
            os.unlink(self.address)
        logger.info("Filter stopped")

    def __enter__(self) -> "FilterServer":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class FilterClient:
    """Blocking client for the socket protocol"""

    def __init__(self, address: Union[str, Tuple[str, int]], timeout: Optional[float] = 30.0):
        if isinstance(address, str):
            address = parse_address(address)
        family = socket.AF_INET if isinstance(address, tuple) else socket.AF_UNIX
        self._sock = socket.socket(family, socket.SOCK_STREAM)
        self._sock.settimeout(timeout)
        self._sock.connect(address)
        self._file = self._sock.makefile("rb")

    def send_frame(self, payload: bytes) -> None:
        self._sock.sendall(encode_frame(payload))

    def read_response(self) -> Dict[str, Any]:
        header = self._file.read(FRAME_HEADER.size)
        if len(header) != FRAME_HEADER.size:
            raise ProtocolError("Connection closed before a response")
        (length,) = FRAME_HEADER.unpack(header)
        body = self._file.read(length)
        if len(body) != length:
            raise ProtocolError("Truncated response frame")
        return json.loads(body.decode("utf-8"))

    def request(self, payload: bytes) -> Dict[str, Any]:
        self.send_frame(payload)
        return self.read_response()

    def classify(self, raw: bytes) -> Dict[str, Any]:
        return self.request(raw)

    def feedback(self, message_id: str, label: Union[Label, str]) -> Dict[str, Any]:
        body = json.dumps({"message_id": message_id, "label": Label.parse(label).value})
        return self.request(FEEDBACK_PREFIX + b"\n" + body.encode("utf-8"))

    def close(self) -> None:
        self._file.close()
        self._sock.close()

    def __enter__(self) -> "FilterClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
