"""Network control plane and frame stream for a running pipeline.

Two localhost TCP listeners: a control socket speaking newline-delimited
JSON requests, and a stream socket emitting length-prefixed binary
envelopes (4-byte big-endian payload length, 1 kind byte, payload).
Slow stream consumers get envelopes dropped oldest-first from their own
bounded queue; nothing a client does can block the tick loop.
"""
from __future__ import annotations

import json
import socket
import struct
import threading
from collections import deque
from typing import Callable, Mapping

from .errors import ContractError, SteerError
from .frameio import encode_jpeg
from .pipeline import Pipeline, TickResult

PROTOCOL_VERSION = 1

KIND_FRAME = 0x01
KIND_EVENT = 0x02
KIND_PREVIEW = 0x03

_HEADER = struct.Struct(">IB")

CONTROL_TYPES = ("set_param", "set_mode", "reseed", "get_state", "list_layers")


def pack_envelope(kind: int, payload: bytes) -> bytes:
    if not 0 <= kind <= 0xFF:
        raise ContractError(f"kind {kind} does not fit one byte")
    return _HEADER.pack(len(payload), kind) + payload


def unpack_envelopes(buffer: bytes) -> tuple[list[tuple[int, bytes]], bytes]:
    """Split a byte stream into complete (kind, payload) envelopes.

    Returns the remainder that still needs more bytes; feeding data in any
    chunking yields the same envelope sequence.
    """
    envelopes = []
    offset = 0
    while len(buffer) - offset >= _HEADER.size:
        length, kind = _HEADER.unpack_from(buffer, offset)
        end = offset + _HEADER.size + length
        if len(buffer) < end:
            break
        envelopes.append((kind, buffer[offset + _HEADER.size:end]))
        offset = end
    return envelopes, buffer[offset:]


def _event_payload(obj: Mapping) -> bytes:
    return json.dumps(obj, separators=(",", ":")).encode("utf-8")


class _ClientQueue:
    """Bounded per-client envelope queue; overflow drops oldest frames first.

    Events carry state the operator must not miss, so when the queue is
    full the oldest frame or preview goes before any event does.
    """

    def __init__(self, limit: int = 32):
        if limit < 1:
            raise ContractError("queue limit must be positive")
        self._cond = threading.Condition()
        self._items: deque[tuple[int, bytes]] = deque()
        self._limit = limit
        self._closed = False
        self.dropped = 0

    def push(self, kind: int, payload: bytes) -> None:
        with self._cond:
            if self._closed:
                return
            if len(self._items) >= self._limit:
                for i, (queued_kind, _) in enumerate(self._items):
                    if queued_kind != KIND_EVENT:
                        del self._items[i]
                        break
                else:
                    self._items.popleft()
                self.dropped += 1
            self._items.append((kind, payload))
            self._cond.notify()

    def pop(self, timeout: float | None = None) -> tuple[int, bytes] | None:
        with self._cond:
            if not self._items and not self._closed:
                self._cond.wait(timeout)
            if self._items:
                return self._items.popleft()
            return None

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    @property
    def closed(self) -> bool:
        with self._cond:
            return self._closed


class SteerService:
    """Serves one pipeline over a control socket and a stream socket."""

    def __init__(
        self,
        pipeline: Pipeline,
        host: str = "127.0.0.1",
        control_port: int = 0,
        stream_port: int = 0,
        *,
        preview_divisor: int = 0,
        jpeg_quality: int = 85,
        queue_limit: int = 32,
    ):
        if preview_divisor < 0:
            raise ContractError("preview divisor must be >= 0")
        self.pipeline = pipeline
        self._host = host
        self._control_port = control_port
        self._stream_port = stream_port
        self._preview_divisor = preview_divisor
        self._jpeg_quality = jpeg_quality
        self._queue_limit = queue_limit
        self._clients: set[_ClientQueue] = set()
        self._clients_lock = threading.Lock()
        self._conns: set[socket.socket] = set()
        # orders control-change events against outgoing frames; see _broadcast
        self._order_lock = threading.Lock()
        self._threads: list[threading.Thread] = []
        self._control_listener: socket.socket | None = None
        self._stream_listener: socket.socket | None = None
        self._stopping = threading.Event()
        self._tick_count = 0

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> None:
        self._control_listener = self._listen(self._control_port)
        self._stream_listener = self._listen(self._stream_port)
        self._spawn(self._accept_loop, self._control_listener, self._serve_control)
        self._spawn(self._accept_loop, self._stream_listener, self._serve_stream)

    def stop(self) -> None:
        self._stopping.set()
        for listener in (self._control_listener, self._stream_listener):
            if listener is not None:
                # shutdown, not just close: close alone leaves a thread
                # blocked in accept() holding the socket open
                try:
                    listener.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
                listener.close()
        with self._clients_lock:
            clients = list(self._clients)
            conns = list(self._conns)
        for queue in clients:
            queue.close()
        for conn in conns:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()
        for thread in self._threads:
            thread.join(timeout=1.0)

    def __enter__(self) -> "SteerService":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    def _listen(self, port: int) -> socket.socket:
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self._host, port))
        listener.listen(8)
        return listener

    def _spawn(self, target, *args) -> None:
        thread = threading.Thread(target=target, args=args, daemon=True)
        thread.start()
        self._threads.append(thread)

    @property
    def control_address(self) -> tuple[str, int]:
        assert self._control_listener is not None, "service not started"
        return self._control_listener.getsockname()

    @property
    def stream_address(self) -> tuple[str, int]:
        assert self._stream_listener is not None, "service not started"
        return self._stream_listener.getsockname()

    def _accept_loop(self, listener: socket.socket, handler) -> None:
        while not self._stopping.is_set():
            try:
                client, _ = listener.accept()
            except OSError:
                return
            with self._clients_lock:
                self._conns.add(client)
            self._spawn(self._run_client, handler, client)

    def _run_client(self, handler, client: socket.socket) -> None:
        try:
            handler(client)
        finally:
            with self._clients_lock:
                self._conns.discard(client)

    # -- control socket --------------------------------------------------------

    def _serve_control(self, client: socket.socket) -> None:
        with client:
            reader = client.makefile("r", encoding="utf-8", newline="\n")
            for line in reader:
                line = line.strip()
                if not line:
                    continue
                response = self.handle_control_line(line)
                try:
                    client.sendall((json.dumps(response) + "\n").encode("utf-8"))
                except OSError:
                    return

    def handle_control_line(self, line: str) -> dict:
        try:
            message = json.loads(line)
        except json.JSONDecodeError as exc:
            return {"request_id": None, "ok": False, "error": f"not valid JSON: {exc}"}
        if not isinstance(message, dict):
            return {"request_id": None, "ok": False,
                    "error": "request must be a JSON object"}
        return self.handle_request(message)

    def handle_request(self, message: Mapping) -> dict:
        """Dispatch one control request; never raises, never kills the session."""
        base = {"request_id": message.get("request_id")}
        kind = message.get("type")
        payload = message.get("payload") or {}
        if not isinstance(payload, Mapping):
            return {**base, "ok": False, "error": "payload must be a JSON object"}
        try:
            if kind == "get_state":
                return {**base, "ok": True, "state": self.pipeline.state_snapshot()}
            if kind == "list_layers":
                rows = [
                    {"name": s.name, "channels": s.channels,
                     "rows": s.rows, "cols": s.cols}
                    for s in self.pipeline.layer_table()
                ]
                return {**base, "ok": True, "state": {"layers": rows}}
            if kind == "set_param":
                delta = dict(payload)
            elif kind == "set_mode":
                delta = {"mode": payload.get("mode")}
            elif kind == "reseed":
                seed = payload.get("seed")
                if not isinstance(seed, int) or isinstance(seed, bool):
                    return {**base, "ok": False,
                            "error": "reseed payload needs an integer 'seed'"}
                delta = {"static_seed": seed}
            else:
                return {**base, "ok": False,
                        "error": f"unknown request type {kind!r}; "
                                 f"expected one of {', '.join(CONTROL_TYPES)}"}
            with self._order_lock:
                state = self.pipeline.apply_control(delta)
                self._broadcast(KIND_EVENT, _event_payload(
                    {"type": "state", "state": state}
                ))
            return {**base, "ok": True, "state": state}
        except (SteerError, ValueError, TypeError, KeyError) as exc:
            return {**base, "ok": False, "error": str(exc)}

    # -- stream socket ---------------------------------------------------------

    def _serve_stream(self, client: socket.socket) -> None:
        queue = self.register_stream_client()
        try:
            with client:
                while True:
                    item = queue.pop(timeout=0.5)
                    if item is None:
                        if queue.closed or self._stopping.is_set():
                            return
                        continue
                    try:
                        client.sendall(pack_envelope(*item))
                    except OSError:
                        return
        finally:
            self.unregister_stream_client(queue)

    def register_stream_client(self) -> _ClientQueue:
        """Attach a stream consumer; its first envelope is the handshake."""
        queue = _ClientQueue(self._queue_limit)
        queue.push(KIND_EVENT, _event_payload({
            "type": "handshake",
            "protocol_version": PROTOCOL_VERSION,
            "state": self.pipeline.state_snapshot(),
        }))
        with self._clients_lock:
            self._clients.add(queue)
        return queue

    def unregister_stream_client(self, queue: _ClientQueue) -> None:
        queue.close()
        with self._clients_lock:
            self._clients.discard(queue)

    def _broadcast(self, kind: int, payload: bytes) -> None:
        with self._clients_lock:
            clients = list(self._clients)
        for queue in clients:
            queue.push(kind, payload)

    def make_sink(self) -> Callable[[TickResult], None]:
        """A tick sink that fans frames (and spaced previews) to all clients.

        Frame broadcasts take the same ordering lock as control events, so
        a state event always reaches a client's queue before any frame that
        was synthesized under that state.
        """
        def sink(result: TickResult) -> None:
            frame_bytes = encode_jpeg(result.output, quality=self._jpeg_quality)
            preview_bytes = None
            if (
                self._preview_divisor > 0
                and result.source is not None
                and self._tick_count % self._preview_divisor == 0
            ):
                preview_bytes = encode_jpeg(result.source, quality=self._jpeg_quality)
            self._tick_count += 1
            with self._order_lock:
                self._broadcast(KIND_FRAME, frame_bytes)
                if preview_bytes is not None:
                    self._broadcast(KIND_PREVIEW, preview_bytes)
        return sink


def serve(
    pipeline: Pipeline,
    host: str = "127.0.0.1",
    control_port: int = 0,
    stream_port: int = 0,
    **options,
) -> SteerService:
    """Start a service for `pipeline`; returns it already listening."""
    service = SteerService(pipeline, host, control_port, stream_port, **options)
    service.start()
    return service
