"""WebSocket tunnel so browsers can reach the control and stream sockets.

Implements just enough of RFC 6455 server-side: upgrade handshake,
masked client frames, fragmentation, ping/pong, close. The tunnel adds
no protocol of its own; /control carries the same JSON lines and
/stream the same binary envelopes as the raw TCP sockets, one message
per request or envelope.
"""
from __future__ import annotations

import base64
import hashlib
import json
import socket
import struct
import threading

from .errors import SteerError
from .service import SteerService, pack_envelope

_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
_MAX_HEADER = 16384
_MAX_PAYLOAD = 1 << 24

OP_CONT = 0x0
OP_TEXT = 0x1
OP_BINARY = 0x2
OP_CLOSE = 0x8
OP_PING = 0x9
OP_PONG = 0xA


class WebSocketError(SteerError):
    """Handshake or framing violation; the connection is unusable."""


def accept_key(key: str) -> str:
    """Sec-WebSocket-Accept value for a client's Sec-WebSocket-Key."""
    digest = hashlib.sha1((key.strip() + _GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def _apply_mask(data: bytes, key: bytes) -> bytes:
    out = bytearray(data)
    for i in range(len(out)):
        out[i] ^= key[i & 3]
    return bytes(out)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise WebSocketError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def send_frame(sock: socket.socket, opcode: int, payload: bytes = b"", *,
               mask: bool = False) -> None:
    header = bytearray([0x80 | opcode])
    length = len(payload)
    mask_bit = 0x80 if mask else 0x00
    if length <= 125:
        header.append(mask_bit | length)
    elif length <= 0xFFFF:
        header.append(mask_bit | 126)
        header += struct.pack(">H", length)
    else:
        header.append(mask_bit | 127)
        header += struct.pack(">Q", length)
    if mask:
        key = struct.pack(">I", 0x37FA213D)  # value irrelevant to correctness
        header += key
        payload = _apply_mask(payload, key)
    sock.sendall(bytes(header) + payload)


def _read_raw_frame(sock: socket.socket) -> tuple[bool, int, bytes, bool]:
    first, second = _recv_exact(sock, 2)
    if first & 0x70:
        raise WebSocketError("reserved bits set without an extension")
    fin = bool(first & 0x80)
    opcode = first & 0x0F
    masked = bool(second & 0x80)
    length = second & 0x7F
    if length == 126:
        (length,) = struct.unpack(">H", _recv_exact(sock, 2))
    elif length == 127:
        (length,) = struct.unpack(">Q", _recv_exact(sock, 8))
    if length > _MAX_PAYLOAD:
        raise WebSocketError(f"frame of {length} bytes exceeds the limit")
    key = _recv_exact(sock, 4) if masked else None
    payload = _recv_exact(sock, length) if length else b""
    if key is not None:
        payload = _apply_mask(payload, key)
    return fin, opcode, payload, masked


def read_frame(sock: socket.socket) -> tuple[bool, int, bytes]:
    """One raw frame as (fin, opcode, payload), unmasked if needed."""
    fin, opcode, payload, _ = _read_raw_frame(sock)
    return fin, opcode, payload


def read_message(
    sock: socket.socket,
    *,
    require_mask: bool,
    write_lock: threading.Lock | None = None,
) -> tuple[int, bytes] | None:
    """Next data message, transparently handling ping/pong/close.

    Returns None once the peer closes. `require_mask` enforces the RFC
    rule that client frames must be masked. When another thread writes to
    the same socket, pass the lock it holds so pong and close replies
    cannot interleave with its frames.
    """
    def reply(opcode: int, payload: bytes) -> None:
        if write_lock is None:
            send_frame(sock, opcode, payload)
        else:
            with write_lock:
                send_frame(sock, opcode, payload)

    started: int | None = None
    assembled = b""
    while True:
        fin, opcode, payload, masked = _read_raw_frame(sock)
        if require_mask and not masked and opcode != OP_CLOSE:
            raise WebSocketError("client frames must be masked")
        if opcode == OP_PING:
            reply(OP_PONG, payload)
        elif opcode == OP_PONG:
            pass
        elif opcode == OP_CLOSE:
            try:
                reply(OP_CLOSE, payload[:2])
            except OSError:
                pass
            return None
        elif opcode == OP_CONT:
            if started is None:
                raise WebSocketError("continuation frame with nothing to continue")
            assembled += payload
            if fin:
                return started, assembled
        elif opcode in (OP_TEXT, OP_BINARY):
            if started is not None:
                raise WebSocketError("new data frame during fragmented message")
            if fin:
                return opcode, payload
            started = opcode
            assembled = payload
        else:
            raise WebSocketError(f"unsupported opcode {opcode:#x}")


def server_handshake(sock: socket.socket, routes: tuple[str, ...]) -> str | None:
    """Answer an HTTP upgrade; returns the path, or None when refused."""
    # read byte-wise up to the blank line: anything past it belongs to the
    # websocket layer and must stay in the socket buffer
    data = b""
    while b"\r\n\r\n" not in data:
        chunk = sock.recv(1)
        if not chunk:
            return None
        data += chunk
        if len(data) > _MAX_HEADER:
            sock.sendall(b"HTTP/1.1 431 Request Header Fields Too Large\r\n\r\n")
            return None
    head = data.split(b"\r\n\r\n", 1)[0].decode("latin-1")
    lines = head.split("\r\n")
    parts = lines[0].split()
    if len(parts) != 3 or parts[0] != "GET":
        sock.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
        return None
    path = parts[1]
    headers = {}
    for line in lines[1:]:
        if ":" in line:
            name, value = line.split(":", 1)
            headers[name.strip().lower()] = value.strip()
    key = headers.get("sec-websocket-key")
    if "websocket" not in headers.get("upgrade", "").lower() or not key:
        sock.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
        return None
    if path not in routes:
        sock.sendall(b"HTTP/1.1 404 Not Found\r\n\r\n")
        return None
    response = (
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Accept: {accept_key(key)}\r\n"
        "\r\n"
    )
    sock.sendall(response.encode("latin-1"))
    return path


class WebSocketBridge:
    """ws://host:port/control and /stream in front of a SteerService."""

    ROUTES = ("/control", "/stream")

    def __init__(self, service: SteerService, host: str = "127.0.0.1", port: int = 0):
        self.service = service
        self._host = host
        self._port = port
        self._listener: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self._conns: set[socket.socket] = set()
        self._lock = threading.Lock()
        self._stopping = threading.Event()

    def start(self) -> None:
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self._host, self._port))
        listener.listen(8)
        self._listener = listener
        self._spawn(self._accept_loop)

    def stop(self) -> None:
        self._stopping.set()
        if self._listener is not None:
            try:
                self._listener.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._listener.close()
        with self._lock:
            conns = list(self._conns)
        for conn in conns:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()
        for thread in self._threads:
            thread.join(timeout=1.0)

    def __enter__(self) -> "WebSocketBridge":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    @property
    def address(self) -> tuple[str, int]:
        assert self._listener is not None, "bridge not started"
        return self._listener.getsockname()

    def _spawn(self, target, *args) -> None:
        thread = threading.Thread(target=target, args=args, daemon=True)
        thread.start()
        self._threads.append(thread)

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                client, _ = self._listener.accept()
            except OSError:
                return
            with self._lock:
                self._conns.add(client)
            self._spawn(self._serve_client, client)

    def _serve_client(self, client: socket.socket) -> None:
        try:
            path = server_handshake(client, self.ROUTES)
            if path == "/control":
                self._serve_control(client)
            elif path == "/stream":
                self._serve_stream(client)
        except (WebSocketError, OSError):
            pass
        finally:
            with self._lock:
                self._conns.discard(client)
            client.close()

    def _serve_control(self, client: socket.socket) -> None:
        while True:
            message = read_message(client, require_mask=True)
            if message is None:
                return
            opcode, payload = message
            if opcode != OP_TEXT:
                continue
            response = self.service.handle_control_line(payload.decode("utf-8"))
            send_frame(client, OP_TEXT, json.dumps(response).encode("utf-8"))

    def _serve_stream(self, client: socket.socket) -> None:
        queue = self.service.register_stream_client()
        write_lock = threading.Lock()

        def drain_incoming() -> None:
            # clients may ping or close; answering keeps the socket honest
            try:
                while read_message(client, require_mask=True,
                                   write_lock=write_lock) is not None:
                    pass
            except (WebSocketError, OSError):
                pass
            finally:
                queue.close()

        reader = threading.Thread(target=drain_incoming, daemon=True)
        reader.start()
        try:
            while True:
                item = queue.pop(timeout=0.5)
                if item is None:
                    if queue.closed or self._stopping.is_set():
                        return
                    continue
                try:
                    with write_lock:
                        send_frame(client, OP_BINARY, pack_envelope(*item))
                except OSError:
                    return
        finally:
            self.service.unregister_stream_client(queue)
