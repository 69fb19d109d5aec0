"""Message channels: in-process loopback, TCP, and read-only taps."""

from __future__ import annotations

import json
import logging
import queue
import socket
import threading
from dataclasses import dataclass
from typing import IO, Callable

from .wire import (
    HEADER,
    MAX_PAYLOAD,
    FramingError,
    Message,
    OversizeError,
    TransportError,
    decode_frame,
    encode_frame,
    message_to_dict,
)

__all__ = [
    "DEFAULT_TIMEOUT",
    "ChannelClosed",
    "ChannelTimeout",
    "TappedFrame",
    "ChannelTap",
    "JsonlCapture",
    "Channel",
    "LoopbackChannel",
    "TcpChannel",
]

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0


class ChannelClosed(TransportError):
    pass


class ChannelTimeout(TransportError):
    pass


@dataclass(frozen=True)
class TappedFrame:
    """A frame seen by a tap. ``direction`` is ``"out"`` or ``"in"`` relative
    to the endpoint the tap is attached to."""

    direction: str
    raw: bytes
    message: Message


class ChannelTap:
    """Observer of every frame crossing an endpoint, in both directions.

    With ``buffered=True`` frames go through a queue drained by a worker
    thread, so a slow callback cannot stall the session. Exceptions raised
    by the callback are logged and swallowed.
    """

    def __init__(self, callback: Callable[[TappedFrame], None], buffered: bool = False):
        self.callback = callback
        self.buffered = buffered
        self._queue: queue.SimpleQueue | None = None
        self._worker: threading.Thread | None = None
        if buffered:
            self._queue = queue.SimpleQueue()
            self._worker = threading.Thread(target=self._drain, daemon=True)
            self._worker.start()

    def _deliver(self, frame: TappedFrame) -> None:
        try:
            self.callback(frame)
        except Exception:
            log.exception("tap callback failed")

    def _drain(self) -> None:
        while True:
            frame = self._queue.get()
            if frame is None:
                return
            self._deliver(frame)

    def __call__(self, frame: TappedFrame) -> None:
        if self._queue is not None:
            self._queue.put(frame)
        else:
            self._deliver(frame)

    def close(self) -> None:
        """Flush pending frames (buffered mode) and stop the worker."""
        if self._queue is not None:
            self._queue.put(None)
            self._worker.join()
            self._queue = None


class JsonlCapture:
    """Tap callback writing one decoded message per line."""

    def __init__(self, fh: IO[str]):
        self.fh = fh
        self._lock = threading.Lock()

    def __call__(self, frame: TappedFrame) -> None:
        line = json.dumps({"direction": frame.direction, **message_to_dict(frame.message)}, sort_keys=True)
        with self._lock:
            self.fh.write(line + "\n")


class Channel:
    """One endpoint of a bidirectional message pipe."""

    def __init__(self):
        self._taps: list[Callable[[TappedFrame], None]] = []

    def attach_tap(self, tap: Callable[[TappedFrame], None]) -> ChannelTap:
        if not isinstance(tap, ChannelTap):
            tap = ChannelTap(tap)
        self._taps.append(tap)
        return tap

    def _notify(self, direction: str, raw: bytes, msg: Message) -> None:
        if self._taps:
            frame = TappedFrame(direction, raw, msg)
            for tap in self._taps:
                tap(frame)

    def send(self, msg: Message) -> None:
        raw = encode_frame(msg)
        self._send_raw(raw)
        self._notify("out", raw, msg)

    def recv(self) -> Message:
        raw = self._recv_raw()
        msg = decode_frame(raw)
        self._notify("in", raw, msg)
        return msg

    def _send_raw(self, raw: bytes) -> None:
        raise NotImplementedError

    def _recv_raw(self) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


_CLOSED = object()


class LoopbackChannel(Channel):
    """In-process endpoint; frames are fully encoded and decoded as on TCP."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, timeout: float | None = DEFAULT_TIMEOUT):
        super().__init__()
        self._inbox = inbox
        self._outbox = outbox
        self.timeout = timeout

    @classmethod
    def pair(cls, timeout: float | None = DEFAULT_TIMEOUT) -> tuple[LoopbackChannel, LoopbackChannel]:
        a_to_b: queue.Queue = queue.Queue()
        b_to_a: queue.Queue = queue.Queue()
        return cls(b_to_a, a_to_b, timeout), cls(a_to_b, b_to_a, timeout)

    def _send_raw(self, raw: bytes) -> None:
        self._outbox.put(raw)

    def _recv_raw(self) -> bytes:
        try:
            raw = self._inbox.get(timeout=self.timeout)
        except queue.Empty:
            raise ChannelTimeout("no frame within timeout") from None
        if raw is _CLOSED:
            self._inbox.put(_CLOSED)
            raise ChannelClosed("peer closed the channel")
        return raw

    def close(self) -> None:
        self._outbox.put(_CLOSED)


class TcpChannel(Channel):
    def __init__(self, sock: socket.socket, timeout: float | None = DEFAULT_TIMEOUT):
        super().__init__()
        self.sock = sock
        sock.settimeout(timeout)

    @classmethod
    def connect(cls, host: str, port: int, timeout: float | None = DEFAULT_TIMEOUT) -> TcpChannel:
        return cls(socket.create_connection((host, port), timeout=timeout), timeout)

    def _read_exact(self, size: int) -> bytes:
        chunks = []
        remaining = size
        while remaining:
            try:
                chunk = self.sock.recv(min(remaining, 65536))
            except socket.timeout:
                raise ChannelTimeout("read timed out") from None
            except OSError as exc:
                raise ChannelClosed(str(exc)) from exc
            if not chunk:
                if remaining == size:
                    raise ChannelClosed("peer closed the connection")
                raise FramingError("connection closed mid-frame")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def _send_raw(self, raw: bytes) -> None:
        try:
            self.sock.sendall(raw)
        except OSError as exc:
            raise ChannelClosed(str(exc)) from exc

    def _recv_raw(self) -> bytes:
        header = self._read_exact(HEADER.size)
        length, _ = HEADER.unpack(header)
        if length > MAX_PAYLOAD:
            raise OversizeError(f"declared length {length} exceeds {MAX_PAYLOAD}")
        return header + self._read_exact(length)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
