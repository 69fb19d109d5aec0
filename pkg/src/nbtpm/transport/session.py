"""Networked key agreement between two peers over a :class:`Channel`.

The initiator sends first in every exchange: HELLO, the round's input
vector (explicit mode), its OUTPUT, and every SYNC_PROBE. The responder
answers. Any message that does not fit this alternation is a protocol
error and the session is aborted.
"""

from __future__ import annotations

import logging
import socketserver
import threading
from dataclasses import replace
from typing import Callable, Iterable

import numpy as np

from ..protocol import (
    InputMode,
    IterationRecord,
    SessionConfig,
    SessionTranscript,
    input_stream,
    weights_digest,
)
from ..tpm import Role, TreeParityMachine, apply_learning_rule, evaluate, random_weights
from .channel import DEFAULT_TIMEOUT, Channel, LoopbackChannel, TcpChannel
from .wire import (
    PROTOCOL_VERSION,
    Abort,
    AbortReason,
    Hello,
    InputVector,
    Message,
    Output,
    ProtocolError,
    SyncConfirm,
    SyncProbe,
    TransportError,
)

__all__ = [
    "SessionAborted",
    "SessionError",
    "hello_for",
    "negotiate",
    "run_networked_session",
    "run_loopback_session",
    "make_server",
    "connect",
]

log = logging.getLogger(__name__)


class SessionAborted(TransportError):
    """An ABORT was sent (``local=True``) or received from the peer."""

    def __init__(self, reason: int, local: bool):
        self.reason = reason
        self.local = local
        try:
            name = AbortReason(reason).name
        except ValueError:
            name = str(reason)
        side = "local" if local else "peer"
        super().__init__(f"session aborted by {side}: {name}")


class SessionError(TransportError):
    """The session failed mid-way; ``transcript`` holds the rounds completed so far."""

    def __init__(self, message: str, transcript: SessionTranscript | None = None):
        super().__init__(message)
        self.transcript = transcript


def hello_for(config: SessionConfig, role: Role) -> Hello:
    p = config.params
    return Hello(
        role=role,
        k=p.k,
        n=p.n,
        l=p.l,
        m=p.m,
        rule=config.rule,
        input_mode=config.input_mode,
        input_seed=config.seeds.input_seed,
    )


def _abort(channel: Channel, reason: AbortReason) -> None:
    try:
        channel.send(Abort(int(reason)))
    except TransportError:
        pass


def _check_expected(channel: Channel, msg: Message, cls: type, iteration: int | None = None):
    if isinstance(msg, Abort):
        raise SessionAborted(msg.reason, local=False)
    if not isinstance(msg, cls) or (iteration is not None and msg.iteration != iteration):
        _abort(channel, AbortReason.PROTOCOL_VIOLATION)
        where = "" if iteration is None else f" for round {iteration}"
        raise ProtocolError(f"expected {cls.__name__}{where}, got {msg!r}")
    return msg


def _expect(channel: Channel, cls: type, iteration: int | None = None):
    return _check_expected(channel, channel.recv(), cls, iteration)


def _compatible(channel: Channel, local: Hello, remote: Hello) -> None:
    same = (
        remote.version == PROTOCOL_VERSION
        and (remote.k, remote.n, remote.l, remote.m) == (local.k, local.n, local.l, local.m)
        and remote.rule == local.rule
        and remote.input_mode == local.input_mode
    )
    if not same:
        _abort(channel, AbortReason.PARAMETER_MISMATCH)
        raise SessionAborted(AbortReason.PARAMETER_MISMATCH, local=True)
    if remote.role == local.role:
        _abort(channel, AbortReason.ROLE_COLLISION)
        raise SessionAborted(AbortReason.ROLE_COLLISION, local=True)


def negotiate(
    channel: Channel, config: SessionConfig, *, initiator: bool, role: Role | None = None
) -> SessionConfig:
    """Exchange HELLOs and return the agreed config.

    Shape, bounds, rule and input mode must match exactly and the roles must
    differ. The initiator's input seed is adopted by both sides.
    """
    if role is None:
        role = Role.SENDER if initiator else Role.RECIPIENT
    local = hello_for(config, role)
    if initiator:
        channel.send(local)
        remote = _expect(channel, Hello)
        _compatible(channel, local, remote)
        seed = local.input_seed
    else:
        remote = _expect(channel, Hello)
        _compatible(channel, local, remote)
        channel.send(local)
        seed = remote.input_seed
    return replace(config, seeds=replace(config.seeds, input_seed=seed))


def _probe(channel: Channel, tpm: TreeParityMachine, iteration: int, initiator: bool) -> bool:
    digest = weights_digest(tpm.weights)
    if initiator:
        channel.send(SyncProbe(iteration, digest))
        return _expect(channel, SyncConfirm, iteration).agree
    probe = _expect(channel, SyncProbe, iteration)
    agree = probe.digest == digest
    channel.send(SyncConfirm(iteration, agree))
    return agree


def _received_input(channel: Channel, msg: InputVector, config: SessionConfig) -> np.ndarray:
    p = config.params
    values = np.array(msg.values, dtype=np.int64)
    if values.size != p.k * p.n or np.any(np.abs(values) > p.m) or np.any(values == 0):
        _abort(channel, AbortReason.PROTOCOL_VIOLATION)
        raise ProtocolError("INPUT_VECTOR does not fit the agreed K, N and M")
    return values.reshape(p.k, p.n)


def run_networked_session(
    channel: Channel,
    config: SessionConfig,
    *,
    initiator: bool,
    role: Role | None = None,
    negotiated: bool = False,
) -> SessionTranscript:
    """Run one side of the key agreement over ``channel``.

    The returned transcript carries only this side's final weights; the
    other side's slot is ``None``. Rounds are recorded with the sender's
    output as ``output_a``. Synchronization is probed before the first
    round and after every ``sync_probe_interval`` matched rounds, so with
    an interval above one the session may run a few rounds past the
    moment the weights first coincide.
    """
    if role is None:
        role = Role.SENDER if initiator else Role.RECIPIENT
    if not negotiated:
        config = negotiate(channel, config, initiator=initiator, role=role)
    p = config.params
    seed = config.seeds.weight_seed_a if role is Role.SENDER else config.seeds.weight_seed_b
    me = TreeParityMachine(p, random_weights(p, seed), role)
    explicit = config.input_mode is InputMode.EXPLICIT_VECTORS
    inputs = input_stream(p, config.seeds.input_seed) if (initiator or not explicit) else None

    records: list[IterationRecord] = []
    converged = False

    def transcript() -> SessionTranscript:
        mine, theirs = me.weights, None
        wa, wb = (mine, theirs) if role is Role.SENDER else (theirs, mine)
        return SessionTranscript(config, records, len(records), wa, wb, converged)

    try:
        converged = _probe(channel, me, 0, initiator)
        t = 0
        matched = 0
        while not converged:
            if initiator:
                if t >= config.max_iterations:
                    channel.send(Abort(AbortReason.ITERATION_LIMIT))
                    break
                x = next(inputs)
                if explicit:
                    channel.send(InputVector(t, tuple(x.ravel().tolist())))
                ev = evaluate(me, x)
                channel.send(Output(t, ev.output))
                other = _expect(channel, Output, t).output
            else:
                first = channel.recv()
                if isinstance(first, Abort) and first.reason == AbortReason.ITERATION_LIMIT:
                    break
                if t >= config.max_iterations:
                    channel.send(Abort(AbortReason.ITERATION_LIMIT))
                    break
                if explicit:
                    x = _received_input(channel, _check_expected(channel, first, InputVector, t), config)
                    other = _expect(channel, Output, t).output
                else:
                    other = _check_expected(channel, first, Output, t).output
                    x = next(inputs)
                ev = evaluate(me, x)
                channel.send(Output(t, ev.output))

            out_a, out_b = (ev.output, other) if role is Role.SENDER else (other, ev.output)
            record = IterationRecord(t, out_a, out_b, out_a == out_b, t)
            records.append(record)
            t += 1
            if record.matched:
                me = apply_learning_rule(me, config.rule, x, ev)
                matched += 1
                if matched % config.sync_probe_interval == 0:
                    converged = _probe(channel, me, t, initiator)
    except SessionAborted as exc:
        if exc.local or exc.reason != AbortReason.ITERATION_LIMIT:
            raise SessionError(str(exc), transcript()) from exc
    except TransportError as exc:
        raise SessionError(str(exc), transcript()) from exc
    return transcript()


def run_loopback_session(
    config: SessionConfig,
    taps: Iterable[Callable] = (),
    timeout: float | None = DEFAULT_TIMEOUT,
) -> SessionTranscript:
    """Run both peers in-process over a loopback pair and merge their views.

    Taps are attached to the initiator's endpoint and so see every frame in
    both directions.
    """
    chan_a, chan_b = LoopbackChannel.pair(timeout)
    for tap in taps:
        chan_a.attach_tap(tap)
    result: dict = {}

    def responder():
        try:
            result["b"] = run_networked_session(chan_b, config, initiator=False)
        except BaseException as exc:  # re-raised in the calling thread
            result["error"] = exc
        finally:
            chan_b.close()

    worker = threading.Thread(target=responder, name="tpm-responder", daemon=True)
    worker.start()
    try:
        ta = run_networked_session(chan_a, config, initiator=True)
    finally:
        chan_a.close()
        worker.join()
    if "error" in result:
        raise result["error"]
    tb = result["b"]
    if ta.records != tb.records or ta.converged != tb.converged:
        raise ProtocolError("peers disagree on the transcript")
    return SessionTranscript(
        ta.config, ta.records, ta.sync_time, ta.final_weights_a, tb.final_weights_b, ta.converged
    )


class _SessionHandler(socketserver.BaseRequestHandler):
    def handle(self):
        server = self.server
        channel = TcpChannel(self.request, server.timeout_s)
        for tap in server.taps:
            channel.attach_tap(tap)
        try:
            result = run_networked_session(channel, server.config, initiator=False)
        except Exception as exc:  # reported through on_result, never kills the listener
            log.warning("session from %s failed: %s", self.client_address, exc)
            result = exc
        if server.on_result is not None:
            server.on_result(self.client_address, result)


class TpmServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, config: SessionConfig, on_result=None, taps=(), timeout=DEFAULT_TIMEOUT):
        self.config = config
        self.on_result = on_result
        self.taps = list(taps)
        self.timeout_s = timeout
        super().__init__(address, _SessionHandler)


def make_server(
    host: str,
    port: int,
    config: SessionConfig,
    on_result: Callable | None = None,
    taps: Iterable[Callable] = (),
    timeout: float | None = DEFAULT_TIMEOUT,
) -> TpmServer:
    """Listener that runs the responder side for every accepted connection,
    each in its own thread. ``on_result(address, transcript_or_error)``."""
    return TpmServer((host, port), config, on_result, taps, timeout)


def connect(
    host: str,
    port: int,
    config: SessionConfig,
    taps: Iterable[Callable] = (),
    timeout: float | None = DEFAULT_TIMEOUT,
) -> SessionTranscript:
    with TcpChannel.connect(host, port, timeout) as channel:
        for tap in taps:
            channel.attach_tap(tap)
        return run_networked_session(channel, config, initiator=True)
