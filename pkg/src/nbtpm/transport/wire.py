"""Binary framing for the two-peer exchange.

Every frame is ``length:u32le | msg_type:u8 | payload`` where ``length``
counts payload bytes only. All multi-byte integers are little-endian.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, fields
from typing import Union

from ..protocol import InputMode
from ..tpm import LearningRule, Role

__all__ = [
    "PROTOCOL_VERSION",
    "MAX_PAYLOAD",
    "HEADER",
    "MsgType",
    "AbortReason",
    "TransportError",
    "EncodingError",
    "ProtocolError",
    "FramingError",
    "OversizeError",
    "Hello",
    "InputVector",
    "Output",
    "SyncProbe",
    "SyncConfirm",
    "Abort",
    "Message",
    "encode_frame",
    "decode_frame",
    "decode_payload",
    "split_frame",
    "message_to_dict",
    "message_from_dict",
]

PROTOCOL_VERSION = 1
MAX_PAYLOAD = 1 << 20
HEADER = struct.Struct("<IB")

_HELLO = struct.Struct("<BBHHBBBBQ")
_ITER = struct.Struct("<I")
_OUTPUT = struct.Struct("<Ib")
_CONFIRM = struct.Struct("<IB")
_DIGEST_LEN = 32


class MsgType(enum.IntEnum):
    HELLO = 0x01
    INPUT_VECTOR = 0x02
    OUTPUT = 0x03
    SYNC_PROBE = 0x04
    SYNC_CONFIRM = 0x05
    ABORT = 0x06


class AbortReason(enum.IntEnum):
    UNSPECIFIED = 0
    PARAMETER_MISMATCH = 1
    ROLE_COLLISION = 2
    PROTOCOL_VIOLATION = 3
    ITERATION_LIMIT = 4


class TransportError(Exception):
    pass


class EncodingError(TransportError, ValueError):
    """A message field is outside what the wire format can carry."""


class ProtocolError(TransportError):
    """Unknown message type, malformed payload, or out-of-order message."""


class FramingError(TransportError):
    """Truncated or otherwise inconsistent frame boundaries."""


class OversizeError(FramingError):
    pass


@dataclass(frozen=True)
class Hello:
    role: Role
    k: int
    n: int
    l: int  # noqa: E741
    m: int
    rule: LearningRule
    input_mode: InputMode
    input_seed: int
    version: int = PROTOCOL_VERSION


@dataclass(frozen=True)
class InputVector:
    iteration: int
    values: tuple[int, ...]


@dataclass(frozen=True)
class Output:
    iteration: int
    output: int


@dataclass(frozen=True)
class SyncProbe:
    iteration: int
    digest: bytes


@dataclass(frozen=True)
class SyncConfirm:
    iteration: int
    agree: bool


@dataclass(frozen=True)
class Abort:
    reason: int


Message = Union[Hello, InputVector, Output, SyncProbe, SyncConfirm, Abort]

_TYPE_OF = {
    Hello: MsgType.HELLO,
    InputVector: MsgType.INPUT_VECTOR,
    Output: MsgType.OUTPUT,
    SyncProbe: MsgType.SYNC_PROBE,
    SyncConfirm: MsgType.SYNC_CONFIRM,
    Abort: MsgType.ABORT,
}


def _check(cond: bool, what: str) -> None:
    if not cond:
        raise EncodingError(what)


def _u(value, bits: int) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and 0 <= value < (1 << bits)


def _encode_payload(msg: Message) -> bytes:
    if isinstance(msg, Hello):
        _check(_u(msg.version, 8), "version out of range")
        _check(isinstance(msg.role, Role), "role must be a Role")
        _check(isinstance(msg.rule, LearningRule), "rule must be a LearningRule")
        _check(isinstance(msg.input_mode, InputMode), "input_mode must be an InputMode")
        _check(_u(msg.k, 16) and _u(msg.n, 16), "k/n out of u16 range")
        _check(_u(msg.l, 8) and _u(msg.m, 8), "l/m out of u8 range")
        _check(_u(msg.input_seed, 64), "input_seed out of u64 range")
        return _HELLO.pack(
            msg.version, msg.role.value, msg.k, msg.n, msg.l, msg.m,
            msg.rule.value, msg.input_mode.value, msg.input_seed,
        )
    if isinstance(msg, InputVector):
        _check(_u(msg.iteration, 32), "iteration out of u32 range")
        values = tuple(msg.values)
        _check(
            all(isinstance(v, int) and -128 <= v <= 127 and v != 0 for v in values),
            "input values must be nonzero signed bytes",
        )
        return _ITER.pack(msg.iteration) + struct.pack(f"<{len(values)}b", *values)
    if isinstance(msg, Output):
        _check(_u(msg.iteration, 32), "iteration out of u32 range")
        _check(msg.output in (1, -1) and not isinstance(msg.output, bool), "output must be +1 or -1")
        return _OUTPUT.pack(msg.iteration, msg.output)
    if isinstance(msg, SyncProbe):
        _check(_u(msg.iteration, 32), "iteration out of u32 range")
        _check(isinstance(msg.digest, bytes) and len(msg.digest) == _DIGEST_LEN, "digest must be 32 bytes")
        return _ITER.pack(msg.iteration) + msg.digest
    if isinstance(msg, SyncConfirm):
        _check(_u(msg.iteration, 32), "iteration out of u32 range")
        return _CONFIRM.pack(msg.iteration, 1 if msg.agree else 0)
    if isinstance(msg, Abort):
        _check(_u(msg.reason, 8), "reason out of u8 range")
        return bytes([msg.reason])
    raise EncodingError(f"not a message: {msg!r}")


def encode_frame(msg: Message) -> bytes:
    payload = _encode_payload(msg)
    if len(payload) > MAX_PAYLOAD:
        raise OversizeError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return HEADER.pack(len(payload), _TYPE_OF[type(msg)]) + payload


def _enum(cls, code: int, what: str):
    try:
        return cls(code)
    except ValueError:
        raise ProtocolError(f"invalid {what} code {code}") from None


def _expect_len(payload: bytes, size: int, what: str) -> None:
    if len(payload) != size:
        raise ProtocolError(f"{what} payload is {len(payload)} bytes, expected {size}")


def decode_payload(msg_type: int, payload: bytes) -> Message:
    try:
        kind = MsgType(msg_type)
    except ValueError:
        raise ProtocolError(f"unknown message type 0x{msg_type:02x}") from None

    if kind is MsgType.HELLO:
        _expect_len(payload, _HELLO.size, "HELLO")
        version, role, k, n, l, m, rule, mode, seed = _HELLO.unpack(payload)  # noqa: E741
        return Hello(
            role=_enum(Role, role, "role"),
            k=k, n=n, l=l, m=m,
            rule=_enum(LearningRule, rule, "rule"),
            input_mode=_enum(InputMode, mode, "input mode"),
            input_seed=seed,
            version=version,
        )
    if kind is MsgType.INPUT_VECTOR:
        if len(payload) < _ITER.size:
            raise ProtocolError("INPUT_VECTOR payload too short")
        (iteration,) = _ITER.unpack_from(payload)
        values = struct.unpack_from(f"<{len(payload) - _ITER.size}b", payload, _ITER.size)
        if 0 in values:
            raise ProtocolError("INPUT_VECTOR contains a zero entry")
        return InputVector(iteration, values)
    if kind is MsgType.OUTPUT:
        _expect_len(payload, _OUTPUT.size, "OUTPUT")
        iteration, output = _OUTPUT.unpack(payload)
        if output not in (1, -1):
            raise ProtocolError(f"OUTPUT value {output} is not +1 or -1")
        return Output(iteration, output)
    if kind is MsgType.SYNC_PROBE:
        _expect_len(payload, _ITER.size + _DIGEST_LEN, "SYNC_PROBE")
        (iteration,) = _ITER.unpack_from(payload)
        return SyncProbe(iteration, bytes(payload[_ITER.size:]))
    if kind is MsgType.SYNC_CONFIRM:
        _expect_len(payload, _CONFIRM.size, "SYNC_CONFIRM")
        iteration, agree = _CONFIRM.unpack(payload)
        if agree > 1:
            raise ProtocolError(f"SYNC_CONFIRM agree flag {agree} is not 0 or 1")
        return SyncConfirm(iteration, bool(agree))
    _expect_len(payload, 1, "ABORT")
    return Abort(payload[0])


def split_frame(buffer: bytes) -> tuple[Message, bytes] | None:
    """Decode the first frame of ``buffer``; ``None`` if it is still incomplete."""
    if len(buffer) < HEADER.size:
        return None
    length, msg_type = HEADER.unpack_from(buffer)
    if length > MAX_PAYLOAD:
        raise OversizeError(f"declared length {length} exceeds {MAX_PAYLOAD}")
    end = HEADER.size + length
    if len(buffer) < end:
        return None
    return decode_payload(msg_type, bytes(buffer[HEADER.size:end])), bytes(buffer[end:])


def decode_frame(data: bytes) -> Message:
    """Decode exactly one complete frame."""
    if len(data) < HEADER.size:
        raise FramingError(f"frame header needs {HEADER.size} bytes, got {len(data)}")
    length, _ = HEADER.unpack_from(data)
    if length > MAX_PAYLOAD:
        raise OversizeError(f"declared length {length} exceeds {MAX_PAYLOAD}")
    if len(data) - HEADER.size != length:
        raise FramingError(f"declared length {length}, have {len(data) - HEADER.size} payload bytes")
    msg, _ = split_frame(data)
    return msg


def message_to_dict(msg: Message) -> dict:
    out = {"type": _TYPE_OF[type(msg)].name}
    for f in fields(msg):
        value = getattr(msg, f.name)
        if isinstance(value, enum.Enum):
            value = value.name
        elif isinstance(value, bytes):
            value = value.hex()
        elif isinstance(value, tuple):
            value = list(value)
        out[f.name] = value
    return out


def message_from_dict(data: dict) -> Message:
    data = dict(data)
    kind = MsgType[data.pop("type")]
    if kind is MsgType.HELLO:
        data["role"] = Role[data["role"]]
        data["rule"] = LearningRule[data["rule"]]
        data["input_mode"] = InputMode[data["input_mode"]]
        return Hello(**data)
    if kind is MsgType.INPUT_VECTOR:
        return InputVector(data["iteration"], tuple(data["values"]))
    if kind is MsgType.OUTPUT:
        return Output(**data)
    if kind is MsgType.SYNC_PROBE:
        return SyncProbe(data["iteration"], bytes.fromhex(data["digest"]))
    if kind is MsgType.SYNC_CONFIRM:
        return SyncConfirm(**data)
    return Abort(**data)
