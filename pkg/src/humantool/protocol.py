"""Wire layer: message framing, the human tool call/response envelope,
and method dispatch.

Messages are canonical UTF-8 JSON (sorted keys, compact separators), one
message per frame. The stdio transport prefixes each frame with the ASCII
header line ``LEN <nnnnnnnn>\\n`` where the byte count is zero-padded to
eight decimal digits; the socket transport sends one JSON text per socket
message. Unknown top-level fields decode into ``extras`` and are re-emitted
on encode, so forward-compatible frames round-trip byte-identically.

A human's reply can land four ways: answered, refused, counter-proposal, or
timed out. Timeouts are declared only by the orchestrator's clock; a
``timed_out`` outcome arriving over the wire is an invalid message.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Callable

from .interaction import Behavior, ResponseKind, Stage
from .taskgraph import InvocationReason

PROTOCOL_VERSION = "humantool/1"

FRAME_HEADER_PREFIX = b"LEN "
FRAME_LENGTH_DIGITS = 8
MAX_FRAME_BYTES = 10**FRAME_LENGTH_DIGITS - 1

# Error code registry.
INVALID_MESSAGE = -32600
UNKNOWN_METHOD = -32601
UNKNOWN_CALL = 40404
PAST_DEADLINE = 40801
DUPLICATE_RESPONSE = 40901

METHOD_TOOLS_LIST = "tools/list"
METHOD_TOOLS_CALL = "tools/call"
METHOD_TOOLS_RESPOND = "tools/respond"
METHOD_SESSION_START = "session/start"
METHOD_SESSION_EVENTS = "session/events"
METHOD_SESSION_ABORT = "session/abort"

KNOWN_METHODS = frozenset(
    {
        METHOD_TOOLS_LIST,
        METHOD_TOOLS_CALL,
        METHOD_TOOLS_RESPOND,
        METHOD_SESSION_START,
        METHOD_SESSION_EVENTS,
        METHOD_SESSION_ABORT,
    }
)


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def isoformat_utc(moment: datetime) -> str:
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return moment.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def parse_timestamp(text: str) -> datetime:
    moment = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return moment.astimezone(timezone.utc)


class FrameError(Exception):
    """A frame could not be parsed. Carries the byte offset of the fault."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.reason = message
        self.offset = offset


class ProtocolError(Exception):
    """A registry-coded fault, convertible to an error frame."""

    def __init__(self, code: int, message: str, data: Any = None):
        super().__init__(message)
        self.code = code
        self.message = message
        self.data = data


class MessageKind(str, Enum):
    REQUEST = "request"
    RESPONSE = "response"
    ERROR = "error"
    NOTIFICATION = "notification"


_KNOWN_FIELDS = ("protocol_version", "id", "kind", "method", "payload", "error")


@dataclass(frozen=True)
class WireMessage:
    kind: MessageKind
    id: int | str | None = None
    method: str | None = None
    payload: Any = None
    error: dict[str, Any] | None = None
    protocol_version: str = PROTOCOL_VERSION
    extras: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        if self.protocol_version != PROTOCOL_VERSION:
            raise ProtocolError(INVALID_MESSAGE, f"unsupported protocol version {self.protocol_version!r}")
        if self.kind in (MessageKind.REQUEST, MessageKind.RESPONSE) and self.id is None:
            raise ProtocolError(INVALID_MESSAGE, f"{self.kind.value} messages must carry an id")
        if self.kind is MessageKind.NOTIFICATION and self.id is not None:
            raise ProtocolError(INVALID_MESSAGE, "notifications must not carry an id")
        if self.kind in (MessageKind.REQUEST, MessageKind.NOTIFICATION):
            if not self.method:
                raise ProtocolError(INVALID_MESSAGE, f"{self.kind.value} messages must name a method")
        elif self.method is not None:
            raise ProtocolError(INVALID_MESSAGE, f"{self.kind.value} messages must not name a method")
        if self.kind is MessageKind.ERROR:
            if not isinstance(self.error, dict) or "code" not in self.error or "message" not in self.error:
                raise ProtocolError(INVALID_MESSAGE, "error messages must carry {code, message}")
            if not isinstance(self.error["code"], int):
                raise ProtocolError(INVALID_MESSAGE, "error code must be an integer")
        elif self.error is not None:
            raise ProtocolError(INVALID_MESSAGE, f"{self.kind.value} messages must not carry an error object")

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"protocol_version": self.protocol_version, "kind": self.kind.value}
        if self.id is not None:
            data["id"] = self.id
        if self.method is not None:
            data["method"] = self.method
        if self.payload is not None:
            data["payload"] = self.payload
        if self.error is not None:
            data["error"] = self.error
        data.update(self.extras)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "WireMessage":
        if not isinstance(data, dict):
            raise ProtocolError(INVALID_MESSAGE, "message body must be a JSON object")
        try:
            kind = MessageKind(data.get("kind"))
        except ValueError:
            raise ProtocolError(INVALID_MESSAGE, f"unknown message kind {data.get('kind')!r}") from None
        extras = {k: v for k, v in data.items() if k not in _KNOWN_FIELDS}
        message = cls(
            kind=kind,
            id=data.get("id"),
            method=data.get("method"),
            payload=data.get("payload"),
            error=data.get("error"),
            protocol_version=data.get("protocol_version", ""),
            extras=extras,
        )
        message.validate()
        return message


def request(method: str, payload: Any = None, *, id: int | str) -> WireMessage:
    return WireMessage(kind=MessageKind.REQUEST, id=id, method=method, payload=payload)


def response(id: int | str, payload: Any = None) -> WireMessage:
    return WireMessage(kind=MessageKind.RESPONSE, id=id, payload=payload)


def notification(method: str, payload: Any = None) -> WireMessage:
    return WireMessage(kind=MessageKind.NOTIFICATION, method=method, payload=payload)


def error_message(id: int | str | None, code: int, message: str, data: Any = None) -> WireMessage:
    body: dict[str, Any] = {"code": code, "message": message}
    if data is not None:
        body["data"] = data
    return WireMessage(kind=MessageKind.ERROR, id=id, error=body)


def encode(message: WireMessage) -> bytes:
    """Canonical JSON bytes for one message (socket transport payload)."""
    message.validate()
    return canonical_json(message.to_dict()).encode("utf-8")


def decode(data: bytes | str) -> WireMessage:
    """Parse one message; malformed input raises FrameError, schema
    violations raise ProtocolError (invalid-message family)."""
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FrameError(f"invalid UTF-8: {exc.reason}", offset=exc.start) from exc
    else:
        text = data
    try:
        body = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FrameError(f"invalid JSON: {exc.msg}", offset=exc.pos) from exc
    return WireMessage.from_dict(body)


def encode_frame(message: WireMessage) -> bytes:
    """Length-prefixed frame for the stdio transport."""
    body = encode(message)
    if len(body) > MAX_FRAME_BYTES:
        raise ProtocolError(INVALID_MESSAGE, f"frame exceeds {MAX_FRAME_BYTES} bytes")
    header = FRAME_HEADER_PREFIX + str(len(body)).zfill(FRAME_LENGTH_DIGITS).encode("ascii") + b"\n"
    return header + body


_HEADER_LEN = len(FRAME_HEADER_PREFIX) + FRAME_LENGTH_DIGITS + 1


def decode_frame(data: bytes) -> tuple[WireMessage, int]:
    """Parse one stdio frame from the head of `data`.

    Returns the message and the number of bytes consumed so callers can
    iterate over concatenated frames.
    """
    if len(data) < _HEADER_LEN:
        raise FrameError("truncated frame header", offset=len(data))
    if data[: len(FRAME_HEADER_PREFIX)] != FRAME_HEADER_PREFIX:
        raise FrameError("malformed length header", offset=0)
    digits = data[len(FRAME_HEADER_PREFIX) : len(FRAME_HEADER_PREFIX) + FRAME_LENGTH_DIGITS]
    if not digits.isdigit():
        raise FrameError("malformed length header: non-decimal length", offset=len(FRAME_HEADER_PREFIX))
    if data[_HEADER_LEN - 1 : _HEADER_LEN] != b"\n":
        raise FrameError("malformed length header: missing newline", offset=_HEADER_LEN - 1)
    length = int(digits)
    end = _HEADER_LEN + length
    if len(data) < end:
        raise FrameError("truncated frame body", offset=len(data))
    try:
        message = decode(data[_HEADER_LEN:end])
    except FrameError as exc:
        raise FrameError(exc.reason, offset=_HEADER_LEN + exc.offset) from exc
    return message, end


def read_frame(stream) -> WireMessage | None:
    """Blocking read of one frame from a binary stream; None at EOF."""
    header = stream.read(_HEADER_LEN)
    if not header:
        return None
    if len(header) < _HEADER_LEN:
        raise FrameError("truncated frame header", offset=len(header))
    if not header.startswith(FRAME_HEADER_PREFIX) or header[-1:] != b"\n":
        raise FrameError("malformed length header", offset=0)
    digits = header[len(FRAME_HEADER_PREFIX) : -1]
    if not digits.isdigit():
        raise FrameError("malformed length header: non-decimal length", offset=len(FRAME_HEADER_PREFIX))
    length = int(digits)
    body = stream.read(length)
    if len(body) < length:
        raise FrameError("truncated frame body", offset=_HEADER_LEN + len(body))
    return decode(body)


def write_frame(stream, message: WireMessage) -> None:
    stream.write(encode_frame(message))
    stream.flush()


# ---------------------------------------------------------------------------
# Human tool call / response envelope
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HumanToolCall:
    call_id: str
    session_id: str
    node_id: str
    stage: Stage
    behavior: Behavior
    reason: InvocationReason | None
    prompt_text: str
    response_kind: ResponseKind
    deadline: datetime
    issued_at: datetime
    options: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.deadline <= self.issued_at:
            raise ValueError("deadline must be after issued_at")
        if self.response_kind is ResponseKind.CHOICE and not self.options:
            raise ValueError("choice calls must carry at least one option")

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "call_id": self.call_id,
            "session_id": self.session_id,
            "node_id": self.node_id,
            "stage": self.stage.value,
            "behavior": self.behavior.value,
            "reason": self.reason.value if self.reason else None,
            "prompt_text": self.prompt_text,
            "response_kind": self.response_kind.value,
            "deadline": isoformat_utc(self.deadline),
            "issued_at": isoformat_utc(self.issued_at),
        }
        if self.response_kind is ResponseKind.CHOICE:
            data["options"] = list(self.options)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "HumanToolCall":
        reason = data.get("reason")
        return cls(
            call_id=data["call_id"],
            session_id=data["session_id"],
            node_id=data["node_id"],
            stage=Stage(data["stage"]),
            behavior=Behavior(data["behavior"]),
            reason=InvocationReason(reason) if reason else None,
            prompt_text=data["prompt_text"],
            response_kind=ResponseKind(data["response_kind"]),
            deadline=parse_timestamp(data["deadline"]),
            issued_at=parse_timestamp(data["issued_at"]),
            options=tuple(data.get("options", ())),
        )


@dataclass(frozen=True)
class Answered:
    value: str | int | bool

    kind = "answered"

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "payload": self.value}


@dataclass(frozen=True)
class Refused:
    reason_text: str

    kind = "refused"

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "reason_text": self.reason_text}


@dataclass(frozen=True)
class CounterProposal:
    proposal_text: str

    kind = "counter_proposal"

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "proposal_text": self.proposal_text}


@dataclass(frozen=True)
class TimedOut:
    kind = "timed_out"

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind}


Outcome = Answered | Refused | CounterProposal | TimedOut


@dataclass(frozen=True)
class HumanToolResponse:
    call_id: str
    outcome: Outcome
    received_at: datetime

    def to_dict(self) -> dict[str, Any]:
        return {
            "call_id": self.call_id,
            "outcome": self.outcome.to_dict(),
            "received_at": isoformat_utc(self.received_at),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any], *, from_wire: bool = False) -> "HumanToolResponse":
        try:
            outcome_data = data["outcome"]
            kind = outcome_data["kind"]
            outcome: Outcome
            if kind == "answered":
                outcome = Answered(outcome_data["payload"])
            elif kind == "refused":
                outcome = Refused(outcome_data["reason_text"])
            elif kind == "counter_proposal":
                outcome = CounterProposal(outcome_data["proposal_text"])
            elif kind == "timed_out":
                if from_wire:
                    raise ProtocolError(
                        INVALID_MESSAGE, "timed_out outcomes are declared by the orchestrator clock only"
                    )
                outcome = TimedOut()
            else:
                raise ProtocolError(INVALID_MESSAGE, f"unknown outcome kind {kind!r}")
            return cls(
                call_id=data["call_id"],
                outcome=outcome,
                received_at=parse_timestamp(data["received_at"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(INVALID_MESSAGE, f"malformed tool response: {exc}") from exc


def validate_response_against_call(call: HumanToolCall, tool_response: HumanToolResponse) -> None:
    """Check that an answered payload matches the call's response kind."""
    if tool_response.call_id != call.call_id:
        raise ProtocolError(UNKNOWN_CALL, f"response call_id {tool_response.call_id!r} does not match")
    outcome = tool_response.outcome
    if not isinstance(outcome, Answered):
        return
    value = outcome.value
    if call.response_kind is ResponseKind.APPROVAL and not isinstance(value, bool):
        raise ProtocolError(INVALID_MESSAGE, "approval calls require a boolean payload")
    if call.response_kind is ResponseKind.FREE_TEXT and not isinstance(value, str):
        raise ProtocolError(INVALID_MESSAGE, "free_text calls require a string payload")
    if call.response_kind is ResponseKind.CHOICE:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ProtocolError(INVALID_MESSAGE, "choice calls require an integer option index")
        if not 0 <= value < len(call.options):
            raise ProtocolError(INVALID_MESSAGE, f"choice index {value} out of range")


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

Handler = Callable[[WireMessage], Any]


class Dispatcher:
    """Routes requests and notifications to registered method handlers.

    Handlers receive the full message and return a payload (wrapped into a
    response frame) or raise ProtocolError (wrapped into an error frame).
    """

    def __init__(self) -> None:
        self._handlers: dict[str, Handler] = {}

    def register(self, method: str, handler: Handler) -> None:
        self._handlers[method] = handler

    def methods(self) -> list[str]:
        return sorted(self._handlers)

    def dispatch(self, message: WireMessage) -> WireMessage | None:
        """Handle one incoming message; returns the reply frame, if any."""
        try:
            message.validate()
            if message.kind not in (MessageKind.REQUEST, MessageKind.NOTIFICATION):
                raise ProtocolError(INVALID_MESSAGE, f"cannot dispatch {message.kind.value} messages")
            handler = self._handlers.get(message.method or "")
            if handler is None:
                raise ProtocolError(UNKNOWN_METHOD, f"unknown method {message.method!r}")
            result = handler(message)
        except ProtocolError as exc:
            return error_message(message.id, exc.code, exc.message, exc.data)
        if message.kind is MessageKind.NOTIFICATION:
            return None
        return response(message.id, result)
