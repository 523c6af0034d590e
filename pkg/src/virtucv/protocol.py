"""Wire framing and command grammar shared by the server and every client.

Frame format:
    ┌──────────────┬─────────────────────────────┐
    │ len (4B)     │ payload = "<id>:<body>"     │
    │ u32 LE       │ UTF-8 text                  │
    └──────────────┴─────────────────────────────┘

The length covers the payload only, not the 4-byte prefix.  Exactly one
colon separates the decimal request id from the body; the body itself may
contain colons.  The explicit id makes request pipelining safe: responses
reuse the id of the request they answer.

Command grammar (plain text, whitespace separated):
    <action> <uri> [arg ...]
where action is the literal ``vget`` (read, never mutates) or ``vset``
(mutate), and uri is ``/seg/seg/...`` with non-empty segments.  Arguments
stay text tokens; handlers do their own numeric parsing so the grammar
never has to change when a new command is added.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import BinaryIO

LENGTH_PREFIX = struct.Struct("<I")

# Refuse absurd frames instead of allocating gigabytes on a bad length.
MAX_PAYLOAD = 16 * 1024 * 1024

_ASCII_WS = re.compile(r"[ \t\r\n\f\v]+")


class ProtocolError(Exception):
    """Malformed bytes or text at the wire/grammar level."""


class IncompleteFrameError(ProtocolError):
    """Byte source ended in the middle of a frame."""


class CommandParseError(ProtocolError):
    """Text does not match the command grammar."""


class CommandFormatError(ProtocolError):
    """Command cannot be serialized without breaking the grammar."""


class Action(Enum):
    VGET = "vget"
    VSET = "vset"


@dataclass(frozen=True)
class Frame:
    """One length-prefixed message: a request or a response payload."""

    request_id: int
    body: str

    def __post_init__(self):
        if self.request_id < 0:
            raise ProtocolError("request id must be non-negative")


@dataclass(frozen=True)
class Command:
    action: Action
    path: tuple[str, ...]
    args: tuple[str, ...] = field(default_factory=tuple)


OK = "OK"
ERROR = "ERROR"

ERROR_PREFIX = "error "


@dataclass(frozen=True)
class Response:
    request_id: int
    status: str
    body: str


def encode_frame(frame: Frame) -> bytes:
    """Serialize a frame to its wire bytes (length prefix + ``id:body``)."""
    payload = f"{frame.request_id}:{frame.body}".encode("utf-8")
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {len(payload)} bytes exceeds the {MAX_PAYLOAD} byte limit")
    return LENGTH_PREFIX.pack(len(payload)) + payload


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            raise IncompleteFrameError(f"stream ended after {len(buf)} of {n} bytes")
        buf += chunk
    return buf


def decode_frame(stream: BinaryIO) -> Frame:
    """Read exactly one frame from a byte source positioned at a frame boundary."""
    (length,) = LENGTH_PREFIX.unpack(_read_exact(stream, 4))
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"declared payload of {length} bytes exceeds the {MAX_PAYLOAD} byte limit")
    raw = _read_exact(stream, length)
    try:
        payload = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ProtocolError(f"payload is not valid UTF-8: {exc}") from None
    ident, sep, body = payload.partition(":")
    if not sep:
        raise ProtocolError("payload has no id:body separator")
    if not ident.isdigit():
        raise ProtocolError(f"request id {ident!r} is not a decimal unsigned integer")
    return Frame(request_id=int(ident), body=body)


def parse_command(text: str) -> Command:
    """Parse command text into (action, path segments, args).

    Splits on ASCII whitespace only; actions are case-sensitive lowercase.
    """
    tokens = [t for t in _ASCII_WS.split(text) if t]
    if not tokens:
        raise CommandParseError("empty command")
    try:
        action = Action(tokens[0])
    except ValueError:
        raise CommandParseError(f"unknown action {tokens[0]!r} (expected vget or vset)") from None
    if len(tokens) < 2:
        raise CommandParseError("command has no URI")
    uri = tokens[1]
    if not uri.startswith("/"):
        raise CommandParseError(f"URI {uri!r} must start with '/'")
    segments = uri[1:].split("/")
    if not segments or any(seg == "" for seg in segments):
        raise CommandParseError(f"URI {uri!r} has empty path segments")
    return Command(action=action, path=tuple(segments), args=tuple(tokens[2:]))


def format_command(command: Command) -> str:
    """Render a command back to wire text; parse_command(format_command(c)) == c."""
    if not command.path:
        raise CommandFormatError("command path is empty")
    for seg in command.path:
        if not seg or "/" in seg or _ASCII_WS.search(seg):
            raise CommandFormatError(f"invalid path segment {seg!r}")
    for arg in command.args:
        if not arg or _ASCII_WS.search(arg):
            raise CommandFormatError(f"argument {arg!r} is empty or contains whitespace")
    parts = [command.action.value, "/" + "/".join(command.path), *command.args]
    return " ".join(parts)


def fmt_real(value: float) -> str:
    """Shortest decimal that parses back to exactly the same float.

    Integral values drop the trailing ``.0`` so set/get round trips echo the
    caller's tokens (``vset ... 10 20 30`` reads back as ``10 20 30``).
    """
    value = float(value)
    if value == int(value) and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def parse_real(token: str) -> float:
    """Parse a finite real argument token."""
    try:
        value = float(token)
    except ValueError:
        raise ValueError(f"{token!r} is not a number") from None
    if value != value or value in (float("inf"), float("-inf")):
        raise ValueError(f"{token!r} is not finite")
    return value


def encode_response(response: Response) -> Frame:
    """Responses travel as plain frames; ERROR bodies carry the ``error `` prefix."""
    body = response.body
    if response.status == ERROR and not body.startswith(ERROR_PREFIX):
        body = ERROR_PREFIX + body
    return Frame(request_id=response.request_id, body=body)


def decode_response(frame: Frame) -> Response:
    """Classify a response frame: an ``error `` prefix marks ERROR, anything else OK."""
    if frame.body.startswith(ERROR_PREFIX):
        return Response(frame.request_id, ERROR, frame.body)
    return Response(frame.request_id, OK, frame.body)
