"""Synchronous client: one connection, one in-flight request at a time.

``request`` frames the command text with the connection's next id, blocks
until the matching response arrives, and returns the body.  Server ERROR
bodies raise ``CommandError`` carrying the message.  Typed helpers format
arguments with the shortest round-trip decimal rule, so a set followed by a
get echoes the caller's values exactly.

A Connection may move between threads but must not be shared; concurrent
use raises rather than interleaving frames.
"""

from __future__ import annotations

import os
import socket
import threading

from .protocol import (
    ERROR,
    ERROR_PREFIX,
    Frame,
    IncompleteFrameError,
    ProtocolError,
    decode_frame,
    decode_response,
    encode_frame,
    fmt_real,
    parse_real,
)

CAPTURE_MODALITIES = ("image", "depth", "object_mask", "normal")


class ClientError(Exception):
    pass


class ConnectError(ClientError):
    """Server unreachable: refused, timed out, or unresolvable."""


class TransportError(ClientError):
    """Connection dropped mid-request."""


class CommandError(ClientError):
    """Server answered with an ERROR body; ``message`` omits the prefix."""

    def __init__(self, message: str, body: str):
        super().__init__(message)
        self.message = message
        self.body = body


class Connection:
    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._stream = sock.makefile("rb")
        self._next_id = 0
        self._busy = threading.Lock()

    def close(self) -> None:
        try:
            self._stream.close()
        finally:
            self._sock.close()

    def __enter__(self) -> "Connection":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def request(self, command_text: str) -> str:
        """Send one command, wait for its response, return the body."""
        if not self._busy.acquire(blocking=False):
            raise ProtocolError("connection already has a request in flight")
        try:
            request_id = self._next_id
            self._next_id += 1
            try:
                self._sock.sendall(encode_frame(Frame(request_id, command_text)))
                frame = decode_frame(self._stream)
            except (OSError, IncompleteFrameError) as exc:
                raise TransportError(f"connection lost: {exc}") from exc
            if frame.request_id != request_id:
                raise ProtocolError(
                    f"response id {frame.request_id} does not match request id {request_id}")
            response = decode_response(frame)
            if response.status == ERROR:
                raise CommandError(response.body[len(ERROR_PREFIX):], response.body)
            return response.body
        finally:
            self._busy.release()

    # -- typed helpers ------------------------------------------------------

    def list_objects(self) -> list[str]:
        body = self.request("vget /objects")
        return body.split() if body else []

    def get_camera_location(self, camera: int) -> tuple[float, float, float]:
        return _parse_triple(self.request(f"vget /camera/{camera}/location"))

    def set_camera_location(self, camera: int, xyz) -> None:
        self.request(f"vset /camera/{camera}/location {_fmt_triple(xyz)}")

    def get_camera_rotation(self, camera: int) -> tuple[float, float, float]:
        return _parse_triple(self.request(f"vget /camera/{camera}/rotation"))

    def set_camera_rotation(self, camera: int, yaw_pitch_roll) -> None:
        self.request(f"vset /camera/{camera}/rotation {_fmt_triple(yaw_pitch_roll)}")

    def capture(self, camera: int, modality: str) -> str:
        """Render one modality; returns the server-side file path."""
        if modality not in CAPTURE_MODALITIES:
            raise ValueError(f"modality {modality!r} not one of {CAPTURE_MODALITIES}")
        path = self.request(f"vget /camera/{camera}/{modality}")
        if not os.path.isfile(path):
            raise FileNotFoundError(
                f"server reported {path} but it does not exist locally "
                "(client and server must share a filesystem)")
        return path

    def get_object_color(self, name: str) -> tuple[int, int, int]:
        r, g, b = _parse_triple(self.request(f"vget /object/{name}/color"))
        return int(r), int(g), int(b)

    def set_object_color(self, name: str, rgb) -> None:
        r, g, b = (int(v) for v in rgb)
        self.request(f"vset /object/{name}/color {r} {g} {b}")

    def set_object_location(self, name: str, xyz) -> None:
        self.request(f"vset /object/{name}/location {_fmt_triple(xyz)}")

    def set_light_intensity(self, name: str, value: float) -> None:
        self.request(f"vset /light/{name}/intensity {fmt_real(value)}")

    def set_light_color(self, name: str, rgb) -> None:
        self.request(f"vset /light/{name}/color {_fmt_triple(rgb)}")

    def get_scene_bounds(self):
        return _parse_bounds(self.request("vget /scene/bounds"))

    def get_object_bounds(self, name: str):
        return _parse_bounds(self.request(f"vget /object/{name}/bounds"))


def connect(host: str, port: int, timeout: float = 5.0) -> Connection:
    """Open a connection; raises ConnectError within ``timeout`` seconds."""
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise ConnectError(f"cannot connect to {host}:{port}: {exc}") from exc
    sock.settimeout(None)
    return Connection(sock)


def _fmt_triple(values) -> str:
    a, b, c = values
    return f"{fmt_real(a)} {fmt_real(b)} {fmt_real(c)}"


def _parse_triple(body: str) -> tuple[float, float, float]:
    tokens = body.split()
    if len(tokens) != 3:
        raise ProtocolError(f"expected 3 numbers, got {body!r}")
    try:
        a, b, c = (parse_real(t) for t in tokens)
    except ValueError as exc:
        raise ProtocolError(f"bad numeric response {body!r}: {exc}") from None
    return a, b, c


def _parse_bounds(body: str):
    tokens = body.split()
    if len(tokens) != 6:
        raise ProtocolError(f"expected 6 numbers, got {body!r}")
    try:
        vals = [parse_real(t) for t in tokens]
    except ValueError as exc:
        raise ProtocolError(f"bad numeric response {body!r}: {exc}") from None
    return (vals[0], vals[1], vals[2]), (vals[3], vals[4], vals[5])
