"""TCP command server hosting one mutable scene.

Routing walks a flat table of path patterns whose segments are literals or
``{placeholder}`` captures; at most one pattern may match a concrete path
(``HandlerTree.collisions`` enumerates violations for the property test).

Concurrency model: every connection gets a reader thread that decodes frames
and enqueues work items on one shared queue; a single executor thread owns
the scene and runs commands strictly serially in arrival order, sending each
response before touching the next command.  Responses therefore arrive in
request order per connection, and the full history is linearizable.  The
executor appends each command to ``commands.log`` in the output directory;
replaying that file single-threaded reproduces the final scene state.

Command catalog (VGET never mutates the scene):

    vget /objects                        object names, instance order
    vget /camera/{id}/location           "x y z"
    vset /camera/{id}/location x y z
    vset /camera/{id}/position x y z     alias of location
    vget /camera/{id}/rotation           "yaw pitch roll"
    vset /camera/{id}/rotation yaw pitch roll
    vget /camera/{id}/image              renders, writes PNG, returns path
    vget /camera/{id}/depth              writes PFM, returns path
    vget /camera/{id}/object_mask        writes PNG, returns path
    vget /camera/{id}/normal             writes PNG, returns path
    vset /light/{name}/intensity v
    vset /light/{name}/color r g b       components 0..255, stored normalized
    vget /object/{name}/color            "r g b"
    vset /object/{name}/color r g b
    vset /object/{name}/location x y z   recenters the object's bounds
    vget /scene/bounds                   "minx miny minz maxx maxy maxz"
    vget /object/{name}/bounds           same shape as /scene/bounds

Failures map to three ERROR bodies: ``error unknown command`` (no route),
``error invalid arguments`` (arity or parse), ``error not found`` (entity).
"""

from __future__ import annotations

import argparse
import os
import queue
import socket
import sys
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .imgio import write_pfm, write_png
from .protocol import (
    ERROR,
    OK,
    Command,
    CommandParseError,
    Frame,
    ProtocolError,
    Response,
    decode_frame,
    encode_frame,
    encode_response,
    fmt_real,
    format_command,
    parse_command,
    parse_real,
)
from .render import render
from .scene import (
    Box,
    CameraPose,
    NotFoundError,
    Rotation,
    Scene,
    Vec3,
    geometry_bounds,
    load_scene,
    scene_digest,
    set_object_color,
    set_object_location,
)

UNKNOWN_COMMAND = "error unknown command"
INVALID_ARGUMENTS = "error invalid arguments"
NOT_FOUND = "error not found"


class InvalidArgumentsError(Exception):
    pass


# ---------------------------------------------------------------------------
# Routing.
# ---------------------------------------------------------------------------

class HandlerTree:
    """Maps (action, path pattern) pairs to handler callables."""

    def __init__(self):
        self._routes = []

    def add(self, action, pattern: str, fn) -> None:
        segments = tuple(pattern.strip("/").split("/"))
        self._routes.append((action, segments, fn))

    def match(self, action, path: tuple[str, ...]):
        """Return (handler, captured params) or None."""
        for route_action, pattern, fn in self._routes:
            if route_action != action or len(pattern) != len(path):
                continue
            params = {}
            for pat, seg in zip(pattern, path):
                if pat.startswith("{"):
                    params[pat[1:-1]] = seg
                elif pat != seg:
                    break
            else:
                return fn, params
        return None

    def collisions(self) -> list[tuple]:
        """Pairs of routes that could both match some concrete path."""
        found = []
        for i in range(len(self._routes)):
            for j in range(i + 1, len(self._routes)):
                a_act, a_pat, _ = self._routes[i]
                b_act, b_pat, _ = self._routes[j]
                if a_act != b_act or len(a_pat) != len(b_pat):
                    continue
                compatible = all(
                    pa.startswith("{") or pb.startswith("{") or pa == pb
                    for pa, pb in zip(a_pat, b_pat)
                )
                if compatible:
                    found.append((a_act.value, "/" + "/".join(a_pat),
                                  b_act.value, "/" + "/".join(b_pat)))
        return found


# ---------------------------------------------------------------------------
# Output persistence.
# ---------------------------------------------------------------------------

@dataclass
class OutputStore:
    """Allocates unique absolute output paths: <dir>/<seq:06>_<modality>.<ext>."""

    directory: Path
    _seq: int = field(default=0, repr=False)

    def __post_init__(self):
        self.directory = Path(self.directory).absolute()
        self.directory.mkdir(parents=True, exist_ok=True)

    def next_path(self, modality: str, ext: str) -> str:
        path = self.directory / f"{self._seq:06d}_{modality}{ext}"
        self._seq += 1
        return str(path)


# ---------------------------------------------------------------------------
# Handlers.  Signature: fn(scene, store, params, args) -> response body.
# ---------------------------------------------------------------------------

def _need(args: tuple[str, ...], n: int) -> None:
    if len(args) != n:
        raise InvalidArgumentsError(f"expected {n} arguments, got {len(args)}")


def _reals(args: tuple[str, ...]) -> list[float]:
    try:
        return [parse_real(a) for a in args]
    except ValueError as exc:
        raise InvalidArgumentsError(str(exc)) from None


def _ints255(args: tuple[str, ...]) -> tuple[int, int, int]:
    try:
        vals = [int(a, 10) for a in args]
    except ValueError:
        raise InvalidArgumentsError("color components must be integers") from None
    if any(not 0 <= v <= 255 for v in vals):
        raise InvalidArgumentsError("color components must be in [0, 255]")
    return vals[0], vals[1], vals[2]


def _camera(scene: Scene, token: str) -> CameraPose:
    try:
        cam_id = int(token, 10)
    except ValueError:
        raise NotFoundError(f"camera {token!r} not found") from None
    pose = scene.cameras.get(cam_id)
    if pose is None:
        raise NotFoundError(f"camera {cam_id} not found")
    return pose


def _object(scene: Scene, name: str):
    obj = scene.objects.get(name)
    if obj is None:
        raise NotFoundError(f"object {name!r} not found")
    return obj


def _fmt_vec(*values: float) -> str:
    return " ".join(fmt_real(v) for v in values)


def _fmt_bounds(bounds: Box) -> str:
    return _fmt_vec(bounds.min.x, bounds.min.y, bounds.min.z,
                    bounds.max.x, bounds.max.y, bounds.max.z)


def _h_objects(scene, store, params, args):
    _need(args, 0)
    return " ".join(o.name for o in scene.objects_by_index())


def _h_get_location(scene, store, params, args):
    _need(args, 0)
    loc = _camera(scene, params["id"]).location
    return _fmt_vec(loc.x, loc.y, loc.z)


def _h_set_location(scene, store, params, args):
    _need(args, 3)
    pose = _camera(scene, params["id"])
    x, y, z = _reals(args)
    pose.location = Vec3(x, y, z)
    return "ok"


def _h_get_rotation(scene, store, params, args):
    _need(args, 0)
    rot = _camera(scene, params["id"]).rotation
    return _fmt_vec(rot.yaw, rot.pitch, rot.roll)


def _h_set_rotation(scene, store, params, args):
    _need(args, 3)
    pose = _camera(scene, params["id"])
    yaw, pitch, roll = _reals(args)
    pose.rotation = Rotation(yaw, pitch, roll)
    return "ok"


# Rendering is a pure function of the scene state, so captures taken in a
# row without an intervening mutation (image then mask of the same pose)
# reuse the traced buffers.
_RENDER_CACHE: dict = {}


def _cached_render(scene: Scene, camera: int):
    key = (scene_digest(scene), camera)
    out = _RENDER_CACHE.get(key)
    if out is None:
        if len(_RENDER_CACHE) >= 8:
            _RENDER_CACHE.clear()
        out = render(scene, camera)
        _RENDER_CACHE[key] = out
    return out


def _make_capture(modality: str, ext: str, buffer_name: str):
    def handler(scene, store, params, args):
        _need(args, 0)
        _camera(scene, params["id"])
        out = _cached_render(scene, int(params["id"], 10))
        path = store.next_path(modality, ext)
        buf = getattr(out, buffer_name)
        if ext == ".pfm":
            write_pfm(path, buf)
        else:
            write_png(path, buf)
        return path
    return handler


def _h_light_intensity(scene, store, params, args):
    _need(args, 1)
    light = scene.lights.get(params["name"])
    if light is None:
        raise NotFoundError(f"light {params['name']!r} not found")
    (value,) = _reals(args)
    if value < 0.0:
        raise InvalidArgumentsError("intensity must be >= 0")
    light.intensity = value
    return "ok"


def _h_light_color(scene, store, params, args):
    _need(args, 3)
    light = scene.lights.get(params["name"])
    if light is None:
        raise NotFoundError(f"light {params['name']!r} not found")
    r, g, b = _reals(args)
    if any(not 0.0 <= v <= 255.0 for v in (r, g, b)):
        raise InvalidArgumentsError("color components must be in [0, 255]")
    light.color = (r / 255.0, g / 255.0, b / 255.0)
    return "ok"


def _h_get_object_color(scene, store, params, args):
    _need(args, 0)
    r, g, b = _object(scene, params["name"]).base_color
    return _fmt_vec(r, g, b)


def _h_set_object_color(scene, store, params, args):
    _need(args, 3)
    _object(scene, params["name"])
    set_object_color(scene, params["name"], _ints255(args))
    return "ok"


def _h_set_object_location(scene, store, params, args):
    _need(args, 3)
    x, y, z = _reals(args)
    set_object_location(scene, params["name"], Vec3(x, y, z))
    return "ok"


def _h_scene_bounds(scene, store, params, args):
    _need(args, 0)
    if scene.free_space_bounds is None:
        raise NotFoundError("scene has no free_space_bounds")
    return _fmt_bounds(scene.free_space_bounds)


def _h_object_bounds(scene, store, params, args):
    _need(args, 0)
    return _fmt_bounds(geometry_bounds(_object(scene, params["name"]).geometry))


def build_handlers() -> HandlerTree:
    from .protocol import Action

    tree = HandlerTree()
    vget, vset = Action.VGET, Action.VSET
    tree.add(vget, "/objects", _h_objects)
    tree.add(vget, "/camera/{id}/location", _h_get_location)
    tree.add(vset, "/camera/{id}/location", _h_set_location)
    tree.add(vset, "/camera/{id}/position", _h_set_location)
    tree.add(vget, "/camera/{id}/rotation", _h_get_rotation)
    tree.add(vset, "/camera/{id}/rotation", _h_set_rotation)
    tree.add(vget, "/camera/{id}/image", _make_capture("image", ".png", "lit"))
    tree.add(vget, "/camera/{id}/depth", _make_capture("depth", ".pfm", "depth"))
    tree.add(vget, "/camera/{id}/object_mask", _make_capture("object_mask", ".png", "mask"))
    tree.add(vget, "/camera/{id}/normal", _make_capture("normal", ".png", "normal"))
    tree.add(vset, "/light/{name}/intensity", _h_light_intensity)
    tree.add(vset, "/light/{name}/color", _h_light_color)
    tree.add(vget, "/object/{name}/color", _h_get_object_color)
    tree.add(vset, "/object/{name}/color", _h_set_object_color)
    tree.add(vset, "/object/{name}/location", _h_set_object_location)
    tree.add(vget, "/scene/bounds", _h_scene_bounds)
    tree.add(vget, "/object/{name}/bounds", _h_object_bounds)
    return tree


HANDLERS = build_handlers()


def handle(command: Command, scene: Scene, store: OutputStore,
           request_id: int = 0) -> Response:
    """Dispatch one parsed command against the catalog."""
    matched = HANDLERS.match(command.action, command.path)
    if matched is None:
        return Response(request_id, ERROR, UNKNOWN_COMMAND)
    fn, params = matched
    try:
        body = fn(scene, store, params, command.args)
    except InvalidArgumentsError:
        return Response(request_id, ERROR, INVALID_ARGUMENTS)
    except NotFoundError:
        return Response(request_id, ERROR, NOT_FOUND)
    return Response(request_id, OK, body)


# ---------------------------------------------------------------------------
# The server.
# ---------------------------------------------------------------------------

_STOP = object()


class Server:
    """Accepts connections and executes all commands on one serial executor.

    ``port=0`` binds an ephemeral port; read the bound one from ``.port``.
    """

    def __init__(self, scene: Scene, port: int = 0, host: str = "127.0.0.1",
                 output_dir: str | None = None):
        self.scene = scene
        if output_dir is None:
            output_dir = tempfile.mkdtemp(prefix="virtucv-out-")
        self.store = OutputStore(Path(output_dir))
        self.host = host
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(16)
        self.port = self._listener.getsockname()[1]
        self._queue: queue.Queue = queue.Queue()
        self._threads: list[threading.Thread] = []
        self._conns: set[socket.socket] = set()
        self._conns_lock = threading.Lock()
        self._log_path = self.store.directory / "commands.log"
        self._log = open(self._log_path, "w", encoding="utf-8")
        self._stopping = False

    @property
    def log_path(self) -> Path:
        return self._log_path

    def start(self) -> None:
        for target, name in ((self._accept_loop, "virtucv-accept"),
                             (self._execute_loop, "virtucv-exec")):
            t = threading.Thread(target=target, name=name, daemon=True)
            t.start()
            self._threads.append(t)

    def stop(self) -> None:
        self._stopping = True
        # close() alone does not wake a blocked accept(); shutdown() does
        try:
            self._listener.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._listener.close()
        except OSError:
            pass
        self._queue.put(_STOP)
        for t in self._threads:
            t.join(timeout=5.0)
        with self._conns_lock:
            conns = list(self._conns)
        for sock in conns:
            # close() alone does not wake a reader blocked in recv() either;
            # shutdown() sends FIN so the reader sees EOF and drops the socket.
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                sock.close()
            except OSError:
                pass
        self._log.close()

    def _accept_loop(self) -> None:
        while True:
            try:
                sock, _addr = self._listener.accept()
            except OSError:
                return  # listener closed
            with self._conns_lock:
                self._conns.add(sock)
            t = threading.Thread(target=self._read_loop, args=(sock,),
                                 name="virtucv-conn", daemon=True)
            t.start()

    def _read_loop(self, sock: socket.socket) -> None:
        # Protocol errors close only this connection; the id is not
        # recoverable from a broken frame, so no ERROR response is possible.
        stream = sock.makefile("rb")
        try:
            while True:
                frame = decode_frame(stream)
                try:
                    command = parse_command(frame.body)
                except CommandParseError:
                    self._queue.put((sock, frame.request_id, None, UNKNOWN_COMMAND))
                    continue
                self._queue.put((sock, frame.request_id, command, None))
        except (ProtocolError, OSError, ValueError):
            pass
        finally:
            try:
                stream.close()
            except OSError:
                pass
            try:
                sock.close()
            except OSError:
                pass
            with self._conns_lock:
                self._conns.discard(sock)

    def _execute_loop(self) -> None:
        while True:
            item = self._queue.get()
            if item is _STOP:
                return
            sock, request_id, command, error_body = item
            if command is not None:
                self._log.write(format_command(command) + "\n")
                self._log.flush()
                try:
                    response = handle(command, self.scene, self.store, request_id)
                except Exception as exc:  # noqa: BLE001 - server must keep serving
                    detail = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
                    response = Response(request_id, ERROR, f"error internal: {detail}")
                frame = encode_frame(encode_response(response))
            else:
                frame = encode_frame(Frame(request_id, error_body))
            try:
                sock.sendall(frame)
            except OSError:
                pass  # client went away; its work is already applied


def serve(scene_file: str, port: int, output_dir: str | None = None) -> None:
    """Load the scene and serve until interrupted."""
    scene = load_scene(scene_file)
    server = Server(scene, port=port, output_dir=output_dir)
    server.start()
    print(f"outputs: {server.store.directory}", flush=True)
    print(f"listening on {server.host}:{server.port}", flush=True)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        server.stop()


def default_port() -> int:
    return int(os.environ.get("VIRTUCV_PORT", "9000"))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="virtucv-server",
        description="Serve a scene over the command protocol.")
    parser.add_argument("--scene", required=True, help="scene JSON file")
    parser.add_argument("--port", type=int, default=None,
                        help="TCP port (default: $VIRTUCV_PORT or 9000; 0 = ephemeral)")
    parser.add_argument("--out", default=None,
                        help="output directory for captures (default: temp dir)")
    args = parser.parse_args(argv)
    port = args.port if args.port is not None else default_port()
    try:
        serve(args.scene, port, args.out)
    except OSError as exc:
        print(f"startup failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
