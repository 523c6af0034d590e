"""virtucv: an engine-free scene server with pixel-exact ground truth.

A small ray-cast renderer stands in for a game engine: a TCP server hosts a
mutable scene and answers vget/vset commands for camera control, lit images,
planar depth, surface normals, and instance masks.  Client, dataset
generation, and detector-diagnosis tooling build on that wire protocol.
"""

from .client import (
    ClientError,
    CommandError,
    ConnectError,
    Connection,
    TransportError,
    connect,
)
from .protocol import (
    Action,
    Command,
    Frame,
    ProtocolError,
    Response,
    decode_frame,
    encode_frame,
    parse_command,
)
from .render import RenderOutput, instance_color, render
from .scene import (
    Box,
    CameraPose,
    Light,
    Mesh,
    NotFoundError,
    Rotation,
    Scene,
    SceneError,
    SceneObject,
    Sphere,
    Vec3,
    load_scene,
)
from .server import Server, serve

__version__ = "0.1.0"

__all__ = [
    "Action",
    "Box",
    "CameraPose",
    "ClientError",
    "Command",
    "CommandError",
    "ConnectError",
    "Connection",
    "Frame",
    "Light",
    "Mesh",
    "NotFoundError",
    "ProtocolError",
    "RenderOutput",
    "Response",
    "Rotation",
    "Scene",
    "SceneError",
    "SceneObject",
    "Server",
    "Sphere",
    "TransportError",
    "Vec3",
    "connect",
    "decode_frame",
    "encode_frame",
    "instance_color",
    "load_scene",
    "parse_command",
    "render",
    "serve",
    "__version__",
]
