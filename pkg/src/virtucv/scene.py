"""In-memory world state: cameras, lights, named objects, and the scene-file loader.

Conventions (fixed for the whole system):
  * Z-up, right-handed; positions in centimeters, angles in degrees.
  * At yaw=pitch=roll=0 the camera looks along +X with +Y to its right and
    +Z up.  Yaw rotates about +Z (positive turns forward toward +Y), pitch
    about the rotated right axis (positive tilts forward upward), roll
    about the resulting forward axis (right-hand rule).
  * Rotations are stored unnormalized; compare them modulo 360.

Scene files are JSON documents; see ``load_scene`` for the schema.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Union


class SceneError(Exception):
    """Invalid scene content; the message names the offending entity."""


class NotFoundError(SceneError):
    """A named/indexed entity does not exist in the scene."""


class Vec3(NamedTuple):
    x: float
    y: float
    z: float

    def __add__(self, other):  # type: ignore[override]
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other):
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def scaled(self, s: float) -> "Vec3":
        return Vec3(self.x * s, self.y * s, self.z * s)

    def dot(self, other: "Vec3") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def cross(self, other: "Vec3") -> "Vec3":
        return Vec3(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def normalized(self) -> "Vec3":
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize a zero vector")
        return Vec3(self.x / n, self.y / n, self.z / n)

    def is_finite(self) -> bool:
        return all(map(math.isfinite, self))


class Rotation(NamedTuple):
    yaw: float
    pitch: float
    roll: float

    def is_finite(self) -> bool:
        return all(map(math.isfinite, self))


class Sphere(NamedTuple):
    center: Vec3
    radius: float


class Box(NamedTuple):
    min: Vec3
    max: Vec3


class Mesh(NamedTuple):
    vertices: tuple[Vec3, ...]
    triangles: tuple[tuple[int, int, int], ...]


Geometry = Union[Sphere, Box, Mesh]


@dataclass
class CameraPose:
    location: Vec3 = Vec3(0.0, 0.0, 0.0)
    rotation: Rotation = Rotation(0.0, 0.0, 0.0)
    horizontal_fov: float = 90.0
    image_width: int = 640
    image_height: int = 480

    def __post_init__(self):
        if not (0.0 < self.horizontal_fov < 180.0):
            raise SceneError(f"camera fov {self.horizontal_fov} not in (0, 180)")
        if self.image_width < 1 or self.image_height < 1:
            raise SceneError(f"camera size {self.image_width}x{self.image_height} invalid")
        if not (self.location.is_finite() and self.rotation.is_finite()):
            raise SceneError("camera pose has non-finite components")


@dataclass
class SceneObject:
    name: str
    geometry: Geometry
    base_color: tuple[int, int, int]
    instance_index: int


@dataclass
class Light:
    name: str
    kind: str  # "directional" or "point"
    vector: Vec3  # propagation direction (directional) or position (point)
    intensity: float
    color: tuple[float, float, float] = (1.0, 1.0, 1.0)


@dataclass
class Scene:
    objects: dict[str, SceneObject] = field(default_factory=dict)
    lights: dict[str, Light] = field(default_factory=dict)
    cameras: dict[int, CameraPose] = field(default_factory=lambda: {0: CameraPose()})
    free_space_bounds: Box | None = None

    def objects_by_index(self) -> list[SceneObject]:
        return sorted(self.objects.values(), key=lambda o: o.instance_index)


def rotation_basis(rotation: Rotation) -> tuple[Vec3, Vec3, Vec3]:
    """Orthonormal (forward, right, up) for a yaw/pitch/roll rotation."""
    yaw = math.radians(rotation.yaw)
    pitch = math.radians(rotation.pitch)
    roll = math.radians(rotation.roll)
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    forward = Vec3(cp * cy, cp * sy, sp)
    right0 = Vec3(-sy, cy, 0.0)
    up0 = Vec3(-sp * cy, -sp * sy, cp)  # forward x right0
    right = Vec3(
        cr * right0.x + sr * up0.x,
        cr * right0.y + sr * up0.y,
        cr * right0.z + sr * up0.z,
    )
    up = Vec3(
        cr * up0.x - sr * right0.x,
        cr * up0.y - sr * right0.y,
        cr * up0.z - sr * right0.z,
    )
    return forward, right, up


def camera_basis(pose: CameraPose) -> tuple[Vec3, Vec3, Vec3]:
    return rotation_basis(pose.rotation)


def geometry_bounds(geometry: Geometry) -> Box:
    if isinstance(geometry, Sphere):
        c, r = geometry
        return Box(Vec3(c.x - r, c.y - r, c.z - r), Vec3(c.x + r, c.y + r, c.z + r))
    if isinstance(geometry, Box):
        return geometry
    xs = [v.x for v in geometry.vertices]
    ys = [v.y for v in geometry.vertices]
    zs = [v.z for v in geometry.vertices]
    return Box(Vec3(min(xs), min(ys), min(zs)), Vec3(max(xs), max(ys), max(zs)))


def bounds_center(bounds: Box) -> Vec3:
    return Vec3(
        (bounds.min.x + bounds.max.x) / 2.0,
        (bounds.min.y + bounds.max.y) / 2.0,
        (bounds.min.z + bounds.max.z) / 2.0,
    )


def translate_geometry(geometry: Geometry, delta: Vec3) -> Geometry:
    if isinstance(geometry, Sphere):
        return Sphere(geometry.center + delta, geometry.radius)
    if isinstance(geometry, Box):
        return Box(geometry.min + delta, geometry.max + delta)
    return Mesh(tuple(v + delta for v in geometry.vertices), geometry.triangles)


def set_object_color(scene: Scene, name: str, color: tuple[int, int, int]) -> None:
    obj = scene.objects.get(name)
    if obj is None:
        raise NotFoundError(f"object {name!r} not found")
    _check_color255(name, color)
    obj.base_color = (int(color[0]), int(color[1]), int(color[2]))


def set_object_location(scene: Scene, name: str, location: Vec3) -> None:
    """Translate the object's geometry so its bounds centroid lands on ``location``."""
    obj = scene.objects.get(name)
    if obj is None:
        raise NotFoundError(f"object {name!r} not found")
    delta = location - bounds_center(geometry_bounds(obj.geometry))
    obj.geometry = translate_geometry(obj.geometry, delta)


def scene_digest(scene: Scene) -> str:
    """Canonical JSON of the full mutable state, for before/after comparisons."""
    def vec(v: Vec3):
        return [v.x, v.y, v.z]

    def geo(g: Geometry):
        if isinstance(g, Sphere):
            return {"type": "sphere", "center": vec(g.center), "radius": g.radius}
        if isinstance(g, Box):
            return {"type": "box", "min": vec(g.min), "max": vec(g.max)}
        return {
            "type": "mesh",
            "vertices": [vec(v) for v in g.vertices],
            "triangles": [list(t) for t in g.triangles],
        }

    state = {
        "objects": [
            {
                "name": o.name,
                "index": o.instance_index,
                "geometry": geo(o.geometry),
                "color": list(o.base_color),
            }
            for o in scene.objects_by_index()
        ],
        "lights": [
            {
                "name": l.name,
                "kind": l.kind,
                "vector": vec(l.vector),
                "intensity": l.intensity,
                "color": list(l.color),
            }
            for l in sorted(scene.lights.values(), key=lambda l: l.name)
        ],
        "cameras": {
            str(i): {
                "location": vec(p.location),
                "rotation": list(p.rotation),
                "fov": p.horizontal_fov,
                "size": [p.image_width, p.image_height],
            }
            for i, p in sorted(scene.cameras.items())
        },
    }
    return json.dumps(state, sort_keys=True)


def _vec3(entity: str, value, what: str = "vector") -> Vec3:
    if not (isinstance(value, (list, tuple)) and len(value) == 3):
        raise SceneError(f"{entity}: {what} must be a 3-element list")
    try:
        v = Vec3(float(value[0]), float(value[1]), float(value[2]))
    except (TypeError, ValueError):
        raise SceneError(f"{entity}: {what} has non-numeric components") from None
    if not v.is_finite():
        raise SceneError(f"{entity}: {what} has non-finite components")
    return v


def _check_color255(entity: str, value) -> tuple[int, int, int]:
    if not (isinstance(value, (list, tuple)) and len(value) == 3):
        raise SceneError(f"{entity}: color must be an [r, g, b] triple")
    comps = []
    for c in value:
        if not isinstance(c, int) or isinstance(c, bool) or not (0 <= c <= 255):
            raise SceneError(f"{entity}: color component {c!r} not an integer in [0, 255]")
        comps.append(c)
    return (comps[0], comps[1], comps[2])


def _parse_geometry(name: str, spec) -> Geometry:
    if not isinstance(spec, dict) or "type" not in spec:
        raise SceneError(f"object {name!r}: geometry must be an object with a 'type'")
    kind = spec["type"]
    if kind == "sphere":
        center = _vec3(f"object {name!r}", spec.get("center"), "center")
        try:
            radius = float(spec["radius"])
        except (KeyError, TypeError, ValueError):
            raise SceneError(f"object {name!r}: sphere needs a numeric radius") from None
        if not (math.isfinite(radius) and radius > 0):
            raise SceneError(f"object {name!r}: sphere radius {radius} must be > 0")
        return Sphere(center, radius)
    if kind == "box":
        lo = _vec3(f"object {name!r}", spec.get("min"), "min")
        hi = _vec3(f"object {name!r}", spec.get("max"), "max")
        if not (lo.x < hi.x and lo.y < hi.y and lo.z < hi.z):
            raise SceneError(f"object {name!r}: box min {tuple(lo)} not below max {tuple(hi)}")
        return Box(lo, hi)
    if kind == "mesh":
        verts_raw = spec.get("vertices")
        tris_raw = spec.get("triangles")
        if not isinstance(verts_raw, list) or not verts_raw:
            raise SceneError(f"object {name!r}: mesh needs a non-empty vertex list")
        if not isinstance(tris_raw, list) or not tris_raw:
            raise SceneError(f"object {name!r}: mesh needs a non-empty triangle list")
        vertices = tuple(_vec3(f"object {name!r}", v, "vertex") for v in verts_raw)
        triangles = []
        for tri in tris_raw:
            if not (isinstance(tri, (list, tuple)) and len(tri) == 3):
                raise SceneError(f"object {name!r}: triangle {tri!r} must have 3 indices")
            idx = []
            for i in tri:
                if not isinstance(i, int) or isinstance(i, bool) or not (0 <= i < len(vertices)):
                    raise SceneError(f"object {name!r}: triangle index {i!r} out of range")
                idx.append(i)
            triangles.append((idx[0], idx[1], idx[2]))
        return Mesh(vertices, tuple(triangles))
    raise SceneError(f"object {name!r}: unknown geometry type {kind!r}")


def _parse_light(raw) -> Light:
    name = raw.get("name") if isinstance(raw, dict) else None
    if not name or not isinstance(name, str):
        raise SceneError("light without a name")
    kind = raw.get("type")
    if kind == "directional":
        vector = _vec3(f"light {name!r}", raw.get("direction"), "direction")
        if vector.norm() == 0.0:
            raise SceneError(f"light {name!r}: direction must be non-zero")
    elif kind == "point":
        vector = _vec3(f"light {name!r}", raw.get("position"), "position")
    else:
        raise SceneError(f"light {name!r}: unknown type {kind!r}")
    try:
        intensity = float(raw.get("intensity", 1.0))
    except (TypeError, ValueError):
        raise SceneError(f"light {name!r}: intensity must be numeric") from None
    if not (math.isfinite(intensity) and intensity >= 0.0):
        raise SceneError(f"light {name!r}: intensity {intensity} must be >= 0")
    color_raw = raw.get("color", [1.0, 1.0, 1.0])
    if not (isinstance(color_raw, (list, tuple)) and len(color_raw) == 3):
        raise SceneError(f"light {name!r}: color must be an [r, g, b] triple")
    color = []
    for c in color_raw:
        try:
            c = float(c)
        except (TypeError, ValueError):
            raise SceneError(f"light {name!r}: color component {c!r} not numeric") from None
        if not (0.0 <= c <= 1.0):
            raise SceneError(f"light {name!r}: color component {c} not in [0, 1]")
        color.append(c)
    return Light(name=name, kind=kind, vector=vector, intensity=intensity,
                 color=(color[0], color[1], color[2]))


def bundled_scene_path() -> Path:
    """Path of the room scene shipped with the package."""
    return Path(__file__).parent / "scenes" / "room.scene.json"


def load_scene(path: str | Path) -> Scene:
    """Load a JSON scene file.

    Schema (all positions in cm)::

        {
          "objects": [
            {"name": "sofa",
             "geometry": {"type": "sphere", "center": [x,y,z], "radius": r}
                       | {"type": "box", "min": [x,y,z], "max": [x,y,z]}
                       | {"type": "mesh", "vertices": [[x,y,z], ...],
                          "triangles": [[i,j,k], ...]},
             "color": [r, g, b]},          # integers 0..255
            ...
          ],
          "lights": [
            {"name": "sun", "type": "directional", "direction": [x,y,z],
             "intensity": f, "color": [r, g, b]},   # color floats 0..1
            {"name": "bulb", "type": "point", "position": [x,y,z],
             "intensity": f, "color": [r, g, b]},
          ],
          "camera": {"location": [x,y,z], "rotation": [yaw,pitch,roll],
                     "fov": 90, "width": 640, "height": 480},
          "free_space_bounds": {"min": [x,y,z], "max": [x,y,z]}
        }

    Instance indices are assigned in file order, dense from 0.
    """
    path = Path(path)
    if not path.is_file():
        raise SceneError(f"scene file {path} does not exist")
    try:
        doc = json.loads(path.read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SceneError(f"scene file {path} is unreadable: {exc}") from None
    if not isinstance(doc, dict):
        raise SceneError(f"scene file {path} must contain a JSON object")

    scene = Scene(cameras={})

    for i, raw in enumerate(doc.get("objects", [])):
        name = raw.get("name") if isinstance(raw, dict) else None
        if not name or not isinstance(name, str):
            raise SceneError(f"object #{i} has no name")
        if name in scene.objects:
            raise SceneError(f"duplicate object name {name!r}")
        geometry = _parse_geometry(name, raw.get("geometry"))
        color = _check_color255(f"object {name!r}", raw.get("color", [200, 200, 200]))
        scene.objects[name] = SceneObject(name=name, geometry=geometry,
                                          base_color=color, instance_index=i)

    for raw in doc.get("lights", []):
        light = _parse_light(raw)
        if light.name in scene.lights:
            raise SceneError(f"duplicate light name {light.name!r}")
        scene.lights[light.name] = light

    cam_raw = doc.get("camera", {})
    if not isinstance(cam_raw, dict):
        raise SceneError("camera must be an object")
    location = _vec3("camera", cam_raw.get("location", [0, 0, 0]), "location")
    rot_raw = cam_raw.get("rotation", [0, 0, 0])
    if not (isinstance(rot_raw, (list, tuple)) and len(rot_raw) == 3):
        raise SceneError("camera: rotation must be [yaw, pitch, roll]")
    try:
        rotation = Rotation(float(rot_raw[0]), float(rot_raw[1]), float(rot_raw[2]))
    except (TypeError, ValueError):
        raise SceneError("camera: rotation has non-numeric components") from None
    try:
        pose = CameraPose(
            location=location,
            rotation=rotation,
            horizontal_fov=float(cam_raw.get("fov", 90.0)),
            image_width=int(cam_raw.get("width", 640)),
            image_height=int(cam_raw.get("height", 480)),
        )
    except (TypeError, ValueError):
        raise SceneError("camera: fov/width/height must be numeric") from None
    scene.cameras[0] = pose

    fsb = doc.get("free_space_bounds")
    if fsb is not None:
        if not isinstance(fsb, dict):
            raise SceneError("free_space_bounds must be an object with min/max")
        lo = _vec3("free_space_bounds", fsb.get("min"), "min")
        hi = _vec3("free_space_bounds", fsb.get("max"), "max")
        if not (lo.x < hi.x and lo.y < hi.y and lo.z < hi.z):
            raise SceneError("free_space_bounds: min must be below max componentwise")
        scene.free_space_bounds = Box(lo, hi)

    return scene
