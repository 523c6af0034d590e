"""Deterministic per-pixel ray caster producing the four ground-truth modalities.

Outputs per render (all buffers share the camera's dimensions):
  * lit     -- uint8 RGB, Lambertian shading + 0.1 ambient, no shadows
  * depth   -- float32 planar depth in cm: (hit - camera) . forward, so a
               fronto-parallel plane is constant (ray LENGTH would not be);
               +inf where nothing is hit
  * normal  -- uint8 RGB, world normal n encoded round-half-up as
               255*(n*0.5 + 0.5); background encodes the zero vector (128,128,128)
  * mask    -- uint8 RGB instance colors (see instance_color); black background

The production path is vectorized over all pixels (numpy, float64) while the
scalar ``primary_ray``/``intersect`` functions define the per-ray semantics.
Both paths perform the same IEEE operations in the same order, so a
pixel-by-pixel scalar rendering is bit-identical to ``render`` output; tests
rely on that equivalence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .scene import (
    Box,
    CameraPose,
    Mesh,
    NotFoundError,
    Scene,
    SceneObject,
    Sphere,
    Vec3,
    camera_basis,
)

# Hits closer than this are treated as self-intersection noise.
T_EPSILON = 1e-4

# Möller-Trumbore determinant cutoff for "ray parallel to triangle".
_DET_EPSILON = 1e-12

AMBIENT = 0.1


@dataclass(frozen=True)
class Ray:
    origin: Vec3
    direction: Vec3  # unit length


@dataclass
class RenderOutput:
    lit: np.ndarray     # (h, w, 3) uint8
    depth: np.ndarray   # (h, w) float32, +inf = no hit
    normal: np.ndarray  # (h, w, 3) uint8
    mask: np.ndarray    # (h, w, 3) uint8


def instance_color(index: int) -> tuple[int, int, int]:
    """Bijective, never-black color for an instance index: (index+1) base 256."""
    if not (0 <= index < 2**24 - 1):
        raise ValueError(f"instance index {index} out of range [0, 2^24-1)")
    v = index + 1
    return (v % 256, (v // 256) % 256, v // 65536)


def encode_normal(n: Vec3) -> tuple[int, int, int]:
    """255*(n*0.5 + 0.5) per component, round half up."""
    return (
        int(math.floor(255.0 * (n.x * 0.5 + 0.5) + 0.5)),
        int(math.floor(255.0 * (n.y * 0.5 + 0.5) + 0.5)),
        int(math.floor(255.0 * (n.z * 0.5 + 0.5) + 0.5)),
    )


def decode_normal(rgb: tuple[int, int, int]) -> Vec3:
    """Inverse of encode_normal up to quantization (within 1/255 per component)."""
    return Vec3(
        rgb[0] / 255.0 * 2.0 - 1.0,
        rgb[1] / 255.0 * 2.0 - 1.0,
        rgb[2] / 255.0 * 2.0 - 1.0,
    )


def _focal_px(pose: CameraPose) -> float:
    return (pose.image_width / 2.0) / math.tan(math.radians(pose.horizontal_fov) / 2.0)


def primary_ray(pose: CameraPose, px: int, py: int) -> Ray:
    """Ray through the center of pixel (px, py); py = 0 is the image's top row.

    Pinhole model: the horizontal field of view spans the full image width,
    pixels are square.
    """
    if not (0 <= px < pose.image_width and 0 <= py < pose.image_height):
        raise ValueError(f"pixel ({px}, {py}) outside {pose.image_width}x{pose.image_height}")
    fwd, right, up = camera_basis(pose)
    f = _focal_px(pose)
    u = (px + 0.5) - pose.image_width / 2.0
    v = (py + 0.5) - pose.image_height / 2.0
    dx = f * fwd.x + u * right.x - v * up.x
    dy = f * fwd.y + u * right.y - v * up.y
    dz = f * fwd.z + u * right.z - v * up.z
    n = math.sqrt(dx * dx + dy * dy + dz * dz)
    return Ray(pose.location, Vec3(dx / n, dy / n, dz / n))


# ---------------------------------------------------------------------------
# Scalar intersections.  These define the semantics; the *_batch versions
# below mirror their arithmetic exactly.
# ---------------------------------------------------------------------------

def _intersect_sphere(ray: Ray, sphere: Sphere) -> tuple[float, Vec3] | None:
    (ox, oy, oz), (dx, dy, dz) = ray.origin, ray.direction
    cx, cy, cz = sphere.center
    r = sphere.radius
    rx, ry, rz = ox - cx, oy - cy, oz - cz
    b = dx * rx + dy * ry + dz * rz
    c = rx * rx + ry * ry + rz * rz - r * r
    disc = b * b - c
    if disc < 0.0:
        return None
    s = math.sqrt(disc)
    t = -b - s
    if t <= T_EPSILON:
        t = -b + s
        if t <= T_EPSILON:
            return None
    hx = ox + t * dx
    hy = oy + t * dy
    hz = oz + t * dz
    return t, Vec3((hx - cx) / r, (hy - cy) / r, (hz - cz) / r)


def _box_slabs(o: float, d: float, lo: float, hi: float) -> tuple[float, float]:
    if d == 0.0:
        if o < lo or o > hi:
            return math.inf, -math.inf  # empty interval: forces a miss
        return -math.inf, math.inf
    inv = 1.0 / d
    t1 = (lo - o) * inv
    t2 = (hi - o) * inv
    return (t1, t2) if t1 <= t2 else (t2, t1)


def _intersect_box(ray: Ray, box: Box) -> tuple[float, Vec3] | None:
    (ox, oy, oz), (dx, dy, dz) = ray.origin, ray.direction
    los_his = (
        _box_slabs(ox, dx, box.min.x, box.max.x),
        _box_slabs(oy, dy, box.min.y, box.max.y),
        _box_slabs(oz, dz, box.min.z, box.max.z),
    )
    los = [lh[0] for lh in los_his]
    his = [lh[1] for lh in los_his]
    enter = max(los)
    exit_ = min(his)
    if enter > exit_:
        return None
    d = (dx, dy, dz)
    if enter > T_EPSILON:
        axis = los.index(enter)
        sign = -1.0 if d[axis] > 0.0 else 1.0
        t = enter
    elif exit_ > T_EPSILON:
        axis = his.index(exit_)
        sign = 1.0 if d[axis] > 0.0 else -1.0
        t = exit_
    else:
        return None
    normal = [0.0, 0.0, 0.0]
    normal[axis] = sign
    return t, Vec3(*normal)


@lru_cache(maxsize=128)
def _mesh_arrays(mesh: Mesh):
    """Per-triangle base vertex, edge vectors, unit face normals, and AABB."""
    v = np.asarray(mesh.vertices, dtype=np.float64)
    tri = np.asarray(mesh.triangles, dtype=np.int64)
    v0 = v[tri[:, 0]]
    e1 = v[tri[:, 1]] - v0
    e2 = v[tri[:, 2]] - v0
    n = np.cross(e1, e2)
    n /= np.sqrt(n[:, 0] ** 2 + n[:, 1] ** 2 + n[:, 2] ** 2)[:, None]
    for arr in (v0, e1, e2, n):
        arr.setflags(write=False)
    aabb = (
        (float(v[:, 0].min()), float(v[:, 1].min()), float(v[:, 2].min())),
        (float(v[:, 0].max()), float(v[:, 1].max()), float(v[:, 2].max())),
    )
    return v0, e1, e2, n, aabb


def _intersect_triangle(ray: Ray, v0, e1, e2, n) -> float | None:
    (ox, oy, oz), (dx, dy, dz) = ray.origin, ray.direction
    # p = d x e2
    px = dy * e2[2] - dz * e2[1]
    py = dz * e2[0] - dx * e2[2]
    pz = dx * e2[1] - dy * e2[0]
    det = e1[0] * px + e1[1] * py + e1[2] * pz
    if abs(det) < _DET_EPSILON:
        return None
    inv = 1.0 / det
    sx, sy, sz = ox - v0[0], oy - v0[1], oz - v0[2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < 0.0 or u > 1.0:
        return None
    # q = s x e1
    qx = sy * e1[2] - sz * e1[1]
    qy = sz * e1[0] - sx * e1[2]
    qz = sx * e1[1] - sy * e1[0]
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return None
    t = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv
    if t <= T_EPSILON:
        return None
    return t


def _intersect_mesh(ray: Ray, mesh: Mesh) -> tuple[float, Vec3] | None:
    v0, e1, e2, n, _aabb = _mesh_arrays(mesh)
    best_t = math.inf
    best_i = -1
    for i in range(len(v0)):
        t = _intersect_triangle(ray, v0[i], e1[i], e2[i], n[i])
        if t is not None and t < best_t:
            best_t = t
            best_i = i
    if best_i < 0:
        return None
    return best_t, Vec3(n[best_i][0], n[best_i][1], n[best_i][2])


def intersect(ray: Ray, obj: SceneObject) -> tuple[float, Vec3] | None:
    """Smallest t > T_EPSILON and the outward geometric normal, or None.

    Mesh hits report the (winding-order) face normal, unsmoothed.
    """
    g = obj.geometry
    if isinstance(g, Sphere):
        return _intersect_sphere(ray, g)
    if isinstance(g, Box):
        return _intersect_box(ray, g)
    return _intersect_mesh(ray, g)


# ---------------------------------------------------------------------------
# Vectorized batch intersections (mirror the scalar arithmetic exactly).
# ---------------------------------------------------------------------------

def _batch_sphere(sphere: Sphere, o: Vec3, dx, dy, dz):
    cx, cy, cz = sphere.center
    r = sphere.radius
    rx, ry, rz = o.x - cx, o.y - cy, o.z - cz
    b = dx * rx + dy * ry + dz * rz
    c = rx * rx + ry * ry + rz * rz - r * r
    disc = b * b - c
    safe = np.maximum(disc, 0.0)
    s = np.sqrt(safe)
    t0 = -b - s
    t1 = -b + s
    t = np.where(t0 > T_EPSILON, t0, t1)
    hit = (disc >= 0.0) & (t > T_EPSILON)
    t = np.where(hit, t, np.inf)
    hx = o.x + t * dx
    hy = o.y + t * dy
    hz = o.z + t * dz
    nx = np.where(hit, (hx - cx) / r, 0.0)
    ny = np.where(hit, (hy - cy) / r, 0.0)
    nz = np.where(hit, (hz - cz) / r, 0.0)
    return t, nx, ny, nz


def _batch_slabs(o: float, d, lo: float, hi: float):
    zero = d == 0.0
    with np.errstate(divide="ignore"):
        inv = np.where(zero, np.inf, 1.0 / np.where(zero, 1.0, d))
    t1 = (lo - o) * inv
    t2 = (hi - o) * inv
    tlo = np.minimum(t1, t2)
    thi = np.maximum(t1, t2)
    inside = (o >= lo) & (o <= hi)
    tlo = np.where(zero, np.where(inside, -np.inf, np.inf), tlo)
    thi = np.where(zero, np.where(inside, np.inf, -np.inf), thi)
    return tlo, thi


def _batch_box(box: Box, o: Vec3, dx, dy, dz):
    lx, ly_, lz = _batch_slabs(o.x, dx, box.min.x, box.max.x), \
                  _batch_slabs(o.y, dy, box.min.y, box.max.y), \
                  _batch_slabs(o.z, dz, box.min.z, box.max.z)
    los = np.stack([lx[0], ly_[0], lz[0]])
    his = np.stack([lx[1], ly_[1], lz[1]])
    enter = np.max(los, axis=0)
    exit_ = np.min(his, axis=0)
    enter_axis = np.argmax(los, axis=0)
    exit_axis = np.argmin(his, axis=0)

    use_enter = enter > T_EPSILON
    use_exit = ~use_enter & (exit_ > T_EPSILON)
    hit = (enter <= exit_) & (use_enter | use_exit)

    t = np.where(use_enter, enter, exit_)
    t = np.where(hit, t, np.inf)
    axis = np.where(use_enter, enter_axis, exit_axis)
    ds = np.stack([np.broadcast_to(dx, axis.shape),
                   np.broadcast_to(dy, axis.shape),
                   np.broadcast_to(dz, axis.shape)])
    d_axis = np.take_along_axis(ds, axis[None], axis=0)[0]
    sign = np.where(d_axis > 0.0, -1.0, 1.0)
    sign = np.where(use_enter, sign, -sign)
    nx = np.where(hit & (axis == 0), sign, 0.0)
    ny = np.where(hit & (axis == 1), sign, 0.0)
    nz = np.where(hit & (axis == 2), sign, 0.0)
    return t, nx, ny, nz


def _batch_mesh(mesh: Mesh, o: Vec3, dx, dy, dz):
    v0, e1, e2, fn, aabb = _mesh_arrays(mesh)
    shape = np.broadcast(dx, dy, dz).shape
    best_t = np.full(shape, np.inf)
    nx = np.zeros(shape)
    ny = np.zeros(shape)
    nz = np.zeros(shape)

    # Every triangle lies inside the mesh AABB, so a pixel whose ray misses
    # the AABB (or exits it before T_EPSILON) cannot hit any triangle; the
    # per-triangle arithmetic runs only on the surviving pixels and is
    # elementwise, so results stay bit-identical to the exhaustive loop.
    (ax0, ay0, az0), (ax1, ay1, az1) = aabb
    blo_x, bhi_x = _batch_slabs(o.x, np.broadcast_to(dx, shape), ax0, ax1)
    blo_y, bhi_y = _batch_slabs(o.y, np.broadcast_to(dy, shape), ay0, ay1)
    blo_z, bhi_z = _batch_slabs(o.z, np.broadcast_to(dz, shape), az0, az1)
    enter = np.maximum(np.maximum(blo_x, blo_y), blo_z)
    exit_ = np.minimum(np.minimum(bhi_x, bhi_y), bhi_z)
    candidate = (enter <= exit_) & (exit_ > T_EPSILON)
    if not candidate.any():
        return best_t, nx, ny, nz

    cdx = np.broadcast_to(dx, shape)[candidate]
    cdy = np.broadcast_to(dy, shape)[candidate]
    cdz = np.broadcast_to(dz, shape)[candidate]
    ct = np.full(cdx.shape, np.inf)
    ci = np.full(cdx.shape, -1, dtype=np.int64)
    for i in range(len(v0)):
        px = cdy * e2[i, 2] - cdz * e2[i, 1]
        py = cdz * e2[i, 0] - cdx * e2[i, 2]
        pz = cdx * e2[i, 1] - cdy * e2[i, 0]
        det = e1[i, 0] * px + e1[i, 1] * py + e1[i, 2] * pz
        ok = np.abs(det) >= _DET_EPSILON
        inv = 1.0 / np.where(ok, det, 1.0)
        sx, sy, sz = o.x - v0[i, 0], o.y - v0[i, 1], o.z - v0[i, 2]
        u = (sx * px + sy * py + sz * pz) * inv
        ok &= (u >= 0.0) & (u <= 1.0)
        qx = sy * e1[i, 2] - sz * e1[i, 1]
        qy = sz * e1[i, 0] - sx * e1[i, 2]
        qz = sx * e1[i, 1] - sy * e1[i, 0]
        v = (cdx * qx + cdy * qy + cdz * qz) * inv
        ok &= (v >= 0.0) & (u + v <= 1.0)
        t = (e2[i, 0] * qx + e2[i, 1] * qy + e2[i, 2] * qz) * inv
        ok &= t > T_EPSILON
        closer = ok & (t < ct)
        ct = np.where(closer, t, ct)
        ci = np.where(closer, i, ci)
    chit = ci >= 0
    safe_i = np.where(chit, ci, 0)
    best_t[candidate] = ct
    nx[candidate] = np.where(chit, fn[safe_i, 0], 0.0)
    ny[candidate] = np.where(chit, fn[safe_i, 1], 0.0)
    nz[candidate] = np.where(chit, fn[safe_i, 2], 0.0)
    return best_t, nx, ny, nz


def _batch_intersect(obj: SceneObject, o: Vec3, dx, dy, dz):
    g = obj.geometry
    if isinstance(g, Sphere):
        return _batch_sphere(g, o, dx, dy, dz)
    if isinstance(g, Box):
        return _batch_box(g, o, dx, dy, dz)
    return _batch_mesh(g, o, dx, dy, dz)


# ---------------------------------------------------------------------------
# Full render.
# ---------------------------------------------------------------------------

def _ray_grid(pose: CameraPose):
    w, h = pose.image_width, pose.image_height
    fwd, right, up = camera_basis(pose)
    f = _focal_px(pose)
    px = np.arange(w, dtype=np.float64)[None, :]
    py = np.arange(h, dtype=np.float64)[:, None]
    u = (px + 0.5) - w / 2.0
    v = (py + 0.5) - h / 2.0
    dx = f * fwd.x + u * right.x - v * up.x
    dy = f * fwd.y + u * right.y - v * up.y
    dz = f * fwd.z + u * right.z - v * up.z
    n = np.sqrt(dx * dx + dy * dy + dz * dz)
    return dx / n, dy / n, dz / n


def render(scene: Scene, camera_index: int) -> RenderOutput:
    """Render all four modalities from the given camera.

    Pure function of the scene snapshot; bit-identical across runs.
    """
    pose = scene.cameras.get(camera_index)
    if pose is None:
        raise NotFoundError(f"camera {camera_index} not found")
    w, h = pose.image_width, pose.image_height
    o = pose.location
    fwd, _, _ = camera_basis(pose)
    dx, dy, dz = _ray_grid(pose)

    # Miss lanes carry inf/NaN through the arithmetic and are masked at the
    # end; the warnings they would raise are meaningless.
    with np.errstate(invalid="ignore", divide="ignore"):
        return _render_buffers(scene, o, fwd, dx, dy, dz, w, h)


def _render_buffers(scene, o, fwd, dx, dy, dz, w, h) -> RenderOutput:
    best_t = np.full((h, w), np.inf)
    best_idx = np.full((h, w), -1, dtype=np.int64)
    best_nx = np.zeros((h, w))
    best_ny = np.zeros((h, w))
    best_nz = np.zeros((h, w))

    objects = scene.objects_by_index()
    for obj in objects:
        t, nx, ny, nz = _batch_intersect(obj, o, dx, dy, dz)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_idx = np.where(closer, obj.instance_index, best_idx)
        best_nx = np.where(closer, nx, best_nx)
        best_ny = np.where(closer, ny, best_ny)
        best_nz = np.where(closer, nz, best_nz)

    hit = best_idx >= 0

    # Planar depth: (hit_point - camera_location) . forward
    hx = o.x + best_t * dx
    hy = o.y + best_t * dy
    hz = o.z + best_t * dz
    depth64 = (hx - o.x) * fwd.x + (hy - o.y) * fwd.y + (hz - o.z) * fwd.z
    depth = np.where(hit, depth64, np.inf).astype(np.float32)

    # Lambertian lit buffer.
    palette = np.zeros((len(objects) + 1, 3))
    for obj in objects:
        palette[obj.instance_index + 1] = obj.base_color
    base = palette[np.where(hit, best_idx, -1) + 1]  # (h, w, 3); zeros for misses
    acc = AMBIENT * base
    for light in sorted(scene.lights.values(), key=lambda l: l.name):
        if light.kind == "directional":
            ldir = light.vector.normalized()
            lx, ly, lz = -ldir.x, -ldir.y, -ldir.z
            ndotl = best_nx * lx + best_ny * ly + best_nz * lz
        else:
            lx = light.vector.x - hx
            ly = light.vector.y - hy
            lz = light.vector.z - hz
            ln = np.sqrt(lx * lx + ly * ly + lz * lz)
            ndotl = (best_nx * lx + best_ny * ly + best_nz * lz) / np.where(ln == 0.0, 1.0, ln)
            ndotl = np.where(hit, ndotl, 0.0)
        wgt = np.maximum(ndotl, 0.0) * light.intensity
        for ch in range(3):
            acc[:, :, ch] += base[:, :, ch] * light.color[ch] * wgt
    lit = np.minimum(np.floor(acc + 0.5), 255.0)
    lit = np.where(hit[:, :, None], lit, 0.0).astype(np.uint8)

    # Normal buffer: encode; zero-vector background = (128,128,128).
    enc_x = np.floor(255.0 * (best_nx * 0.5 + 0.5) + 0.5)
    enc_y = np.floor(255.0 * (best_ny * 0.5 + 0.5) + 0.5)
    enc_z = np.floor(255.0 * (best_nz * 0.5 + 0.5) + 0.5)
    normal = np.stack([enc_x, enc_y, enc_z], axis=-1)
    normal = np.where(hit[:, :, None], normal, 128.0).astype(np.uint8)

    # Instance mask.
    mask_palette = np.zeros((len(objects) + 1, 3), dtype=np.uint8)
    for obj in objects:
        mask_palette[obj.instance_index + 1] = instance_color(obj.instance_index)
    mask = mask_palette[np.where(hit, best_idx, -1) + 1]

    return RenderOutput(lit=lit, depth=depth, normal=normal, mask=mask)
