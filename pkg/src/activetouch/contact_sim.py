"""Geometric stand-in for a three-finger tactile hand grasping a triangle mesh.

A grasp teleports the wrist to a pose, sweeps every finger closed about its
base, and halts each finger individually at the first sweep step where one of
its sensor sites lies inside the mesh. Penetrating sites are snapped to the
nearest surface point and reported as Boolean contacts (positions only).

Wrist frame convention: +z is the approach axis, the palm lies in the z=0
plane, and finger ``k`` is mounted at azimuth ``k * finger_spread_angle``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .geometry import Pose

# Fixed, deliberately irrational ray direction for parity tests.
_RAY_DIR = np.array([0.5403023058681398, 0.4121184852417566, 0.7336286814908176])
_RAY_DIR = _RAY_DIR / np.linalg.norm(_RAY_DIR)


class MeshError(ValueError):
    pass


class ObjParseError(MeshError):
    pass


class NonTriangularFaceError(MeshError):
    pass


class FaceIndexError(MeshError):
    pass


class Mesh:
    """Triangle mesh in meters. Validated on construction."""

    def __init__(self, vertices, faces, name: str = ""):
        v = np.asarray(vertices, dtype=float)
        f = np.asarray(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError("vertices must be an (n, 3) array")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError("faces must be an (m, 3) index array")
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise FaceIndexError("face index out of range")
        self.vertices = v
        self.faces = f
        self.name = name
        if len(f):
            area = 0.5 * np.linalg.norm(np.cross(self._e1, self._e2), axis=1)
            if area.min() <= 1e-12:
                raise MeshError(f"degenerate face {int(area.argmin())} (area {area.min():.3g})")

    def __len__(self):
        return len(self.faces)

    @cached_property
    def _v0(self):
        return self.vertices[self.faces[:, 0]]

    @cached_property
    def _e1(self):
        return self.vertices[self.faces[:, 1]] - self.vertices[self.faces[:, 0]]

    @cached_property
    def _e2(self):
        return self.vertices[self.faces[:, 2]] - self.vertices[self.faces[:, 0]]

    @cached_property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def transformed(self, pose: Pose) -> "Mesh":
        return Mesh(pose.transform_points(self.vertices), self.faces.copy(), self.name)

    def volume(self) -> float:
        """Signed volume by the divergence theorem (positive for outward normals)."""
        return float(np.einsum("ij,ij->i", self._v0, np.cross(self._e1 + self._v0, self._e2 + self._v0)).sum() / 6.0)

    def edges(self) -> np.ndarray:
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        return np.sort(e, axis=1)

    def euler_characteristic(self) -> int:
        n_edges = len(np.unique(self.edges(), axis=0))
        n_verts = len(np.unique(self.faces))
        return n_verts - n_edges + len(self.faces)

    def is_watertight(self) -> bool:
        _, counts = np.unique(self.edges(), axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def contains(self, points) -> np.ndarray:
        """Inside test by ray-crossing parity. Meant for closed meshes."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.zeros(len(pts), dtype=bool)
        lo, hi = self.bounds
        cand = np.all((pts >= lo) & (pts <= hi), axis=1)
        if not cand.any():
            return inside
        p = pts[cand]
        # Moller-Trumbore, points x faces.
        pvec = np.cross(_RAY_DIR, self._e2)                       # (F,3)
        det = np.einsum("ij,ij->i", self._e1, pvec)               # (F,)
        ok = np.abs(det) > 1e-18
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = p[:, None, :] - self._v0[None, :, :]               # (P,F,3)
        u = np.einsum("pfk,fk->pf", tvec, pvec) * inv
        qvec = np.cross(tvec, self._e1[None, :, :])
        v = (qvec @ _RAY_DIR) * inv
        t = np.einsum("pfk,fk->pf", qvec, self._e2) * inv
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
        inside[np.flatnonzero(cand)] = (hit.sum(axis=1) % 2) == 1
        return inside

    def closest_points(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Nearest surface point for each query point; returns ``(points, distances)``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty_like(pts)
        dist = np.empty(len(pts))
        for n, p in enumerate(pts):
            cp = _closest_on_triangles(p, self._v0, self._e1, self._e2)
            d2 = np.einsum("ij,ij->i", cp - p, cp - p)
            best = int(np.argmin(d2))
            out[n] = cp[best]
            dist[n] = math.sqrt(d2[best])
        return out, dist


def _closest_on_triangles(p, a, ab, ac):
    """Closest point to ``p`` on each triangle (a, a+ab, a+ac); Voronoi-region method."""
    b = a + ab
    c = a + ac
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        res = a + ab * v[:, None] + ac * w[:, None]

        # Edge regions (later assignments take priority, so order from
        # least to most specific).
        m = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        wbc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        res = np.where(m[:, None], b + (c - b) * wbc[:, None], res)

        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        wac = d2 / (d2 - d6)
        res = np.where(m[:, None], a + ac * wac[:, None], res)

        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        vab = d1 / (d1 - d3)
        res = np.where(m[:, None], a + ab * vab[:, None], res)

    res = np.where(((d6 >= 0) & (d5 <= d6))[:, None], c, res)
    res = np.where(((d3 >= 0) & (d4 <= d3))[:, None], b, res)
    res = np.where(((d1 <= 0) & (d2 <= 0))[:, None], a, res)
    return res


# ---------------------------------------------------------------------------
# OBJ input/output

def load_mesh(path) -> Mesh:
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ObjParseError(f"cannot read {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        if tag == "v":
            if len(rest) < 3:
                raise ObjParseError(f"{path}:{lineno}: vertex needs 3 coordinates")
            try:
                verts.append([float(x) for x in rest[:3]])
            except ValueError as exc:
                raise ObjParseError(f"{path}:{lineno}: bad vertex {raw!r}") from exc
        elif tag == "f":
            if len(rest) != 3:
                raise NonTriangularFaceError(f"{path}:{lineno}: non-triangular face ({len(rest)} vertices)")
            try:
                idx = [int(tok.split("/")[0]) for tok in rest]
            except ValueError as exc:
                raise ObjParseError(f"{path}:{lineno}: bad face {raw!r}") from exc
            # indices are range-checked after the whole file is read
            faces.append([i - 1 for i in idx])
        # other records (vn, vt, o, g, s, usemtl...) are ignored
    if not verts:
        raise ObjParseError(f"{path}: no vertices")
    for i, f in enumerate(faces):
        if min(f) < 0 or max(f) >= len(verts):
            raise FaceIndexError(f"{path}: face {i + 1} index out of range")
    return Mesh(verts, faces, name=path.stem)


def save_mesh(mesh: Mesh, path) -> None:
    lines = [f"# {mesh.name or 'mesh'}"]
    lines += ["v " + " ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += ["f " + " ".join(str(int(i) + 1) for i in f) for f in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Primitive factory

def _grid_faces(rows: int, cols: int, offset: int = 0, wrap: bool = True, flip: bool = False):
    """Quads between consecutive vertex rings of ``cols`` vertices each."""
    faces = []
    for r in range(rows - 1):
        for c in range(cols if wrap else cols - 1):
            c2 = (c + 1) % cols
            a = offset + r * cols + c
            b = offset + r * cols + c2
            d = offset + (r + 1) * cols + c
            e = offset + (r + 1) * cols + c2
            if flip:
                faces += [[a, e, b], [a, d, e]]
            else:
                faces += [[a, b, e], [a, e, d]]
    return faces


def _fan(center: int, ring: list[int], flip: bool = False):
    n = len(ring)
    out = []
    for k in range(n):
        a, b = ring[k], ring[(k + 1) % n]
        out.append([center, b, a] if flip else [center, a, b])
    return out


def _ring(radius, z, segments, phase=0.0):
    ang = phase + 2 * np.pi * np.arange(segments) / segments
    return np.stack([radius * np.cos(ang), radius * np.sin(ang), np.full(segments, z)], axis=1)


def _sphere(radius, segments, rings):
    verts = [[0.0, 0.0, -radius]]
    for r in range(1, rings):
        phi = np.pi * r / rings
        verts += list(_ring(radius * math.sin(phi), -radius * math.cos(phi), segments))
    verts.append([0.0, 0.0, radius])
    v = np.array(verts)
    v[1:-1] *= radius / np.linalg.norm(v[1:-1], axis=1, keepdims=True)
    bottom_ring = list(range(1, 1 + segments))
    top_ring = list(range(1 + (rings - 2) * segments, 1 + (rings - 1) * segments))
    faces = _fan(0, bottom_ring, flip=True)
    faces += _grid_faces(rings - 1, segments, offset=1)
    faces += _fan(len(v) - 1, top_ring)
    return v, faces


def _box(sx, sy, sz):
    hx, hy, hz = sx / 2, sy / 2, sz / 2
    v = np.array([[x, y, z] for z in (-hz, hz) for y in (-hy, hy) for x in (-hx, hx)])
    # vertex id = 4*zi + 2*yi + xi
    faces = [
        [0, 2, 3], [0, 3, 1],  # -z
        [4, 5, 7], [4, 7, 6],  # +z
        [0, 1, 5], [0, 5, 4],  # -y
        [2, 6, 7], [2, 7, 3],  # +y
        [0, 4, 6], [0, 6, 2],  # -x
        [1, 3, 7], [1, 7, 5],  # +x
    ]
    return v, faces


def _cylinder(radius, height, segments, layers=1):
    zs = np.linspace(-height / 2, height / 2, layers + 1)
    v = [np.array([[0.0, 0.0, zs[0]]])]
    for z in zs:
        v.append(_ring(radius, z, segments))
    v.append(np.array([[0.0, 0.0, zs[-1]]]))
    v = np.concatenate(v)
    top = len(v) - 1
    faces = _fan(0, list(range(1, 1 + segments)), flip=True)
    faces += _grid_faces(layers + 1, segments, offset=1)
    faces += _fan(top, list(range(top - segments, top)))
    return v, faces


def _cup(radius, height, wall, segments):
    """Thick-walled open cup: outer wall, rim annulus, inner wall, inner and outer bottoms."""
    h0, h1 = -height / 2, height / 2
    ri = radius - wall
    rings = [
        _ring(radius, h0, segments),   # 0 outer bottom edge
        _ring(radius, h1, segments),   # 1 outer rim
        _ring(ri, h1, segments),       # 2 inner rim
        _ring(ri, h0 + wall, segments),  # 3 inner floor edge
    ]
    v = np.concatenate([np.array([[0.0, 0.0, h0]]), *rings, np.array([[0.0, 0.0, h0 + wall]])])
    faces = _fan(0, list(range(1, 1 + segments)), flip=True)
    faces += _grid_faces(4, segments, offset=1)
    last = len(v) - 1
    faces += _fan(last, list(range(1 + 3 * segments, 1 + 4 * segments)))
    return v, faces


def _bowl(radius, height, wall, segments, rings):
    """Thick ellipsoidal shell open at the top."""
    outer = []
    for r in range(1, rings + 1):
        phi = 0.5 * np.pi * r / rings
        outer.append(_ring(radius * math.sin(phi), -height * math.cos(phi), segments))
    inner = []
    ri, hi = radius - wall, height - wall
    for r in range(rings, 0, -1):
        phi = 0.5 * np.pi * r / rings
        inner.append(_ring(ri * math.sin(phi), -hi * math.cos(phi), segments))
    v = np.concatenate([np.array([[0.0, 0.0, -height]]), *outer, *inner, np.array([[0.0, 0.0, -hi]])])
    v[:, 2] += height / 2
    n_rings = 2 * rings
    faces = _fan(0, list(range(1, 1 + segments)), flip=True)
    faces += _grid_faces(n_rings, segments, offset=1)
    last = len(v) - 1
    faces += _fan(last, list(range(1 + (n_rings - 1) * segments, 1 + n_rings * segments)))
    return v, faces


def _handle_mug(radius, height, segments, handle_radius, tube):
    """Closed cylinder with a square-section handle stitched into two wall holes (genus 1)."""
    layers = 8
    v, faces = _cylinder(radius, height, segments, layers=layers)
    v = list(v)
    zs = np.linspace(-height / 2, height / 2, layers + 1)
    seg = 0
    upper, lower = layers - 2, 1  # quad rows used as attachment holes

    def ring_vid(row, col):
        return 1 + row * segments + (col % segments)

    def hole(row):
        return [ring_vid(row, seg), ring_vid(row, seg + 1), ring_vid(row + 1, seg + 1), ring_vid(row + 1, seg)]

    def quad_faces(row):
        a, b, e, d = hole(row)
        return [[a, b, e], [a, e, d]]

    for qf in quad_faces(upper) + quad_faces(lower):
        faces.remove(qf)

    top_hole = hole(upper)
    bot_hole = hole(lower)
    zc_top = 0.5 * (zs[upper] + zs[upper + 1])
    zc_bot = 0.5 * (zs[lower] + zs[lower + 1])
    zm = 0.5 * (zc_top + zc_bot)
    rho = 0.5 * (zc_top - zc_bot)
    mid_ang = 2 * np.pi * (seg + 0.5) / segments
    out_dir = np.array([math.cos(mid_ang), math.sin(mid_ang), 0.0])
    side = np.array([-math.sin(mid_ang), math.cos(mid_ang), 0.0])
    base = radius * math.cos(np.pi / segments)
    top_pts = np.array([v[i] for i in top_hole])
    offsets = []
    for p in top_pts:
        offsets.append((float(np.dot(p, side)), float(p[2] - zc_top)))
    sections = [top_hole]
    steps = 10
    for s in range(1, steps):
        psi = np.pi * s / steps
        center = base * out_dir + handle_radius * math.sin(psi) * out_dir + np.array([0, 0, zm + rho * math.cos(psi)])
        u = math.sin(psi) * out_dir + np.array([0, 0, math.cos(psi)])
        ids = []
        for dy, du in offsets:
            v.append(center + dy * side + du * u)
            ids.append(len(v) - 1)
        sections.append(ids)
    # Tube end: offsets (dy, du) with u = -z map onto the lower hole's corners.
    bot = [bot_hole[3], bot_hole[2], bot_hole[1], bot_hole[0]]
    sections.append(bot)
    for s0, s1 in zip(sections[:-1], sections[1:]):
        for k in range(4):
            a, b = s0[k], s0[(k + 1) % 4]
            d, e = s1[k], s1[(k + 1) % 4]
            faces += [[a, e, b], [a, d, e]]
    return np.array(v), faces


PRIMITIVE_KINDS = ("sphere", "box", "cylinder", "open_cup", "bowl", "handle_mug")


def make_primitive(kind: str, dims=None, tessellation: int = 32) -> Mesh:
    """Build a test object centered at the origin, mid-height at ``z = 0``.

    The handle_mug's body axis is the z axis; its handle sticks out along +x.

    ``dims`` per kind: sphere ``(radius,)``; box ``(sx, sy, sz)``; cylinder
    ``(radius, height)``; open_cup ``(radius, height, wall)``; bowl
    ``(radius, depth, wall)``; handle_mug ``(radius, height, handle_radius, tube)``.
    """
    defaults = {
        "sphere": (0.03,),
        "box": (0.06, 0.06, 0.12),
        "cylinder": (0.035, 0.15),
        "open_cup": (0.045, 0.10, 0.008),
        "bowl": (0.075, 0.055, 0.008),
        "handle_mug": (0.04, 0.10, 0.03, 0.012),
    }
    if kind not in defaults:
        raise MeshError(f"unknown primitive kind {kind!r}")
    dims = tuple(defaults[kind] if dims is None else dims)
    if len(dims) != len(defaults[kind]):
        raise MeshError(f"{kind} expects {len(defaults[kind])} dimensions, got {len(dims)}")
    if any(not (d > 0) for d in dims):
        raise MeshError(f"{kind} dimensions must be positive: {dims}")
    n = int(tessellation)
    if n < 6:
        raise MeshError("tessellation must be >= 6")
    if kind == "sphere":
        v, f = _sphere(dims[0], n, max(4, n // 2))
    elif kind == "box":
        v, f = _box(*dims)
    elif kind == "cylinder":
        v, f = _cylinder(dims[0], dims[1], n)
    elif kind == "open_cup":
        r, h, w = dims
        if w >= r or w >= h:
            raise MeshError("cup wall must be thinner than radius and height")
        v, f = _cup(r, h, w, n)
    elif kind == "bowl":
        r, h, w = dims
        if w >= r or w >= h:
            raise MeshError("bowl wall must be thinner than radius and depth")
        v, f = _bowl(r, h, w, n, max(3, n // 4))
    else:
        r, h, hr, tube = dims
        v, f = _handle_mug(r, h, n, hr, tube)
    return Mesh(v, f, name=kind)


# ---------------------------------------------------------------------------
# Hand and grasp

@dataclass(frozen=True)
class HandParams:
    finger_count: int = 3
    sensors_per_finger: int = 9
    finger_length: float = 0.16
    palm_radius: float = 0.04
    finger_spread_angle: float = 2 * math.pi / 3
    sweep_steps: int = 64
    open_angle: float = math.radians(30.0)
    close_angle: float = math.radians(-100.0)

    def __post_init__(self):
        if self.finger_count < 1 or self.sensors_per_finger < 1:
            raise ValueError("hand needs at least one finger and one sensor")
        if self.finger_length <= 0 or self.palm_radius < 0:
            raise ValueError("finger_length must be positive and palm_radius non-negative")
        if self.sweep_steps < 2:
            raise ValueError("sweep_steps must be >= 2")
        if self.close_angle >= self.open_angle:
            raise ValueError("close_angle must be below open_angle")

    @property
    def sensor_count(self) -> int:
        return self.finger_count * self.sensors_per_finger

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @cached_property
    def sweep_sites(self) -> np.ndarray:
        """Sensor sites in the wrist frame, shape ``(steps, fingers, sensors, 3)``.

        At closure angle ``theta`` a finger points along
        ``cos(theta) * z + sin(theta) * r_out``; ``theta`` decreases from
        ``open_angle`` (splayed outward) past zero toward the approach axis.
        """
        thetas = np.linspace(self.open_angle, self.close_angle, self.sweep_steps)
        phis = self.finger_spread_angle * np.arange(self.finger_count)
        r_out = np.stack([np.cos(phis), np.sin(phis), np.zeros_like(phis)], axis=1)   # (F,3)
        bases = self.palm_radius * r_out
        s = self.finger_length * np.arange(1, self.sensors_per_finger + 1) / self.sensors_per_finger
        z = np.array([0.0, 0.0, 1.0])
        d = np.cos(thetas)[:, None, None] * z + np.sin(thetas)[:, None, None] * r_out[None]  # (S,F,3)
        return bases[None, :, None, :] + s[None, None, :, None] * d[:, :, None, :]


@dataclass
class ContactSet:
    points: np.ndarray
    wrist_pose: Pose
    fingers: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    halt_steps: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.points)


def guarded_enclosure(mesh: Mesh, wrist: Pose, hand: HandParams = HandParams()) -> ContactSet:
    sites = hand.sweep_sites
    n_steps, n_fingers, n_sensors, _ = sites.shape
    world = wrist.transform_points(sites.reshape(-1, 3)).reshape(sites.shape)
    inside = mesh.contains(world.reshape(-1, 3)).reshape(n_steps, n_fingers, n_sensors)

    pts, fingers, halts = [], [], {}
    for f in range(n_fingers):
        hit_steps = np.flatnonzero(inside[:, f, :].any(axis=1))
        if not len(hit_steps):
            continue
        step = int(hit_steps[0])
        halts[f] = step
        for s in np.flatnonzero(inside[step, f]):
            pts.append(world[step, f, s])
            fingers.append(f)
    if not pts:
        return ContactSet(np.zeros((0, 3)), wrist, np.zeros(0, dtype=int), {})
    surface, _ = mesh.closest_points(np.array(pts))
    return ContactSet(surface, wrist, np.array(fingers, dtype=int), halts)
