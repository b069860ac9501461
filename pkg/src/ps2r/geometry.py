"""Triangle meshes, depth rendering and back-projection into partial point clouds.

Camera convention: camera-space x points right, y points down the image and z
along the viewing direction.  Depth values are camera-space z, not ray length.
Depth maps are stored as ``(H, W)`` arrays indexed ``[v, u]``.
"""
from __future__ import annotations

import io
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import BinaryIO, Optional, Sequence, Union

import numpy as np

RAY_EPS = 1e-9
PS2R_MAGIC = b"PS2R"
PS2R_VERSION = 1

SOURCE = "source"
TARGET = "target"

TextLike = Union[str, bytes, BinaryIO, io.TextIOBase]


class MeshParseError(ValueError):
    """Malformed OFF/OBJ input. ``line`` is the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SimulationError(RuntimeError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    name: str = "mesh"

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError(f"mesh {self.name!r} has non-finite vertex coordinates")
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError(f"mesh {self.name!r} has triangle indices out of range")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "triangles", _frozen(t))

    @property
    def corners(self) -> np.ndarray:
        """(T, 3, 3) triangle corner positions."""
        return self.vertices[self.triangles]

    def areas(self) -> np.ndarray:
        c = self.corners
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    def bounding_radius(self) -> float:
        if len(self.vertices) == 0:
            return 0.0
        return float(np.linalg.norm(self.vertices, axis=1).max())


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    label: Optional[int] = None
    domain: str = SOURCE
    object_id: int = 0
    view_id: int = 0

    def __post_init__(self):
        p = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise ValueError("point cloud has non-finite coordinates")
        if self.domain not in (SOURCE, TARGET):
            raise ValueError(f"unknown domain {self.domain!r}")
        object.__setattr__(self, "points", _frozen(p))

    @property
    def count(self) -> int:
        return len(self.points)

    def with_points(self, points: np.ndarray) -> "PointCloud":
        return replace(self, points=points)


@dataclass(frozen=True)
class SensorView:
    position: tuple
    target: tuple = (0.0, 0.0, 0.0)
    up_hint: tuple = (0.0, 0.0, 1.0)
    focal_px: float = 128.0
    principal_point: tuple = (64.0, 64.0)
    resolution: tuple = (128, 128)
    rotation: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64)
        tgt = np.asarray(self.target, dtype=np.float64)
        up = np.asarray(self.up_hint, dtype=np.float64)
        w, h = (int(x) for x in self.resolution)
        cx, cy = (float(x) for x in self.principal_point)
        if w <= 0 or h <= 0:
            raise ValueError("resolution must be positive")
        if not self.focal_px > 0:
            raise ValueError("focal_px must be positive")
        if not (0 <= cx < w and 0 <= cy < h):
            raise ValueError("principal point outside the image")
        fwd = tgt - pos
        n = np.linalg.norm(fwd)
        if n == 0:
            raise ValueError("sensor position coincides with target")
        fwd = fwd / n
        right = np.cross(fwd, up)
        rn = np.linalg.norm(right)
        if rn < 1e-12:
            raise ValueError("up_hint is parallel to the viewing direction")
        right = right / rn
        down = np.cross(fwd, right)
        # columns: camera x (right), y (down), z (forward) in world coordinates
        object.__setattr__(self, "rotation", _frozen(np.stack([right, down, fwd], axis=1)))
        object.__setattr__(self, "position", tuple(float(x) for x in pos))
        object.__setattr__(self, "target", tuple(float(x) for x in tgt))
        object.__setattr__(self, "up_hint", tuple(float(x) for x in up))
        object.__setattr__(self, "focal_px", float(self.focal_px))
        object.__setattr__(self, "principal_point", (cx, cy))
        object.__setattr__(self, "resolution", (w, h))

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.position)) @ self.rotation

    def to_world(self, cam_points: np.ndarray) -> np.ndarray:
        return cam_points @ self.rotation.T + np.asarray(self.position)

    def pixel_ray(self, u: int, v: int) -> tuple[np.ndarray, np.ndarray]:
        """World-space origin and unit direction of the ray through pixel (u, v)."""
        cx, cy = self.principal_point
        c = np.array([(u + 0.5 - cx) / self.focal_px, (v + 0.5 - cy) / self.focal_px, 1.0])
        d = self.rotation @ c
        return np.asarray(self.position, dtype=np.float64), d / np.linalg.norm(d)


@dataclass(frozen=True)
class DepthMap:
    depths: np.ndarray  # (H, W); non-finite marks a miss

    def __post_init__(self):
        d = np.array(self.depths, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError("depth map must be 2-D")
        valid = np.isfinite(d)
        if np.any(d[valid] <= 0):
            raise ValueError("valid depths must be positive")
        object.__setattr__(self, "depths", _frozen(d))

    @property
    def resolution(self) -> tuple[int, int]:
        h, w = self.depths.shape
        return w, h

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.depths)


# --------------------------------------------------------------------------
# Mesh readers / writers


def _read_lines(data: TextLike) -> list[str]:
    if hasattr(data, "read"):
        data = data.read()
    if isinstance(data, bytes):
        try:
            data = data.decode("ascii")
        except UnicodeDecodeError as exc:
            raise MeshParseError("input is not ASCII", data[: exc.start].count(b"\n") + 1)
    return data.splitlines()


def _fan(indices: Sequence[int]) -> list[tuple[int, int, int]]:
    return [(indices[0], indices[i], indices[i + 1]) for i in range(1, len(indices) - 1)]


def parse_off(data: TextLike, name: str = "mesh") -> Mesh:
    """Parse an ASCII OFF mesh; polygons are fan-triangulated around their first vertex."""
    lines = _read_lines(data)
    records = []
    for no, raw in enumerate(lines, start=1):
        s = raw.split("#", 1)[0].strip()
        if s:
            records.append((no, s))
    last = len(lines)
    if not records or not records[0][1].startswith("OFF"):
        raise MeshParseError("missing OFF header", records[0][0] if records else 1)
    no, head = records[0]
    rest = head[3:].split()
    pos = 1
    if not rest:
        if len(records) < 2:
            raise MeshParseError("missing counts line", last)
        no, counts_line = records[1]
        rest = counts_line.split()
        pos = 2
    try:
        nv, nf = int(rest[0]), int(rest[1])
    except (ValueError, IndexError):
        raise MeshParseError("malformed counts line", no) from None
    if nv < 0 or nf < 0:
        raise MeshParseError("negative element count", no)

    if len(records) < pos + nv + nf:
        raise MeshParseError(
            f"unexpected end of file: expected {nv} vertices and {nf} faces", last
        )
    verts = np.empty((nv, 3))
    for i in range(nv):
        no, s = records[pos + i]
        tok = s.split()
        if len(tok) < 3:
            raise MeshParseError("vertex needs 3 coordinates", no)
        try:
            verts[i] = [float(x) for x in tok[:3]]
        except ValueError:
            raise MeshParseError(f"non-numeric vertex coordinate in {s!r}", no) from None
        if not np.all(np.isfinite(verts[i])):
            raise MeshParseError("non-finite vertex coordinate", no)
    pos += nv
    tris = []
    for i in range(nf):
        no, s = records[pos + i]
        try:
            tok = [int(x) for x in s.split()]
        except ValueError:
            raise MeshParseError(f"non-numeric face token in {s!r}", no) from None
        n = tok[0]
        if n < 3 or len(tok) < n + 1:
            raise MeshParseError("face needs at least 3 vertex indices", no)
        idx = tok[1 : n + 1]
        if min(idx) < 0 or max(idx) >= nv:
            raise MeshParseError("vertex index out of range", no)
        tris.extend(_fan(idx))
    return Mesh(verts, np.array(tris, dtype=np.int64).reshape(-1, 3), name)


def parse_obj(data: TextLike, name: str = "mesh") -> Mesh:
    """Parse the ``v`` and ``f`` records of a Wavefront OBJ file. Other records are ignored."""
    verts = []
    faces = []
    for no, raw in enumerate(_read_lines(data), start=1):
        tok = raw.split("#", 1)[0].split()
        if not tok:
            continue
        if tok[0] == "v":
            if len(tok) < 4:
                raise MeshParseError("vertex needs 3 coordinates", no)
            try:
                xyz = [float(x) for x in tok[1:4]]
            except ValueError:
                raise MeshParseError(f"non-numeric vertex coordinate in {raw!r}", no) from None
            if not all(np.isfinite(xyz)):
                raise MeshParseError("non-finite vertex coordinate", no)
            verts.append(xyz)
        elif tok[0] == "f":
            if len(tok) < 4:
                raise MeshParseError("face needs at least 3 vertex indices", no)
            try:
                idx = [int(t.split("/", 1)[0]) for t in tok[1:]]
            except ValueError:
                raise MeshParseError(f"non-numeric face index in {raw!r}", no) from None
            faces.append((no, idx))
    tris = []
    for no, idx in faces:
        if min(idx) < 1 or max(idx) > len(verts):
            raise MeshParseError("vertex index out of range", no)
        tris.extend(_fan([i - 1 for i in idx]))
    return Mesh(np.array(verts).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3), name)


def format_off(mesh: Mesh) -> str:
    out = ["OFF", f"{len(mesh.vertices)} {len(mesh.triangles)} 0"]
    out += [" ".join(repr(float(x)) for x in v) for v in mesh.vertices]
    out += ["3 %d %d %d" % tuple(t) for t in mesh.triangles]
    return "\n".join(out) + "\n"


def format_obj(mesh: Mesh) -> str:
    out = ["v " + " ".join(repr(float(x)) for x in v) for v in mesh.vertices]
    out += ["f %d %d %d" % tuple(t + 1) for t in mesh.triangles]
    return "\n".join(out) + "\n"


def load_mesh(path: Union[str, os.PathLike]) -> Mesh:
    path = Path(path)
    data = path.read_bytes()
    ext = path.suffix.lower()
    if ext == ".off":
        return parse_off(data, name=path.stem)
    if ext == ".obj":
        return parse_obj(data, name=path.stem)
    raise ValueError(f"{path}: unsupported mesh format {ext!r}")


def save_mesh(mesh: Mesh, path: Union[str, os.PathLike]) -> None:
    path = Path(path)
    text = format_obj(mesh) if path.suffix.lower() == ".obj" else format_off(mesh)
    path.write_bytes(text.encode("ascii"))


# --------------------------------------------------------------------------
# Point cloud writers


def encode_ps2r(points: np.ndarray) -> bytes:
    pts = np.ascontiguousarray(points, dtype="<f4").reshape(-1, 3)
    return PS2R_MAGIC + struct.pack("<II", PS2R_VERSION, len(pts)) + pts.tobytes()


def decode_ps2r(data: bytes) -> np.ndarray:
    if len(data) < 12 or data[:4] != PS2R_MAGIC:
        raise ValueError("not a PS2R point cloud (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != PS2R_VERSION:
        raise ValueError(f"unsupported PS2R version {version}")
    if len(data) != 12 + 12 * count:
        raise ValueError(f"PS2R payload size mismatch: header says {count} points")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(count, 3).astype(np.float64)


def write_ps2r(cloud: Union[PointCloud, np.ndarray], path) -> None:
    pts = cloud.points if isinstance(cloud, PointCloud) else cloud
    Path(path).write_bytes(encode_ps2r(pts))


def read_ps2r(path) -> np.ndarray:
    path = Path(path)
    try:
        return decode_ps2r(path.read_bytes())
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


def format_ply(points: np.ndarray) -> str:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(pts)}",
        "property float x",
        "property float y",
        "property float z",
        "end_header",
    ]
    body = ["%.9g %.9g %.9g" % tuple(p) for p in pts]
    return "\n".join(header + body) + "\n"


def write_ply(cloud: Union[PointCloud, np.ndarray], path) -> None:
    pts = cloud.points if isinstance(cloud, PointCloud) else cloud
    Path(path).write_text(format_ply(pts))


# --------------------------------------------------------------------------
# Ray casting


def ray_triangle(origin, direction, tri) -> Optional[float]:
    """Möller–Trumbore intersection of a single ray with a triangle.

    Edges are inclusive. Returns the hit distance ``t > RAY_EPS`` or ``None``.
    """
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    a, b, c = np.asarray(tri, dtype=np.float64)
    t = _moller_trumbore(o[None], d[None], a[None], b[None], c[None])[0]
    return None if np.isnan(t) else float(t)


def _moller_trumbore(o, d, a, b, c, t_min=RAY_EPS):
    """Vectorized intersection; returns t per row, NaN on miss."""
    e1 = b - a
    e2 = c - a
    p = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, p)
    n = np.cross(e1, e2)
    nn = np.linalg.norm(n, axis=1)
    scale = nn * np.linalg.norm(d, axis=1)
    ok = (nn > 1e-300) & (np.abs(det) > 1e-12 * scale)
    inv = np.divide(1.0, det, out=np.zeros_like(det), where=ok)
    s = o - a
    u = np.einsum("ij,ij->i", s, p) * inv
    q = np.cross(s, e1)
    v = np.einsum("ij,ij->i", d, q) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > t_min)
    return np.where(hit, t, np.nan)


def _pixel_dirs(view: SensorView, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Unnormalized camera-space directions with unit z component."""
    cx, cy = view.principal_point
    f = view.focal_px
    return np.stack([(u + 0.5 - cx) / f, (v + 0.5 - cy) / f, np.ones(len(u))], axis=1)


_MAX_PAIRS = 1 << 20


def render_depth(mesh: Mesh, view: SensorView) -> DepthMap:
    """Cast one ray per pixel centre and keep the nearest camera-space depth.

    Every ray is tested exactly against each triangle whose projected bounding
    box (plus one pixel of slack) contains the pixel; triangles that cross the
    image plane are tested against every pixel.
    """
    w, h = view.resolution
    depth = np.full(h * w, np.inf)
    if len(mesh.triangles) == 0:
        return DepthMap(depth.reshape(h, w))
    cam = view.to_camera(mesh.vertices)
    corners = cam[mesh.triangles]  # (T, 3, 3)
    z = corners[..., 2]
    in_front = z > RAY_EPS
    keep = in_front.any(axis=1)
    corners = corners[keep]
    all_front = in_front[keep].all(axis=1)
    if len(corners) == 0:
        return DepthMap(depth.reshape(h, w))

    cx, cy = view.principal_point
    f = view.focal_px
    zs = np.where(all_front[:, None], corners[..., 2], 1.0)
    pu = f * corners[..., 0] / zs + cx
    pv = f * corners[..., 1] / zs + cy
    # pixel u has its centre at u + 0.5
    u0 = np.floor(pu.min(axis=1) - 0.5) - 1
    u1 = np.ceil(pu.max(axis=1) - 0.5) + 1
    v0 = np.floor(pv.min(axis=1) - 0.5) - 1
    v1 = np.ceil(pv.max(axis=1) - 0.5) + 1
    u0 = np.where(all_front, np.clip(u0, 0, w), 0).astype(np.int64)
    u1 = np.where(all_front, np.clip(u1, -1, w - 1), w - 1).astype(np.int64)
    v0 = np.where(all_front, np.clip(v0, 0, h), 0).astype(np.int64)
    v1 = np.where(all_front, np.clip(v1, -1, h - 1), h - 1).astype(np.int64)
    nu = np.maximum(u1 - u0 + 1, 0)
    nv = np.maximum(v1 - v0 + 1, 0)
    npairs = nu * nv

    start = 0
    T = len(corners)
    while start < T:
        # chunk triangles so the candidate list stays bounded
        csum = np.cumsum(npairs[start:])
        stop = start + max(1, int(np.searchsorted(csum, _MAX_PAIRS, side="right")))
        stop = min(stop, T)
        _cast_chunk(depth, corners[start:stop], u0[start:stop], v0[start:stop],
                    nu[start:stop], npairs[start:stop], view, w)
        start = stop
    return DepthMap(depth.reshape(h, w))


def _cast_chunk(depth, corners, u0, v0, nu, npairs, view, w):
    total = int(npairs.sum())
    if total == 0:
        return
    # Möller–Trumbore for rays from the camera origin: with s = -a every
    # triple product collapses to a dot product of the ray with a
    # per-triangle vector.
    a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
    e1, e2, s = b - a, c - a, -a
    n = np.cross(e2, e1)  # det = d . n
    m = np.cross(e2, s)  # u * det = d . m
    q = np.cross(s, e1)  # v * det = d . q
    tnum = np.einsum("ij,ij->i", e2, q)  # t * det
    nn = np.linalg.norm(n, axis=1)

    tri = np.repeat(np.arange(len(corners)), npairs)
    offsets = np.arange(total) - np.repeat(np.cumsum(npairs) - npairs, npairs)
    width = nu[tri]
    u = u0[tri] + offsets % width
    v = v0[tri] + offsets // width
    cx, cy = view.principal_point
    dx = (u + 0.5 - cx) / view.focal_px
    dy = (v + 0.5 - cy) / view.focal_px
    # dz == 1, so t is the camera-space depth
    det = dx * n[tri, 0] + dy * n[tri, 1] + n[tri, 2]
    ok = (nn[tri] > 1e-300) & (np.abs(det) > 1e-12 * nn[tri] * np.sqrt(dx * dx + dy * dy + 1))
    det = np.where(ok, det, 1.0)
    bu = (dx * m[tri, 0] + dy * m[tri, 1] + m[tri, 2]) / det
    bv = (dx * q[tri, 0] + dy * q[tri, 1] + q[tri, 2]) / det
    t = tnum[tri] / det
    hit = ok & (bu >= 0) & (bv >= 0) & (bu + bv <= 1) & (t > RAY_EPS)
    np.minimum.at(depth, v[hit] * w + u[hit], t[hit])


def back_project(depth: DepthMap, view: SensorView, **tags) -> PointCloud:
    """Lift every valid pixel to a world-space point, in row-major pixel order."""
    if depth.resolution != tuple(view.resolution):
        raise ValueError(
            f"depth resolution {depth.resolution} does not match view {view.resolution}"
        )
    vv, uu = np.nonzero(depth.valid)
    d = depth.depths[vv, uu]
    cam = _pixel_dirs(view, uu.astype(np.float64), vv.astype(np.float64)) * d[:, None]
    return PointCloud(view.to_world(cam), **tags)


# --------------------------------------------------------------------------
# Sampling


def sample_surface(mesh: Mesh, n: int, seed, **tags) -> PointCloud:
    """Draw ``n`` points uniformly over the mesh surface (area-weighted)."""
    if n < 1:
        raise ValueError("n must be positive")
    areas = mesh.areas()
    total = areas.sum()
    if not total > 0:
        raise ValueError(f"mesh {mesh.name!r} has no non-degenerate triangle")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    bary = np.stack([1 - r1, r1 * (1 - r2), r1 * r2], axis=1)
    pts = np.einsum("nk,nkd->nd", bary, mesh.corners[idx])
    return PointCloud(pts, **tags)


@dataclass(frozen=True)
class ScanConfig:
    """Simulated sensor and viewpoint distribution (angles in degrees)."""

    resolution: tuple = (128, 128)
    focal_px: float = 128.0
    principal_point: Optional[tuple] = None
    elev_min: float = 10.0
    elev_max: float = 80.0
    r_min: float = 2.0
    r_max: float = 4.0
    min_points: int = 30
    max_attempts: int = 16

    def __post_init__(self):
        if not 0 < self.r_min <= self.r_max:
            raise ValueError("need 0 < r_min <= r_max")
        if not -90 < self.elev_min <= self.elev_max < 90:
            raise ValueError("elevation bounds must satisfy -90 < min <= max < 90")
        if self.min_points < 0 or self.max_attempts < 1:
            raise ValueError("invalid retry settings")

    def principal(self) -> tuple:
        if self.principal_point is not None:
            return tuple(self.principal_point)
        w, h = self.resolution
        return (w / 2.0, h / 2.0)


def sample_viewpoint(bounding_radius: float, rng: np.random.Generator,
                     cfg: ScanConfig = ScanConfig()) -> SensorView:
    """Random sensor on a spherical shell around the origin, looking at the origin.

    Draw order: azimuth, elevation, radius.
    """
    if not bounding_radius > 0:
        raise ValueError("bounding radius must be positive")
    az = rng.uniform(0.0, 2 * np.pi)
    el = np.deg2rad(rng.uniform(cfg.elev_min, cfg.elev_max))
    r = rng.uniform(cfg.r_min, cfg.r_max) * bounding_radius
    pos = r * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    return SensorView(
        position=tuple(pos),
        focal_px=cfg.focal_px,
        principal_point=cfg.principal(),
        resolution=cfg.resolution,
    )


def view_rng(seed: int, view_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(view_id,)))


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("PS2R_THREADS", "1")))
    except ValueError:
        return 1


def simulate_views(mesh: Mesh, M: int, cfg: ScanConfig = ScanConfig(), seed: int = 0,
                   object_id: int = 0, label: Optional[int] = None,
                   domain: str = SOURCE) -> list[PointCloud]:
    """Scan ``mesh`` from ``M`` random viewpoints.

    Each view draws from its own substream of ``seed`` so views can be rendered
    in any order. Views with fewer than ``cfg.min_points`` points are redrawn,
    at most ``cfg.max_attempts`` times in total.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    radius = mesh.bounding_radius()

    def one(j: int) -> PointCloud:
        rng = view_rng(seed, j)
        for _ in range(cfg.max_attempts):
            view = sample_viewpoint(radius, rng, cfg)
            cloud = back_project(render_depth(mesh, view), view, label=label,
                                 domain=domain, object_id=object_id, view_id=j)
            if cloud.count >= cfg.min_points:
                return cloud
        raise SimulationError(
            f"mesh {mesh.name!r}: {cfg.max_attempts} consecutive views with fewer "
            f"than {cfg.min_points} points"
        )

    workers = min(worker_count(), M)
    if workers == 1:
        return [one(j) for j in range(M)]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(one, range(M)))


def write_pgm(depth: DepthMap, path) -> None:
    """8-bit grayscale PGM; near is bright, misses are black."""
    d = depth.depths
    valid = depth.valid
    img = np.zeros(d.shape, dtype=np.uint8)
    if valid.any():
        lo, hi = d[valid].min(), d[valid].max()
        span = hi - lo if hi > lo else 1.0
        img[valid] = (255 - np.round(200 * (d[valid] - lo) / span)).astype(np.uint8)
    h, w = d.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())
