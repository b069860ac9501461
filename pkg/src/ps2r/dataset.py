"""Procedural cross-domain corpus, JSON manifests and class weights.

Source objects are clean meshes in canonical pose. Target objects ("real"
surrogates) are single partial scans of independently jittered meshes, turned
to a random heading about z and corrupted with Gaussian range noise.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from .augment import rotate_z
from .geometry import (TARGET, Mesh, PointCloud, ScanConfig, load_mesh, read_ps2r, save_mesh,
                       simulate_views, write_ps2r)
from .rng import substream, substream_int

log = logging.getLogger(__name__)

SPLITS = ("source_train", "target_train_unlabeled", "target_val", "target_test")
UNLABELED = ("target_train_unlabeled",)
PRIMITIVES = ("box", "cylinder", "cone", "icosphere", "torus")


# --------------------------------------------------------------------------
# primitives (centred at the origin, fitting in [-0.5, 0.5]^3)


def make_box(half=(0.5, 0.5, 0.5)) -> Mesh:
    hx, hy, hz = half
    v = np.array([[x, y, z] for x in (-hx, hx) for y in (-hy, hy) for z in (-hz, hz)])
    # vertex index = 4*ix + 2*iy + iz
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = [t for a, b, c, d in quads for t in ((a, b, c), (a, c, d))]
    return Mesh(v, tris, "box")


def _ring(n, radius, z):
    a = 2 * np.pi * np.arange(n) / n
    return np.stack([radius * np.cos(a), radius * np.sin(a), np.full(n, z)], axis=1)


def make_cylinder(segments=24, radius=0.5, height=1.0) -> Mesh:
    n = segments
    v = np.vstack([_ring(n, radius, -height / 2), _ring(n, radius, height / 2),
                   [[0, 0, -height / 2], [0, 0, height / 2]]])
    bot, top = 2 * n, 2 * n + 1
    tris = []
    for i in range(n):
        j = (i + 1) % n
        tris += [(i, j, n + j), (i, n + j, n + i), (bot, j, i), (top, n + i, n + j)]
    return Mesh(v, tris, "cylinder")


def make_cone(segments=24, radius=0.5, height=1.0) -> Mesh:
    n = segments
    v = np.vstack([_ring(n, radius, -height / 2), [[0, 0, height / 2], [0, 0, -height / 2]]])
    apex, base = n, n + 1
    tris = []
    for i in range(n):
        j = (i + 1) % n
        tris += [(i, j, apex), (base, j, i)]
    return Mesh(v, tris, "cone")


def make_icosphere(subdivisions=2, radius=0.5) -> Mesh:
    p = (1 + 5 ** 0.5) / 2
    verts = [(-1, p, 0), (1, p, 0), (-1, -p, 0), (1, -p, 0), (0, -1, p), (0, 1, p),
             (0, -1, -p), (0, 1, -p), (p, 0, -1), (p, 0, 1), (-p, 0, -1), (-p, 0, 1)]
    verts = [np.array(x, float) / np.linalg.norm(x) for x in verts]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return Mesh(radius * np.array(verts), faces, "icosphere")


def make_torus(major=0.35, minor=0.15, n_major=24, n_minor=12) -> Mesh:
    u = 2 * np.pi * np.arange(n_major) / n_major
    w = 2 * np.pi * np.arange(n_minor) / n_minor
    uu, ww = np.meshgrid(u, w, indexing="ij")
    r = major + minor * np.cos(ww)
    v = np.stack([r * np.cos(uu), r * np.sin(uu), minor * np.sin(ww)], axis=-1).reshape(-1, 3)
    tris = []
    for i in range(n_major):
        for j in range(n_minor):
            a = i * n_minor + j
            b = ((i + 1) % n_major) * n_minor + j
            c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
            d = i * n_minor + (j + 1) % n_minor
            tris += [(a, b, c), (a, c, d)]
    return Mesh(v, tris, "torus")


_BUILDERS = {"box": make_box, "cylinder": make_cylinder, "cone": make_cone,
             "icosphere": make_icosphere, "torus": make_torus}


def make_primitive(kind: str, scale=(1.0, 1.0, 1.0), name: Optional[str] = None) -> Mesh:
    if kind not in _BUILDERS:
        raise ValueError(f"unknown primitive {kind!r}; choose from {PRIMITIVES}")
    base = _BUILDERS[kind]()
    return Mesh(base.vertices * np.asarray(scale, float), base.triangles, name or kind)


# --------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class ManifestItem:
    path: str
    label: Optional[int]
    object_id: int

    def to_json(self) -> dict:
        return {"path": self.path, "class": self.label, "object_id": self.object_id}


@dataclass
class DatasetManifest:
    classes: list[str]
    splits: dict[str, list[ManifestItem]]
    root: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        for name, items in self.splits.items():
            for it in items:
                if name in UNLABELED and it.label is not None:
                    raise ValueError(f"split {name!r} must be unlabeled")
                if it.label is not None and not 0 <= it.label < len(self.classes):
                    raise ValueError(f"{it.path}: class index {it.label} out of range")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def items(self, split: str) -> list[ManifestItem]:
        if split not in self.splits:
            raise KeyError(f"unknown split {split!r}; available: {sorted(self.splits)}")
        return self.splits[split]

    def counts(self, split: str) -> np.ndarray:
        """Per-class instance counts of a labeled split."""
        out = np.zeros(self.num_classes, dtype=np.int64)
        for it in self.items(split):
            if it.label is not None:
                out[it.label] += 1
        return out

    def to_json(self) -> str:
        doc = {"classes": list(self.classes),
               "splits": {k: [it.to_json() for it in v] for k, v in self.splits.items()}}
        return json.dumps(doc, indent=1) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        doc = json.loads(path.read_text())
        if set(doc) != {"classes", "splits"}:
            raise ValueError(f"{path}: manifest must have exactly 'classes' and 'splits'")
        splits = {name: [ManifestItem(d["path"], d["class"], int(d["object_id"])) for d in items]
                  for name, items in doc["splits"].items()}
        return cls(list(doc["classes"]), splits, root=path.parent)

    def resolve(self, item: ManifestItem) -> Path:
        return self.root / item.path


def class_weights(counts: Sequence[int]) -> np.ndarray:
    """Inverse-frequency weights ``S / (C * N_c)``; empty classes get 0."""
    n = np.asarray(counts, dtype=np.float64)
    if np.any(n < 0):
        raise ValueError("class counts must be non-negative")
    total = n.sum()
    if total <= 0:
        raise ValueError("all class counts are zero")
    if np.any(n == 0):
        log.warning("classes %s have no training instances; weight set to 0",
                    np.flatnonzero(n == 0).tolist())
    return np.divide(total, len(n) * n, out=np.zeros_like(n), where=n > 0)


def load_split(manifest: DatasetManifest, split: str) -> Iterator[tuple[Union[Mesh, PointCloud], Optional[int]]]:
    """Yield ``(mesh_or_cloud, label)`` in manifest order."""
    for it in manifest.items(split):
        path = manifest.resolve(it)
        try:
            if path.suffix.lower() in (".off", ".obj"):
                obj = load_mesh(path)
            elif path.suffix.lower() == ".ps2r":
                obj = PointCloud(read_ps2r(path), label=it.label,
                                 domain="source" if split == "source_train" else TARGET,
                                 object_id=it.object_id)
            else:
                raise ValueError("unsupported file type")
        except FileNotFoundError:
            raise FileNotFoundError(f"{path}: file listed in manifest is missing") from None
        except ValueError as exc:
            raise ValueError(f"{path}: {exc}") from None
        yield obj, it.label


# --------------------------------------------------------------------------
# corpus generation


@dataclass(frozen=True)
class CorpusConfig:
    classes: tuple = PRIMITIVES
    source_per_class: int = 100
    class_ratios: Optional[tuple] = None
    target_per_class: int = 40
    unlabeled_fraction: float = 0.5
    val_fraction: float = 0.1
    scale_range: tuple = (0.6, 1.4)
    target_noise: float = 0.01
    seed: int = 0
    scan: ScanConfig = ScanConfig()

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if len(self.classes) < 2:
            raise ValueError("corpus needs at least 2 classes")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("duplicate class names")
        for c in self.classes:
            if c not in PRIMITIVES:
                raise ValueError(f"unknown class {c!r}; choose from {PRIMITIVES}")
        if self.source_per_class < 1 or self.target_per_class < 1:
            raise ValueError("instance counts must be positive")
        if self.class_ratios is not None:
            if len(self.class_ratios) != len(self.classes) or min(self.class_ratios) <= 0:
                raise ValueError("class_ratios needs one positive ratio per class")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError("scale_range must satisfy 0 < lo <= hi")
        if not (0 <= self.unlabeled_fraction < 1 and 0 <= self.val_fraction < 1):
            raise ValueError("fractions must lie in [0, 1)")
        if self.target_noise < 0:
            raise ValueError("target_noise must be non-negative")

    def source_counts(self) -> list[int]:
        if self.class_ratios is None:
            return [self.source_per_class] * len(self.classes)
        top = max(self.class_ratios)
        return [max(1, int(round(self.source_per_class * r / top))) for r in self.class_ratios]

    def target_split_sizes(self) -> tuple[int, int, int]:
        n = self.target_per_class
        unlabeled = int(round(n * self.unlabeled_fraction))
        val = int(round((n - unlabeled) * self.val_fraction))
        return unlabeled, val, n - unlabeled - val


def _jitter(cfg: CorpusConfig, rng) -> np.ndarray:
    return rng.uniform(cfg.scale_range[0], cfg.scale_range[1], size=3)


def _target_scan(cfg: CorpusConfig, kind: str, label: int, object_id: int) -> PointCloud:
    rng = substream(cfg.seed, "corpus", 1, object_id)
    mesh = make_primitive(kind, _jitter(cfg, rng), name=f"{kind}_{object_id}")
    heading = rng.uniform(0.0, 2 * np.pi)
    # rotate the mesh, then scan it once from a random viewpoint
    r = rotate_z(PointCloud(mesh.vertices), heading).points
    mesh = Mesh(r, mesh.triangles, mesh.name)
    cloud = simulate_views(mesh, 1, cfg.scan, substream_int(cfg.seed, "simulate", 1, object_id),
                           object_id=object_id, label=label, domain=TARGET)[0]
    sigma = cfg.target_noise * mesh.bounding_radius()
    if sigma > 0:
        cloud = cloud.with_points(cloud.points + rng.normal(0.0, sigma, cloud.points.shape))
    return cloud


def gen_corpus(cfg: CorpusConfig, out_dir) -> DatasetManifest:
    """Write meshes, target scans and ``manifest.json`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "meshes").mkdir(parents=True, exist_ok=True)
    (out / "clouds").mkdir(parents=True, exist_ok=True)
    splits: dict[str, list[ManifestItem]] = {s: [] for s in SPLITS}
    object_id = 0
    for label, (kind, count) in enumerate(zip(cfg.classes, cfg.source_counts())):
        for i in range(count):
            rng = substream(cfg.seed, "corpus", 0, object_id)
            mesh = make_primitive(kind, _jitter(cfg, rng), name=f"{kind}_{i:04d}")
            rel = f"meshes/{kind}_{i:04d}.off"
            save_mesh(mesh, out / rel)
            splits["source_train"].append(ManifestItem(rel, label, object_id))
            object_id += 1
    n_unl, n_val, _ = cfg.target_split_sizes()
    for label, kind in enumerate(cfg.classes):
        for i in range(cfg.target_per_class):
            cloud = _target_scan(cfg, kind, label, object_id)
            rel = f"clouds/{object_id}.ps2r"
            write_ps2r(cloud, out / rel)
            if i < n_unl:
                splits["target_train_unlabeled"].append(ManifestItem(rel, None, object_id))
            elif i < n_unl + n_val:
                splits["target_val"].append(ManifestItem(rel, label, object_id))
            else:
                splits["target_test"].append(ManifestItem(rel, label, object_id))
            object_id += 1
    manifest = DatasetManifest([str(c) for c in cfg.classes], splits, root=out)
    manifest.write(out / "manifest.json")
    return manifest
