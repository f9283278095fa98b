"""Synthetic labeled-scene generation, raw cloud file IO, and dataset splits.

Scenes are ray-cast from the sensor origin against a flat ground plane plus
simple labeled primitives (vehicle boxes, person cylinders, wall slabs,
vegetation blobs).  Beam patterns mimic real spinning LiDARs: a configurable
number of elevation beams over a vertical field of view, swept over 360
degrees of azimuth; the first surface hit within range returns a point.

Cloud files use the common raw binary layout: little-endian float32
(x, y, z, intensity) quadruples, with a sibling label file of little-endian
uint32 whose lower 16 bits carry the semantic class.  A plain-text remap
table ("raw_id target_id" per line) abstracts raw ids onto the five-class
ontology; unmapped ids fall back to IGNORE with a warning.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CountMismatch, EmptyCloud, EmptyList, InvalidConfig, MalformedFile
from .projection import IGNORE, LabeledPointCloud

__all__ = [
    "CLASS_NAMES",
    "VEHICLE",
    "PERSON",
    "GROUND",
    "MANMADE",
    "VEGETATION",
    "SENSOR_PRESETS",
    "SceneConfig",
    "synth_scan",
    "synth_dataset",
    "load_kitti_pair",
    "save_cloud_pair",
    "read_remap",
    "write_remap",
    "make_split",
    "read_split",
    "write_split",
]

VEHICLE, PERSON, GROUND, MANMADE, VEGETATION = 0, 1, 2, 3, 4
CLASS_NAMES = ["vehicle", "person", "ground", "man_made", "vegetation"]

# beams / vertical FoV presets named by geometry (span in degrees)
SENSOR_PRESETS = {
    "b32_f40": {"beams": 32, "vfov_deg": (-30.0, 10.0)},
    "b64_f28": {"beams": 64, "vfov_deg": (-24.0, 4.0)},
    "b40_f23": {"beams": 40, "vfov_deg": (-16.0, 7.0)},
    "b64_f20": {"beams": 64, "vfov_deg": (-15.0, 5.0)},
    "b16_f30": {"beams": 16, "vfov_deg": (-25.0, 5.0)},
    "b64_f45": {"beams": 64, "vfov_deg": (-30.0, 15.0)},
}


@dataclass
class SceneConfig:
    """Scene contents plus the sensor beam pattern."""

    rng_seed: int = 0
    extent: float = 40.0
    num_vehicles: int = 6
    num_persons: int = 6
    num_walls: int = 4
    num_vegetation: int = 5
    beams: int = 32
    vfov_deg: tuple = (-30.0, 10.0)
    az_res_deg: float = 1.0
    max_range: float = 80.0
    sensor_height: float = 1.7

    def validate(self):
        if self.vfov_deg[0] >= self.vfov_deg[1]:
            raise InvalidConfig(f"vfov min {self.vfov_deg[0]} !< max {self.vfov_deg[1]}")
        if min(self.num_vehicles, self.num_persons, self.num_walls, self.num_vegetation) < 0:
            raise InvalidConfig("object counts must be >= 0")
        if self.max_range <= 0 or self.extent <= 0 or self.az_res_deg <= 0:
            raise InvalidConfig("extent, max_range and az_res_deg must be positive")
        if self.beams < 0:
            raise InvalidConfig("beam count must be >= 0")

    @classmethod
    def from_preset(cls, name: str, **kw) -> "SceneConfig":
        if name not in SENSOR_PRESETS:
            raise InvalidConfig(f"unknown sensor preset {name!r}")
        return cls(**{**SENSOR_PRESETS[name], **kw})  # explicit kw overrides the preset


def _ray_plane(dirs: np.ndarray, height: float) -> np.ndarray:
    """Distance to the plane z = -height; inf where the ray points up."""
    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(dz < -1e-12, -height / dz, np.inf)
    return t


def _ray_box(dirs: np.ndarray, center, half, yaw: float) -> np.ndarray:
    """Slab test against a yaw-oriented box; inf where missed."""
    c, s = np.cos(yaw), np.sin(yaw)
    R = np.array([[c, s, 0], [-s, c, 0], [0, 0, 1.0]])  # world -> box frame
    o = R @ (-np.asarray(center))
    d = dirs @ R.T
    half = np.asarray(half)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
    t1 = (-half - o) * inv
    t2 = (half - o) * inv
    tmin = np.minimum(t1, t2).max(axis=1)
    tmax = np.maximum(t1, t2).min(axis=1)
    hit = (tmax >= np.maximum(tmin, 0)) & np.isfinite(tmin)
    return np.where(hit, np.where(tmin > 0, tmin, tmax), np.inf)


def _ray_cylinder(dirs, center, radius, z0, z1) -> np.ndarray:
    """Vertical cylinder side surface plus the top cap; inf where missed."""
    ox, oy = -center[0], -center[1]
    dx, dy, dz = dirs.T
    a = dx * dx + dy * dy
    b = 2 * (ox * dx + oy * dy)
    cc = ox * ox + oy * oy - radius * radius
    disc = b * b - 4 * a * cc
    t = np.full(len(dirs), np.inf)
    ok = (disc >= 0) & (a > 1e-12)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    for sign in (-1.0, 1.0):
        tc = np.where(ok, (-b + sign * sq) / (2 * a), np.inf)
        z = tc * dz
        good = ok & (tc > 0) & (z >= z0) & (z <= z1)
        t = np.where(good & (tc < t), tc, t)
    # top cap
    with np.errstate(divide="ignore", invalid="ignore"):
        tcap = np.where(np.abs(dz) > 1e-12, z1 / dz, np.inf)
    px = tcap * dx
    py = tcap * dy
    incap = (tcap > 0) & ((px - center[0]) ** 2 + (py - center[1]) ** 2 <= radius * radius)
    t = np.where(incap & (tcap < t), tcap, t)
    return t


def _ray_sphere(dirs, center, radius) -> np.ndarray:
    o = -np.asarray(center)
    b = 2 * dirs @ o
    cc = o @ o - radius * radius
    disc = b * b - 4 * cc
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t1 = (-b - sq) / 2
    t2 = (-b + sq) / 2
    t = np.where(t1 > 0, t1, t2)
    return np.where(ok & (t > 0), t, np.inf)


def synth_scan(cfg: SceneConfig) -> LabeledPointCloud:
    """Ray-cast one labeled scan; deterministic for a given config."""
    cfg.validate()
    if cfg.beams == 0:
        raise EmptyCloud("beam count is zero")
    rng = np.random.default_rng(cfg.rng_seed)
    h = cfg.sensor_height

    elev = np.deg2rad(np.linspace(cfg.vfov_deg[0], cfg.vfov_deg[1], cfg.beams))
    az = np.deg2rad(np.arange(0.0, 360.0, cfg.az_res_deg))
    E, A = np.meshgrid(elev, az, indexing="ij")
    dirs = np.stack(
        [np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1
    ).reshape(-1, 3)

    best_t = _ray_plane(dirs, h)
    best_c = np.full(len(dirs), GROUND, dtype=np.int32)

    def place(r_lo, r_hi):
        r = rng.uniform(r_lo, r_hi)
        ang = rng.uniform(0, 2 * np.pi)
        return np.array([r * np.cos(ang), r * np.sin(ang)])

    def consider(t, cls):
        nonlocal best_t, best_c
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_c = np.where(closer, cls, best_c)

    for _ in range(cfg.num_vehicles):
        xy = place(4.0, cfg.extent * 0.6)
        yaw = rng.uniform(0, 2 * np.pi)
        consider(_ray_box(dirs, [xy[0], xy[1], -h + 0.75], [2.0, 1.0, 0.75], yaw), VEHICLE)
    for _ in range(cfg.num_persons):
        xy = place(2.5, cfg.extent * 0.35)
        consider(_ray_cylinder(dirs, xy, 0.3, -h, -h + 1.8), PERSON)
    for _ in range(cfg.num_walls):
        xy = place(8.0, cfg.extent * 0.9)
        yaw = rng.uniform(0, 2 * np.pi)
        length = rng.uniform(6.0, 14.0)
        height = rng.uniform(3.0, 8.0)
        consider(
            _ray_box(dirs, [xy[0], xy[1], -h + height / 2], [length / 2, 0.2, height / 2], yaw),
            MANMADE,
        )
    for _ in range(cfg.num_vegetation):
        xy = place(5.0, cfg.extent * 0.7)
        base_r = rng.uniform(1.2, 2.5)
        zc = -h + rng.uniform(base_r, base_r + 1.5)
        for _ in range(rng.integers(3, 7)):  # blob of overlapping spheres
            off = rng.normal(scale=base_r * 0.4, size=3)
            consider(
                _ray_sphere(dirs, [xy[0] + off[0], xy[1] + off[1], zc + off[2] * 0.5],
                            base_r * rng.uniform(0.5, 0.9)),
                VEGETATION,
            )

    hit = best_t <= cfg.max_range
    pts = dirs[hit] * best_t[hit, None]
    labels = best_c[hit]
    if pts.shape[0] == 0:
        raise EmptyCloud("no rays returned within max range")
    return LabeledPointCloud(pts, labels, intensity=np.zeros(len(pts)))


# ---------------------------------------------------------------------------
# Raw file IO (KITTI-style .bin / .label pairs)
# ---------------------------------------------------------------------------

def save_cloud_pair(cloud: LabeledPointCloud, bin_path, label_path):
    pts = np.zeros((len(cloud), 4), dtype="<f4")
    pts[:, :3] = cloud.points
    if cloud.intensity is not None:
        pts[:, 3] = cloud.intensity
    Path(bin_path).write_bytes(pts.tobytes())
    lab = (cloud.labels.astype(np.uint32) & 0xFFFF).astype("<u4")
    Path(label_path).write_bytes(lab.tobytes())


def load_kitti_pair(bin_path, label_path, remap: dict) -> LabeledPointCloud:
    """Parse cloud + label files and remap raw ids onto the target ontology."""
    raw = Path(bin_path).read_bytes()
    if len(raw) % 16 != 0:
        raise MalformedFile(f"{bin_path}: size {len(raw)} not divisible by 16")
    pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    lab_raw = Path(label_path).read_bytes()
    if len(lab_raw) % 4 != 0:
        raise MalformedFile(f"{label_path}: size {len(lab_raw)} not divisible by 4")
    labels = np.frombuffer(lab_raw, dtype="<u4")
    if labels.shape[0] != pts.shape[0]:
        raise CountMismatch(
            f"{label_path}: {labels.shape[0]} labels for {pts.shape[0]} points"
        )
    sem = (labels & 0xFFFF).astype(np.int64)
    out = np.full(sem.shape, IGNORE, dtype=np.int32)
    known = np.zeros(sem.shape, dtype=bool)
    for raw_id, target in remap.items():
        sel = sem == raw_id
        out[sel] = target
        known |= sel
    if not known.all():
        missing = sorted(set(np.unique(sem[~known])))
        warnings.warn(f"{label_path}: unmapped raw class ids {missing} -> IGNORE")
    return LabeledPointCloud(
        pts[:, :3].astype(np.float64), out, intensity=pts[:, 3].astype(np.float64)
    )


def write_remap(path, mapping: dict):
    lines = [f"{k} {v}" for k, v in sorted(mapping.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_remap(path) -> dict:
    mapping = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        a, b = line.split()
        mapping[int(a)] = int(b)
    return mapping


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def make_split(items, fraction: float, seed: int):
    """Deterministic shuffled split into (train, val); disjoint and covering."""
    items = list(items)
    if not items:
        raise EmptyList("cannot split an empty item list")
    if not 0.0 < fraction < 1.0:
        raise InvalidConfig(f"split fraction must be in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(items))
    n_train = int(round(fraction * len(items)))
    n_train = min(max(n_train, 1), len(items) - 1) if len(items) > 1 else n_train
    train = [items[i] for i in order[:n_train]]
    val = [items[i] for i in order[n_train:]]
    return train, val


def write_split(path, train, val):
    lines = [f"{s} train" for s in train] + [f"{s} val" for s in val]
    Path(path).write_text("\n".join(lines) + "\n")


def read_split(path):
    train, val = [], []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        stem, tag = line.split()
        (train if tag == "train" else val).append(stem)
    return train, val


# ---------------------------------------------------------------------------
# Dataset directory assembly
# ---------------------------------------------------------------------------

def synth_dataset(
    root,
    count: int,
    presets=("b32_f40", "b64_f28"),
    seed: int = 0,
    split_fraction: float = 0.8,
    scene_kw: dict | None = None,
) -> dict:
    """Generate `count` scans (cycling sensor presets) in the standard layout.

    Layout: ``<root>/clouds/*.bin``, ``<root>/labels/*.label``, ``remap.txt``
    (identity over the five classes), ``split.txt``.
    """
    root = Path(root)
    (root / "clouds").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    scene_kw = scene_kw or {}
    stems = []
    hist = np.zeros(len(CLASS_NAMES), dtype=np.int64)
    for i in range(count):
        preset = presets[i % len(presets)]
        cfg = SceneConfig.from_preset(preset, rng_seed=int(seed) * 100_000 + i, **scene_kw)
        cloud = synth_scan(cfg)
        stem = f"{i:05d}_{preset}"
        save_cloud_pair(cloud, root / "clouds" / f"{stem}.bin", root / "labels" / f"{stem}.label")
        hist += np.bincount(cloud.labels, minlength=len(CLASS_NAMES))
        stems.append(stem)
    write_remap(root / "remap.txt", {c: c for c in range(len(CLASS_NAMES))})
    train, val = make_split(stems, split_fraction, seed)
    write_split(root / "split.txt", train, val)
    return {"stems": stems, "train": train, "val": val, "histogram": hist.tolist()}


def load_dataset_item(root, stem: str) -> LabeledPointCloud:
    root = Path(root)
    remap = read_remap(root / "remap.txt")
    return load_kitti_pair(
        root / "clouds" / f"{stem}.bin", root / "labels" / f"{stem}.label", remap
    )
