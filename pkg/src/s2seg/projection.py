"""Pointcloud <-> spherical range image: projection, back-projection, rotation.

A cloud is projected by ``phi = atan2(y, x)`` (wrapped into [0, 2pi)) and
``theta = arccos(z / r)``; each point lands in the grid cell with the nearest
(theta, phi) center.  Within a cell the point with minimum range wins and
donates both range and label (nearest surface occludes); on exactly equal
range the smaller point index wins, so the reduction is order-independent.
Empty cells carry range 0, mask 0 and the IGNORE label.

The projection takes only a bandwidth: no beam count, field of view or
resolution enters the API, so scans from arbitrary sensors share one
representation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyCloud, OriginPoint, ShapeMismatch
from .sphere import S2Signal, make_s2_grid

__all__ = [
    "IGNORE",
    "LabeledPointCloud",
    "SphericalScan",
    "project",
    "back_project",
    "rotate_cloud",
    "rotation_rpy",
    "scan_to_input",
]

IGNORE = 255

_MIN_RANGE = 1e-6  # meters; points closer to the origin cannot be projected


@dataclass
class LabeledPointCloud:
    """3D points with per-point semantic class ids ({0..C-1} or IGNORE)."""

    points: np.ndarray                 # [N, 3] float64, meters
    labels: np.ndarray                 # [N] int32
    intensity: np.ndarray | None = None  # [N] carried but unused

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 3:
            raise ShapeMismatch(f"points must be [N, 3], got {p.shape}")
        lab = np.asarray(self.labels, dtype=np.int32)
        if lab.shape != (p.shape[0],):
            raise ShapeMismatch(
                f"labels must be [N] matching {p.shape[0]} points, got {lab.shape}"
            )
        if not np.all(np.isfinite(p)):
            raise ValueError("points contain non-finite coordinates")
        self.points = p
        self.labels = lab
        if self.intensity is not None:
            self.intensity = np.asarray(self.intensity, dtype=np.float64)

    def __len__(self) -> int:
        return self.points.shape[0]

    def ranges(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=1)


@dataclass
class SphericalScan:
    """Range/mask channels on the S2 grid plus cell labels and point->cell map."""

    signal: S2Signal                   # channel 0: range (m), channel 1: mask {0,1}
    cell_label: np.ndarray             # [2bw, 2bw] int32, IGNORE where mask == 0
    point_to_cell: np.ndarray          # [N, 2] (theta row, phi col) per input point

    @property
    def bw(self) -> int:
        return self.signal.bw

    @property
    def range(self) -> np.ndarray:
        return self.signal.values[0]

    @property
    def mask(self) -> np.ndarray:
        return self.signal.values[1]


def _cell_indices(theta: np.ndarray, phi: np.ndarray, bw: int):
    """Nearest-center cell indices; theta ties break toward the smaller row."""
    j = np.ceil(theta * (2 * bw) / np.pi - 1.0).astype(np.int64)
    j = np.clip(j, 0, 2 * bw - 1)
    k = np.ceil(phi * bw / np.pi - 0.5).astype(np.int64) % (2 * bw)
    return j, k


def project(cloud: LabeledPointCloud, bw) -> SphericalScan:
    """Project a cloud onto the bandwidth-bw spherical range image."""
    from .sphere import as_bandlimit

    bw = as_bandlimit(bw).bw
    if len(cloud) == 0:
        raise EmptyCloud("cannot project an empty cloud")
    r = cloud.ranges()
    if np.any(r <= _MIN_RANGE):
        raise OriginPoint(f"{int((r <= _MIN_RANGE).sum())} points within {_MIN_RANGE} m of the origin")
    x, y, z = cloud.points.T
    phi = np.arctan2(y, x) % (2 * np.pi)
    theta = np.arccos(np.clip(z / r, -1.0, 1.0))
    j, k = _cell_indices(theta, phi, bw)
    n = 2 * bw
    cell = j * n + k

    # min-range reduction, ties to the smaller point index
    idx = np.arange(len(cloud))
    order = np.lexsort((idx, r, cell))
    cell_sorted = cell[order]
    first = np.ones(len(cloud), dtype=bool)
    first[1:] = cell_sorted[1:] != cell_sorted[:-1]
    winners = order[first]

    rng_img = np.zeros((n, n))
    mask = np.zeros((n, n))
    labels = np.full((n, n), IGNORE, dtype=np.int32)
    jw, kw = j[winners], k[winners]
    rng_img[jw, kw] = r[winners]
    mask[jw, kw] = 1.0
    labels[jw, kw] = cloud.labels[winners]

    sig = S2Signal(make_s2_grid(bw), np.stack([rng_img, mask]))
    return SphericalScan(sig, labels, np.stack([j, k], axis=1))


def back_project(scan: SphericalScan, cell_classes: np.ndarray):
    """Transfer per-cell classes to points and rebuild the sampled cloud.

    Returns ``(point_labels, sampled_cloud)``: every original point receives
    the class of its recorded cell; the sampled cloud holds one point per
    masked cell at the cell-center direction and stored range, labeled by
    ``cell_classes``.
    """
    n = 2 * scan.bw
    cell_classes = np.asarray(cell_classes)
    if cell_classes.shape != (n, n):
        raise ShapeMismatch(f"cell_classes must be [{n}, {n}], got {cell_classes.shape}")
    j, k = scan.point_to_cell.T
    point_labels = cell_classes[j, k].astype(np.int32)

    grid = scan.signal.grid
    mj, mk = np.nonzero(scan.mask > 0)
    r = scan.range[mj, mk]
    th = grid.theta[mj]
    ph = grid.phi[mk]
    pts = np.stack(
        [r * np.cos(ph) * np.sin(th), r * np.sin(ph) * np.sin(th), r * np.cos(th)],
        axis=1,
    )
    sampled = LabeledPointCloud(pts, cell_classes[mj, mk].astype(np.int32))
    return point_labels, sampled


def _cos_sin(angle: float) -> tuple[float, float]:
    """cos/sin with exact values at multiples of pi/2 (keeps 180-degree sweeps exact)."""
    k = angle / (np.pi / 2)
    if k == np.round(k):
        q = int(np.round(k)) % 4
        return ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))[q]
    return float(np.cos(angle)), float(np.sin(angle))


def rotation_rpy(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Rotation matrix Rz(gamma) @ Ry(beta) @ Rx(alpha): roll, pitch, yaw."""
    ca, sa = _cos_sin(alpha)
    cb, sb = _cos_sin(beta)
    cg, sg = _cos_sin(gamma)
    rx = np.array([[1.0, 0, 0], [0, ca, -sa], [0, sa, ca]])
    ry = np.array([[cb, 0, sb], [0, 1.0, 0], [-sb, 0, cb]])
    rz = np.array([[cg, -sg, 0], [sg, cg, 0], [0, 0, 1.0]])
    return rz @ ry @ rx


def rotate_cloud(cloud: LabeledPointCloud, alpha: float, beta: float, gamma: float) -> LabeledPointCloud:
    """Rotate all points by Rz(gamma) Ry(beta) Rx(alpha); labels unchanged."""
    R = rotation_rpy(alpha, beta, gamma)
    return LabeledPointCloud(cloud.points @ R.T, cloud.labels.copy(), cloud.intensity)


def scan_to_input(scan: SphericalScan, r_max: float = 80.0) -> S2Signal:
    """Network input: channel 0 = range / r_max, channel 1 = occupancy mask."""
    vals = scan.signal.values.copy()
    vals[0] = vals[0] / r_max
    return S2Signal(scan.signal.grid, vals)
