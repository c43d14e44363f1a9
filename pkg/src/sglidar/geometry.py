"""Spherical projection between 3D lidar point clouds and 2D range images.

Conventions:
  * Point clouds are in the sensor frame (origin at the lidar center), the
    same frame SemanticKITTI scans use.
  * Range images are (H, W) grids; row v=0 is the lowest elevation beam,
    column u=0 is azimuth -pi. Empty pixels hold range 0 and valid=False.
  * Stored ranges are float32 (the on-disk tensor dtype); index math and
    angle math run in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class SensorSpec:
    """Geometry of the simulated spinning lidar."""

    width: int
    height: int
    fov_up_deg: float
    fov_down_deg: float
    r_min: float
    r_max: float
    mount_height: float = 1.8

    def __post_init__(self):
        if self.width < 4 or self.width % 2 != 0:
            raise ValidationError(f"width must be >= 4 and even, got {self.width}")
        if self.height < 2:
            raise ValidationError(f"height must be >= 2, got {self.height}")
        if not self.fov_down_deg < self.fov_up_deg:
            raise ValidationError("fov_down must be below fov_up")
        if not 0 < self.r_min < self.r_max:
            raise ValidationError("need 0 < r_min < r_max")

    @property
    def phi_min(self) -> float:
        return math.radians(self.fov_down_deg)

    @property
    def phi_max(self) -> float:
        return math.radians(self.fov_up_deg)

    @property
    def phi_span(self) -> float:
        return self.phi_max - self.phi_min

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width


@dataclass
class PointCloud:
    """Points (N, 3) in meters, with optional per-point labels/intensity."""

    points: np.ndarray
    labels: np.ndarray | None = None
    intensity: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int32).reshape(-1)
            if len(self.labels) != n:
                raise ValidationError(
                    f"labels length {len(self.labels)} != point count {n}"
                )
        if self.intensity is not None:
            self.intensity = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
            if len(self.intensity) != n:
                raise ValidationError(
                    f"intensity length {len(self.intensity)} != point count {n}"
                )

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class RangeImage:
    """Per-pixel first-return distance; 0 marks empty pixels."""

    range: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.range = np.asarray(self.range, dtype=np.float32)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.range.shape != self.valid.shape or self.range.ndim != 2:
            raise ValidationError("range and valid must be equal-shape 2D grids")

    @property
    def shape(self) -> tuple[int, int]:
        return self.range.shape


@dataclass
class SemanticMap:
    """Per-pixel class ids in [0, num_classes); 0 is reserved for empty."""

    classes: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.classes = np.asarray(self.classes, dtype=np.int32)
        if self.classes.ndim != 2:
            raise ValidationError("classes must be a 2D grid")
        if self.num_classes < 1:
            raise ValidationError("num_classes must be >= 1")
        if self.classes.size and (
            self.classes.min() < 0 or self.classes.max() >= self.num_classes
        ):
            raise ValidationError("class ids must lie in [0, num_classes)")

    @property
    def shape(self) -> tuple[int, int]:
        return self.classes.shape

    def one_hot(self) -> np.ndarray:
        """(K, H, W) float32 indicator tensor, channel k == (classes == k)."""
        k = np.arange(self.num_classes, dtype=np.int32)
        return (self.classes[None, :, :] == k[:, None, None]).astype(np.float32)


@dataclass
class NormalizedImage:
    """Diffusion-space encoding: channel 0 range in [-1, 1], channel 1 occupancy.

    Held in float64 so normalize/denormalize round-trips float32 ranges
    exactly; sampler outputs may exceed [-1, 1].
    """

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[0] != 2:
            raise ValidationError("data must be (2, H, W)")


def project(
    cloud: PointCloud, sensor: SensorSpec, num_classes: int | None = None
) -> tuple[RangeImage, SemanticMap]:
    """Spherically project a point cloud onto the sensor's (H, W) grid.

    Pixel (v, u) of a point: u = floor(W/(2*pi) * (theta + pi)) clamped to
    [0, W-1], v = floor(H/phi_span * (phi - phi_min)) clamped to [0, H-1].
    Points outside the elevation FOV or the [r_min, r_max] gate are dropped.
    When several points land on one pixel the nearest return wins (ties
    broken by label so the result is independent of input order).
    """
    if len(cloud) == 0:
        raise ValidationError("cannot project an empty point cloud")
    pts = cloud.points
    bad = ~np.isfinite(pts).all(axis=1)
    if bad.any():
        idx = int(np.argmax(bad))
        raise ValidationError(f"non-finite coordinate at point index {idx}")

    if num_classes is None:
        num_classes = int(cloud.labels.max()) + 1 if cloud.labels is not None else 1
    if cloud.labels is not None and cloud.labels.size:
        if cloud.labels.min() < 0 or cloud.labels.max() >= num_classes:
            raise ValidationError("point labels must lie in [0, num_classes)")

    h, w = sensor.shape
    r64 = np.sqrt((pts * pts).sum(axis=1))
    # Quantize to the storage dtype first so every gate below sees exactly
    # the value the image will hold.
    r32 = r64.astype(np.float32)
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = np.arcsin(np.clip(pts[:, 2] / np.where(r64 > 0, r64, 1.0), -1.0, 1.0))
    theta = np.arctan2(pts[:, 1], pts[:, 0])

    keep = (
        (r32 >= sensor.r_min)
        & (r32 <= sensor.r_max)
        & (phi >= sensor.phi_min)
        & (phi <= sensor.phi_max)
    )
    labels = (
        cloud.labels[keep]
        if cloud.labels is not None
        else np.zeros(int(keep.sum()), dtype=np.int32)
    )
    r32 = r32[keep]
    u = np.floor((w / (2.0 * math.pi)) * (theta[keep] + math.pi)).astype(np.int64)
    v = np.floor((h / sensor.phi_span) * (phi[keep] - sensor.phi_min)).astype(np.int64)
    u = np.clip(u, 0, w - 1)
    v = np.clip(v, 0, h - 1)

    rng_img = np.zeros((h, w), dtype=np.float32)
    valid = np.zeros((h, w), dtype=bool)
    cls = np.zeros((h, w), dtype=np.int32)
    if r32.size:
        pix = v * w + u
        order = np.lexsort((labels, r32, pix))
        pix_sorted = pix[order]
        first = np.ones(len(pix_sorted), dtype=bool)
        first[1:] = pix_sorted[1:] != pix_sorted[:-1]
        win = order[first]
        rng_img.reshape(-1)[pix[win]] = r32[win]
        valid.reshape(-1)[pix[win]] = True
        cls.reshape(-1)[pix[win]] = labels[win]

    return RangeImage(rng_img, valid), SemanticMap(cls, num_classes)


def unproject(img: RangeImage, sem: SemanticMap, sensor: SensorSpec) -> PointCloud:
    """Emit one point per valid pixel, placed at the pixel-center angles.

    Pixel centers re-quantize to the same pixel under :func:`project`, so
    project(unproject(R)) reproduces R exactly.
    """
    if img.shape != sem.shape:
        raise ValidationError(f"shape mismatch: image {img.shape} vs map {sem.shape}")
    if img.shape != sensor.shape:
        raise ValidationError(
            f"shape mismatch: image {img.shape} vs sensor {sensor.shape}"
        )
    h, w = sensor.shape
    vv, uu = np.nonzero(img.valid)
    r = img.range[vv, uu].astype(np.float64)
    theta = (uu + 0.5) * (2.0 * math.pi / w) - math.pi
    phi = sensor.phi_min + (vv + 0.5) * (sensor.phi_span / h)
    cos_phi = np.cos(phi)
    pts = np.stack(
        [r * cos_phi * np.cos(theta), r * cos_phi * np.sin(theta), r * np.sin(phi)],
        axis=1,
    )
    return PointCloud(pts, labels=sem.classes[vv, uu].copy())


def normalize(
    img: RangeImage, sem: SemanticMap, sensor: SensorSpec
) -> tuple[NormalizedImage, np.ndarray]:
    """Encode a range image for diffusion; also returns the (K, H, W) one-hot map.

    Channel 0: 2*r/r_max - 1 on valid pixels, -1 elsewhere.
    Channel 1: +1 valid, -1 empty.
    """
    if img.shape != sem.shape:
        raise ValidationError(f"shape mismatch: image {img.shape} vs map {sem.shape}")
    r = img.range.astype(np.float64)
    c0 = np.where(img.valid, 2.0 * r / sensor.r_max - 1.0, -1.0)
    c1 = np.where(img.valid, 1.0, -1.0)
    return NormalizedImage(np.stack([c0, c1])), sem.one_hot()


def denormalize(x: NormalizedImage, sensor: SensorSpec) -> RangeImage:
    """Invert :func:`normalize`, accepting (possibly overshooting) sampler output.

    A pixel is valid iff its occupancy channel is positive and its decoded
    range (clamped to [0, r_max]) lands inside the sensor's range gate.
    """
    c0 = x.data[0]
    c1 = x.data[1]
    r = np.clip((c0 + 1.0) * (sensor.r_max / 2.0), 0.0, sensor.r_max)
    r32 = r.astype(np.float32)
    valid = (c1 > 0) & (r32 >= sensor.r_min) & (r32 <= sensor.r_max)
    return RangeImage(np.where(valid, r32, np.float32(0.0)), valid)


def quantization_bound(sensor: SensorSpec, r: np.ndarray | float) -> np.ndarray:
    """Analytic bound on the position error introduced by pixel quantization.

    Snapping a point at range r to its pixel-center angles moves it by at
    most half a pixel in each angle, which is well inside
    r * (azimuth pixel width + elevation pixel height); the float32 rounding
    of r itself is orders of magnitude smaller.
    """
    angular = 2.0 * math.pi / sensor.width + sensor.phi_span / sensor.height
    return np.asarray(r, dtype=np.float64) * angular


def read_kitti_scan(bin_path: str | Path, label_path: str | Path | None = None) -> PointCloud:
    """Parse a SemanticKITTI velodyne scan (and optional .label file).

    The .bin file is consecutive little-endian float32 (x, y, z, intensity)
    records; each .label word is uint32 with the semantic class in the low
    16 bits (instance id in the high 16, discarded here).
    """
    raw = Path(bin_path).read_bytes()
    if len(raw) % 16 != 0:
        raise ValidationError(
            f"{bin_path}: size {len(raw)} is not a multiple of 16 bytes"
        )
    rec = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    labels = None
    if label_path is not None:
        lraw = Path(label_path).read_bytes()
        if len(lraw) % 4 != 0:
            raise ValidationError(f"{label_path}: truncated label file")
        words = np.frombuffer(lraw, dtype="<u4")
        if len(words) != len(rec):
            raise ValidationError(
                f"label count {len(words)} != point count {len(rec)}"
            )
        labels = (words & np.uint32(0xFFFF)).astype(np.int32)
    return PointCloud(
        rec[:, :3].astype(np.float64),
        labels=labels,
        intensity=rec[:, 3].astype(np.float64),
    )


def write_ply(cloud: PointCloud, path: str | Path) -> None:
    """Write an ASCII PLY with x/y/z (and label when present) per vertex."""
    if len(cloud) == 0:
        raise ValidationError("refusing to write an empty point cloud")
    has_labels = cloud.labels is not None
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if has_labels:
        lines.append("property int label")
    lines.append("end_header")
    for i, p in enumerate(cloud.points):
        row = f"{p[0]:.8g} {p[1]:.8g} {p[2]:.8g}"
        if has_labels:
            row += f" {int(cloud.labels[i])}"
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n")
