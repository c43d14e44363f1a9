"""Distribution metrics for generated vs. reference lidar point clouds.

Chamfer distance follows the squared-nearest-neighbor sum form; JSD and MMD
operate on voxelized clouds (JSD on the aggregate occupancy distribution,
MMD on occupied-voxel centers); the Frechet feature distance compares
Gaussian fits of encoder features, with the trained denoiser's bottleneck
standing in for a pretrained perceptual backbone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.spatial import cKDTree

from .errors import ValidationError


def _as_points(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValidationError(f"expected (N, 3) points, got shape {arr.shape}")
    return arr


def chamfer(x, y) -> float:
    """Sum of squared nearest-neighbor distances in both directions."""
    xp, yp = _as_points(x), _as_points(y)
    if len(xp) == 0 or len(yp) == 0:
        raise ValidationError("chamfer distance requires non-empty point sets")
    d_xy = cKDTree(yp).query(xp, k=1)[0]
    d_yx = cKDTree(xp).query(yp, k=1)[0]
    return float((d_xy**2).sum() + (d_yx**2).sum())


def chamfer_mean(x, y) -> float:
    """Mean-normalized convenience form: per-direction means, summed."""
    xp, yp = _as_points(x), _as_points(y)
    if len(xp) == 0 or len(yp) == 0:
        raise ValidationError("chamfer distance requires non-empty point sets")
    d_xy = cKDTree(yp).query(xp, k=1)[0]
    d_yx = cKDTree(xp).query(yp, k=1)[0]
    return float((d_xy**2).mean() + (d_yx**2).mean())


@dataclass(frozen=True)
class VoxelSpec:
    """Half-open voxelization box: cell i covers [min + i*size, min + (i+1)*size)."""

    bounds_min: tuple[float, float, float] = (-80.0, -80.0, -3.0)
    bounds_max: tuple[float, float, float] = (80.0, 80.0, 8.0)
    resolution: tuple[int, int, int] = (64, 64, 16)

    def __post_init__(self):
        if any(r < 1 for r in self.resolution):
            raise ValidationError("voxel resolution must be positive")
        if any(a >= b for a, b in zip(self.bounds_min, self.bounds_max)):
            raise ValidationError("voxel bounds_min must be below bounds_max")

    @property
    def cell_size(self) -> np.ndarray:
        lo = np.array(self.bounds_min)
        hi = np.array(self.bounds_max)
        return (hi - lo) / np.array(self.resolution, dtype=np.float64)


@dataclass
class VoxelGrid:
    counts: np.ndarray
    dropped: int
    spec: VoxelSpec


def voxelize(points, spec: VoxelSpec = VoxelSpec()) -> VoxelGrid:
    """Per-cell point counts; out-of-bounds points are dropped and counted."""
    pts = _as_points(points) if len(points) else np.zeros((0, 3))
    lo = np.array(spec.bounds_min)
    res = np.array(spec.resolution, dtype=np.int64)
    idx = np.floor((pts - lo) / spec.cell_size).astype(np.int64)
    inside = ((idx >= 0) & (idx < res)).all(axis=1)
    counts = np.zeros(spec.resolution, dtype=np.int64)
    if inside.any():
        kept = idx[inside]
        flat = np.ravel_multi_index((kept[:, 0], kept[:, 1], kept[:, 2]), spec.resolution)
        counts.reshape(-1)[:] = np.bincount(flat, minlength=counts.size)
    return VoxelGrid(counts, int((~inside).sum()), spec)


def occupied_centers(points, spec: VoxelSpec = VoxelSpec(), cap: int = 4096) -> np.ndarray:
    """Centers of occupied voxels, deterministically thinned to at most cap.

    Thinning picks evenly spaced entries of the (z, y, x)-ordered center
    list, which keeps the subset spatially stratified and reproducible.
    """
    grid = voxelize(points, spec)
    occ = np.argwhere(grid.counts > 0)
    if len(occ) == 0:
        return np.zeros((0, 3))
    centers = np.array(spec.bounds_min) + (occ + 0.5) * spec.cell_size
    if cap and len(centers) > cap:
        pick = np.floor(np.linspace(0, len(centers) - 1, cap)).astype(np.int64)
        centers = centers[np.unique(pick)]
    return centers


def _aggregate_distribution(clouds, spec: VoxelSpec) -> np.ndarray:
    counts = np.zeros(spec.resolution, dtype=np.int64)
    dropped = 0
    for cloud in clouds:
        g = voxelize(cloud, spec)
        counts += g.counts
        dropped += g.dropped
    total = counts.sum()
    if total == 0:
        raise ValidationError("all points fall outside the voxel grid")
    return counts.reshape(-1) / float(total)


def jsd(clouds_a, clouds_b, spec: VoxelSpec = VoxelSpec()) -> float:
    """Jensen-Shannon divergence (nats) between aggregate voxel occupancies.

    Counts are pooled across each set before normalizing (the marginal
    distribution), then JSD = KL(P||M)/2 + KL(Q||M)/2 with M the midpoint;
    0*log(0) terms are 0 and the value lies in [0, ln 2].
    """
    if not len(clouds_a) or not len(clouds_b):
        raise ValidationError("jsd requires two non-empty sets of clouds")
    p = _aggregate_distribution(clouds_a, spec)
    q = _aggregate_distribution(clouds_b, spec)
    terms = []
    for i in np.nonzero(p + q)[0]:
        pi, qi = p[i], q[i]
        m = pi + qi
        if pi > 0:
            terms.append(0.5 * pi * math.log(2.0 * pi / m))
        if qi > 0:
            terms.append(0.5 * qi * math.log(2.0 * qi / m))
    return math.fsum(terms)


def mmd(
    gen_clouds, ref_clouds, spec: VoxelSpec = VoxelSpec(), cap: int = 4096
) -> float:
    """Mean over reference clouds of the minimum Chamfer distance (on
    occupied-voxel centers) to any generated cloud."""
    if not len(gen_clouds) or not len(ref_clouds):
        raise ValidationError("mmd requires two non-empty sets of clouds")
    gen_centers = [occupied_centers(c, spec, cap) for c in gen_clouds]
    ref_centers = [occupied_centers(c, spec, cap) for c in ref_clouds]
    if any(len(c) == 0 for c in gen_centers + ref_centers):
        raise ValidationError("a cloud has no occupied voxels inside the grid")
    total = 0.0
    for y in ref_centers:
        total += min(chamfer(x, y) for x in gen_centers)
    return total / len(ref_centers)


@dataclass
class FeatureSet:
    vectors: np.ndarray
    extractor_id: str = ""

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ValidationError("feature vectors must be (N, D)")
        if not np.isfinite(self.vectors).all():
            raise ValidationError("feature vectors contain non-finite entries")


def frechet_distance(a, b, jitter: float = 1e-6) -> float:
    """Gaussian Frechet distance between two feature sets.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), with the matrix
    square root computed from the symmetric product S_a^(1/2) S_b S_a^(1/2)
    and a diagonal jitter guarding rank-deficient covariances.
    """
    va = a.vectors if isinstance(a, FeatureSet) else np.asarray(a, dtype=np.float64)
    vb = b.vectors if isinstance(b, FeatureSet) else np.asarray(b, dtype=np.float64)
    if va.ndim != 2 or vb.ndim != 2 or va.shape[1] != vb.shape[1]:
        raise ValidationError(
            f"feature dimensions differ: {va.shape} vs {vb.shape}"
        )
    if len(va) < 2 or len(vb) < 2:
        raise ValidationError("frechet distance needs at least 2 samples per set")
    mu_a, mu_b = va.mean(axis=0), vb.mean(axis=0)
    d = va.shape[1]
    eye = np.eye(d)
    cov_a = np.cov(va, rowvar=False).reshape(d, d) + jitter * eye
    cov_b = np.cov(vb, rowvar=False).reshape(d, d) + jitter * eye

    vals_a, vecs_a = np.linalg.eigh(cov_a)
    sqrt_a = (vecs_a * np.sqrt(np.clip(vals_a, 0.0, None))) @ vecs_a.T
    inner = sqrt_a @ cov_b @ sqrt_a
    inner = (inner + inner.T) / 2.0
    vals = np.linalg.eigvalsh(inner)
    trace_sqrt = np.sqrt(np.clip(vals, 0.0, None)).sum()

    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt)


@torch.no_grad()
def extract_features(
    model, images: np.ndarray, batch_size: int = 16, extractor_id: str = ""
) -> FeatureSet:
    """Bottleneck features of normalized images (N, 2, H, W).

    Runs the encoder at step 0 with the null condition and global-average
    pools the bottleneck map, giving D = bottleneck channel count.
    """
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim != 4 or arr.shape[1] != 2:
        raise ValidationError(f"expected (N, 2, H, W) images, got {arr.shape}")
    dtype = next(model.parameters()).dtype
    feats = []
    for start in range(0, len(arr), batch_size):
        x = torch.from_numpy(arr[start : start + batch_size]).to(dtype)
        out = model(x, 0, None)
        feats.append(out.latent.mean(dim=(2, 3)).cpu().numpy())
    return FeatureSet(np.concatenate(feats, axis=0), extractor_id)


@dataclass
class MetricsReport:
    """Evaluation summary plus the provenance needed to reproduce it."""

    cd_mean: float | None = None
    cd_median: float | None = None
    cd_mean_normalized: float | None = None
    jsd: float | None = None
    mmd: float | None = None
    ffd: float | None = None
    provenance: dict = field(default_factory=dict)

    def rows(self) -> list[tuple[str, str]]:
        out = []
        for key in ("cd_mean", "cd_median", "cd_mean_normalized", "jsd", "mmd", "ffd"):
            val = getattr(self, key)
            if val is not None:
                out.append((key, repr(float(val))))
        for key in sorted(self.provenance):
            out.append((f"provenance.{key}", str(self.provenance[key])))
        return out
