import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sglidar.denoiser import Denoiser, DenoiserConfig
from sglidar.errors import ValidationError
from sglidar.metrics import (
    FeatureSet,
    VoxelSpec,
    chamfer,
    chamfer_mean,
    extract_features,
    frechet_distance,
    jsd,
    mmd,
    occupied_centers,
    voxelize,
)


def brute_force_chamfer(x, y):
    """O(N^2) reference with explicit loops."""
    total = 0.0
    for p in x:
        total += min(((p - q) ** 2).sum() for q in y)
    for q in y:
        total += min(((q - p) ** 2).sum() for p in x)
    return total


class TestChamfer:
    def test_self_distance_zero(self):
        pts = np.random.default_rng(0).normal(size=(20, 3))
        assert chamfer(pts, pts.copy()) == 0.0

    def test_two_point_arithmetic(self):
        x = np.array([[0.0, 0.0, 0.0]])
        y = np.array([[1.0, 0.0, 0.0]])
        assert chamfer(x, y) == pytest.approx(2.0, abs=1e-12)

    def test_matches_brute_force_on_200_instances(self):
        rng = np.random.Generator(np.random.Philox(key=60))
        for _ in range(200):
            n, m = rng.integers(2, 50), rng.integers(2, 50)
            x = rng.uniform(-10, 10, (n, 3))
            y = rng.uniform(-10, 10, (m, 3))
            assert chamfer(x, y) == pytest.approx(
                brute_force_chamfer(x, y), rel=1e-12
            )

    def test_symmetry(self):
        rng = np.random.Generator(np.random.Philox(key=61))
        x = rng.normal(size=(30, 3))
        y = rng.normal(size=(40, 3))
        assert chamfer(x, y) == chamfer(y, x)

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            chamfer(np.zeros((0, 3)), np.zeros((3, 3)))

    def test_mean_normalized_form(self):
        x = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        y = np.array([[0.0, 1.0, 0.0]])
        # x->y: 1 + 5; y->x: 1 ; mean form: (1+5)/2 + 1/1
        assert chamfer_mean(x, y) == pytest.approx(4.0, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(min_value=2, max_value=25),
    m=st.integers(min_value=2, max_value=25),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_chamfer_symmetric_and_nonnegative_property(n, m, seed):
    rng = np.random.Generator(np.random.Philox(key=seed))
    x = rng.normal(size=(n, 3))
    y = rng.normal(size=(m, 3))
    d = chamfer(x, y)
    assert d >= 0
    assert d == chamfer(y, x)


class TestVoxelize:
    def test_single_point_at_center(self):
        spec = VoxelSpec((-1, -1, -1), (1, 1, 1), (2, 2, 2))
        grid = voxelize(np.array([[0.5, 0.5, 0.5]]), spec)
        assert grid.counts.sum() == 1
        assert grid.counts[1, 1, 1] == 1
        assert grid.dropped == 0

    def test_boundary_half_open(self):
        spec = VoxelSpec((0, 0, 0), (2, 2, 2), (2, 2, 2))
        grid = voxelize(np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]), spec)
        # 1.0 lands in the upper cell; 2.0 == max is outside (half-open)
        assert grid.counts[1, 0, 0] == 1
        assert grid.dropped == 1

    def test_conservation(self):
        rng = np.random.Generator(np.random.Philox(key=62))
        pts = rng.uniform(-100, 100, (500, 3))
        grid = voxelize(pts)
        assert grid.counts.sum() + grid.dropped == 500

    def test_centers_cap_deterministic(self):
        rng = np.random.Generator(np.random.Philox(key=63))
        pts = rng.uniform(-60, 60, (6000, 3))
        a = occupied_centers(pts, cap=100)
        b = occupied_centers(pts, cap=100)
        assert len(a) <= 100
        np.testing.assert_array_equal(a, b)


class TestJsd:
    def test_identical_sets_zero(self):
        rng = np.random.Generator(np.random.Philox(key=64))
        clouds = [rng.uniform(-50, 50, (200, 3)) for _ in range(3)]
        assert jsd(clouds, [c.copy() for c in clouds]) == 0.0

    def test_disjoint_supports_ln2(self):
        a = [np.tile(np.array([[-10.0, 0.0, 0.0]]), (50, 1))]
        b = [np.tile(np.array([[10.0, 0.0, 0.0]]), (70, 1))]
        assert abs(jsd(a, b) - math.log(2.0)) < 1e-12

    def test_two_cell_hand_case(self):
        # P_A=(1,0) vs P_B=(.5,.5): 0.5*ln(4/3) + 0.25*ln(2/3) + 0.25*ln(2)
        expected = 0.5 * math.log(4 / 3) + 0.25 * math.log(2 / 3) + 0.25 * math.log(2)
        assert expected == pytest.approx(0.2157, abs=1e-4)
        spec = VoxelSpec((0, 0, 0), (2, 1, 1), (2, 1, 1))
        a = [np.tile(np.array([[0.5, 0.5, 0.5]]), (40, 1))]
        b = [
            np.concatenate(
                [
                    np.tile(np.array([[0.5, 0.5, 0.5]]), (20, 1)),
                    np.tile(np.array([[1.5, 0.5, 0.5]]), (20, 1)),
                ]
            )
        ]
        assert jsd(a, b, spec) == pytest.approx(expected, abs=1e-12)

    def test_symmetry_and_range(self):
        rng = np.random.Generator(np.random.Philox(key=65))
        a = [rng.uniform(-50, 50, (100, 3)) for _ in range(2)]
        b = [rng.uniform(-20, 70, (100, 3)) for _ in range(2)]
        v = jsd(a, b)
        assert v == jsd(b, a)
        assert 0.0 <= v <= math.log(2.0) + 1e-12

    def test_out_of_grid_error(self):
        with pytest.raises(ValidationError):
            jsd([np.array([[999.0, 0, 0]])], [np.array([[999.0, 0, 0]])])


class TestMmd:
    def test_identical_sets_zero(self):
        rng = np.random.Generator(np.random.Philox(key=66))
        clouds = [rng.uniform(-50, 50, (150, 3)) for _ in range(3)]
        assert mmd(clouds, [c.copy() for c in clouds]) == 0.0

    def test_takes_minimum_over_generated(self):
        spec = VoxelSpec((-8, -8, -8), (8, 8, 8), (16, 16, 16))
        y = np.array([[0.5, 0.5, 0.5]])
        x1 = np.array([[0.5, 0.5, 0.5]])  # same voxel as y
        x2 = np.array([[5.5, 5.5, 5.5]])
        got = mmd([x1, x2], [y], spec)
        assert got == pytest.approx(
            min(
                chamfer(
                    occupied_centers(x1, spec), occupied_centers(y, spec)
                ),
                chamfer(
                    occupied_centers(x2, spec), occupied_centers(y, spec)
                ),
            )
        )
        assert got == 0.0

    def test_generated_order_irrelevant(self):
        rng = np.random.Generator(np.random.Philox(key=67))
        gen = [rng.uniform(-40, 40, (80, 3)) for _ in range(4)]
        ref = [rng.uniform(-40, 40, (80, 3)) for _ in range(3)]
        assert mmd(gen, ref) == mmd(gen[::-1], ref)


def exact_cov_samples(target_cov, n=64, seed=0):
    """Samples whose ddof=1 sample covariance equals target exactly."""
    d = target_cov.shape[0]
    rng = np.random.Generator(np.random.Philox(key=seed))
    x = rng.normal(size=(n, d))
    x -= x.mean(axis=0)
    cov = np.cov(x, rowvar=False)
    chol = np.linalg.cholesky(cov)
    white = x @ np.linalg.inv(chol).T
    return white @ np.linalg.cholesky(target_cov).T


class TestFrechet:
    def test_identical_sets(self):
        rng = np.random.Generator(np.random.Philox(key=68))
        v = rng.normal(size=(50, 8))
        assert abs(frechet_distance(v, v.copy())) < 1e-8

    def test_mean_shift_limit(self):
        rng = np.random.Generator(np.random.Philox(key=69))
        d = np.array([1.0, -2.0, 0.5, 0.0])
        a = rng.normal(size=(10_000, 4))
        b = rng.normal(size=(10_000, 4)) + d
        got = frechet_distance(a, b)
        # ||d||^2 = 5.25; Tr terms vanish; sampling error ~ O(1/sqrt(N))
        assert got == pytest.approx(float(d @ d), abs=0.15)

    def test_diagonal_closed_form(self):
        # diag(1,4) vs diag(4,1), equal means: trace term = 10 - 2*(2+2) = 2
        a = exact_cov_samples(np.diag([1.0, 4.0]), seed=1)
        b = exact_cov_samples(np.diag([4.0, 1.0]), seed=2)
        assert frechet_distance(a, b) == pytest.approx(2.0, abs=1e-4)

    def test_rotation_invariance(self):
        rng = np.random.Generator(np.random.Philox(key=70))
        a = rng.normal(size=(200, 6))
        b = rng.normal(size=(200, 6)) * 1.5 + 0.3
        q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
        base = frechet_distance(a, b)
        rotated = frechet_distance(a @ q, b @ q)
        assert rotated == pytest.approx(base, rel=1e-6)

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            frechet_distance(np.zeros((5, 3)), np.zeros((5, 4)))

    def test_needs_two_samples(self):
        with pytest.raises(ValidationError):
            frechet_distance(np.zeros((1, 3)), np.zeros((5, 3)))


class TestExtractFeatures:
    def _model(self):
        cfg = DenoiserConfig(
            num_classes=4, base_channels=8, channel_multipliers=(1, 2),
            blocks_per_level=1, norm_groups=4, time_dim=16, projector_hidden=8,
        )
        model = Denoiser(cfg)
        model.init_parameters(0)
        model.eval()
        return model, cfg

    def test_identical_inputs_identical_features(self):
        model, _ = self._model()
        imgs = np.random.default_rng(0).normal(size=(3, 2, 8, 16)).astype(np.float32)
        a = extract_features(model, imgs, extractor_id="t")
        b = extract_features(model, imgs, extractor_id="t")
        np.testing.assert_array_equal(a.vectors, b.vectors)

    def test_feature_dim_is_bottleneck_width(self):
        model, cfg = self._model()
        imgs = np.zeros((2, 2, 8, 16), np.float32)
        feats = extract_features(model, imgs)
        assert feats.vectors.shape == (2, cfg.bottleneck_channels)

    def test_default_config_dim_128(self):
        assert DenoiserConfig(num_classes=8).bottleneck_channels == 32 * 4

    def test_featureset_validation(self):
        with pytest.raises(ValidationError):
            FeatureSet(np.array([np.inf, 1.0]).reshape(1, 2) * np.nan)
