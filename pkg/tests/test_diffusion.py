import math

import numpy as np
import pytest
import torch

from sglidar.denoiser import Denoiser, DenoiserConfig
from sglidar.diffusion import (
    NoiseSchedule,
    SamplerConfig,
    cfg_combine,
    ddim_grid,
    ddim_step,
    ddpm_step,
    linear_schedule,
    q_sample,
    sample,
    step_grid,
)
from sglidar.errors import ValidationError


def product_alpha_bar_oracle(T, beta_1, beta_T):
    """Independent direct-product evaluation with pure python floats."""
    out = [1.0]
    acc = 1.0
    for i in range(T):
        beta = beta_1 + (beta_T - beta_1) * i / (T - 1) if T > 1 else beta_1
        acc *= 1.0 - beta
        out.append(acc)
    return out


class TestSchedule:
    def test_default_schedule_values(self):
        sched = linear_schedule(1000, 1e-4, 0.02)
        oracle = product_alpha_bar_oracle(1000, 1e-4, 0.02)
        np.testing.assert_allclose(sched.alpha_bar, oracle, rtol=1e-12)
        assert sched.alpha_bar[1] == pytest.approx(0.9999, rel=1e-9)
        assert sched.alpha_bar[1000] == pytest.approx(4.04e-5, rel=1e-2)
        assert np.all(np.diff(sched.alpha_bar) < 0)

    def test_t1_schedule(self):
        sched = linear_schedule(1, 1e-4, 1e-4)
        assert sched.alpha_bar[1] == pytest.approx(1 - 1e-4, rel=1e-12)

    def test_all_values_in_unit_interval(self):
        sched = linear_schedule(500, 1e-4, 0.02)
        assert ((sched.beta[1:] > 0) & (sched.beta[1:] < 1)).all()
        assert ((sched.alpha_bar > 0) & (sched.alpha_bar <= 1)).all()

    def test_invalid_bounds(self):
        for bad in [(0, 0.01, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 0.1, 1.0)]:
            with pytest.raises(ValidationError):
                linear_schedule(*bad)

    def test_tampered_tables_rejected(self):
        sched = linear_schedule(10)
        bad = sched.alpha_bar.copy()
        bad[5] = bad[4] + 0.1
        with pytest.raises(ValidationError):
            NoiseSchedule(10, sched.beta, sched.alpha, bad)


class TestQSample:
    def test_zero_noise(self):
        sched = linear_schedule(100)
        x0 = np.ones((2, 4, 4))
        xt = q_sample(x0, 50, np.zeros_like(x0), sched)
        np.testing.assert_allclose(xt, math.sqrt(sched.alpha_bar[50]) * x0)

    def test_t1_boundary(self):
        sched = linear_schedule(1000, 1e-6, 1e-5)
        x0 = np.full((8,), 3.0)
        eps = np.ones(8)
        xt = q_sample(x0, 1, eps, sched)
        assert np.abs(xt - x0).max() <= math.sqrt(1 - sched.alpha_bar[1]) * 1.1 + 1e-9

    def test_monte_carlo_moments(self):
        # empirical mean -> sqrt(ab)*x0, var -> 1-ab, within 4 standard errors
        sched = linear_schedule(1000)
        t = 400
        n = 10_000
        rng = np.random.Generator(np.random.Philox(key=31))
        x0 = 0.7
        draws = q_sample(
            np.full(n, x0), t, rng.standard_normal(n), sched
        )
        ab = sched.alpha_bar[t]
        mean_se = math.sqrt((1 - ab) / n)
        assert abs(draws.mean() - math.sqrt(ab) * x0) < 4 * mean_se
        var = draws.var(ddof=1)
        var_se = (1 - ab) * math.sqrt(2.0 / (n - 1))
        assert abs(var - (1 - ab)) < 4 * var_se

    def test_shape_mismatch(self):
        sched = linear_schedule(10)
        with pytest.raises(ValidationError):
            q_sample(np.zeros(3), 5, np.zeros(4), sched)

    def test_exact_inversion_all_t(self):
        # recovering x0 from (x_t, true eps) is exact to 1e-10 relative
        sched = linear_schedule(1000)
        rng = np.random.Generator(np.random.Philox(key=32))
        x0 = rng.standard_normal(64)
        eps = rng.standard_normal(64)
        for t in (1, 2, 10, 250, 500, 999, 1000):
            xt = q_sample(x0, t, eps, sched)
            ab = sched.alpha_bar[t]
            rec = (xt - math.sqrt(1 - ab) * eps) / math.sqrt(ab)
            assert np.abs(rec - x0).max() / max(np.abs(x0).max(), 1) < 1e-10

    def test_per_sample_t_matches_scalar(self):
        sched = linear_schedule(100)
        x0 = torch.randn(4, 2, 8, 8, dtype=torch.float64)
        eps = torch.randn_like(x0)
        t = torch.tensor([3, 50, 77, 100])
        batched = q_sample(x0, t, eps, sched)
        for i, ti in enumerate(t.tolist()):
            single = q_sample(x0[i], ti, eps[i], sched)
            torch.testing.assert_close(batched[i], single)


class TestCfgCombine:
    def test_w0_identity_bitwise(self):
        a = np.array([1.0, -0.0, 2.5])
        b = np.array([9.0, 9.0, 9.0])
        out = cfg_combine(a, b, 0.0)
        assert out.tobytes() == a.tobytes()

    def test_equal_inputs_identity(self):
        a = np.linspace(-1, 1, 7)
        for w in (0.0, 0.5, 1.0, 3.0):
            np.testing.assert_allclose(cfg_combine(a, a.copy(), w), a, rtol=1e-12)

    def test_scalar_arithmetic(self):
        assert cfg_combine(np.array(2.0), np.array(1.0), 1.0) == 3.0

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            cfg_combine(np.zeros(3), np.zeros(4), 1.0)


class TestDdpmStep:
    def test_t1_returns_mean(self):
        sched = linear_schedule(100)
        x = np.ones(5)
        eps = np.zeros(5)
        out = ddpm_step(x, eps, 1, sched, np.full(5, 123.0))
        mu = x / math.sqrt(sched.alpha[1])
        np.testing.assert_allclose(out, mu)

    def test_true_eps_recovers_x0_in_mean(self):
        # the implied x0 estimate from a perfect eps is exact
        sched = linear_schedule(1000)
        rng = np.random.Generator(np.random.Philox(key=33))
        x0 = rng.standard_normal(32)
        eps = rng.standard_normal(32)
        t = 600
        xt = q_sample(x0, t, eps, sched)
        ab = sched.alpha_bar[t]
        x0_implied = (xt - math.sqrt(1 - ab) * eps) / math.sqrt(ab)
        np.testing.assert_allclose(x0_implied, x0, rtol=1e-10, atol=1e-12)

    def test_variance_matches_beta(self):
        sched = linear_schedule(1000)
        t = 500
        n = 10_000
        rng = np.random.Generator(np.random.Philox(key=34))
        x = np.zeros(n)
        eps = np.zeros(n)
        out = ddpm_step(x, eps, t, sched, rng.standard_normal(n))
        beta = sched.beta[t]
        se = beta * math.sqrt(2.0 / (n - 1))
        assert abs(out.var(ddof=1) - beta) < 4 * se


class TestDdimStep:
    def test_trajectory_self_consistency(self):
        sched = linear_schedule(1000)
        rng = np.random.Generator(np.random.Philox(key=35))
        x0 = rng.standard_normal(16)
        eps = rng.standard_normal(16)
        xt = q_sample(x0, 800, eps, sched)
        x_prev = ddim_step(xt, eps, 800, 300, sched)
        np.testing.assert_allclose(
            x_prev, q_sample(x0, 300, eps, sched), rtol=1e-10, atol=1e-12
        )

    def test_hop_to_zero_returns_x0_pred(self):
        sched = linear_schedule(1000)
        rng = np.random.Generator(np.random.Philox(key=36))
        x0 = rng.standard_normal(16)
        eps = rng.standard_normal(16)
        xt = q_sample(x0, 1000, eps, sched)
        out = ddim_step(xt, eps, 1000, 0, sched)
        np.testing.assert_allclose(out, x0, rtol=1e-9, atol=1e-10)

    def test_single_step_perfect_oracle(self):
        # one hop T -> 0 with the true eps recovers x0 to machine precision
        sched = linear_schedule(1000)
        rng = np.random.Generator(np.random.Philox(key=37))
        x0 = rng.standard_normal(100)
        eps = rng.standard_normal(100)
        xt = q_sample(x0, 1000, eps, sched)
        rec = ddim_step(xt, eps, 1000, 0, sched)
        assert np.abs(rec - x0).max() < 1e-10 * max(1.0, np.abs(x0).max())

    def test_invalid_order(self):
        sched = linear_schedule(100)
        with pytest.raises(ValidationError):
            ddim_step(np.zeros(2), np.zeros(2), 50, 50, sched)


class TestGrid:
    def test_endpoints_and_size(self):
        grid = ddim_grid(1000, 50)
        assert grid[0] == 1000 and grid[-1] == 1
        assert len(grid) == 50
        assert len(set(grid)) == 50
        assert all(a > b for a, b in zip(grid, grid[1:]))

    def test_single_step_grid(self):
        assert ddim_grid(1000, 1) == [1000]

    def test_full_grid(self):
        assert ddim_grid(10, 10) == list(range(10, 0, -1))

    def test_ddpm_step_grid(self):
        sched = linear_schedule(20)
        cfg = SamplerConfig(kind="ddpm", seed=0)
        assert step_grid(sched, cfg) == list(range(20, 0, -1))

    def test_steps_exceeding_T(self):
        sched = linear_schedule(10)
        with pytest.raises(ValidationError):
            step_grid(sched, SamplerConfig(kind="ddim", ddim_steps=20))


def tiny_model(num_classes=3, seed=0):
    cfg = DenoiserConfig(
        num_classes=num_classes, base_channels=8, channel_multipliers=(1, 2),
        blocks_per_level=1, norm_groups=4, time_dim=16, projector_hidden=8,
    )
    model = Denoiser(cfg)
    model.init_parameters(seed)
    model.eval()
    return model


class TestSampler:
    def test_ddim_deterministic(self):
        model = tiny_model()
        sched = linear_schedule(50)
        cfg = SamplerConfig(kind="ddim", ddim_steps=10, guidance_w=1.0, seed=4)
        cond = torch.zeros(2, 3, 8, 16)
        cond[:, 1] = 1.0
        a = sample(model, cond, sched, cfg, (2, 2, 8, 16))
        b = sample(model, cond, sched, cfg, (2, 2, 8, 16))
        assert torch.equal(a, b)

    def test_thread_count_invariance(self):
        model = tiny_model()
        sched = linear_schedule(50)
        cfg = SamplerConfig(kind="ddim", ddim_steps=10, guidance_w=1.0, seed=4)
        cond = torch.zeros(2, 3, 8, 16)
        old = torch.get_num_threads()
        try:
            torch.set_num_threads(1)
            a = sample(model, cond, sched, cfg, (2, 2, 8, 16))
            torch.set_num_threads(2)
            b = sample(model, cond, sched, cfg, (2, 2, 8, 16))
        finally:
            torch.set_num_threads(old)
        assert torch.equal(a, b)

    def test_w0_matches_conditional_only_loop(self):
        # at w=0 the guided sampler equals a conditional-only sampler exactly
        from sglidar.diffusion import step_grid as grid_fn
        from sglidar.rng import generator

        model = tiny_model()
        sched = linear_schedule(40)
        cfg = SamplerConfig(kind="ddim", ddim_steps=8, guidance_w=0.0, seed=11)
        cond = torch.zeros(1, 3, 8, 16)
        cond[:, 2] = 1.0
        got = sample(model, cond, sched, cfg, (1, 2, 8, 16))

        x = torch.from_numpy(
            generator(cfg.seed, "init").standard_normal((1, 2, 8, 16))
        ).to(torch.float32)
        grid = grid_fn(sched, cfg)
        with torch.no_grad():
            for i, t in enumerate(grid):
                eps = model(x, torch.tensor([t]), cond).eps
                t_prev = grid[i + 1] if i + 1 < len(grid) else 0
                x = ddim_step(x, eps, t, t_prev, sched)
        assert torch.equal(got, x)

    def test_null_condition_never_reads_cond(self):
        model = tiny_model()
        sched = linear_schedule(40)
        cfg = SamplerConfig(kind="ddim", ddim_steps=5, guidance_w=2.0, seed=3)
        out_null = sample(model, None, sched, cfg, (1, 2, 8, 16))
        zeros = torch.zeros(1, 3, 8, 16)
        out_zero = sample(model, zeros, sched, cfg, (1, 2, 8, 16))
        assert torch.allclose(out_null, out_zero, atol=1e-6)

    def test_ddpm_sampler_runs(self):
        model = tiny_model()
        sched = linear_schedule(20)
        cfg = SamplerConfig(kind="ddpm", seed=2)
        out = sample(model, None, sched, cfg, (1, 2, 8, 16))
        assert out.shape == (1, 2, 8, 16)
        assert torch.isfinite(out).all()
