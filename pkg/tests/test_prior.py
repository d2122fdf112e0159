"""Appearance noise prior: training noise, forward process, initial noise."""

import math

import numpy as np
import pytest

from vidprior.evaluate.verify import suite_moments
from vidprior.prior import (
    AppearancePrior,
    VideoClip,
    fork_rng,
    initial_sampling_noise,
    make_rng,
    make_training_noise,
    q_sample,
    rng_from_state,
    rng_state,
    shift_noise,
)
from vidprior.schedule import linear_schedule

SHAPE = (3, 2, 2, 2)  # N, C, H, W


def ks_statistic(x):
    """Two-sided Kolmogorov-Smirnov distance to N(0, 1)."""
    x = np.sort(np.asarray(x).ravel())
    n = len(x)
    cdf = 0.5 * (1 + np.vectorize(math.erf)(x / math.sqrt(2)))
    return max(np.max(np.arange(1, n + 1) / n - cdf), np.max(cdf - np.arange(n) / n))


def test_prior_validation():
    with pytest.raises(ValueError):
        AppearancePrior(-0.1, 0.0)
    with pytest.raises(ValueError):
        AppearancePrior(0.0, -1e-9)
    assert AppearancePrior(0.03, 0.02).sampling_strength == pytest.approx(0.05)


def test_video_clip_center():
    clip = VideoClip(np.arange(9.0)[:, None, None, None] * np.ones((9, 1, 2, 2)))
    assert clip.center_index == 4 and clip.center_frame[0, 0, 0] == 4.0
    assert clip.first_frame[0, 0, 0] == 0 and clip.last_frame[0, 0, 0] == 8


def test_training_noise_vanilla_and_zero_frame():
    rng = make_rng(0)
    eps_n = rng.standard_normal(SHAPE)
    z_c = rng.standard_normal(SHAPE[1:])
    assert np.array_equal(make_training_noise(eps_n, z_c, 0.0), eps_n)
    assert np.array_equal(make_training_noise(eps_n, np.zeros(SHAPE[1:]), 0.7), eps_n)


def test_training_noise_broadcasts_center_frame():
    z_c = np.random.default_rng(0).normal(size=SHAPE[1:])
    out = make_training_noise(np.zeros(SHAPE), z_c, 0.5)
    for i in range(SHAPE[0]):
        np.testing.assert_array_equal(out[i], 0.5 * z_c)


def test_training_noise_monte_carlo_mean():
    rng = make_rng(1)
    z_c = rng.standard_normal(SHAPE[1:])
    draws = 100_000
    eps = make_training_noise(rng.standard_normal((draws,) + SHAPE), np.broadcast_to(z_c, (draws,) + z_c.shape), 0.03)
    z = (eps.mean(axis=0) - 0.03 * z_c[None]) / (1 / math.sqrt(draws))
    assert np.abs(z).max() < 3 * 1.6  # per element; 24 elements, allow for the max over them
    assert abs(z.mean()) * math.sqrt(z.size) < 3


def test_training_noise_shape_errors():
    with pytest.raises(ValueError):
        make_training_noise(np.zeros(SHAPE), np.zeros((3, 2, 2)), 0.1)
    with pytest.raises(ValueError):
        make_training_noise(np.zeros((2, 2)), np.zeros((2,)), 0.1)


def test_q_sample_formula_and_limit():
    s = linear_schedule()
    rng = make_rng(2)
    z0, eps = rng.standard_normal(SHAPE), rng.standard_normal(SHAPE)
    for t in (1, 500, 1000):
        ab = s.alpha_bar(t)
        np.testing.assert_allclose(q_sample(z0, t, eps, s), math.sqrt(ab) * z0 + math.sqrt(1 - ab) * eps, rtol=1e-14)
    dev = np.linalg.norm(q_sample(z0, 1, eps, s) - z0) / np.linalg.norm(z0)
    assert dev < 2 * math.sqrt(1 - s.alpha_bar(1)) * np.linalg.norm(eps) / np.linalg.norm(z0) + 1e-12
    with pytest.raises(ValueError):
        q_sample(z0, 0, eps, s)
    with pytest.raises(ValueError):
        q_sample(z0, 1001, eps, s)


def test_q_sample_per_clip_steps():
    s = linear_schedule()
    rng = make_rng(3)
    z0, eps = rng.standard_normal((2,) + SHAPE), rng.standard_normal((2,) + SHAPE)
    out = q_sample(z0, np.array([10, 900]), eps, s)
    np.testing.assert_allclose(out[1], q_sample(z0[1], 900, eps[1], s), rtol=1e-15)


def test_moment_suite():
    checks = suite_moments(seed=5)
    assert len(checks) == 24
    failed = [c.line() for c in checks if not c.passed]
    assert not failed, failed


def test_frames_are_uncorrelated():
    s = linear_schedule()
    rng = make_rng(4)
    z0 = rng.standard_normal(SHAPE)
    z_c = z0[1]
    draws = 50_000
    eps = make_training_noise(rng.standard_normal((draws,) + SHAPE), np.broadcast_to(z_c, (draws,) + z_c.shape), 0.1)
    zt = q_sample(np.broadcast_to(z0, eps.shape), 500, eps, s)
    a, b = zt[:, 0].reshape(draws, -1), zt[:, 2].reshape(draws, -1)
    cov = ((a - a.mean(0)) * (b - b.mean(0))).mean(0)
    se = (1 - s.alpha_bar(500)) / math.sqrt(draws)
    assert np.abs(cov).max() < 5 * se


def test_initial_noise_vanilla_is_standard_normal():
    z_c = np.ones((1, 10, 10))
    draws = initial_sampling_noise(z_c, 0.0, 0.0, make_rng(5), 1000)
    assert draws.shape == (1000, 1, 10, 10)
    assert ks_statistic(draws) < 1.628 / math.sqrt(draws.size)  # 1% critical value


def test_initial_noise_vanilla_is_plain_stream():
    z_c = np.random.default_rng(0).normal(size=(2, 3, 3))
    a = initial_sampling_noise(z_c, 0.0, 0.0, make_rng(6), 5)
    b = make_rng(6).standard_normal((5, 2, 3, 3))
    assert a.tobytes() == b.tobytes()


def test_initial_noise_mean_is_shifted():
    z_c = np.random.default_rng(1).normal(size=(2, 2, 2))
    draws = initial_sampling_noise(np.broadcast_to(z_c, (20_000,) + z_c.shape), 0.03, 0.02, make_rng(7), 3)
    mean = draws.mean(axis=0)
    for i in range(3):
        assert np.abs(mean[i] - 0.05 * z_c).max() < 4.5 / math.sqrt(20_000)


def test_initial_noise_deterministic():
    z_c = np.ones((2, 4, 4))
    a = initial_sampling_noise(z_c, 0.03, 0.02, make_rng(11), 9)
    b = initial_sampling_noise(z_c, 0.03, 0.02, make_rng(11), 9)
    assert a.tobytes() == b.tobytes()


def test_shift_noise_matches_initial_noise():
    z_c = np.random.default_rng(2).normal(size=(2, 3, 3))
    a = initial_sampling_noise(z_c, 0.1, 0.05, make_rng(3), 4)
    b = shift_noise(make_rng(3).standard_normal((4, 2, 3, 3)), z_c, 0.1 + 0.05)
    assert a.tobytes() == b.tobytes()


def test_rng_forks_and_state():
    root = make_rng(9)
    a, b = fork_rng(root, 0).standard_normal(4), fork_rng(root, 1).standard_normal(4)
    assert not np.array_equal(a, b)
    assert np.array_equal(fork_rng(make_rng(9), 1).standard_normal(4), b)
    r = make_rng(3)
    r.standard_normal(7)
    st = rng_state(r)
    assert np.array_equal(r.standard_normal(5), rng_from_state(st).standard_normal(5))
