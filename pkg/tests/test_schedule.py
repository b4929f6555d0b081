import numpy as np
import pytest
import torch

from latentseg.schedule import (
    NoisyLatent,
    Schedule,
    add_noise,
    build_schedule,
    ddpm_step,
    ddpm_step_to,
    one_step_denoise,
)
from oracles import oracle_alpha_bar

# frozen from a 50-digit product loop (mpmath): see oracle_alpha_bar for the float64 version
GOLDEN_SCALED_LINEAR_ABAR_999 = 0.0046600985130772404
GOLDEN_SCALED_LINEAR_ABAR_499 = 0.27766965045646781
GOLDEN_LINEAR_ABAR_999 = 4.0358297653756833e-05


def test_linear_first_alpha_bar_is_one_minus_beta0():
    s = build_schedule("linear", 1000, 1e-4, 0.02)
    assert s.alpha_bars[0] == pytest.approx(1 - 1e-4, abs=0)
    assert s.alpha_bars[0] == s.alphas[0]


def test_scaled_linear_matches_product_oracle():
    s = build_schedule("scaled_linear", 1000, 0.00085, 0.012)
    oracle = oracle_alpha_bar("scaled_linear", 1000, 0.00085, 0.012)
    assert s.alpha_bars[999] == pytest.approx(GOLDEN_SCALED_LINEAR_ABAR_999, rel=1e-12)
    assert s.alpha_bars[499] == pytest.approx(GOLDEN_SCALED_LINEAR_ABAR_499, rel=1e-12)
    np.testing.assert_allclose(s.alpha_bars, oracle, rtol=1e-12)


def test_linear_matches_product_oracle():
    s = build_schedule("linear", 1000, 1e-4, 0.02)
    oracle = oracle_alpha_bar("linear", 1000, 1e-4, 0.02)
    assert s.alpha_bars[999] == pytest.approx(GOLDEN_LINEAR_ABAR_999, rel=1e-12)
    np.testing.assert_allclose(s.alpha_bars, oracle, rtol=1e-12)


def test_single_step_degenerate_schedule():
    s = build_schedule("linear", 1, 0.5, 0.5)
    np.testing.assert_array_equal(s.betas, [0.5])
    np.testing.assert_array_equal(s.alpha_bars, [0.5])
    np.testing.assert_array_equal(s.sigmas, [0.0])


@pytest.mark.parametrize("kind", ["linear", "scaled_linear"])
def test_alpha_bar_strictly_decreasing(kind):
    s = build_schedule(kind)
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert np.all((s.betas > 0) & (s.betas < 1))


def test_sigma_matches_posterior_variance():
    s = build_schedule()
    t = 371
    expected = np.sqrt(s.betas[t] * (1 - s.alpha_bars[t - 1]) / (1 - s.alpha_bars[t]))
    assert s.sigmas[t] == pytest.approx(expected, rel=0)
    assert s.sigmas[0] == 0.0


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(T_train=0),
        dict(beta_start=0.0),
        dict(beta_start=0.5, beta_end=0.1),
        dict(beta_end=1.0),
        dict(kind="cosine"),
    ],
)
def test_build_schedule_rejects_bad_parameters(kwargs):
    base = dict(kind="linear", T_train=10, beta_start=1e-4, beta_end=0.02)
    base.update(kwargs)
    with pytest.raises(ValueError):
        build_schedule(**base)


def test_add_noise_zero_eps():
    s = build_schedule()
    x0 = np.random.default_rng(0).standard_normal((4, 8, 8))
    out = add_noise(x0, np.zeros_like(x0), 123, s)
    np.testing.assert_allclose(out.values, np.sqrt(s.alpha_bars[123]) * x0, rtol=1e-12)
    assert out.t == 123


def test_add_noise_pure_noise_limit():
    s = build_schedule()
    e = np.random.default_rng(1).standard_normal((4, 4))
    out = add_noise(np.zeros_like(e), e, 999, s)
    np.testing.assert_allclose(out.values, np.sqrt(1 - s.alpha_bars[999]) * e, rtol=1e-12)


def test_add_noise_identity_limit_when_alpha_bar_is_one():
    # hypothetical schedule with abar = 1 at t=0
    s = Schedule(
        T_train=1,
        betas=np.array([0.0]),
        alphas=np.array([1.0]),
        alpha_bars=np.array([1.0]),
        sigmas=np.array([0.0]),
    )
    x0 = np.arange(6.0).reshape(2, 3)
    eps = np.ones_like(x0)
    np.testing.assert_array_equal(add_noise(x0, eps, 0, s).values, x0)


def test_add_noise_shape_mismatch():
    s = build_schedule()
    with pytest.raises(ValueError, match="shape"):
        add_noise(np.zeros((2, 2)), np.zeros((3, 2)), 10, s)


def test_one_step_denoise_inverts_add_noise_double():
    s = build_schedule()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        t = int(rng.integers(0, 1000))
        x0 = rng.standard_normal((4, 8, 8))
        eps = rng.standard_normal((4, 8, 8))
        rec = one_step_denoise(add_noise(x0, eps, t, s), eps, s)
        worst = max(worst, np.abs(rec - x0).max())
    assert worst < 1e-12


def test_one_step_denoise_inverts_add_noise_single_precision():
    s = build_schedule()
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        t = int(rng.integers(0, 1000))
        x0 = rng.standard_normal((4, 8, 8)).astype(np.float32)
        eps = rng.standard_normal((4, 8, 8)).astype(np.float32)
        rec = one_step_denoise(add_noise(x0, eps, t, s), eps, s)
        worst = max(worst, np.abs(rec - x0).max())
    assert worst < 1e-5


def test_one_step_denoise_zero_eps_pred():
    s = build_schedule()
    x = np.full((2, 2), 3.0)
    out = one_step_denoise(NoisyLatent(x, 999), np.zeros_like(x), s)
    np.testing.assert_allclose(out, x / np.sqrt(s.alpha_bars[999]), rtol=1e-12)


def test_variance_law_monte_carlo():
    # Var(x_t) -> abar_t * Var(x0) + (1 - abar_t) for x0 ~ N(0, v)
    s = build_schedule()
    rng = np.random.default_rng(3)
    t = 600
    n = 40000
    v0 = 2.5
    x0 = rng.standard_normal(n) * np.sqrt(v0)
    eps = rng.standard_normal(n)
    xt = add_noise(x0, eps, t, s).values
    expected = s.alpha_bars[t] * v0 + (1 - s.alpha_bars[t])
    # 3-sigma tolerance for a variance estimate: sd ~ expected * sqrt(2/n)
    assert abs(xt.var() - expected) < 3 * expected * np.sqrt(2 / n)


def test_ddpm_step_identity_when_beta_zero():
    s = Schedule(
        T_train=3,
        betas=np.array([0.1, 0.0, 0.1]),
        alphas=np.array([0.9, 1.0, 0.9]),
        alpha_bars=np.array([0.9, 0.9, 0.81]),
        sigmas=np.array([0.0, 0.0, 0.1]),
    )
    x = np.random.default_rng(0).standard_normal((2, 2))
    eps_pred = np.random.default_rng(1).standard_normal((2, 2))
    out = ddpm_step(NoisyLatent(x, 1), eps_pred, np.zeros_like(x), s)
    np.testing.assert_allclose(out.values, x, rtol=1e-12)
    assert out.t == 0


def test_ddpm_step_closed_form_two_element_latent():
    # hand evaluation of the reverse-step formula on a 2-element latent
    s = build_schedule("linear", 10, 0.1, 0.3)
    t = 5
    x = np.array([1.0, -2.0])
    eps_pred = np.array([0.5, 0.25])
    alpha_t = s.alphas[t]
    abar_t = s.alpha_bars[t]
    expected = (x - (1 - alpha_t) / np.sqrt(1 - abar_t) * eps_pred) / np.sqrt(alpha_t)
    out = ddpm_step(NoisyLatent(x, t), eps_pred, np.zeros_like(x), s)
    np.testing.assert_allclose(out.values, expected, rtol=1e-12)
    assert out.t == t - 1


def test_ddpm_step_includes_sigma_term():
    s = build_schedule()
    t = 500
    x = np.zeros(3)
    fresh = np.array([1.0, 2.0, -1.0])
    out = ddpm_step(NoisyLatent(x, t), np.zeros(3), fresh, s)
    np.testing.assert_allclose(out.values, s.sigmas[t] * fresh, rtol=1e-12)


def test_ddpm_step_rejects_out_of_range_t():
    s = build_schedule()
    with pytest.raises(ValueError):
        ddpm_step(NoisyLatent(np.zeros(2), 1000), np.zeros(2), np.zeros(2), s)


def test_two_step_trajectory_wiring():
    # the fixed two-step paradigm steps 999 -> 499 -> clean
    s = build_schedule()
    rng = np.random.default_rng(5)
    x = rng.standard_normal((4, 4))
    eps_pred = rng.standard_normal((4, 4))
    fresh = rng.standard_normal((4, 4))
    mid = ddpm_step_to(NoisyLatent(x, 999), eps_pred, fresh, s, t_prev=499)
    assert mid.t == 499
    abar_t, abar_prev = s.alpha_bars[999], s.alpha_bars[499]
    alpha_eff = abar_t / abar_prev
    expected = (x - (1 - alpha_eff) / np.sqrt(1 - abar_t) * eps_pred) / np.sqrt(alpha_eff)
    expected = expected + np.sqrt((1 - abar_prev) / (1 - abar_t) * (1 - alpha_eff)) * fresh
    np.testing.assert_allclose(mid.values, expected, rtol=1e-12)

    final = one_step_denoise(mid, eps_pred, s)
    assert final.shape == x.shape


def test_ddpm_step_to_adjacent_matches_ddpm_step():
    s = build_schedule()
    rng = np.random.default_rng(9)
    x = rng.standard_normal((3, 3))
    eps_pred = rng.standard_normal((3, 3))
    fresh = rng.standard_normal((3, 3))
    a = ddpm_step(NoisyLatent(x, 700), eps_pred, fresh, s)
    b = ddpm_step_to(NoisyLatent(x, 700), eps_pred, fresh, s, t_prev=699)
    np.testing.assert_array_equal(a.values, b.values)


def test_operations_work_on_torch_tensors():
    s = build_schedule()
    x0 = torch.randn(2, 4, 4, dtype=torch.float64)
    eps = torch.randn_like(x0)
    rec = one_step_denoise(add_noise(x0, eps, 999, s), eps, s)
    assert torch.allclose(rec, x0, atol=1e-12)
