"""DDPM noise schedule: coefficient tables and the forward/inverse/reverse steps.

All coefficient arrays are computed and stored in float64; the elementwise
operations below work on numpy arrays and torch tensors alike (scalars are
plain Python floats).
"""

import math
from dataclasses import dataclass, field

import numpy as np

LINEAR = "linear"
SCALED_LINEAR = "scaled_linear"

DEFAULT_T_TRAIN = 1000
DEFAULT_BETA_START = 0.00085
DEFAULT_BETA_END = 0.012


@dataclass(frozen=True)
class Schedule:
    """Precomputed diffusion coefficients indexed by timestep t in [0, T_train)."""

    T_train: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    sigmas: np.ndarray
    beta_schedule_kind: str = SCALED_LINEAR

    def sqrt_alpha_bar(self, t: int) -> float:
        return math.sqrt(float(self.alpha_bars[self._check_t(t)]))

    def sqrt_one_minus_alpha_bar(self, t: int) -> float:
        return math.sqrt(1.0 - float(self.alpha_bars[self._check_t(t)]))

    def _check_t(self, t: int) -> int:
        t = int(t)
        if not 0 <= t < self.T_train:
            raise ValueError(f"timestep {t} outside [0, {self.T_train})")
        return t


@dataclass(frozen=True)
class NoisyLatent:
    """A latent-space array carrying the timestep its noise level corresponds to."""

    values: object  # numpy array or torch tensor
    t: int

    def __post_init__(self):
        if self.t < 0:
            raise ValueError(f"timestep {self.t} must be >= 0")


def build_schedule(
    kind: str = SCALED_LINEAR,
    T_train: int = DEFAULT_T_TRAIN,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> Schedule:
    """Build the coefficient tables for a linear or scaled_linear beta schedule.

    scaled_linear interpolates sqrt(beta) linearly and squares it (the SD-family
    convention); linear interpolates beta directly.
    """
    if T_train < 1:
        raise ValueError(f"T_train must be >= 1, got {T_train}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    if kind == LINEAR:
        betas = np.linspace(beta_start, beta_end, T_train, dtype=np.float64)
    elif kind == SCALED_LINEAR:
        betas = np.linspace(beta_start**0.5, beta_end**0.5, T_train, dtype=np.float64) ** 2
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")

    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)

    # DDPM posterior std: sigma_t^2 = beta_t * (1 - abar_{t-1}) / (1 - abar_t), sigma_0 = 0
    sigmas = np.zeros(T_train, dtype=np.float64)
    if T_train > 1:
        sigmas[1:] = np.sqrt(betas[1:] * (1.0 - alpha_bars[:-1]) / (1.0 - alpha_bars[1:]))

    return Schedule(
        T_train=T_train,
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        sigmas=sigmas,
        beta_schedule_kind=kind,
    )


def _require_same_shape(a, b, what: str):
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def add_noise(x0, eps, t: int, s: Schedule) -> NoisyLatent:
    """Forward noising: x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps."""
    _require_same_shape(x0, eps, "add_noise")
    values = s.sqrt_alpha_bar(t) * x0 + s.sqrt_one_minus_alpha_bar(t) * eps
    return NoisyLatent(values=values, t=int(t))


def one_step_denoise(x_t: NoisyLatent, eps_pred, s: Schedule):
    """Single-step inversion: x0_hat = (x_t - sqrt(1 - abar_t) * eps_pred) / sqrt(abar_t).

    Exact algebraic inverse of add_noise when eps_pred equals the true eps.
    """
    _require_same_shape(x_t.values, eps_pred, "one_step_denoise")
    sqrt_ab = s.sqrt_alpha_bar(x_t.t)
    if sqrt_ab == 0.0:
        raise ZeroDivisionError("alpha_bar_t is zero; schedule is degenerate")
    return (x_t.values - s.sqrt_one_minus_alpha_bar(x_t.t) * eps_pred) / sqrt_ab


def ddpm_step(x_t: NoisyLatent, eps_pred, eps_fresh, s: Schedule) -> NoisyLatent:
    """One DDPM reverse step t -> t-1.

    x_{t-1} = (x_t - ((1 - alpha_t)/sqrt(1 - abar_t)) * eps_pred) / sqrt(alpha_t)
              + sigma_t * eps_fresh

    The sigma term is omitted at t = 0.
    """
    t = s._check_t(x_t.t)
    return ddpm_step_to(x_t, eps_pred, eps_fresh, s, t_prev=t - 1)


def ddpm_step_to(
    x_t: NoisyLatent, eps_pred, eps_fresh, s: Schedule, t_prev: int
) -> NoisyLatent:
    """Generalized DDPM reverse step t -> t_prev for respaced timestep subsets.

    Uses the effective per-jump alpha = abar_t / abar_{t_prev}; for t_prev = t-1
    this reduces exactly to the standard single-step update. t_prev = -1 denotes
    a final jump to the clean sample (abar_prev = 1, no noise term).
    """
    t = s._check_t(x_t.t)
    _require_same_shape(x_t.values, eps_pred, "ddpm_step")
    if t_prev >= t:
        raise ValueError(f"t_prev {t_prev} must be < t {t}")

    abar_t = float(s.alpha_bars[t])
    abar_prev = 1.0 if t_prev < 0 else float(s.alpha_bars[t_prev])
    alpha_eff = abar_t / abar_prev

    mean = (x_t.values - ((1.0 - alpha_eff) / math.sqrt(1.0 - abar_t)) * eps_pred) / math.sqrt(
        alpha_eff
    )
    if t_prev < 0:
        return NoisyLatent(values=mean, t=0)

    if t_prev == t - 1:
        sigma = float(s.sigmas[t])
    else:
        sigma = math.sqrt((1.0 - abar_prev) / (1.0 - abar_t) * (1.0 - alpha_eff))
    if t == 0:
        sigma = 0.0

    if sigma != 0.0:
        _require_same_shape(x_t.values, eps_fresh, "ddpm_step")
        mean = mean + sigma * eps_fresh
    return NoisyLatent(values=mean, t=t_prev)
