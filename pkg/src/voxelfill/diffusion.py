"""Conditional denoising diffusion: schedule, corruption, loss, sampling.

Noise-prediction parameterization throughout: the network sees the noisy
volume concatenated with (voided image, mask) condition channels and is
trained with plain L2 against the injected noise. Reverse sampling is the
ancestral step with sigma_t^2 = beta_t and no noise added at t = 0.
"""

from dataclasses import dataclass

import numpy as np

from .errors import BadRange, IndexOutOfRange, NonFiniteLoss
from .nn import Grid, backward, no_grad, ops
from .nn.optim import AdamState, adam_step

DEFAULT_TIMESTEPS = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variances and their cumulative signal products."""

    betas: np.ndarray        # (T,), each in (0, 1)
    alphas: np.ndarray       # 1 - beta
    alpha_bars: np.ndarray   # cumulative product of alphas, strictly decreasing

    @property
    def timesteps(self) -> int:
        return len(self.betas)


def make_schedule(timesteps: int = DEFAULT_TIMESTEPS,
                  beta_start: float = DEFAULT_BETA_START,
                  beta_end: float = DEFAULT_BETA_END,
                  kind: str = "linear") -> NoiseSchedule:
    if kind != "linear":
        raise BadRange(f"unsupported schedule kind {kind!r}")
    if timesteps < 1:
        raise BadRange(f"timesteps must be >= 1, got {timesteps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise BadRange(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    betas = np.linspace(beta_start, beta_end, timesteps, dtype=np.float64)
    alphas = 1.0 - betas
    return NoiseSchedule(betas=betas, alphas=alphas,
                         alpha_bars=np.cumprod(alphas))


def _check_t(t, timesteps: int):
    t = np.asarray(t)
    if (t < 0).any() or (t >= timesteps).any():
        raise IndexOutOfRange(f"t={t} outside [0, {timesteps})")
    return t


def q_sample(x0: np.ndarray, t, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Forward corruption: sqrt(ab_t) x0 + sqrt(1 - ab_t) eps.

    t may be a scalar or one timestep per leading-axis sample.
    """
    if x0.shape != eps.shape:
        raise IndexOutOfRange(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    t = _check_t(t, schedule.timesteps)
    ab = schedule.alpha_bars[t]
    if ab.ndim > 0:  # per-sample timesteps broadcast over trailing axes
        ab = ab.reshape((-1,) + (1,) * (x0.ndim - 1))
    return (np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps).astype(x0.dtype)


def denoise_loss(model, x0: np.ndarray, condition, schedule: NoiseSchedule,
                 rng: np.random.Generator, t=None, eps=None) -> Grid:
    """L2 between predicted and injected noise at a random timestep.

    x0: (B, 1, *spatial); condition: (masked, mask) arrays of the same
    shape. t and eps are drawn from rng unless given explicitly (tests).
    """
    masked, mask = condition
    if t is None:
        t = rng.integers(0, schedule.timesteps, size=x0.shape[0])
    if eps is None:
        eps = rng.standard_normal(x0.shape).astype(x0.dtype)
    x_t = q_sample(x0, t, eps, schedule)
    inp = np.concatenate([x_t, masked, mask], axis=1)
    pred = model(inp, t)
    diff = ops.sub(pred, Grid(eps))
    loss = ops.mean(ops.mul(diff, diff))
    if not np.isfinite(loss.item()):
        raise NonFiniteLoss(f"denoising loss is {loss.item()}")
    return loss


def p_sample_step(model, x_t: np.ndarray, t: int, condition,
                  schedule: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    """One ancestral reverse step x_t -> x_{t-1}; deterministic at t = 0."""
    _check_t(t, schedule.timesteps)
    masked, mask = condition
    beta = schedule.betas[t]
    alpha = schedule.alphas[t]
    ab = schedule.alpha_bars[t]
    with no_grad():
        inp = np.concatenate([x_t, masked, mask], axis=1)
        eps_pred = model(inp, np.full(x_t.shape[0], t)).data
    mu = (x_t - beta / np.sqrt(1.0 - ab) * eps_pred) / np.sqrt(alpha)
    if t > 0:
        mu = mu + np.sqrt(beta) * rng.standard_normal(x_t.shape)
    return mu.astype(x_t.dtype)


def sample(model, condition, schedule: NoiseSchedule,
           rng: np.random.Generator) -> np.ndarray:
    """Full reverse pass from standard normal noise, conditioned on the crop."""
    masked, mask = condition
    shape = (masked.shape[0], 1) + masked.shape[2:]
    x = rng.standard_normal(shape).astype(masked.dtype)
    for t in reversed(range(schedule.timesteps)):
        x = p_sample_step(model, x, t, condition, schedule, rng)
    return x


def diffusion_train_step(model, opt: AdamState, x0: np.ndarray, condition,
                         schedule: NoiseSchedule, rng: np.random.Generator) -> float:
    """One optimizer step on the denoising objective; returns the loss."""
    loss = denoise_loss(model, x0, condition, schedule, rng)
    model.zero_grad()
    backward(loss)
    adam_step(model.parameters(), opt)
    return loss.item()
