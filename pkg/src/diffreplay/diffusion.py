"""Forward diffusion process, noise schedule, training loss, and DDIM sampling.

Everything here is independent of the denoiser network: a denoiser is any
callable mapping (x_t, t) -> predicted noise, with timesteps t in [1, T].
"""

from dataclasses import dataclass

import numpy as np
import torch

DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


class NoiseSchedule:
    """Variance schedule: betas, alphas = 1 - betas, and their running products.

    Index convention: timestep t in [1, T] maps to array index t - 1.
    """

    def __init__(self, betas, beta_start=None, beta_end=None):
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty 1-D array")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValueError("betas must lie strictly inside (0, 1)")
        self.betas = betas
        self.alphas = 1.0 - betas
        self.alpha_bars = np.cumprod(self.alphas)
        self.beta_start = beta_start
        self.beta_end = beta_end

    @property
    def T(self):
        return int(self.betas.size)

    def alpha_bar(self, t):
        """alpha-bar at integer timestep(s) t in [0, T]; alpha_bar(0) == 1."""
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T):
            raise ValueError(f"timestep out of range [0, {self.T}]")
        padded = np.concatenate([[1.0], self.alpha_bars])
        return padded[t]

    def gather_alpha_bar(self, t, like):
        """alpha-bar values for a timestep tensor, broadcastable against ``like``."""
        values = torch.as_tensor(self.alpha_bar(t.detach().cpu().numpy()), dtype=like.dtype,
                                 device=like.device)
        return values.reshape(-1, *([1] * (like.dim() - 1)))

    def serializable(self):
        if self.beta_start is None or self.beta_end is None:
            raise ValueError("only linear schedules (with stored endpoints) serialize")
        return {"T": self.T, "beta_start": float(self.beta_start), "beta_end": float(self.beta_end)}

    @staticmethod
    def from_serialized(payload):
        return make_linear_schedule(payload["T"], payload["beta_start"], payload["beta_end"])


def make_linear_schedule(T, beta_start=DEFAULT_BETA_START, beta_end=DEFAULT_BETA_END):
    """Linearly spaced betas from beta_start to beta_end over T steps."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    return NoiseSchedule(betas, beta_start=beta_start, beta_end=beta_end)


@dataclass
class NoisedBatch:
    x_t: torch.Tensor
    t: torch.Tensor
    eps: torch.Tensor


def mix_signal_noise(x0, alpha_bar, eps):
    """x_t = sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * eps."""
    alpha_bar = torch.as_tensor(alpha_bar, dtype=x0.dtype, device=x0.device)
    return torch.sqrt(alpha_bar) * x0 + torch.sqrt(1.0 - alpha_bar) * eps


def forward_noise(x0, t, schedule, generator=None):
    """Diffuse a clean batch to per-example timesteps t; returns the noise used."""
    if t.shape[0] != x0.shape[0]:
        raise ValueError("one timestep per example required")
    if t.numel() and (int(t.min()) < 1 or int(t.max()) > schedule.T):
        raise ValueError(f"timesteps must lie in [1, {schedule.T}]")
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype, device=x0.device)
    x_t = mix_signal_noise(x0, schedule.gather_alpha_bar(t, x0), eps)
    return NoisedBatch(x_t=x_t, t=t, eps=eps)


def sample_timesteps(batch_size, T, generator=None):
    """I.i.d. uniform timesteps over {1..T} (Monte-Carlo estimate of the loss sum)."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    return torch.randint(1, T + 1, (batch_size,), generator=generator)


def diffusion_loss(eps_true, eps_pred):
    """Mean squared error between true and predicted noise (mean over all elements)."""
    if eps_true.shape != eps_pred.shape:
        raise ValueError(f"shape mismatch {tuple(eps_true.shape)} vs {tuple(eps_pred.shape)}")
    return torch.mean((eps_true - eps_pred) ** 2)


def ddim_timesteps(T, num_steps):
    """Descending timestep subsequence with even stride, starting at T."""
    if not 1 <= num_steps <= T:
        raise ValueError(f"num_steps must lie in [1, {T}], got {num_steps}")
    stride = T // num_steps
    return [T - i * stride for i in range(num_steps)]


@torch.no_grad()
def ddim_sample(
    model,
    schedule,
    num_steps,
    batch_size,
    image_shape,
    *,
    eta=0.0,
    generator=None,
    x_init=None,
    clip_denoised=True,
    dtype=torch.float32,
    device="cpu",
):
    """Generate a batch by the DDIM update over an evenly strided timestep subsequence.

    With ``eta=0`` the chain is deterministic given the initial noise; the final
    step targets alpha_bar = 1 (t = 0), which returns the current clean-image
    estimate. ``x_init`` seeds the chain at t = T (defaults to standard normal).
    """
    taus = ddim_timesteps(schedule.T, num_steps)
    if x_init is not None:
        x = x_init.to(dtype=dtype, device=device).clone()
    else:
        x = torch.randn((batch_size, *image_shape), generator=generator, dtype=dtype, device=device)

    for i, t_now in enumerate(taus):
        t_prev = taus[i + 1] if i + 1 < len(taus) else 0
        ab_now = float(schedule.alpha_bar(t_now))
        ab_prev = float(schedule.alpha_bar(t_prev))
        t_vec = torch.full((x.shape[0],), t_now, dtype=torch.int64, device=device)
        eps_hat = model(x, t_vec)
        x0_hat = (x - (1.0 - ab_now) ** 0.5 * eps_hat) / ab_now**0.5
        if clip_denoised:
            x0_hat = x0_hat.clamp(-1.0, 1.0)
        if t_prev == 0:
            x = x0_hat
            continue
        sigma = eta * (((1.0 - ab_prev) / (1.0 - ab_now)) ** 0.5
                       * (1.0 - ab_now / ab_prev) ** 0.5)
        direction = max(1.0 - ab_prev - sigma**2, 0.0) ** 0.5 * eps_hat
        x = ab_prev**0.5 * x0_hat + direction
        if sigma > 0.0:
            x = x + sigma * torch.randn(x.shape, generator=generator, dtype=dtype, device=device)
    return x
