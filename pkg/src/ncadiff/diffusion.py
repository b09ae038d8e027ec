"""DDPM forward process, training loss and the reverse-process samplers.

The schedule is the standard linear-beta one; tables are kept in float64 and
cast at the point of use. Timesteps are 1-based (t = 1..T) to match the usual
DDPM formulation. Samplers draw every random tensor from seed-keyed streams,
so a fixed seed reproduces an image byte for byte, and the masked variants
pin frozen cells by construction rather than by arithmetic, which keeps them
bit-identical to the reference content.
"""

from __future__ import annotations

import math

import psutil
import torch

from .errors import ConfigurationError
from .rng import SeedStream


class NoiseSchedule:
    """Linear beta schedule with derived alpha and cumulative alpha-bar tables."""

    def __init__(self, timesteps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02):
        if timesteps < 1:
            raise ConfigurationError(f"timesteps must be >= 1, got {timesteps}")
        if not 0.0 < beta_start <= beta_end < 1.0:
            raise ConfigurationError(
                f"need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )
        self.timesteps = timesteps
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.beta = torch.linspace(beta_start, beta_end, timesteps, dtype=torch.float64)
        self.alpha = 1.0 - self.beta
        self.alpha_bar = torch.cumprod(self.alpha, dim=0)

    def _check_t(self, t) -> None:
        t_min = int(t.min()) if isinstance(t, torch.Tensor) else int(t)
        t_max = int(t.max()) if isinstance(t, torch.Tensor) else int(t)
        if t_min < 1 or t_max > self.timesteps:
            raise ConfigurationError(f"timestep {t} outside 1..{self.timesteps}")

    def alpha_bar_at(self, t) -> torch.Tensor:
        self._check_t(t)
        if isinstance(t, torch.Tensor):
            return self.alpha_bar[t.long() - 1]
        return self.alpha_bar[t - 1]


def make_schedule(timesteps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    return NoiseSchedule(timesteps, beta_start, beta_end)


def q_sample_from_alpha_bar(x0: torch.Tensor, alpha_bar_t, eps: torch.Tensor) -> torch.Tensor:
    """Forward diffusion kernel: sqrt(ab)*x0 + sqrt(1-ab)*eps."""
    a = torch.as_tensor(alpha_bar_t, dtype=torch.float64)
    if a.ndim == 1:  # per-element timesteps
        a = a.view(-1, *([1] * (x0.ndim - 1)))
    a = a.to(x0.dtype)
    return torch.sqrt(a) * x0 + torch.sqrt(1.0 - a) * eps


def q_sample(x0: torch.Tensor, t, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Diffuse x0 to timestep t (int, or [B] tensor of per-element timesteps)."""
    if eps.shape != x0.shape:
        raise ConfigurationError(f"eps shape {tuple(eps.shape)} != x0 shape {tuple(x0.shape)}")
    return q_sample_from_alpha_bar(x0, schedule.alpha_bar_at(t), eps)


def diffusion_loss(predicted: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Equal-weight sum of mean squared and mean absolute error."""
    if predicted.shape != target.shape:
        raise ConfigurationError(
            f"prediction shape {tuple(predicted.shape)} != target shape {tuple(target.shape)}"
        )
    d = predicted - target
    return (d * d).mean() + d.abs().mean()


def ddpm_step(
    x_t: torch.Tensor,
    predicted_noise: torch.Tensor,
    t: int,
    schedule: NoiseSchedule,
    z: torch.Tensor | None = None,
) -> torch.Tensor:
    """One ancestral reverse step x_t -> x_{t-1} with sigma_t = sqrt(beta_t).

    ``z`` is the standard-normal draw; pass None (or anything at t=1, where it
    is ignored) for the deterministic mean step.
    """
    schedule._check_t(t)
    beta = float(schedule.beta[t - 1])
    alpha = 1.0 - beta
    alpha_bar = float(schedule.alpha_bar[t - 1])
    mean = (x_t - beta / math.sqrt(1.0 - alpha_bar) * predicted_noise) / math.sqrt(alpha)
    if t == 1 or z is None:
        return mean
    return mean + math.sqrt(beta) * z


def predict_noise(
    model,
    x_t: torch.Tensor,
    t,
    schedule: NoiseSchedule,
    stream: SeedStream,
    *,
    active_mask: torch.Tensor | None = None,
    position_mode: str | None = None,
) -> torch.Tensor:
    """Run the denoiser at timestep t (t/T feeds the conditioning)."""
    schedule._check_t(t)
    if isinstance(t, torch.Tensor):
        t_norm = t.to(torch.float64) / schedule.timesteps
    else:
        t_norm = t / schedule.timesteps
    return model.predict_noise(
        x_t, t_norm, stream, active_mask=active_mask, position_mode=position_mode
    )


def _check_geometry(height: int, width: int) -> None:
    if height < 3 or width < 3:
        raise ConfigurationError(f"canvas must be at least 3x3, got {height}x{width}")


def _reverse_chain(
    model,
    x: torch.Tensor,
    schedule: NoiseSchedule,
    stream: SeedStream,
    *,
    t_start: int | None = None,
    deterministic: bool = False,
    active_mask: torch.Tensor | None = None,
    position_mode: str | None = None,
    frozen_values: torch.Tensor | None = None,
    frozen_where: torch.Tensor | None = None,
    blend: float = 0.0,
    blend_values: torch.Tensor | None = None,
) -> torch.Tensor:
    """Shared reverse loop. Frozen cells are re-pinned after every step."""
    t_start = schedule.timesteps if t_start is None else t_start
    for t in range(t_start, 0, -1):
        n_p = predict_noise(
            model, x, t, schedule, stream.child("t", t),
            active_mask=active_mask, position_mode=position_mode,
        )
        z = None
        if t > 1 and not deterministic:
            z = torch.randn(x.shape, generator=stream.child("z", t).generator(), dtype=x.dtype)
            if active_mask is not None:
                z = z * active_mask.to(x.dtype)
        x = ddpm_step(x, n_p, t, schedule, z)
        if blend > 0.0:
            x = (1.0 - blend) * x + blend * blend_values
        if frozen_where is not None:
            x = torch.where(frozen_where, frozen_values, x)
    return x


def sample(
    model,
    height: int,
    width: int,
    schedule: NoiseSchedule,
    seed: int,
    *,
    deterministic: bool = False,
) -> torch.Tensor:
    """Draw x_T ~ N(0, I) and run the full reverse chain; returns [3, H, W].

    The canvas is free to differ from the training size; only the final
    output is clamped to [-1, 1], intermediates are unconstrained.
    """
    _check_geometry(height, width)
    stream = SeedStream(seed).child("sample")
    x = torch.randn(1, 3, height, width, generator=stream.child("x_init").generator())
    with torch.no_grad():
        x = _reverse_chain(model, x, schedule, stream, deterministic=deterministic)
    return x[0].clamp(-1.0, 1.0)


def sample_masked(
    model,
    known_image: torch.Tensor,
    mask: torch.Tensor,
    schedule: NoiseSchedule,
    seed: int,
    *,
    deterministic: bool = False,
) -> torch.Tensor:
    """Regenerate only the masked cells (mask 1 = denoise, 0 = frozen).

    Frozen cells keep the clean known values at every step: they are never
    noised, the model's fire mask is forced to zero there, and the output is
    bit-identical to ``known_image`` outside the mask. With a full mask this
    reduces exactly to ``sample`` at the same seed.
    """
    if known_image.ndim != 3 or known_image.shape[0] != 3:
        raise ConfigurationError(
            f"known image must be [3, H, W], got {tuple(known_image.shape)}"
        )
    _, h, w = known_image.shape
    _check_geometry(h, w)
    if mask.shape != (h, w):
        raise ConfigurationError(
            f"mask shape {tuple(mask.shape)} does not match image {h}x{w}"
        )
    active = mask.bool()
    if not bool(active.any()):
        raise ConfigurationError("mask selects no active cells")
    known = known_image.unsqueeze(0)
    frozen = ~active.view(1, 1, h, w)
    active_f = active.view(1, 1, h, w).to(known.dtype)

    stream = SeedStream(seed).child("sample")
    noise = torch.randn(1, 3, h, w, generator=stream.child("x_init").generator())
    x = torch.where(frozen, known, noise)
    with torch.no_grad():
        x = _reverse_chain(
            model,
            x,
            schedule,
            stream,
            deterministic=deterministic,
            active_mask=active_f,
            frozen_values=known,
            frozen_where=frozen,
        )
    return torch.where(frozen, known, x.clamp(-1.0, 1.0))[0]


def upscale(
    model,
    low_res: torch.Tensor,
    schedule: NoiseSchedule,
    seed: int,
    *,
    noise_fraction: float = 0.9,
    blend: float = 0.02,
    deterministic: bool = False,
) -> torch.Tensor:
    """Double both dimensions, synthesizing the three new pixels per block.

    Original pixels occupy the even (row, col) grid ([[1, 0], [0, 0]] pattern)
    and are frozen; the new pixels start from the nearest-neighbor fill,
    receive noise at t* = floor(0.9 T), are the only active cells during the
    shortened reverse chain, and after every step blend 2% of the
    nearest-neighbor value back in. Original positions come out exact.
    """
    if low_res.ndim != 3 or low_res.shape[0] != 3:
        raise ConfigurationError(f"low-res image must be [3, H, W], got {tuple(low_res.shape)}")
    _, h, w = low_res.shape
    _check_geometry(h, w)
    nn_img = low_res.repeat_interleave(2, dim=1).repeat_interleave(2, dim=2).unsqueeze(0)
    h2, w2 = 2 * h, 2 * w
    orig = torch.zeros(h2, w2, dtype=torch.bool)
    orig[0::2, 0::2] = True
    frozen = orig.view(1, 1, h2, w2)
    active_f = (~orig).view(1, 1, h2, w2).to(low_res.dtype)

    t_star = max(int(math.floor(noise_fraction * schedule.timesteps)), 1)
    stream = SeedStream(seed).child("upscale")
    eps = torch.randn(1, 3, h2, w2, generator=stream.child("eps").generator())
    noised = q_sample(nn_img, t_star, eps, schedule)
    x = torch.where(frozen, nn_img, noised)
    with torch.no_grad():
        x = _reverse_chain(
            model,
            x,
            schedule,
            stream,
            t_start=t_star,
            deterministic=deterministic,
            active_mask=active_f,
            frozen_values=nn_img,
            frozen_where=frozen,
            blend=blend,
            blend_values=nn_img,
        )
    return torch.where(frozen, nn_img, x.clamp(-1.0, 1.0))[0]


def _estimate_bytes(model, height: int, width: int) -> int:
    # live tensors during one update: state-ish planes plus the two wide
    # intermediates (concat and hidden); factor 4 bytes/float, batch 1
    rule = model.rule
    per_cell = 4 * rule.channels + 2 * rule.concat_dim + 3 * rule.hidden
    return 4 * height * width * per_cell


def sample_tiled(
    model,
    height: int,
    width: int,
    schedule: NoiseSchedule,
    seed: int,
    *,
    position_mode: str | None = None,
    max_bytes: int | None = None,
    deterministic: bool = False,
) -> torch.Tensor:
    """Synthesize one large seamless canvas with the image-space model.

    A single reverse chain covers the whole canvas; the update rule's
    locality means there are no tiles to stitch. Only inference memory is
    needed (no gradient tape), and the request is sized against available
    memory before anything is allocated. At the training size this is
    exactly ``sample``.
    """
    if model.kind != "diff":
        raise ConfigurationError(
            "tiled synthesis supports only the image-space model; the frequency "
            "window of the fourierdiff model is bound to its training size"
        )
    _check_geometry(height, width)
    needed = _estimate_bytes(model, height, width)
    budget = psutil.virtual_memory().available if max_bytes is None else max_bytes
    if needed > budget:
        raise ConfigurationError(
            f"canvas {height}x{width} needs ~{needed / 2**30:.2f} GiB, "
            f"{budget / 2**30:.2f} GiB available"
        )
    stream = SeedStream(seed).child("sample")
    x = torch.randn(1, 3, height, width, generator=stream.child("x_init").generator())
    with torch.no_grad():
        x = _reverse_chain(
            model, x, schedule, stream,
            deterministic=deterministic, position_mode=position_mode,
        )
    return x[0].clamp(-1.0, 1.0)
