"""The single-cell update rule, replicated over a 2-D grid.

The cell state is a [B, C, H, W] tensor whose channels are partitioned into
image (0..2), predicted noise (3..5) and hidden channels (6..C-1). Hidden
channels are the only memory carried between steps. One update perceives the
3x3 neighborhood of (state ++ e), concatenates the result with the cell's own
state and the conditioning map, scales it by cond0(e), projects to the hidden
width, normalizes per cell, applies a leaky ReLU, scales by cond1(e),
projects back to the state width and adds the result wherever the stochastic
fire mask is 1. Cells whose fire mask is 0 keep their state bit for bit, and
information spreads at most one cell per step: a cell's value after s steps
depends only on its Chebyshev-s neighborhood.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .conditioning import CondBlock, EmbeddingMLP, conditioning_features
from .errors import ConfigurationError, NumericError
from .rng import SeedStream

IMAGE_SLICE = slice(0, 3)
NOISE_SLICE = slice(3, 6)
HIDDEN_START = 6

PADDING_MODES = {"reflect": "reflect", "zero": "zeros", "zeros": "zeros", "circular": "circular"}


def seed_state(noisy_image: torch.Tensor, channels: int) -> torch.Tensor:
    """Seed a fresh state grid from a noisy RGB image.

    Image channels take the input; noise and hidden channels start at zero.
    """
    if noisy_image.ndim != 4:
        raise ConfigurationError(
            f"noisy image must be [B, 3, H, W], got {noisy_image.ndim} axes"
        )
    b, c, h, w = noisy_image.shape
    if c != 3:
        raise ConfigurationError(f"channel axis must be 3 (RGB), got {c}")
    if h < 3:
        raise ConfigurationError(f"height axis must be >= 3, got {h}")
    if w < 3:
        raise ConfigurationError(f"width axis must be >= 3, got {w}")
    if channels < HIDDEN_START:
        raise ConfigurationError(
            f"state needs >= {HIDDEN_START} channels (3 image + 3 noise), got {channels}"
        )
    state = noisy_image.new_zeros(b, channels, h, w)
    state[:, IMAGE_SLICE] = noisy_image
    return state


def read_noise_prediction(state: torch.Tensor) -> torch.Tensor:
    """Return the predicted-noise channels (3..5) unchanged."""
    return state[:, NOISE_SLICE]


def fire_mask(
    batch: int,
    height: int,
    width: int,
    fire_rate: float,
    generator: torch.Generator,
    *,
    dtype=torch.float32,
) -> torch.Tensor:
    """Draw a Bernoulli(fire_rate) update mask, one entry per cell.

    Entries are drawn in row-major scan order from the given generator, so a
    fixed seed reproduces the mask exactly.
    """
    if not 0.0 < fire_rate <= 1.0:
        raise ConfigurationError(f"fire_rate must be in (0, 1], got {fire_rate}")
    u = torch.rand(batch, 1, height, width, generator=generator)
    return (u < fire_rate).to(dtype)


def cell_group_norm(
    u: torch.Tensor, scale: torch.Tensor, shift: torch.Tensor, eps: float = 1e-5
) -> torch.Tensor:
    """Normalize each cell's hidden vector to zero mean / unit (biased) variance.

    One group over all channels, computed independently per cell. A spatially
    shared norm would leak information across the whole grid in a single step
    and break the locality guarantees of the update rule.
    """
    out = F.layer_norm(u.permute(0, 2, 3, 1), (u.shape[1],), scale, shift, eps)
    return out.permute(0, 3, 1, 2)


class CellRule(nn.Module):
    """Learnable parameters of one NCA branch plus its update step.

    ``channels`` is the state width of the branch (the frequency branch uses
    2x the model channels, one plane each for real and imaginary parts).
    The conditioning blocks' hidden width follows the hidden size (h/4) and
    the embedding MLP hidden width defaults to 256.
    """

    def __init__(
        self,
        channels: int,
        hidden: int,
        e_dim: int = 4,
        enc_dim: int = 4,
        *,
        cond_hidden: int | None = None,
        embed_hidden: int = 256,
        padding: str = "reflect",
        norm_eps: float = 1e-5,
        leak: float = 0.01,
    ):
        super().__init__()
        if channels < 1 or hidden < 1 or e_dim < 1:
            raise ConfigurationError(
                f"channels/hidden/e_dim must be >= 1, got {channels}/{hidden}/{e_dim}"
            )
        if padding not in PADDING_MODES:
            raise ConfigurationError(
                f"padding must be one of {sorted(set(PADDING_MODES))}, got {padding!r}"
            )
        if cond_hidden is None:
            cond_hidden = max(hidden // 4, 1)

        self.channels = channels
        self.hidden = hidden
        self.e_dim = e_dim
        self.enc_dim = enc_dim
        self.concat_dim = 2 * channels + e_dim
        self.padding = padding
        self.norm_eps = norm_eps
        self.leak = leak

        self.perceive = nn.Conv2d(
            channels + e_dim, channels, 3, padding=1, padding_mode=PADDING_MODES[padding]
        )
        self.fc0 = nn.Conv2d(self.concat_dim, hidden, 1)
        self.fc1 = nn.Conv2d(hidden, channels, 1)
        self.norm_scale = nn.Parameter(torch.ones(hidden))
        self.norm_shift = nn.Parameter(torch.zeros(hidden))
        self.embed = EmbeddingMLP(4 * enc_dim, e_dim, embed_hidden)
        self.cond0 = CondBlock(e_dim, self.concat_dim, cond_hidden)
        self.cond1 = CondBlock(e_dim, hidden, cond_hidden)

    @torch.no_grad()
    def reset_parameters_(self, stream: SeedStream) -> None:
        """Re-init all weights deterministically from the keyed stream.

        Convs get the usual uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) draw;
        fc1 starts at zero so a freshly built rule is the identity map.
        """
        for name, module in sorted(self.named_modules()):
            if isinstance(module, nn.Conv2d):
                g = stream.child(name).generator()
                bound = 1.0 / math.sqrt(module.weight[0].numel())
                module.weight.uniform_(-bound, bound, generator=g)
                module.bias.uniform_(-bound, bound, generator=g)
        self.fc1.weight.zero_()
        self.fc1.bias.zero_()
        self.norm_scale.fill_(1.0)
        self.norm_shift.zero_()

    def embedding_map(
        self,
        height: int,
        width: int,
        t_norm,
        step_norm: float,
        *,
        batch: int = 1,
        position_mode: str = "stretched",
        dtype=torch.float32,
        device=None,
    ) -> torch.Tensor:
        feats = conditioning_features(
            height,
            width,
            t_norm,
            step_norm,
            self.enc_dim,
            batch=batch,
            position_mode=position_mode,
            dtype=dtype,
            device=device,
        )
        return self.embed(feats)

    def step(self, state: torch.Tensor, e: torch.Tensor, fire: torch.Tensor) -> torch.Tensor:
        """One update of every cell; non-fired cells keep their exact state."""
        if state.shape[0] != e.shape[0] or state.shape[-2:] != e.shape[-2:]:
            raise ConfigurationError(
                f"state {tuple(state.shape)} and conditioning {tuple(e.shape)} disagree"
            )
        if state.shape[-2:] != fire.shape[-2:]:
            raise ConfigurationError(
                f"state {tuple(state.shape)} and fire mask {tuple(fire.shape)} disagree"
            )
        p = self.perceive(torch.cat((state, e), dim=1))
        z = torch.cat((p, state, e), dim=1)
        z = z * self.cond0(e)
        u = self.fc0(z)
        u = F.leaky_relu(
            cell_group_norm(u, self.norm_scale, self.norm_shift, self.norm_eps), self.leak
        )
        u = u * self.cond1(e)
        o = self.fc1(u)
        return state + o * fire


def rollout(
    rule: CellRule,
    state: torch.Tensor,
    steps: int,
    *,
    stream: SeedStream,
    t_norm=0.0,
    fire_rate: float = 0.9,
    position_mode: str = "stretched",
    active_mask: torch.Tensor | None = None,
    fire_masks=None,
    stage: str = "nca",
) -> torch.Tensor:
    """Apply the update rule ``steps`` times, differentiably.

    The conditioning map is rebuilt every step with the current step index
    (normalized by the step count) and a fresh fire mask is drawn from the
    stream keyed by the step index. ``active_mask`` zeroes updates outside a
    region of interest (selective sampling); ``fire_masks`` overrides the
    stochastic masks entirely, which the equivariance tests rely on.
    """
    if steps < 1:
        raise ConfigurationError(f"step count must be >= 1, got {steps}")
    b, _, h, w = state.shape
    for k in range(steps):
        e = rule.embedding_map(
            h,
            w,
            t_norm,
            k / steps,
            batch=b,
            position_mode=position_mode,
            dtype=state.dtype,
            device=state.device,
        )
        if fire_masks is not None:
            fire = fire_masks[k].to(state.dtype)
        else:
            gen = stream.child("fire", k).generator()
            fire = fire_mask(b, h, w, fire_rate, gen, dtype=state.dtype)
        if active_mask is not None:
            fire = fire * active_mask.to(state.dtype)
        state = rule.step(state, e, fire)
        if not torch.isfinite(state).all():
            raise NumericError("non-finite state after NCA update", stage=stage, step=k)
    return state


def count_parameters(module: nn.Module) -> int:
    """Total scalar count of all learnable tensors, biases and norm affines included."""
    return sum(p.numel() for p in module.parameters())
