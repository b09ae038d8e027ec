"""Per-cell conditioning: sinusoidal scalar encodings, the embedding MLP and
the multiplicative scale blocks.

Each cell is conditioned on four scalars: its normalized x/y position, the
diffusion timestep t/T and the NCA step index k/s. Every scalar is expanded
to ``enc_dim`` sinusoidal features, the four encodings are concatenated and
mapped through a small 1x1-conv MLP to an ``e_dim``-channel map. That map is
concatenated with the cell state ahead of the perception conv and also feeds
the two multiplicative conditioning blocks inside the update rule.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import ConfigurationError

POSITION_MODES = ("stretched", "disabled")


def sinusoidal_encode(value, enc_dim: int) -> torch.Tensor:
    """Encode a scalar (or tensor of scalars) into interleaved sin/cos pairs.

    Frequencies follow the transformer convention w_k = 10000^(-2k/enc_dim);
    the output layout along the new trailing axis is
    [sin(v*w_0), cos(v*w_0), sin(v*w_1), cos(v*w_1), ...].
    """
    if enc_dim < 2 or enc_dim % 2 != 0:
        raise ConfigurationError(f"enc_dim must be even and >= 2, got {enc_dim}")
    v = value if isinstance(value, torch.Tensor) else torch.tensor(float(value))
    if not v.is_floating_point():
        v = v.float()
    k = torch.arange(enc_dim // 2, dtype=v.dtype, device=v.device)
    omega = 10000.0 ** (-2.0 * k / enc_dim)
    phase = v.unsqueeze(-1) * omega
    return torch.stack((torch.sin(phase), torch.cos(phase)), dim=-1).flatten(-2)


def _encode(v: torch.Tensor, enc_dim: int) -> torch.Tensor:
    # enc_dim 1 passes the raw scalar through (already bounded in [-1, 1]);
    # this reproduces the 4-wide embedding input of the small image-only model.
    if enc_dim == 1:
        return v.unsqueeze(-1)
    return sinusoidal_encode(v, enc_dim)


def _axis_positions(n: int, dtype, device) -> torch.Tensor:
    if n == 1:
        return torch.zeros(1, dtype=dtype, device=device)
    return torch.linspace(-1.0, 1.0, n, dtype=dtype, device=device)


def conditioning_features(
    height: int,
    width: int,
    t_norm,
    step_norm: float,
    enc_dim: int,
    *,
    batch: int = 1,
    position_mode: str = "stretched",
    dtype=torch.float32,
    device=None,
) -> torch.Tensor:
    """Build the encoded conditioning map, shape [B, 4*enc_dim, H, W].

    Positions are mapped linearly onto [-1, 1] over the current canvas, so an
    out-of-distribution canvas stretches the coordinate field rather than
    tiling it. ``t_norm`` may be a float or a [B] tensor (per-element
    diffusion timesteps during training). ``position_mode="disabled"`` zeroes
    the coordinates, which makes the map spatially constant.
    """
    if height < 1 or width < 1:
        raise ConfigurationError(f"grid dims must be >= 1, got {height}x{width}")
    if position_mode not in POSITION_MODES:
        raise ConfigurationError(
            f"position_mode must be one of {POSITION_MODES}, got {position_mode!r}"
        )

    if isinstance(t_norm, torch.Tensor):
        t = t_norm.to(dtype=dtype, device=device).reshape(-1)
        if t.numel() == 1:
            t = t.expand(batch)
        elif t.numel() != batch:
            raise ConfigurationError(
                f"t_norm has {t.numel()} entries for batch {batch}"
            )
    else:
        t = torch.full((batch,), float(t_norm), dtype=dtype, device=device)

    if position_mode == "disabled":
        xs = torch.zeros(width, dtype=dtype, device=device)
        ys = torch.zeros(height, dtype=dtype, device=device)
    else:
        xs = _axis_positions(width, dtype, device)
        ys = _axis_positions(height, dtype, device)

    fx = _encode(xs, enc_dim)  # [W, enc]
    fy = _encode(ys, enc_dim)  # [H, enc]
    ft = _encode(t, enc_dim)  # [B, enc]
    fk = _encode(torch.tensor(float(step_norm), dtype=dtype, device=device), enc_dim)

    feats = torch.empty(batch, 4 * enc_dim, height, width, dtype=dtype, device=device)
    feats[:, 0 * enc_dim : 1 * enc_dim] = fx.t().view(1, enc_dim, 1, width)
    feats[:, 1 * enc_dim : 2 * enc_dim] = fy.t().view(1, enc_dim, height, 1)
    feats[:, 2 * enc_dim : 3 * enc_dim] = ft.view(batch, enc_dim, 1, 1)
    feats[:, 3 * enc_dim : 4 * enc_dim] = fk.view(1, enc_dim, 1, 1)
    return feats


class EmbeddingMLP(nn.Module):
    """1x1-conv MLP mapping encoded conditioning scalars to the e map."""

    def __init__(self, in_dim: int, e_dim: int, hidden: int = 256):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_dim, hidden, 1),
            nn.SiLU(),
            nn.Conv2d(hidden, e_dim, 1),
        )

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        return self.net(feats)


class CondBlock(nn.Module):
    """Multiplicative conditioning: 1x1 conv -> SiLU -> 1x1 conv on the e map."""

    def __init__(self, e_dim: int, out_dim: int, hidden: int = 128):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(e_dim, hidden, 1),
            nn.SiLU(),
            nn.Conv2d(hidden, out_dim, 1),
        )

    def forward(self, e: torch.Tensor) -> torch.Tensor:
        return self.net(e)
