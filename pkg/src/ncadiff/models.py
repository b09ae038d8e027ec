"""The two denoiser assemblies.

DiffNCA is purely local: seed the cell state from the noisy image, roll the
image-space rule s times, read the predicted-noise channels. FourierDiffNCA
prepends the frequency-space stage, whose rule operates on 2x the channel
count (one plane each for real and imaginary parts), so every cell starts
the image-space rollout already holding global context.
"""

from __future__ import annotations

import torch
from torch import nn

from .core import CellRule, count_parameters, read_noise_prediction, rollout, seed_state
from .fourier import fourier_stage
from .rng import SeedStream


class DiffNCA(nn.Module):
    """Image-space denoiser built from one replicated cell rule."""

    kind = "diff"

    def __init__(
        self,
        channels: int = 96,
        hidden: int = 512,
        steps: int = 20,
        e_dim: int = 2,
        enc_dim: int = 1,
        *,
        fire_rate: float = 0.9,
        padding: str = "reflect",
        position_mode: str = "stretched",
        cond_hidden: int | None = None,
        embed_hidden: int = 256,
        seed: int = 0,
    ):
        super().__init__()
        self.channels = channels
        self.steps = steps
        self.fire_rate = fire_rate
        self.position_mode = position_mode
        self.rule = CellRule(
            channels,
            hidden,
            e_dim,
            enc_dim,
            cond_hidden=cond_hidden,
            embed_hidden=embed_hidden,
            padding=padding,
        )
        self.rule.reset_parameters_(SeedStream(seed).child("init", "image"))

    def predict_noise(
        self,
        x_t: torch.Tensor,
        t_norm,
        stream: SeedStream,
        *,
        active_mask: torch.Tensor | None = None,
        position_mode: str | None = None,
    ) -> torch.Tensor:
        state = seed_state(x_t, self.channels)
        state = rollout(
            self.rule,
            state,
            self.steps,
            stream=stream.child("image"),
            t_norm=t_norm,
            fire_rate=self.fire_rate,
            position_mode=position_mode or self.position_mode,
            active_mask=active_mask,
            stage="image",
        )
        return read_noise_prediction(state)

    def parameter_count(self) -> int:
        return count_parameters(self)


class FourierDiffNCA(nn.Module):
    """Frequency-then-image denoiser: global context first, local detail after."""

    kind = "fourierdiff"

    def __init__(
        self,
        channels: int = 96,
        hidden: int = 512,
        steps: int = 20,
        fourier_steps: int = 32,
        e_dim: int = 4,
        enc_dim: int = 4,
        *,
        fire_rate: float = 0.9,
        window: int = 16,
        padding: str = "reflect",
        fourier_padding: str = "zeros",
        window_anchor: str = "centered",
        enforce_symmetry: bool = False,
        position_mode: str = "stretched",
        cond_hidden: int | None = None,
        embed_hidden: int = 256,
        seed: int = 0,
    ):
        super().__init__()
        self.channels = channels
        self.steps = steps
        self.fourier_steps = fourier_steps
        self.fire_rate = fire_rate
        self.window = window
        self.window_anchor = window_anchor
        self.enforce_symmetry = enforce_symmetry
        self.position_mode = position_mode
        self.rule = CellRule(
            channels,
            hidden,
            e_dim,
            enc_dim,
            cond_hidden=cond_hidden,
            embed_hidden=embed_hidden,
            padding=padding,
        )
        self.fourier_rule = CellRule(
            2 * channels,
            hidden,
            e_dim,
            enc_dim,
            cond_hidden=cond_hidden,
            embed_hidden=embed_hidden,
            padding=fourier_padding,
        )
        init = SeedStream(seed).child("init")
        self.rule.reset_parameters_(init.child("image"))
        self.fourier_rule.reset_parameters_(init.child("fourier"))

    def predict_noise(
        self,
        x_t: torch.Tensor,
        t_norm,
        stream: SeedStream,
        *,
        active_mask: torch.Tensor | None = None,
        position_mode: str | None = None,
        window_hook=None,
    ) -> torch.Tensor:
        mode = position_mode or self.position_mode
        state = fourier_stage(
            x_t,
            self.fourier_rule,
            stream=stream,
            t_norm=t_norm,
            steps=self.fourier_steps,
            fire_rate=self.fire_rate,
            window_size=self.window,
            anchor=self.window_anchor,
            position_mode=mode,
            enforce_symmetry=self.enforce_symmetry,
            window_hook=window_hook,
        )
        state = rollout(
            self.rule,
            state,
            self.steps,
            stream=stream.child("image"),
            t_norm=t_norm,
            fire_rate=self.fire_rate,
            position_mode=mode,
            active_mask=active_mask,
            stage="image",
        )
        return read_noise_prediction(state)

    def parameter_count(self) -> int:
        return count_parameters(self)
