"""Optimization loop: Adam with per-step exponential LR decay, EMA shadow
weights, deterministic batch/noise draws and CSV loss logging.

All randomness is derived from (seed, step index), never from mutable
generator state, so resuming from a checkpoint replays the exact same draws
as an uninterrupted run. The EMA shadow starts at zero and is what sampling
and evaluation use; the live weights exist only for the optimizer.
"""

from __future__ import annotations

import csv
import math
from contextlib import contextmanager, nullcontext
from dataclasses import dataclass
from pathlib import Path

import torch

from .diffusion import NoiseSchedule, diffusion_loss, q_sample
from .errors import ConfigurationError, NumericError
from .rng import SeedStream


@dataclass
class TrainConfig:
    lr: float = 1.6e-3
    lr_gamma: float = 0.9999
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-8
    steps: int = 200_000
    batch: int = 16
    ema_decay: float = 0.99
    seed: int = 0
    grad_clip: float | None = None
    val_every: int = 200
    val_items: int = 48
    checkpoint_every: int = 1000

    def validate(self) -> None:
        if self.steps < 1:
            raise ConfigurationError(f"train.steps must be >= 1, got {self.steps}")
        if self.batch < 1:
            raise ConfigurationError(f"train.batch must be >= 1, got {self.batch}")
        for name in ("lr", "lr_gamma", "adam_beta1", "adam_beta2", "adam_eps", "ema_decay"):
            value = getattr(self, name)
            if not 0.0 < value < (1.0 if name != "lr" else math.inf):
                raise ConfigurationError(f"train.{name} out of range: {value}")


class EmaState:
    """Exponential moving average of the parameter tensors, zero-initialized."""

    def __init__(self, model: torch.nn.Module, decay: float = 0.99):
        self.decay = decay
        self.shadow = {
            name: torch.zeros_like(p, requires_grad=False)
            for name, p in model.named_parameters()
        }

    @torch.no_grad()
    def update(self, model: torch.nn.Module) -> None:
        for name, p in model.named_parameters():
            shadow = self.shadow[name]
            if shadow.shape != p.shape:
                raise ConfigurationError(
                    f"EMA shadow {name} has shape {tuple(shadow.shape)}, "
                    f"param has {tuple(p.shape)}"
                )
            shadow.mul_(self.decay).add_(p, alpha=1.0 - self.decay)

    @contextmanager
    def applied(self, model: torch.nn.Module):
        """Temporarily load the shadow weights into the model."""
        backup = {name: p.detach().clone() for name, p in model.named_parameters()}
        with torch.no_grad():
            for name, p in model.named_parameters():
                p.copy_(self.shadow[name])
        try:
            yield
        finally:
            with torch.no_grad():
                for name, p in model.named_parameters():
                    p.copy_(backup[name])


def ema_update(ema: EmaState, model: torch.nn.Module) -> EmaState:
    ema.update(model)
    return ema


def validation_loss(
    model,
    ema: EmaState | None,
    images: torch.Tensor,
    schedule: NoiseSchedule,
    seed: int,
    *,
    chunk: int = 16,
) -> float:
    """Denoising loss on a fixed validation probe, using the EMA weights.

    Timesteps are stratified over [1, T] and the noise draws are keyed only
    by (seed, item index), so the probe is identical across runs and across
    models: two models evaluated with the same seed see the exact same
    (x0, t, eps) triples.
    """
    n = images.shape[0]
    if n == 0:
        raise ConfigurationError("validation split is empty")
    stream = SeedStream(seed).child("val")
    t = torch.tensor(
        [1 + (i * schedule.timesteps) // n for i in range(n)], dtype=torch.long
    )
    eps = torch.randn(images.shape, generator=stream.child("eps").generator())
    x_t = q_sample(images, t, eps, schedule)

    total = 0.0
    ctx = ema.applied(model) if ema is not None else nullcontext()
    with ctx, torch.no_grad():
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            n_p = model.predict_noise(
                x_t[lo:hi],
                t[lo:hi].to(torch.float64) / schedule.timesteps,
                stream.child("fire", lo),
            )
            total += float(diffusion_loss(n_p, eps[lo:hi])) * (hi - lo)
    return total / n


@dataclass
class LogRow:
    step: int
    train_loss: float
    val_loss: float | None
    lr: float


class LossLog:
    """Append-only CSV log with fixed columns: step,train_loss,val_loss,lr."""

    COLUMNS = ("step", "train_loss", "val_loss", "lr")

    def __init__(self, path: Path | None):
        self.path = Path(path) if path is not None else None
        self.rows: list[LogRow] = []
        if self.path is not None and not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as f:
                csv.writer(f).writerow(self.COLUMNS)

    def append(self, row: LogRow) -> None:
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a", newline="") as f:
                csv.writer(f).writerow(
                    [
                        row.step,
                        f"{row.train_loss:.8e}",
                        "" if row.val_loss is None else f"{row.val_loss:.8e}",
                        f"{row.lr:.8e}",
                    ]
                )


class Trainer:
    """Owns the model, optimizer, EMA shadow and the step counter."""

    def __init__(
        self,
        model,
        dataset,
        schedule: NoiseSchedule,
        config: TrainConfig,
        *,
        log_path: Path | None = None,
    ):
        config.validate()
        self.model = model
        self.dataset = dataset
        self.schedule = schedule
        self.config = config
        self.stream = SeedStream(config.seed)
        self.optimizer = torch.optim.Adam(
            model.parameters(),
            lr=config.lr,
            betas=(config.adam_beta1, config.adam_beta2),
            eps=config.adam_eps,
        )
        self.ema = EmaState(model, config.ema_decay)
        self.step = 0
        self.log = LossLog(log_path)
        self._val_images: torch.Tensor | None = None

    def lr_at(self, step: int) -> float:
        return self.config.lr * self.config.lr_gamma**step

    def train_step(self, x0: torch.Tensor) -> float:
        """One optimization step on a [B, 3, H, W] batch normalized to [-1, 1]."""
        cfg = self.config
        step = self.step
        sub = self.stream.child("train", step)
        b = x0.shape[0]
        t = torch.randint(
            1, self.schedule.timesteps + 1, (b,), generator=sub.child("t").generator()
        )
        eps = torch.randn(x0.shape, generator=sub.child("eps").generator())
        x_t = q_sample(x0, t, eps, self.schedule)
        n_p = self.model.predict_noise(
            x_t, t.to(torch.float64) / self.schedule.timesteps, sub.child("fire")
        )
        loss = diffusion_loss(n_p, eps)
        if not torch.isfinite(loss):
            raise NumericError(
                f"non-finite training loss with t={t.tolist()}", stage="train", step=step
            )
        self.optimizer.zero_grad()
        loss.backward()
        if cfg.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), cfg.grad_clip)
        lr = self.lr_at(step)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.optimizer.step()
        self.ema.update(self.model)
        self.step = step + 1
        return float(loss.detach())

    def _validation_images(self) -> torch.Tensor:
        if self._val_images is None:
            images = self.dataset.images("val")
            self._val_images = images[: self.config.val_items]
        return self._val_images

    def run(self, *, on_checkpoint=None) -> list[LogRow]:
        """Advance to config.steps, logging every step.

        ``on_checkpoint(step)`` is invoked every checkpoint_every steps and at
        the end; the CLI uses it to write checkpoint files.
        """
        cfg = self.config
        new_rows: list[LogRow] = []
        while self.step < cfg.steps:
            step = self.step
            x0 = self.dataset.train_batch(cfg.batch, self.stream.child("data", step))
            loss = self.train_step(x0)
            is_last = self.step == cfg.steps
            val = None
            if cfg.val_every > 0 and (self.step % cfg.val_every == 0 or is_last):
                val = validation_loss(
                    self.model, self.ema, self._validation_images(), self.schedule, cfg.seed
                )
            row = LogRow(step=step, train_loss=loss, val_loss=val, lr=self.lr_at(step))
            self.log.append(row)
            new_rows.append(row)
            if on_checkpoint is not None and (
                is_last or (cfg.checkpoint_every > 0 and self.step % cfg.checkpoint_every == 0)
            ):
                on_checkpoint(self.step)
        return new_rows
