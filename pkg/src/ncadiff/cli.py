"""Command-line surface: train, sample, inpaint, upscale, tile, lowpass-demo,
eval-export and inspect.

Every artifact-producing command writes a JSON sidecar next to its output
recording the resolved config, seeds and checkpoint hash, so any output can
be reproduced from the sidecar alone. Exit codes: 0 ok, 2 config error,
3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import functools
import json
import re
import sys
from pathlib import Path

import click
import torch

from . import __version__
from .checkpoint import (
    file_sha256,
    load_checkpoint,
    load_model_weights,
    restore_trainer,
    save_checkpoint,
)
from .config import PRESETS, build_dataset, build_model, build_schedule, load_config, resolve_config
from .core import count_parameters
from .data import export_png, load_png
from .diffusion import sample, sample_masked, sample_tiled, upscale
from .errors import CheckpointError, ConfigurationError, NumericError
from .fourier import lowpass_preview
from .training import Trainer

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigurationError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except NumericError as exc:
            click.echo(f"numeric failure: {exc}", err=True)
            sys.exit(EXIT_NUMERIC)
        except (CheckpointError, OSError) as exc:
            click.echo(f"i/o error: {exc}", err=True)
            sys.exit(EXIT_IO)

    return wrapper


def _write_sidecar(out_path: Path, payload: dict) -> None:
    sidecar = out_path.with_suffix(out_path.suffix + ".json")
    sidecar.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_eval_model(checkpoint_path: str):
    """Rebuild the model from a checkpoint and load its EMA weights."""
    ck = load_checkpoint(checkpoint_path)
    raw = ck.metadata.get("config")
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{checkpoint_path}: checkpoint metadata has no config")
    cfg = resolve_config(raw)
    model = build_model(cfg)
    prefix = "ema." if any(k.startswith("ema.") for k in ck.tensors) else "model."
    load_model_weights(model, ck, prefix=prefix)
    model.eval()
    return model, build_schedule(cfg), cfg, ck


def _checkpoint_provenance(checkpoint_path: str) -> dict:
    return {"path": str(Path(checkpoint_path).resolve()), "sha256": file_sha256(checkpoint_path)}


@click.group()
@click.version_option(version=__version__, prog_name="ncadiff")
def main():
    """Train and sample NCA-based denoising diffusion models."""


@main.command("train")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--resume", is_flag=True, help="Continue from the latest checkpoint in out_dir.")
@click.option("--steps", type=int, default=None, help="Override train.steps.")
@click.option("--seed", type=int, default=None, help="Override train.seed.")
@click.option("--out-dir", type=click.Path(file_okay=False), default=None, help="Override out_dir.")
@handle_errors
def cmd_train(config_path, resume, steps, seed, out_dir):
    """Run the training loop; writes checkpoints and a CSV loss log."""
    overrides = {"out_dir": out_dir, "train": {}}
    if steps is not None:
        overrides["train"]["steps"] = steps
    if seed is not None:
        overrides["train"]["seed"] = seed
    cfg = load_config(config_path, overrides)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

    model = build_model(cfg)
    schedule = build_schedule(cfg)
    dataset = build_dataset(cfg)
    trainer = Trainer(model, dataset, schedule, cfg.train, log_path=out / "loss_log.csv")

    if resume:
        latest = _latest_checkpoint(out)
        if latest is None:
            raise ConfigurationError(f"--resume given but no checkpoints under {out}")
        ck = load_checkpoint(latest)
        if ck.metadata.get("config") != cfg.to_dict():
            raise ConfigurationError(
                f"{latest}: checkpoint config does not match {config_path}"
            )
        restore_trainer(trainer, ck)
        click.echo(f"resumed from {latest} at step {trainer.step}")

    def on_checkpoint(step: int) -> None:
        path = out / f"checkpoint_{step:07d}.nca"
        save_checkpoint(
            path,
            model=model,
            optimizer=trainer.optimizer,
            ema=trainer.ema,
            step=step,
            config=cfg.to_dict(),
            seed=cfg.train.seed,
        )
        click.echo(f"checkpoint -> {path}")

    rows = trainer.run(on_checkpoint=on_checkpoint)
    if rows:
        click.echo(
            f"trained to step {trainer.step}; "
            f"final train loss {rows[-1].train_loss:.4f}, lr {rows[-1].lr:.3e}"
        )
    else:
        click.echo(f"nothing to do: already at step {trainer.step}")


def _latest_checkpoint(out: Path) -> Path | None:
    best, best_step = None, -1
    for path in out.glob("checkpoint_*.nca"):
        m = re.fullmatch(r"checkpoint_(\d+)\.nca", path.name)
        if m and int(m.group(1)) > best_step:
            best, best_step = path, int(m.group(1))
    return best


def _geometry(height: int, width: int) -> None:
    if height < 3 or width < 3:
        raise ConfigurationError(f"geometry below 3x3: {height}x{width}")


@main.command("sample")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--height", type=int, default=None, help="Canvas height (defaults to training size).")
@click.option("--width", type=int, default=None, help="Canvas width (defaults to training size).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@handle_errors
def cmd_sample(checkpoint, height, width, seed, out):
    """Synthesize one image with the full reverse chain."""
    model, schedule, cfg, _ = _load_eval_model(checkpoint)
    default_size = cfg.data.synthetic.size if cfg.data.synthetic else cfg.data.patch_size
    height = height or default_size
    width = width or default_size
    _geometry(height, width)
    image = sample(model, height, width, schedule, seed)
    out_path = export_png(image, out)
    _write_sidecar(
        out_path,
        {
            "command": "sample",
            "geometry": {"height": height, "width": width},
            "seed": seed,
            "checkpoint": _checkpoint_provenance(checkpoint),
            "config": cfg.to_dict(),
        },
    )
    click.echo(f"sample -> {out_path}")


def _parse_rect(rect: str) -> tuple[int, int, int, int]:
    try:
        x, y, w, h = (int(p) for p in rect.split(","))
    except ValueError as exc:
        raise ConfigurationError(f"--rect expects 'x,y,w,h', got {rect!r}") from exc
    if w < 1 or h < 1:
        raise ConfigurationError(f"--rect needs positive extent, got {rect!r}")
    return x, y, w, h


@main.command("inpaint")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--image", "image_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--rect", default=None, help="Region to regenerate as 'x,y,w,h' (pixels).")
@click.option("--mask", "mask_path", default=None, type=click.Path(exists=True, dir_okay=False),
              help="Mask PNG; nonzero pixels are regenerated.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@handle_errors
def cmd_inpaint(checkpoint, image_path, rect, mask_path, seed, out):
    """Regenerate a region of an image; everything else stays bit-exact."""
    if (rect is None) == (mask_path is None):
        raise ConfigurationError("give exactly one of --rect or --mask")
    model, schedule, cfg, _ = _load_eval_model(checkpoint)
    known = load_png(image_path)
    _, h, w = known.shape
    _geometry(h, w)
    if rect is not None:
        x, y, rw, rh = _parse_rect(rect)
        if x < 0 or y < 0 or x + rw > w or y + rh > h:
            raise ConfigurationError(f"--rect {rect} falls outside the {w}x{h} image")
        mask = torch.zeros(h, w)
        mask[y : y + rh, x : x + rw] = 1.0
    else:
        # byte 0 maps to -1.0; any nonzero byte marks the cell active
        mask = (load_png(mask_path).amax(dim=0) > -0.999).to(torch.float32)
    image = sample_masked(model, known, mask, schedule, seed)
    out_path = export_png(image, out)
    _write_sidecar(
        out_path,
        {
            "command": "inpaint",
            "image": str(Path(image_path).resolve()),
            "rect": rect,
            "mask": str(Path(mask_path).resolve()) if mask_path else None,
            "seed": seed,
            "checkpoint": _checkpoint_provenance(checkpoint),
            "config": cfg.to_dict(),
        },
    )
    click.echo(f"inpaint -> {out_path}")


@main.command("upscale")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--image", "image_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@handle_errors
def cmd_upscale(checkpoint, image_path, seed, out):
    """Double both image dimensions, synthesizing the new pixels."""
    model, schedule, cfg, _ = _load_eval_model(checkpoint)
    low = load_png(image_path)
    _geometry(low.shape[1], low.shape[2])
    image = upscale(model, low, schedule, seed)
    out_path = export_png(image, out)
    _write_sidecar(
        out_path,
        {
            "command": "upscale",
            "image": str(Path(image_path).resolve()),
            "geometry": {"height": image.shape[1], "width": image.shape[2]},
            "seed": seed,
            "checkpoint": _checkpoint_provenance(checkpoint),
            "config": cfg.to_dict(),
        },
    )
    click.echo(f"upscale -> {out_path}")


@main.command("tile")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--height", type=int, default=512, show_default=True)
@click.option("--width", type=int, default=512, show_default=True)
@click.option("--position-mode", type=click.Choice(["stretched", "disabled"]), default=None,
              help="Override the model's position conditioning for this canvas.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@handle_errors
def cmd_tile(checkpoint, height, width, position_mode, seed, out):
    """Synthesize one large seamless canvas (image-space model only)."""
    model, schedule, cfg, _ = _load_eval_model(checkpoint)
    _geometry(height, width)
    image = sample_tiled(model, height, width, schedule, seed, position_mode=position_mode)
    out_path = export_png(image, out)
    _write_sidecar(
        out_path,
        {
            "command": "tile",
            "geometry": {"height": height, "width": width},
            "position_mode": position_mode,
            "seed": seed,
            "checkpoint": _checkpoint_provenance(checkpoint),
            "config": cfg.to_dict(),
        },
    )
    click.echo(f"tile -> {out_path}")


@main.command("lowpass-demo")
@click.option("--image", "image_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--keep", type=int, default=16, show_default=True,
              help="Side length of the retained low-frequency block.")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@handle_errors
def cmd_lowpass_demo(image_path, keep, out_dir):
    """Write an image next to its low-pass reconstruction."""
    image = load_png(image_path)
    _, h, w = image.shape
    filtered = lowpass_preview(image.unsqueeze(0), keep)[0].clamp(-1.0, 1.0)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    export_png(image, out / "original.png")
    out_path = export_png(filtered, out / "lowpass.png")
    kept = min(keep, h) * min(keep, w) / (h * w)
    _write_sidecar(
        out_path,
        {
            "command": "lowpass-demo",
            "image": str(Path(image_path).resolve()),
            "keep": keep,
            "kept_fraction": kept,
            "kept_percent": f"kept {kept * 100:.2f}%",
        },
    )
    click.echo(f"lowpass demo -> {out} ({kept * 100:.2f}% of coefficients kept)")


@main.command("eval-export")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--n", type=int, default=8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True, help="Base seed; image i uses seed+i.")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@handle_errors
def cmd_eval_export(checkpoint, n, seed, out_dir):
    """Export n samples plus n test-split images for external FID/KID scoring."""
    if n < 1:
        raise ConfigurationError(f"--n must be >= 1, got {n}")
    model, schedule, cfg, _ = _load_eval_model(checkpoint)
    dataset = build_dataset(cfg)
    reference = dataset.images("test")
    if reference.shape[0] < n:
        raise ConfigurationError(
            f"test split holds {reference.shape[0]} images, need {n}"
        )
    out = Path(out_dir)
    samples_dir = out / "samples"
    reference_dir = out / "reference"
    size = reference.shape[-2], reference.shape[-1]
    seeds = []
    for i in range(n):
        image = sample(model, size[0], size[1], schedule, seed + i)
        export_png(image, samples_dir / f"{i:05d}.png")
        export_png(reference[i], reference_dir / f"{i:05d}.png")
        seeds.append(seed + i)
    sidecar = out / "export.json"
    sidecar.write_text(
        json.dumps(
            {
                "command": "eval-export",
                "n": n,
                "seeds": seeds,
                "checkpoint": _checkpoint_provenance(checkpoint),
                "config": cfg.to_dict(),
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    click.echo(f"exported {n}+{n} images -> {out}")


@main.command("inspect")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default=None)
@handle_errors
def cmd_inspect(checkpoint, preset):
    """Print per-tensor shapes and the total parameter count."""
    if (checkpoint is None) == (preset is None):
        raise ConfigurationError("give exactly one of --checkpoint or --preset")
    if checkpoint is not None:
        model, _, cfg, _ = _load_eval_model(checkpoint)
        source = checkpoint
    else:
        cfg = resolve_config({"preset": preset})
        model = build_model(cfg)
        source = f"preset {preset}"
    total = 0
    click.echo(f"{source} ({cfg.model})")
    for name, p in model.named_parameters():
        click.echo(f"  {name:60s} {str(tuple(p.shape)):24s} {p.numel():>10,}")
        total += p.numel()
    assert total == count_parameters(model)
    click.echo(f"total parameters: {total:,}")


if __name__ == "__main__":
    main()
