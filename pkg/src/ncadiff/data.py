"""Dataset ingestion, synthetic desk-scale datasets and PNG import/export.

Folder datasets are scanned for 8-bit RGB PNGs in deterministic lexicographic
order and split train/val/test by a hash of the relative filename, so adding
files later never reshuffles existing assignments. Pixels map to [-1, 1] via
x/127.5 - 1. Training draws uniform random crops; evaluation uses the
deterministic non-overlapping patch grid.

Two synthetic generators stand in for the full-size corpora: "blobs" (soft
color blobs at random positions, a local-structure dataset) and
"bicolor-halves" (left half a random color, right half its exact complement,
so denoising one half well requires knowledge of the other: a
global-structure dataset).
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import ConfigurationError
from .rng import SeedStream

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass
class SyntheticSpec:
    kind: str = "blobs"  # "blobs" | "bicolor-halves"
    size: int = 16
    count: int = 512
    seed: int = 0


@dataclass
class DatasetSpec:
    root: str | None = None
    synthetic: SyntheticSpec | None = None
    patch_size: int = 64
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    resize: int | None = None
    downscale_factor: int | None = None

    def validate(self) -> None:
        if (self.root is None) == (self.synthetic is None):
            raise ConfigurationError("data: exactly one of root or synthetic must be set")
        if self.patch_size < 3:
            raise ConfigurationError(f"data.patch_size must be >= 3, got {self.patch_size}")
        if abs(sum(self.split) - 1.0) > 1e-9 or any(f < 0 for f in self.split):
            raise ConfigurationError(f"data.split must be nonnegative and sum to 1, got {self.split}")


def bytes_to_unit(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float32) / 127.5 - 1.0


def export_png(image: torch.Tensor, path: str | Path) -> Path:
    """Write a [3, H, W] tensor in [-1, 1] as an 8-bit RGB PNG."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ConfigurationError(f"export expects [3, H, W], got {tuple(image.shape)}")
    if not torch.isfinite(image).all():
        raise ConfigurationError("export rejects non-finite pixel values")
    x = image.detach().to(torch.float32).clamp(-1.0, 1.0)
    arr = torch.round((x + 1.0) * 127.5).to(torch.uint8).permute(1, 2, 0).numpy()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path)
    return path


def load_png(path: str | Path) -> torch.Tensor:
    """Read an RGB PNG into a [3, H, W] tensor in [-1, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"))
    return torch.from_numpy(bytes_to_unit(arr)).permute(2, 0, 1)


def split_of(name: str, fractions: tuple[float, float, float]) -> str:
    """Assign a filename to a split by hashing it against the fractions."""
    digest = hashlib.blake2s(name.encode("utf-8"), digest_size=8).digest()
    u = int.from_bytes(digest, "little") / float(1 << 64)
    if u < fractions[0]:
        return "train"
    if u < fractions[0] + fractions[1]:
        return "val"
    return "test"


class ImageFolderData:
    """An indexed, split PNG folder with patch access."""

    def __init__(self, spec: DatasetSpec):
        spec.validate()
        self.spec = spec
        root = Path(spec.root)
        if not root.is_dir():
            raise ConfigurationError(f"data.root is not a directory: {root}")
        self.files: dict[str, list[Path]] = {s: [] for s in SPLITS}
        self.skipped = 0
        for path in sorted(root.rglob("*.png"), key=lambda p: p.relative_to(root).as_posix()):
            rel = path.relative_to(root).as_posix()
            try:
                with Image.open(path) as img:
                    img.verify()
            except Exception as exc:  # unreadable file: warn, count, move on
                logger.warning("skipping unreadable image %s: %s", path, exc)
                self.skipped += 1
                continue
            self.files[split_of(rel, spec.split)].append(path)
        if not any(self.files.values()):
            raise ConfigurationError(f"no readable PNG files under {root}")
        self._cache: dict[Path, torch.Tensor] = {}

    def _load(self, path: Path) -> torch.Tensor:
        cached = self._cache.get(path)
        if cached is not None:
            return cached
        with Image.open(path) as img:
            img = img.convert("RGB")
            if self.spec.downscale_factor:
                img = img.reduce(self.spec.downscale_factor)  # box average
            if self.spec.resize:
                img = img.resize((self.spec.resize, self.spec.resize), Image.BICUBIC)
            arr = np.asarray(img)
        tensor = torch.from_numpy(bytes_to_unit(arr)).permute(2, 0, 1)
        self._cache[path] = tensor
        return tensor

    def train_batch(self, n: int, stream: SeedStream) -> torch.Tensor:
        """Draw n random training patches, deterministically from the stream."""
        files = self.files["train"]
        if not files:
            raise ConfigurationError("train split is empty")
        p = self.spec.patch_size
        gen = stream.child("choice").generator()
        idx = torch.randint(len(files), (n,), generator=gen)
        out = []
        for j, i in enumerate(idx.tolist()):
            img = self._load(files[i])
            _, h, w = img.shape
            if h < p or w < p:
                raise ConfigurationError(
                    f"{files[i]} is {h}x{w}, smaller than patch_size {p}"
                )
            g = stream.child("crop", j).generator()
            top = int(torch.randint(h - p + 1, (1,), generator=g))
            left = int(torch.randint(w - p + 1, (1,), generator=g))
            out.append(img[:, top : top + p, left : left + p])
        return torch.stack(out)

    def images(self, split: str) -> torch.Tensor:
        """Deterministic non-overlapping patch grid over every file in a split."""
        p = self.spec.patch_size
        patches = []
        for path in self.files[split]:
            img = self._load(path)
            _, h, w = img.shape
            for top in range(0, h - p + 1, p):
                for left in range(0, w - p + 1, p):
                    patches.append(img[:, top : top + p, left : left + p])
        if not patches:
            return torch.empty(0, 3, p, p)
        return torch.stack(patches)


def _render_blobs(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    img = np.full((3, size, size), rng.uniform(-1.0, -0.6), dtype=np.float32)
    for _ in range(int(rng.integers(1, 4))):
        cy, cx = rng.uniform(0, size - 1, 2)
        sigma = rng.uniform(size / 8.0, size / 3.0)
        color = rng.uniform(0.0, 1.0, 3) * 2.0 - 1.0
        alpha = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))).astype(np.float32)
        img = img * (1.0 - alpha) + color[:, None, None] * alpha
    return np.clip(img, -1.0, 1.0)


def _render_bicolor(rng: np.random.Generator, size: int) -> np.ndarray:
    c = rng.uniform(0.0, 1.0, 3).astype(np.float32)
    left = 2.0 * c - 1.0
    right = 1.0 - 2.0 * c  # complement (1 - c) in [0, 1] color space
    img = np.empty((3, size, size), dtype=np.float32)
    img[:, :, : size // 2] = left[:, None, None]
    img[:, :, size // 2 :] = right[:, None, None]
    return img


class SyntheticData:
    """Deterministic in-memory dataset with contiguous index splits."""

    def __init__(self, spec: SyntheticSpec, split=(0.8, 0.1, 0.1)):
        if spec.kind not in ("blobs", "bicolor-halves"):
            raise ConfigurationError(f"unknown synthetic kind {spec.kind!r}")
        if spec.count < 1 or spec.size < 3:
            raise ConfigurationError(
                f"synthetic dataset needs count >= 1 and size >= 3, got {spec.count}/{spec.size}"
            )
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        render = _render_blobs if spec.kind == "blobs" else _render_bicolor
        self.tensor = torch.from_numpy(
            np.stack([render(rng, spec.size) for _ in range(spec.count)]).astype(np.float32)
        )
        n = spec.count
        cut1 = int(round(split[0] * n))
        cut2 = int(round((split[0] + split[1]) * n))
        self._ranges = {"train": (0, cut1), "val": (cut1, cut2), "test": (cut2, n)}

    def train_batch(self, n: int, stream: SeedStream) -> torch.Tensor:
        lo, hi = self._ranges["train"]
        if hi <= lo:
            raise ConfigurationError("train split is empty")
        gen = stream.child("choice").generator()
        idx = torch.randint(lo, hi, (n,), generator=gen)
        return self.tensor[idx]

    def images(self, split: str) -> torch.Tensor:
        lo, hi = self._ranges[split]
        return self.tensor[lo:hi]


def make_synthetic(spec: SyntheticSpec, split=(0.8, 0.1, 0.1)) -> SyntheticData:
    return SyntheticData(spec, split)


def ingest(spec: DatasetSpec):
    """Build the dataset object a DatasetSpec describes."""
    spec.validate()
    if spec.synthetic is not None:
        return SyntheticData(spec.synthetic, spec.split)
    return ImageFolderData(spec)
