"""Frequency-space global communication.

The noisy image's full cell state is transformed per channel with a 2-D FFT
(DC-centered layout, unnormalized forward / 1/(HW) inverse), a low-frequency
window is cut out and run through its own cell rule with the (real,
imaginary) planes playing the role of state channels, and the modified
spectrum is transformed back. Because the inverse transform of any single
coefficient is dense, one window update reaches every pixel of the
image-space state: global communication in a single step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch

from .core import IMAGE_SLICE, rollout, seed_state
from .errors import ConfigurationError
from .rng import SeedStream

logger = logging.getLogger(__name__)

WINDOW_ANCHORS = ("centered", "from-center")


@dataclass
class Spectrum:
    """DC-centered spectrum as interleaved (real, imag) planes per channel."""

    data: torch.Tensor  # [B, 2C, H, W]
    shifted: bool = True


@dataclass
class FourierWindow:
    """A low-frequency block cut out of a shifted spectrum."""

    data: torch.Tensor  # [B, 2C, size, size]
    origin: tuple[int, int]  # top-left (row, col) inside the shifted spectrum


def fft2(state: torch.Tensor) -> Spectrum:
    """Per-channel 2-D DFT of a real state grid, DC-centered."""
    spec = torch.fft.fftshift(torch.fft.fft2(state, norm="backward"), dim=(-2, -1))
    b, c, h, w = state.shape
    data = torch.stack((spec.real, spec.imag), dim=2).reshape(b, 2 * c, h, w)
    return Spectrum(data=data, shifted=True)


def ifft2_real(spectrum: Spectrum, *, residue_tol: float = 1e-4, warn: bool = True) -> torch.Tensor:
    """Inverse transform back to a real state grid.

    The imaginary residue is discarded; if the spectrum is not conjugate
    symmetric the residue can be large, so anything above ``residue_tol``
    (max-abs) is reported on the module logger before the real part is
    returned.
    """
    b, c2, h, w = spectrum.data.shape
    if c2 % 2 != 0:
        raise ConfigurationError(f"spectrum needs interleaved (re, im) planes, got {c2} channels")
    planes = spectrum.data.reshape(b, c2 // 2, 2, h, w)
    spec = torch.complex(planes[:, :, 0], planes[:, :, 1])
    if spectrum.shifted:
        spec = torch.fft.ifftshift(spec, dim=(-2, -1))
    out = torch.fft.ifft2(spec, norm="backward")
    if warn:
        residue = float(out.imag.abs().max()) if out.numel() else 0.0
        if residue > residue_tol:
            logger.warning(
                "inverse FFT imaginary residue %.3e exceeds %.0e; spectrum is not "
                "conjugate-symmetric",
                residue,
                residue_tol,
            )
    return out.real


def window_origin(height: int, width: int, size: int, anchor: str = "centered") -> tuple[int, int]:
    """Top-left corner of the low-frequency window in the shifted layout.

    ``centered`` places the block symmetrically around DC; ``from-center``
    anchors its corner exactly at the DC bin (the literal one-quadrant cut).
    """
    if anchor not in WINDOW_ANCHORS:
        raise ConfigurationError(f"anchor must be one of {WINDOW_ANCHORS}, got {anchor!r}")
    if anchor == "centered":
        return height // 2 - size // 2, width // 2 - size // 2
    return height // 2, width // 2


def extract_window(spectrum: Spectrum, size: int = 16, *, anchor: str = "centered") -> FourierWindow:
    """Cut the size x size low-frequency block out of a shifted spectrum."""
    _, _, h, w = spectrum.data.shape
    if size < 1:
        raise ConfigurationError(f"window size must be >= 1, got {size}")
    if size > min(h, w):
        raise ConfigurationError(f"window size {size} exceeds spectrum extent {h}x{w}")
    r0, c0 = window_origin(h, w, size, anchor)
    if r0 + size > h or c0 + size > w:
        raise ConfigurationError(
            f"window of size {size} at origin ({r0}, {c0}) does not fit inside {h}x{w}"
        )
    return FourierWindow(spectrum.data[:, :, r0 : r0 + size, c0 : c0 + size].clone(), (r0, c0))


def _mirror_partners(n: int, idx: torch.Tensor) -> torch.Tensor:
    # conjugate partner of shifted index a is (2*(n//2) - a) mod n
    return (2 * (n // 2) - idx) % n


def write_window(
    spectrum: Spectrum, window: FourierWindow, *, enforce_symmetry: bool = False
) -> Spectrum:
    """Replace the window's coefficients inside the spectrum.

    Coefficients outside the window are untouched. With ``enforce_symmetry``
    the conjugates of the modified coefficients are mirrored onto partner
    bins that lie outside the window (partners inside it belong to the window
    itself and are left as written).
    """
    b, c2, h, w = spectrum.data.shape
    size = window.data.shape[-1]
    r0, c0 = window.origin
    if window.data.shape[:2] != (b, c2) or window.data.shape[-2] != size:
        raise ConfigurationError(
            f"window planes {tuple(window.data.shape)} do not match spectrum {tuple(spectrum.data.shape)}"
        )
    if not (0 <= r0 and 0 <= c0 and r0 + size <= h and c0 + size <= w):
        raise ConfigurationError(
            f"window origin ({r0}, {c0}) with size {size} does not fit inside {h}x{w}"
        )
    data = spectrum.data.clone()
    data[:, :, r0 : r0 + size, c0 : c0 + size] = window.data
    if enforce_symmetry:
        rows = torch.arange(r0, r0 + size)
        cols = torch.arange(c0, c0 + size)
        prows = _mirror_partners(h, rows)
        pcols = _mirror_partners(w, cols)
        inside_r = (prows >= r0) & (prows < r0 + size)
        inside_c = (pcols >= c0) & (pcols < c0 + size)
        rr, cc = torch.meshgrid(rows, cols, indexing="ij")
        pr, pc = torch.meshgrid(prows, pcols, indexing="ij")
        outside = ~(inside_r.unsqueeze(1) & inside_c.unsqueeze(0))
        src_r, src_c = rr[outside], cc[outside]
        dst_r, dst_c = pr[outside], pc[outside]
        planes = data.reshape(b, c2 // 2, 2, h, w)
        planes[:, :, 0, dst_r, dst_c] = planes[:, :, 0, src_r, src_c]
        planes[:, :, 1, dst_r, dst_c] = -planes[:, :, 1, src_r, src_c]
        data = planes.reshape(b, c2, h, w)
    return Spectrum(data=data, shifted=spectrum.shifted)


def lowpass_preview(image: torch.Tensor, keep: int = 16) -> torch.Tensor:
    """Zero every coefficient outside the centered keep x keep block.

    Diagnostic/demo operation: shows how much content survives when all but
    the low-frequency core of the spectrum is removed.
    """
    if keep < 1:
        raise ConfigurationError(f"keep must be >= 1, got {keep}")
    _, _, h, w = image.shape
    keep = min(keep, h, w)
    spec = fft2(image)
    r0, c0 = window_origin(h, w, keep, "centered")
    mask = torch.zeros(h, w, dtype=image.dtype, device=image.device)
    mask[r0 : r0 + keep, c0 : c0 + keep] = 1.0
    # the hard-edged mask is slightly asymmetric for even sizes, so a small
    # imaginary residue is expected; no need to warn about it
    return ifft2_real(Spectrum(spec.data * mask, shifted=True), warn=False)


def fourier_stage(
    noisy_image: torch.Tensor,
    rule,
    *,
    stream: SeedStream,
    t_norm=0.0,
    steps: int = 32,
    fire_rate: float = 0.9,
    window_size: int = 16,
    anchor: str = "centered",
    position_mode: str = "stretched",
    enforce_symmetry: bool = False,
    window_hook=None,
) -> torch.Tensor:
    """Run the global-communication stage and return the image-branch seed.

    Seeds a full state from the noisy image, transforms it, rolls the
    frequency rule over the low-frequency window (positions normalized over
    the window, fresh conditioning per step), writes the window back and
    inverse-transforms. The returned state carries the gathered global
    information in its noise/hidden channels while its image channels are
    overwritten with the exact noisy image, preserving the denoising target.

    ``window_hook`` is a diagnostic seam: it may transform the window state
    between the rollout and the write-back (used to probe how far a single
    coefficient reaches).
    """
    if rule.channels % 2 != 0:
        raise ConfigurationError(
            f"frequency rule needs an even channel count (re, im planes), got {rule.channels}"
        )
    channels = rule.channels // 2
    state = seed_state(noisy_image, channels)
    spec = fft2(state)
    win = extract_window(spec, window_size, anchor=anchor)
    win_state = rollout(
        rule,
        win.data,
        steps,
        stream=stream.child("fourier"),
        t_norm=t_norm,
        fire_rate=fire_rate,
        position_mode=position_mode,
        stage="fourier-stage",
    )
    if window_hook is not None:
        win_state = window_hook(win_state)
    spec = write_window(spec, FourierWindow(win_state, win.origin), enforce_symmetry=enforce_symmetry)
    out = ifft2_real(spec, warn=False)
    return torch.cat((noisy_image, out[:, IMAGE_SLICE.stop :]), dim=1)
