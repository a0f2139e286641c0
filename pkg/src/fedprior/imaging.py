"""Accelerated-MRI imaging operator: Cartesian undersampling masks, synthetic
coil sensitivities, and the forward/adjoint k-space operator.

Conventions: images are (H, W) complex tensors, k-space acquisitions are
(C, H, W) with C coils. The FFT is centered and orthonormal so Parseval's
identity and the adjoint dot-product test hold exactly. Undersampling is
1D, along the phase-encode (column) direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import torch

from .errors import InfeasibleMaskError, InvalidArgumentError, InvalidRateError, ShapeError

VD_DECAY_POWER = 3.0  # variable-density column weight ~ (1 - |offset|)^p


def fft2c(x: torch.Tensor) -> torch.Tensor:
    """Centered orthonormal 2D FFT over the last two dims."""
    x = torch.fft.ifftshift(x, dim=(-2, -1))
    x = torch.fft.fft2(x, dim=(-2, -1), norm="ortho")
    return torch.fft.fftshift(x, dim=(-2, -1))


def ifft2c(x: torch.Tensor) -> torch.Tensor:
    """Centered orthonormal 2D inverse FFT over the last two dims."""
    x = torch.fft.ifftshift(x, dim=(-2, -1))
    x = torch.fft.ifft2(x, dim=(-2, -1), norm="ortho")
    return torch.fft.fftshift(x, dim=(-2, -1))


def pad_to(x: torch.Tensor, shape: Tuple[int, int]) -> torch.Tensor:
    """Zero-pad the last two dims of ``x`` symmetrically up to ``shape``."""
    h, w = x.shape[-2:]
    th, tw = shape
    if th < h or tw < w:
        raise ShapeError(f"cannot pad {x.shape[-2:]} down to {shape}")
    top = (th - h) // 2
    left = (tw - w) // 2
    pad = (left, tw - w - left, top, th - h - top)
    return torch.nn.functional.pad(x, pad)


def central_crop(x: torch.Tensor, shape: Tuple[int, int]) -> torch.Tensor:
    """Crop the central ``shape`` region of the last two dims of ``x``."""
    h, w = x.shape[-2:]
    th, tw = shape
    if th > h or tw > w:
        raise ShapeError(f"cannot crop {x.shape[-2:]} up to {shape}")
    top = (h - th) // 2
    left = (w - tw) // 2
    return x[..., top : top + th, left : left + tw]


@dataclass(frozen=True)
class SamplingMask:
    """Cartesian column-undersampling pattern.

    ``pattern`` is (H, W) boolean with H the frequency-encode and W the
    phase-encode dimension; sampled phase-encode columns are fully true.
    """

    pattern: np.ndarray
    rate: float
    density: str
    calibration_lines: int
    seed: int

    def __post_init__(self):
        if self.pattern.dtype != np.bool_ or self.pattern.ndim != 2:
            raise ShapeError("mask pattern must be 2D boolean")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.pattern.shape

    def true_fraction(self) -> float:
        return float(self.pattern.mean())


def _calibration_columns(width: int, calibration_lines: int) -> np.ndarray:
    start = width // 2 - calibration_lines // 2
    return np.arange(start, start + calibration_lines)


def _uniform_columns(width: int, rate: float, calibration_lines: int) -> np.ndarray:
    """Uniform-density column selection: a periodic grid through the k-space
    center when an integer spacing keeps the sampled fraction within
    1/rate +- 0.05 after the union with the calibration region; otherwise an
    equispaced fractional-step layout over the non-calibration columns that
    hits the column budget exactly (spacing jitter of at most one column)."""
    target = 1.0 / rate
    cal = set(_calibration_columns(width, calibration_lines).tolist())
    best = None
    for spacing in range(1, width + 1):
        grid = np.arange(width // 2 % spacing, width, spacing)
        fraction = len(cal.union(grid.tolist())) / width
        if abs(fraction - target) <= 0.05:
            if best is None or abs(fraction - target) < best[0]:
                best = (abs(fraction - target), grid)
    if best is not None:
        return best[1]
    outside = np.setdiff1d(np.arange(width), sorted(cal))
    n_outside = int(round(width / rate)) - calibration_lines
    positions = np.floor(np.arange(n_outside) * len(outside) / n_outside).astype(int)
    return outside[positions]


def make_mask(
    shape: Tuple[int, int],
    rate: float,
    density: str = "variable",
    calibration_lines: int = 4,
    seed: int = 0,
) -> SamplingMask:
    """Generate a column-wise undersampling mask at acceleration ``rate``.

    Variable density draws columns with probability decaying polynomially
    from k-space center; uniform density places columns at a fixed period
    outside the calibration region. Both hit the target sampled fraction
    1/rate up to rounding, and both are deterministic in ``seed``.
    """
    if rate <= 1:
        raise InvalidRateError(f"acceleration rate must exceed 1, got {rate}")
    if density not in ("variable", "uniform"):
        raise InvalidArgumentError(f"unknown density {density!r}")
    if calibration_lines < 0:
        raise InvalidArgumentError("calibration_lines must be >= 0")
    height, width = shape
    n_target = int(round(width / rate))
    if calibration_lines >= n_target:
        raise InfeasibleMaskError(
            f"{calibration_lines} calibration lines exceed the sampling budget "
            f"of {n_target} columns at rate {rate}"
        )

    cal_cols = _calibration_columns(width, calibration_lines)
    outside = np.setdiff1d(np.arange(width), cal_cols)
    n_outside = n_target - calibration_lines

    cols = np.zeros(width, dtype=bool)
    cols[cal_cols] = True
    if density == "uniform":
        cols[_uniform_columns(width, rate, calibration_lines)] = True
    else:
        rng = np.random.default_rng(seed)
        offsets = (outside - (width - 1) / 2) / (width / 2)
        weights = (1.0 - np.abs(offsets)) ** VD_DECAY_POWER
        weights = weights / weights.sum()
        chosen = rng.choice(outside, size=n_outside, replace=False, p=weights)
        cols[chosen] = True

    pattern = np.broadcast_to(cols, (height, width)).copy()
    return SamplingMask(
        pattern=pattern,
        rate=float(rate),
        density=density,
        calibration_lines=calibration_lines,
        seed=seed,
    )


@dataclass(frozen=True)
class CoilSensitivities:
    """Complex receive-coil sensitivity maps, (C, H, W), SOS-normalized."""

    maps: np.ndarray

    def __post_init__(self):
        if self.maps.ndim != 3 or not np.iscomplexobj(self.maps):
            raise ShapeError("coil maps must be a 3D complex array")

    @property
    def n_coils(self) -> int:
        return self.maps.shape[0]


def make_synthetic_coils(shape: Tuple[int, int], n_coils: int, seed: int = 0) -> CoilSensitivities:
    """Smooth synthetic coil maps: Gaussian lobes on the image periphery with
    mild linear phase ramps, normalized to unit sum-of-squares per pixel."""
    if n_coils < 1:
        raise InvalidArgumentError(f"n_coils must be >= 1, got {n_coils}")
    height, width = shape
    if n_coils == 1:
        return CoilSensitivities(maps=np.ones((1, height, width), dtype=np.complex128))

    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    cy, cx = (height - 1) / 2, (width - 1) / 2
    radius = 0.55 * min(height, width)
    sigma = 0.6 * min(height, width)

    maps = np.empty((n_coils, height, width), dtype=np.complex128)
    for c in range(n_coils):
        angle = 2 * np.pi * c / n_coils + rng.uniform(-0.2, 0.2)
        ly = cy + radius * np.sin(angle)
        lx = cx + radius * np.cos(angle)
        mag = np.exp(-(((yy - ly) ** 2 + (xx - lx) ** 2) / (2 * sigma**2)))
        ramp = rng.uniform(-1.0, 1.0, size=2)
        phase = np.pi * (ramp[0] * (yy - cy) / height + ramp[1] * (xx - cx) / width)
        maps[c] = mag * np.exp(1j * phase)

    sos = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    maps /= sos
    return CoilSensitivities(maps=maps)


@dataclass
class ImagingOperator:
    """Composition of coil projection, centered orthonormal FFT, and column
    mask selection. ``coils=None`` is the single-coil (identity map) case."""

    mask: SamplingMask
    coils: Optional[CoilSensitivities] = None
    image_shape: Tuple[int, int] = (0, 0)
    _mask_t: torch.Tensor = field(init=False, repr=False)
    _coils_t: Optional[torch.Tensor] = field(init=False, repr=False)

    def __post_init__(self):
        if self.image_shape == (0, 0):
            self.image_shape = self.mask.shape
        if tuple(self.mask.shape) != tuple(self.image_shape):
            raise ShapeError(
                f"mask shape {self.mask.shape} does not match image shape {self.image_shape}"
            )
        if self.coils is not None and self.coils.maps.shape[1:] != tuple(self.image_shape):
            raise ShapeError(
                f"coil map shape {self.coils.maps.shape[1:]} does not match "
                f"image shape {self.image_shape}"
            )
        self._mask_t = torch.from_numpy(self.mask.pattern.copy())
        self._coils_t = None
        if self.coils is not None:
            self._coils_t = torch.from_numpy(np.ascontiguousarray(self.coils.maps))

    @property
    def n_coils(self) -> int:
        return 1 if self.coils is None else self.coils.n_coils

    def coil_maps(self, dtype: torch.dtype) -> torch.Tensor:
        if self._coils_t is None:
            h, w = self.image_shape
            return torch.ones((1, h, w), dtype=dtype)
        return self._coils_t.to(dtype)


@dataclass
class KSpaceAcquisition:
    """Per-coil undersampled k-space samples, zero at unsampled locations."""

    samples: torch.Tensor  # (C, H, W) complex
    operator: ImagingOperator

    def __post_init__(self):
        if self.samples.ndim != 2 and self.samples.ndim != 3:
            raise ShapeError("k-space samples must be (C, H, W) or (H, W)")
        if self.samples.ndim == 2:
            self.samples = self.samples.unsqueeze(0)
        expected = (self.operator.n_coils, *self.operator.image_shape)
        if tuple(self.samples.shape) != expected:
            raise ShapeError(f"samples shape {tuple(self.samples.shape)} != {expected}")


def _as_complex_image(m: torch.Tensor, shape: Tuple[int, int]) -> torch.Tensor:
    if not isinstance(m, torch.Tensor):
        m = torch.as_tensor(m)
    if tuple(m.shape) != tuple(shape):
        raise ShapeError(f"image shape {tuple(m.shape)} does not match operator {tuple(shape)}")
    if not m.is_complex():
        m = m.to(torch.complex64 if m.dtype != torch.float64 else torch.complex128)
    return m


def forward(op: ImagingOperator, m: torch.Tensor) -> KSpaceAcquisition:
    """Apply the forward operator: samples_c = mask * F(map_c * m)."""
    m = _as_complex_image(m, op.image_shape)
    maps = op.coil_maps(m.dtype)
    coil_images = maps * m.unsqueeze(0)
    samples = fft2c(coil_images) * op._mask_t
    return KSpaceAcquisition(samples=samples, operator=op)


def adjoint(op: ImagingOperator, y: KSpaceAcquisition) -> torch.Tensor:
    """Apply the adjoint: sum_c conj(map_c) * F^-1(mask * samples_c).

    On acquired data this is the zero-filled reconstruction.
    """
    expected = (op.n_coils, *op.image_shape)
    if tuple(y.samples.shape) != expected:
        raise ShapeError(f"samples shape {tuple(y.samples.shape)} != {expected}")
    samples = y.samples
    if not samples.is_complex():
        samples = samples.to(torch.complex64)
    maps = op.coil_maps(samples.dtype)
    coil_images = ifft2c(samples * op._mask_t)
    return (maps.conj() * coil_images).sum(dim=0)


def zero_filled(op: ImagingOperator, y: KSpaceAcquisition) -> torch.Tensor:
    """Alias for the adjoint reconstruction of acquired data."""
    return adjoint(op, y)
