"""Subject-specific reconstruction: couple the trained prior with an
arbitrary imaging operator and minimize data-consistency loss over the
synthesizer parameters, the intermediate latent, and the noise fields.

The mapper only seeds the initial latent and is never updated. The data
term is the unsquared L2 norm on acquired k-space samples; the penalty is
an isotropic total-variation norm of the synthesized image.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import List, Optional, Tuple

import torch

from .errors import DivergedInferenceError, InvalidArgumentError, ShapeError
from .imaging import ImagingOperator, KSpaceAcquisition, central_crop, fft2c, forward, ifft2c
from .models import Generator, Synthesizer, channels_to_complex, site_onehot


@dataclass
class InferenceConfig:
    lr: float = 1e-2
    iterations: int = 1000  # E
    tv_weight: float = 1e-4  # eta
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    crop_to: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidArgumentError("iteration count must be >= 1")
        if self.tv_weight < 0:
            raise InvalidArgumentError("tv weight must be >= 0")


def tv_norm(x: torch.Tensor) -> torch.Tensor:
    """Isotropic total variation with forward differences and replicate
    boundary (zero difference at the trailing edge). Exactly zero for
    spatially constant input."""
    if x.is_complex():
        x = torch.stack([x.real, x.imag], dim=0) if x.ndim == 2 else torch.cat(
            [x.real, x.imag], dim=0
        )
    if x.ndim == 2:
        x = x.unsqueeze(0)
    dx = torch.nn.functional.pad((x[..., :, 1:] - x[..., :, :-1]) ** 2, (0, 1))
    dy = torch.nn.functional.pad((x[..., 1:, :] - x[..., :-1, :]) ** 2, (0, 0, 0, 1))
    sq = (dx + dy).sum(dim=0)
    # keep the gradient finite where the local gradient magnitude is zero
    safe = torch.where(sq > 0, sq, torch.ones_like(sq))
    return torch.where(sq > 0, torch.sqrt(safe), torch.zeros_like(sq)).sum()


def synthesize_image(
    synthesizer: Synthesizer, w: torch.Tensor, noise, stage: Optional[int] = None
) -> torch.Tensor:
    """Run the synthesizer and interpret the output channels as one complex image."""
    out = synthesizer(w, noise, stage=stage)
    return channels_to_complex(out[0])


def dc_loss_terms(
    synthesizer: Synthesizer,
    w: torch.Tensor,
    noise,
    y: KSpaceAcquisition,
    op: ImagingOperator,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """(data term, TV term) of the data-consistency loss. The synthesized
    image is centrally cropped to the acquisition matrix before the forward
    operator is applied."""
    image = synthesize_image(synthesizer, w, noise)
    if image.shape[-2] < op.image_shape[0] or image.shape[-1] < op.image_shape[1]:
        raise ShapeError(
            f"synthesized image {tuple(image.shape)} smaller than acquisition {op.image_shape}"
        )
    image = central_crop(image, op.image_shape)
    predicted = forward(op, image)
    data_term = torch.linalg.vector_norm(predicted.samples - y.samples.to(predicted.samples.dtype))
    tv_term = tv_norm(torch.stack([image.real, image.imag]))
    return data_term, tv_term


def dc_loss(
    synthesizer: Synthesizer,
    w: torch.Tensor,
    noise,
    y: KSpaceAcquisition,
    op: ImagingOperator,
    tv_weight: float = 1e-4,
) -> torch.Tensor:
    data_term, tv_term = dc_loss_terms(synthesizer, w, noise, y, op)
    return data_term + tv_weight * tv_term


@dataclass
class ReconstructionTrace:
    total: List[float]
    data: List[float]
    tv: List[float]

    def __len__(self) -> int:
        return len(self.total)


def adapt_and_reconstruct(
    generator: Generator,
    site_index: int,
    y: KSpaceAcquisition,
    config: InferenceConfig,
    seed: int = 0,
) -> Tuple[torch.Tensor, ReconstructionTrace]:
    """Adapt a copy of the trained synthesizer plus (w, n) to one acquisition
    by E Adam steps on the data-consistency loss; returns the reconstructed
    complex image (cropped to the acquisition matrix) and the loss trace."""
    if config.iterations < 1:
        raise InvalidArgumentError("iteration count must be >= 1")
    if torch.count_nonzero(y.samples) == 0:
        raise InvalidArgumentError("acquisition has no acquired samples")

    cfg = generator.config
    rng = torch.Generator()
    rng.manual_seed(seed)
    synthesizer = copy.deepcopy(generator.synthesizer)
    synthesizer.requires_grad_(True)

    z = torch.randn(1, cfg.latent_dim, generator=rng)
    v = site_onehot(site_index, cfg.n_sites) if cfg.site_input else None
    with torch.no_grad():
        w0 = generator.mapper(z, v)
    w = w0.detach().clone().requires_grad_(True)
    noise = [
        (n1.requires_grad_(True), n2.requires_grad_(True))
        for n1, n2 in synthesizer.sample_noise(1, generator=rng)
    ]

    variables = list(synthesizer.parameters()) + [w]
    for n1, n2 in noise:
        variables.extend([n1, n2])
    optimizer = torch.optim.Adam(
        variables, lr=config.lr, betas=(config.adam_beta1, config.adam_beta2)
    )

    op = y.operator
    trace = ReconstructionTrace([], [], [])
    for iteration in range(config.iterations):
        data_term, tv_term = dc_loss_terms(synthesizer, w, noise, y, op)
        loss = data_term + config.tv_weight * tv_term
        if not torch.isfinite(loss):
            raise DivergedInferenceError(
                f"non-finite loss at iteration {iteration}", iteration=iteration
            )
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        trace.total.append(float(loss.detach()))
        trace.data.append(float(data_term.detach()))
        trace.tv.append(float(tv_term.detach()))

    with torch.no_grad():
        image = synthesize_image(synthesizer, w, noise)
        image = central_crop(image, config.crop_to or op.image_shape)
    return image, trace


def enforce_data_consistency(
    m: torch.Tensor, y: KSpaceAcquisition, op: ImagingOperator
) -> torch.Tensor:
    """Overwrite acquired k-space locations of the synthesized image with the
    measured values; unsampled locations keep the synthesized content."""
    if tuple(m.shape) != tuple(op.image_shape):
        raise ShapeError(f"image shape {tuple(m.shape)} != operator {op.image_shape}")
    if not m.is_complex():
        m = m.to(torch.complex64)
    maps = op.coil_maps(m.dtype)
    k = fft2c(maps * m.unsqueeze(0))
    k = torch.where(op._mask_t, y.samples.to(k.dtype), k)
    return (maps.conj() * ifft2c(k)).sum(dim=0)


def reconstruct(
    generator: Generator,
    site_index: int,
    y: KSpaceAcquisition,
    config: InferenceConfig,
    seed: int = 0,
    final_dc: bool = True,
) -> Tuple[torch.Tensor, ReconstructionTrace]:
    """Full reconstruction: inference adaptation followed by an optional
    strict data-consistency overwrite of acquired k-space samples."""
    image, trace = adapt_and_reconstruct(generator, site_index, y, config, seed)
    if final_dc:
        image = enforce_data_consistency(image, y, y.operator)
    return image, trace
