"""Unconditional adversarial prior: a site-conditioned mapper, a style-based
synthesizer, and a per-site discriminator.

The mapper turns a normal latent (optionally concatenated with a one-hot
site vector) into an intermediate latent ``w``. The synthesizer grows a
learned 4x4 constant to the output resolution, applying per layer:
upsample -> conv -> noise injection -> AdaIN -> conv -> noise injection ->
AdaIN, with both AdaIN blocks modulated by the same ``w``. The last layer's
second convolution emits the image channels (2 = real/imag complex mode,
1 = magnitude mode). Auxiliary 1x1 image heads per layer support progressive
training at intermediate resolutions.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import InvalidArgumentError, ShapeError

ADAIN_EPS = 1e-8


@dataclass(frozen=True)
class ModelConfig:
    resolution: int = 64
    latent_dim: int = 32  # J
    n_sites: int = 1  # K
    site_input: bool = True  # False = conventional mapper, no one-hot
    mapper_layers: int = 8  # L_M
    base_channels: int = 8
    max_channels: int = 64
    out_channels: int = 2  # 2 = complex (real/imag), 1 = magnitude
    kernel_size: int = 3
    lrelu_slope: float = 0.2

    def __post_init__(self):
        n = self.resolution // 4
        if self.resolution < 4 or n & (n - 1) or self.resolution % 4:
            raise InvalidArgumentError(
                f"resolution must be 4 * 2^k, got {self.resolution}"
            )
        if self.out_channels not in (1, 2):
            raise InvalidArgumentError("out_channels must be 1 or 2")

    @property
    def synth_layers(self) -> int:
        return int(math.log2(self.resolution // 4)) + 1

    def channel_schedule(self) -> List[int]:
        n = self.synth_layers
        return [min(self.max_channels, self.base_channels * 2 ** (n - 1 - i)) for i in range(n)]

    def stage_resolution(self, stage: int) -> int:
        return 4 * 2 ** (stage - 1)


def site_onehot(site_index: int, n_sites: int, batch_size: int = 1) -> torch.Tensor:
    if not 0 <= site_index < n_sites:
        raise InvalidArgumentError(f"site index {site_index} outside [0, {n_sites})")
    v = torch.zeros(batch_size, n_sites)
    v[:, site_index] = 1.0
    return v


def _check_onehot(v: torch.Tensor) -> None:
    binary = ((v == 0) | (v == 1)).all()
    if not binary or not (v.sum(dim=-1) == 1).all():
        raise ShapeError("site vector must be one-hot")


class Mapper(nn.Module):
    """Cascade of fully-connected layers with leaky-ReLU activations mapping
    z (+ one-hot site vector) to the intermediate latent w."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        J = config.latent_dim
        in_dim = J + (config.n_sites if config.site_input else 0)
        dims = [in_dim] + [J] * config.mapper_layers
        self.layers = nn.ModuleList(
            nn.Linear(dims[i], dims[i + 1]) for i in range(config.mapper_layers)
        )
        for layer in self.layers:
            nn.init.kaiming_normal_(layer.weight, a=config.lrelu_slope, nonlinearity="leaky_relu")
            nn.init.zeros_(layer.bias)

    def forward(self, z: torch.Tensor, v: Optional[torch.Tensor] = None) -> torch.Tensor:
        if z.shape[-1] != self.config.latent_dim:
            raise ShapeError(f"latent dim {z.shape[-1]} != {self.config.latent_dim}")
        if self.config.site_input:
            if v is None:
                raise ShapeError("mapper is site-conditioned but no site vector given")
            if v.shape[-1] != self.config.n_sites or v.shape[:-1] != z.shape[:-1]:
                raise ShapeError(f"site vector shape {tuple(v.shape)} incompatible with z")
            _check_onehot(v)
            x = torch.cat([z, v.to(z.dtype)], dim=-1)
        else:
            x = z
        for layer in self.layers:
            x = F.leaky_relu(layer(x), self.config.lrelu_slope)
        return x


def adain(x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    """Adaptive instance normalization: renormalize each channel's spatial
    statistics to scale gamma and bias beta. Degenerate (constant) channels
    are handled by the variance epsilon and map to beta."""
    if x.ndim < 3:
        raise ShapeError("adain expects (..., C, H, W)")
    mean = x.mean(dim=(-2, -1), keepdim=True)
    var = x.var(dim=(-2, -1), unbiased=False, keepdim=True)
    normalized = (x - mean) / torch.sqrt(var + ADAIN_EPS)
    gamma = gamma.reshape(*gamma.shape, 1, 1)
    beta = beta.reshape(*beta.shape, 1, 1)
    return gamma * normalized + beta


def noise_inject(
    x: torch.Tensor, n: torch.Tensor, scale: torch.Tensor, slope: float = 0.2
) -> torch.Tensor:
    """Add per-channel scaled noise fields, then apply leaky ReLU."""
    if n.shape[-3:] != x.shape[-3:]:
        raise ShapeError(f"noise shape {tuple(n.shape)} != feature shape {tuple(x.shape)}")
    scale = scale.reshape(-1, 1, 1)
    return F.leaky_relu(x + scale * n, slope)


class AffineStyle(nn.Module):
    """Affine maps from w to per-channel AdaIN scale and bias."""

    def __init__(self, latent_dim: int, channels: int):
        super().__init__()
        self.scale = nn.Linear(latent_dim, channels)
        self.bias = nn.Linear(latent_dim, channels)
        nn.init.normal_(self.scale.weight, std=1.0 / math.sqrt(latent_dim))
        nn.init.ones_(self.scale.bias)  # identity modulation at init
        nn.init.normal_(self.bias.weight, std=1.0 / math.sqrt(latent_dim))
        nn.init.zeros_(self.bias.bias)

    def forward(self, w: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        return self.scale(w), self.bias(w)


class SynthesizerLayer(nn.Module):
    """One resolution level: optional 2x bilinear upsample, then two
    conv -> noise-inject -> AdaIN cascades sharing the same w."""

    def __init__(
        self,
        in_channels: int,
        mid_channels: int,
        out_channels: int,
        latent_dim: int,
        kernel_size: int,
        slope: float,
        upsample: bool,
    ):
        super().__init__()
        pad = kernel_size // 2
        self.upsample = upsample
        self.slope = slope
        self.conv1 = nn.Conv2d(in_channels, mid_channels, kernel_size, padding=pad, bias=False)
        self.conv2 = nn.Conv2d(mid_channels, out_channels, kernel_size, padding=pad, bias=False)
        self.noise_scale1 = nn.Parameter(torch.zeros(mid_channels))
        self.noise_scale2 = nn.Parameter(torch.zeros(out_channels))
        self.style1 = AffineStyle(latent_dim, mid_channels)
        self.style2 = AffineStyle(latent_dim, out_channels)
        for conv in (self.conv1, self.conv2):
            nn.init.kaiming_normal_(conv.weight, a=slope, nonlinearity="leaky_relu")

    def forward(
        self, x: torch.Tensor, w: torch.Tensor, n1: torch.Tensor, n2: torch.Tensor
    ) -> torch.Tensor:
        if self.upsample:
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = self.conv1(x)
        x = noise_inject(x, n1, self.noise_scale1, self.slope)
        x = adain(x, *self.style1(w))
        x = self.conv2(x)
        x = noise_inject(x, n2, self.noise_scale2, self.slope)
        x = adain(x, *self.style2(w))
        return x


class Synthesizer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        widths = config.channel_schedule()
        n = config.synth_layers
        self.constant = nn.Parameter(torch.ones(1, widths[0], 4, 4))
        layers = []
        for i in range(n):
            in_ch = widths[max(i - 1, 0)]
            out_ch = config.out_channels if i == n - 1 else widths[i]
            layers.append(
                SynthesizerLayer(
                    in_ch,
                    widths[i],
                    out_ch,
                    config.latent_dim,
                    config.kernel_size,
                    config.lrelu_slope,
                    upsample=i > 0,
                )
            )
        self.layers = nn.ModuleList(layers)
        # 1x1 image heads for intermediate progressive stages; the final
        # layer emits image channels directly.
        self.heads = nn.ModuleList(
            nn.Conv2d(widths[i], config.out_channels, 1) for i in range(n - 1)
        )

    def noise_shapes(self, stage: Optional[int] = None, batch_size: int = 1) -> List[Tuple[Tuple[int, ...], Tuple[int, ...]]]:
        stage = stage or self.config.synth_layers
        widths = self.config.channel_schedule()
        n = self.config.synth_layers
        shapes = []
        for i in range(stage):
            res = self.config.stage_resolution(i + 1)
            mid = widths[i]
            out = self.config.out_channels if i == n - 1 else widths[i]
            shapes.append(((batch_size, mid, res, res), (batch_size, out, res, res)))
        return shapes

    def sample_noise(
        self,
        batch_size: int,
        stage: Optional[int] = None,
        generator: Optional[torch.Generator] = None,
    ) -> List[Tuple[torch.Tensor, torch.Tensor]]:
        return [
            (torch.randn(s1, generator=generator), torch.randn(s2, generator=generator))
            for s1, s2 in self.noise_shapes(stage, batch_size)
        ]

    def forward(
        self,
        w: torch.Tensor,
        noise: Sequence[Tuple[torch.Tensor, torch.Tensor]],
        stage: Optional[int] = None,
        alpha: float = 1.0,
    ) -> torch.Tensor:
        stage = stage or self.config.synth_layers
        n = self.config.synth_layers
        if not 1 <= stage <= n:
            raise InvalidArgumentError(f"stage {stage} outside [1, {n}]")
        if len(noise) < stage:
            raise ShapeError(f"need noise for {stage} layers, got {len(noise)}")
        if w.ndim == 1:
            w = w.unsqueeze(0)
        batch = w.shape[0]
        for i in range(stage):
            for b, field in enumerate(noise[i]):
                expected = self.noise_shapes(stage, batch)[i][b]
                if tuple(field.shape) != expected:
                    raise ShapeError(
                        f"noise field {i}/{b} shape {tuple(field.shape)} != {expected}"
                    )

        x = self.constant.expand(batch, -1, -1, -1)
        prev = None
        for i in range(stage):
            prev = x
            x = self.layers[i](x, w, noise[i][0], noise[i][1])

        image = x if stage == n else self.heads[stage - 1](x)
        if alpha < 1.0 and stage > 1:
            low = self.heads[stage - 2](prev)
            low = F.interpolate(low, scale_factor=2, mode="bilinear", align_corners=False)
            image = alpha * image + (1.0 - alpha) * low
        return image


class Generator(nn.Module):
    """Mapper + synthesizer; the communicated model in federated training."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.mapper = Mapper(config)
        self.synthesizer = Synthesizer(config)

    def forward(
        self,
        z: torch.Tensor,
        v: Optional[torch.Tensor],
        noise: Sequence[Tuple[torch.Tensor, torch.Tensor]],
        stage: Optional[int] = None,
        alpha: float = 1.0,
    ) -> torch.Tensor:
        return self.synthesizer(self.mapper(z, v), noise, stage, alpha)


class DiscriminatorBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, slope: float):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.slope = slope
        nn.init.kaiming_normal_(self.conv.weight, a=slope, nonlinearity="leaky_relu")
        nn.init.zeros_(self.conv.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.interpolate(x, scale_factor=0.5, mode="bilinear", align_corners=False)
        return F.leaky_relu(self.conv(x), self.slope)


class Discriminator(nn.Module):
    """Downsample+conv cascade ending in a fully-connected scalar output.
    Mirrors the synthesizer's channel schedule and supports progressive
    stages through per-resolution 1x1 input adapters."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        widths = config.channel_schedule()
        n = config.synth_layers
        self.from_image = nn.ModuleList(
            nn.Conv2d(config.out_channels, widths[i], 1) for i in range(n)
        )
        self.blocks = nn.ModuleList(
            DiscriminatorBlock(widths[i], widths[i - 1], config.lrelu_slope)
            for i in range(1, n)
        )
        self.fc = nn.Linear(widths[0] * 16, 1)
        for conv in self.from_image:
            nn.init.kaiming_normal_(conv.weight, a=config.lrelu_slope, nonlinearity="leaky_relu")
            nn.init.zeros_(conv.bias)
        nn.init.kaiming_normal_(self.fc.weight, a=1.0, nonlinearity="linear")
        nn.init.zeros_(self.fc.bias)

    def forward(self, x: torch.Tensor, stage: Optional[int] = None, alpha: float = 1.0) -> torch.Tensor:
        stage = stage or self.config.synth_layers
        if x.ndim == 3:
            x = x.unsqueeze(0)
        res = self.config.stage_resolution(stage)
        if x.shape[-3:] != (self.config.out_channels, res, res):
            raise ShapeError(
                f"input {tuple(x.shape[-3:])} does not match stage {stage} "
                f"({self.config.out_channels}x{res}x{res})"
            )
        slope = self.config.lrelu_slope
        t = F.leaky_relu(self.from_image[stage - 1](x), slope)
        if stage > 1:
            t = self.blocks[stage - 2](t)
            if alpha < 1.0:
                low = F.interpolate(x, scale_factor=0.5, mode="bilinear", align_corners=False)
                skip = F.leaky_relu(self.from_image[stage - 2](low), slope)
                t = alpha * t + (1.0 - alpha) * skip
            for i in range(stage - 3, -1, -1):
                t = self.blocks[i](t)
        return self.fc(t.flatten(1)).squeeze(-1)


def complex_to_channels(m: torch.Tensor, out_channels: int = 2) -> torch.Tensor:
    """(H, W) complex image -> (C, H, W) float channels."""
    if out_channels == 2:
        return torch.stack([m.real, m.imag]).float()
    return m.abs().unsqueeze(0).float()


def channels_to_complex(x: torch.Tensor) -> torch.Tensor:
    """(C, H, W) generator output -> (H, W) complex image."""
    if x.ndim != 3 or x.shape[0] not in (1, 2):
        raise ShapeError(f"expected (1|2, H, W) channels, got {tuple(x.shape)}")
    if x.shape[0] == 2:
        return torch.complex(x[0], x[1])
    return torch.complex(x[0], torch.zeros_like(x[0]))


# --- parameter array (de)serialization -------------------------------------

def module_param_arrays(module: nn.Module, prefix: str) -> Dict[str, np.ndarray]:
    """Flatten a module's state dict to named numpy arrays under ``prefix``."""
    return {
        f"{prefix}/{key}": value.detach().cpu().numpy().copy()
        for key, value in module.state_dict().items()
    }


def generator_param_arrays(generator: Generator) -> Dict[str, np.ndarray]:
    arrays = module_param_arrays(generator.mapper, "mapper")
    arrays.update(module_param_arrays(generator.synthesizer, "synthesizer"))
    return arrays


def load_module_param_arrays(module: nn.Module, prefix: str, arrays: Dict[str, np.ndarray]) -> None:
    state = {}
    for key, value in arrays.items():
        if key.startswith(prefix + "/"):
            state[key[len(prefix) + 1 :]] = torch.from_numpy(np.ascontiguousarray(value))
    missing = set(module.state_dict()) - set(state)
    if missing:
        raise ShapeError(f"missing parameters under {prefix}: {sorted(missing)[:3]}...")
    module.load_state_dict(state)


def load_generator_param_arrays(generator: Generator, arrays: Dict[str, np.ndarray]) -> None:
    load_module_param_arrays(generator.mapper, "mapper", arrays)
    load_module_param_arrays(generator.synthesizer, "synthesizer", arrays)


def save_checkpoint(
    path,
    generator: Generator,
    discriminators: Optional[Dict[int, Discriminator]] = None,
    round_index: int = 0,
    progressive_stage: Optional[int] = None,
) -> None:
    from .fileio import save_param_arrays

    config = generator.config
    arrays = generator_param_arrays(generator)
    if discriminators:
        for site_id, disc in discriminators.items():
            arrays.update(module_param_arrays(disc, f"discriminator/{site_id}"))
    metadata = {
        "model": asdict(config),
        "latent_dim": config.latent_dim,
        "n_sites": config.n_sites,
        "mapper_layers": config.mapper_layers,
        "synth_layers": config.synth_layers,
        "disc_layers": config.synth_layers,
        "channel_schedule": config.channel_schedule(),
        "progressive_stage": progressive_stage or config.synth_layers,
        "round_index": round_index,
    }
    save_param_arrays(path, arrays, metadata)


def load_checkpoint(path):
    """Load a checkpoint archive; returns (generator, discriminators, metadata)."""
    from .fileio import load_param_arrays

    arrays, metadata = load_param_arrays(path)
    config = ModelConfig(**metadata["model"])
    generator = Generator(config)
    load_generator_param_arrays(generator, arrays)
    site_ids = sorted(
        {int(key.split("/")[1]) for key in arrays if key.startswith("discriminator/")}
    )
    discriminators = {}
    for site_id in site_ids:
        disc = Discriminator(config)
        load_module_param_arrays(disc, f"discriminator/{site_id}", arrays)
        discriminators[site_id] = disc
    return generator, discriminators, metadata
