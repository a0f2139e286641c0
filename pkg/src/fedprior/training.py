"""Per-site adversarial training: non-saturating logistic losses, R1
gradient penalty on real images, alternating Adam updates, and the
progressive-growing schedule.

One local update runs I epochs over the site's data; each minibatch takes
a single generator step followed by a single discriminator step. Optimizer
state and the site RNG stream persist across communication rounds, so a
K=1 federation reproduces centralized training exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

from .errors import DivergedTrainingError, InvalidArgumentError
from .models import Discriminator, Generator, ModelConfig, site_onehot


class ProgressivePhase(NamedTuple):
    resolution: int
    rounds: int
    fade_fraction: float


@dataclass
class TrainConfig:
    lr: float = 1e-3
    adam_beta1: float = 0.0
    adam_beta2: float = 0.99
    grad_penalty: float = 10.0  # delta
    local_epochs: int = 150  # I
    batch_size: int = 16
    progressive_schedule: Optional[Tuple[ProgressivePhase, ...]] = None

    def __post_init__(self):
        if self.lr <= 0:
            raise InvalidArgumentError("learning rate must be positive")
        if self.grad_penalty < 0:
            raise InvalidArgumentError("gradient penalty weight must be >= 0")
        if self.local_epochs < 0:
            raise InvalidArgumentError("local epoch count must be >= 0")


def make_progressive_schedule(
    total_rounds: int, final_resolution: int, fade_fraction: float = 0.5
) -> Tuple[ProgressivePhase, ...]:
    """Stages from 4x4 up to the final resolution, equally dividing the
    round budget; within each later stage the new layer fades in linearly
    over the first ``fade_fraction`` of its rounds."""
    n_stages = int(math.log2(final_resolution // 4)) + 1
    per_stage = max(1, total_rounds // n_stages)
    phases = []
    for i in range(n_stages):
        rounds = per_stage if i < n_stages - 1 else max(1, total_rounds - per_stage * (n_stages - 1))
        phases.append(ProgressivePhase(4 * 2**i, rounds, fade_fraction))
    return tuple(phases)


def progressive_stage(
    round_index: int, schedule: Optional[Sequence[ProgressivePhase]]
) -> Tuple[int, float]:
    """Resolve (active resolution, fade-in alpha) for a communication round.
    Rounds past the schedule stay at the final stage."""
    if not schedule:
        raise InvalidArgumentError("empty progressive schedule")
    start = 0
    for idx, phase in enumerate(schedule):
        if round_index < start + phase.rounds:
            if idx == 0:
                return phase.resolution, 1.0
            local = round_index - start
            fade_len = int(phase.rounds * phase.fade_fraction)
            if local >= fade_len:
                return phase.resolution, 1.0
            return phase.resolution, (local + 1) / (fade_len + 1)
        start += phase.rounds
    return schedule[-1].resolution, 1.0


def stage_for_resolution(resolution: int, config: ModelConfig) -> int:
    stage = int(math.log2(resolution // 4)) + 1
    if config.stage_resolution(stage) != resolution:
        raise InvalidArgumentError(f"resolution {resolution} is not a stage resolution")
    return stage


def generator_loss(
    generator: Generator,
    discriminator: Discriminator,
    z: torch.Tensor,
    v: Optional[torch.Tensor],
    noise,
    stage: Optional[int] = None,
    alpha: float = 1.0,
) -> torch.Tensor:
    """Non-saturating logistic loss -E[log sigmoid(D(G(z+v, n)))]."""
    if z.shape[0] == 0:
        raise InvalidArgumentError("empty latent batch")
    fake = generator(z, v, noise, stage, alpha)
    logits = discriminator(fake, stage, alpha)
    return F.softplus(-logits).mean()


def r1_penalty(
    discriminator: Discriminator,
    real: torch.Tensor,
    stage: Optional[int] = None,
    alpha: float = 1.0,
) -> torch.Tensor:
    """Mean squared L2 norm of the discriminator's input gradient on reals."""
    real = real.detach().requires_grad_(True)
    logits = discriminator(real, stage, alpha)
    (grads,) = torch.autograd.grad(logits.sum(), real, create_graph=True)
    return grads.pow(2).flatten(1).sum(dim=1).mean()


def discriminator_loss(
    discriminator: Discriminator,
    generator: Generator,
    real: torch.Tensor,
    z: torch.Tensor,
    v: Optional[torch.Tensor],
    noise,
    grad_penalty: float = 10.0,
    stage: Optional[int] = None,
    alpha: float = 1.0,
) -> torch.Tensor:
    """Logistic loss on fake and real batches plus the R1 penalty:
    -E[log(1 - sigmoid(D(fake)))] - E[log sigmoid(D(real))] + (delta/2) R1."""
    if real.shape[0] == 0 or z.shape[0] == 0:
        raise InvalidArgumentError("empty real or latent batch")
    with torch.no_grad():
        fake = generator(z, v, noise, stage, alpha)
    loss = F.softplus(discriminator(fake, stage, alpha)).mean()
    loss = loss + F.softplus(-discriminator(real, stage, alpha)).mean()
    if grad_penalty > 0:
        loss = loss + 0.5 * grad_penalty * r1_penalty(discriminator, real, stage, alpha)
    return loss


@dataclass
class SiteState:
    """Everything a site owns: its data, local generator/discriminator
    copies, persistent Adam optimizers, and a private RNG stream."""

    site_id: int
    data: torch.Tensor  # (N, C, H, W) float, zero-padded to model resolution
    generator: Generator
    discriminator: Discriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    rng: torch.Generator
    weight: float = 1.0
    loss_rows: List[Tuple[int, int, int, str, float]] = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]


def make_site(
    site_id: int,
    data: torch.Tensor,
    model_config: ModelConfig,
    train_config: TrainConfig,
    seed: int,
) -> SiteState:
    if data.shape[0] == 0:
        raise InvalidArgumentError(f"site {site_id} has no training data")
    torch.manual_seed(seed * 1009 + 17 + site_id)
    generator = Generator(model_config)
    discriminator = Discriminator(model_config)
    opt_g = torch.optim.Adam(
        generator.parameters(),
        lr=train_config.lr,
        betas=(train_config.adam_beta1, train_config.adam_beta2),
    )
    opt_d = torch.optim.Adam(
        discriminator.parameters(),
        lr=train_config.lr,
        betas=(train_config.adam_beta1, train_config.adam_beta2),
    )
    rng = torch.Generator()
    rng.manual_seed(seed * 1009 + 9001 + site_id)
    return SiteState(site_id, data, generator, discriminator, opt_g, opt_d, rng)


def local_update(
    site: SiteState,
    model_config: ModelConfig,
    train_config: TrainConfig,
    epochs: Optional[int] = None,
    stage: Optional[int] = None,
    alpha: float = 1.0,
    round_index: int = 0,
) -> Dict[str, List[float]]:
    """Run I local epochs of alternating generator/discriminator Adam steps.
    Returns per-epoch mean losses, one entry per role per epoch."""
    epochs = train_config.local_epochs if epochs is None else epochs
    gen, disc = site.generator, site.discriminator
    cfg = model_config
    stage = stage or cfg.synth_layers
    res = cfg.stage_resolution(stage)

    data = site.data
    if data.shape[-1] != res:
        data = F.interpolate(data, size=(res, res), mode="bilinear", align_corners=False)

    trace: Dict[str, List[float]] = {"G": [], "D": []}
    n = data.shape[0]
    for epoch in range(epochs):
        order = torch.randperm(n, generator=site.rng)
        g_losses, d_losses = [], []
        for start in range(0, n, train_config.batch_size):
            real = data[order[start : start + train_config.batch_size]]
            batch = real.shape[0]
            z = torch.randn(batch, cfg.latent_dim, generator=site.rng)
            v = site_onehot(site.site_id, cfg.n_sites, batch) if cfg.site_input else None
            noise = gen.synthesizer.sample_noise(batch, stage, generator=site.rng)

            g_loss = generator_loss(gen, disc, z, v, noise, stage, alpha)
            site.opt_g.zero_grad()
            disc.zero_grad(set_to_none=True)
            g_loss.backward()
            site.opt_g.step()

            d_loss = discriminator_loss(
                disc, gen, real, z, v, noise, train_config.grad_penalty, stage, alpha
            )
            site.opt_d.zero_grad()
            gen.zero_grad(set_to_none=True)
            d_loss.backward()
            site.opt_d.step()

            if not (torch.isfinite(g_loss) and torch.isfinite(d_loss)):
                raise DivergedTrainingError(
                    f"non-finite loss at site {site.site_id}, epoch {epoch}", epoch=epoch
                )
            g_losses.append(float(g_loss.detach()))
            d_losses.append(float(d_loss.detach()))

        g_mean = sum(g_losses) / len(g_losses)
        d_mean = sum(d_losses) / len(d_losses)
        trace["G"].append(g_mean)
        trace["D"].append(d_mean)
        site.loss_rows.append((round_index, site.site_id, epoch, "G", g_mean))
        site.loss_rows.append((round_index, site.site_id, epoch, "D", d_mean))
    return trace
