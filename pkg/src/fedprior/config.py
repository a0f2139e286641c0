"""Declarative experiment configuration: a flat dataclass loadable from a
JSON file, overridable by CLI flags, and always persisted next to outputs."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Tuple

from .errors import InvalidArgumentError, NotFoundError
from .inference import InferenceConfig
from .models import ModelConfig
from .training import TrainConfig, make_progressive_schedule


@dataclass
class ExperimentConfig:
    seed: int = 0
    # data generation
    n_sites: int = 3
    subjects_split: Tuple[int, int, int] = (10, 2, 3)
    contrasts: Tuple[str, ...] = ("t1", "t2", "pd")
    resolution: int = 64
    slices_per_subject: int = 7
    # acquisition
    rate: float = 3.0
    density: str = "variable"
    calibration_lines: int = 6
    n_coils: int = 1
    noise_snr_db: Optional[float] = None
    # model
    latent_dim: int = 32
    base_channels: int = 8
    max_channels: int = 64
    out_channels: int = 2
    site_input: bool = True
    # training
    rounds: int = 40
    local_epochs: int = 2
    batch_size: int = 16
    lr: float = 1e-3
    adam_beta1: float = 0.0
    adam_beta2: float = 0.99
    grad_penalty: float = 10.0
    progressive: bool = False
    checkpoint_interval: int = 10
    # inference
    inference_lr: float = 1e-2
    inference_iterations: int = 1000
    tv_weight: float = 1e-4
    inference_beta1: float = 0.9
    inference_beta2: float = 0.999
    final_dc: bool = True

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            resolution=self.resolution,
            latent_dim=self.latent_dim,
            n_sites=self.n_sites,
            site_input=self.site_input,
            base_channels=self.base_channels,
            max_channels=self.max_channels,
            out_channels=self.out_channels,
        )

    def train_config(self) -> TrainConfig:
        schedule = (
            make_progressive_schedule(self.rounds, self.resolution) if self.progressive else None
        )
        return TrainConfig(
            lr=self.lr,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            grad_penalty=self.grad_penalty,
            local_epochs=self.local_epochs,
            batch_size=self.batch_size,
            progressive_schedule=schedule,
        )

    def inference_config(self) -> InferenceConfig:
        return InferenceConfig(
            lr=self.inference_lr,
            iterations=self.inference_iterations,
            tv_weight=self.tv_weight,
            adam_beta1=self.inference_beta1,
            adam_beta2=self.inference_beta2,
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2))


def load_experiment_config(path=None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Config-file values seed the config; explicit overrides win."""
    values: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise NotFoundError(f"config file {path} not found")
        try:
            values = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise InvalidArgumentError(f"config file {path} is not valid JSON: {err}")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(values) - known
    if unknown:
        raise InvalidArgumentError(f"unknown config keys: {sorted(unknown)}")
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    for key in ("subjects_split", "contrasts"):
        if key in values and values[key] is not None:
            values[key] = tuple(values[key])
    return ExperimentConfig(**values)
