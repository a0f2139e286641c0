"""Federated orchestration: broadcast the global generator, run local
updates in every site, aggregate with sample-count weights.

Sites are in-process workers, but the broadcast passes through a real
serialization boundary so the payload discipline (no discriminator arrays
ever leave a site) is enforced and testable. A single-site federation is
bit-identical to centralized training of the same model.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .errors import IncompatibleModelsError, InvalidArgumentError, FailedSiteError, ToolkitError
from .fileio import deserialize_param_arrays, serialize_param_arrays
from .models import (
    Generator,
    ModelConfig,
    generator_param_arrays,
    load_generator_param_arrays,
    save_checkpoint,
)
from .training import (
    SiteState,
    TrainConfig,
    local_update,
    make_site,
    progressive_stage,
    stage_for_resolution,
)

logger = logging.getLogger(__name__)


def compute_site_weights(sample_counts: Sequence[int]) -> List[float]:
    """Relative site weights: each site's sample count over the total."""
    if len(sample_counts) == 0:
        raise InvalidArgumentError("no sites given")
    if any(c < 0 for c in sample_counts):
        raise InvalidArgumentError("sample counts must be non-negative")
    total = float(sum(sample_counts))
    if total == 0:
        raise InvalidArgumentError("at least one site must have samples")
    return [c / total for c in sample_counts]


def aggregate(
    locals_: Sequence[Dict[str, np.ndarray]], weights: Sequence[float]
) -> Dict[str, np.ndarray]:
    """Elementwise weighted sum of structurally identical parameter sets."""
    if len(locals_) != len(weights):
        raise InvalidArgumentError(f"{len(locals_)} parameter sets vs {len(weights)} weights")
    if not locals_:
        raise InvalidArgumentError("nothing to aggregate")
    reference = locals_[0]
    for other in locals_[1:]:
        if set(other) != set(reference):
            raise IncompatibleModelsError("parameter sets have different names")
        for key in reference:
            if other[key].shape != reference[key].shape:
                raise IncompatibleModelsError(f"shape mismatch for {key}")
    out = {}
    for key in reference:
        acc = np.zeros(reference[key].shape, dtype=np.float64)
        for arrays, w in zip(locals_, weights):
            acc += w * arrays[key].astype(np.float64)
        out[key] = acc.astype(reference[key].dtype)
    return out


def broadcast_payload(generator: Generator) -> bytes:
    """Serialize the global generator (mapper + synthesizer only)."""
    return serialize_param_arrays(generator_param_arrays(generator))


def payload_manifest(payload: bytes) -> List[str]:
    return sorted(deserialize_param_arrays(payload).keys())


@dataclass
class RoundRecord:
    round_index: int
    resolution: int
    alpha: float
    site_g_loss: List[float]
    site_d_loss: List[float]
    wall_time: float
    payload_manifest: List[str]


@dataclass
class FederationState:
    generator: Generator
    sites: List[SiteState]
    weights: List[float]
    model_config: ModelConfig
    round_index: int = 0
    total_rounds: int = 100
    history: List[RoundRecord] = field(default_factory=list)

    def __post_init__(self):
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise InvalidArgumentError("site weights must sum to 1")


def init_federation(
    site_datasets: Sequence[torch.Tensor],
    model_config: ModelConfig,
    train_config: TrainConfig,
    seed: int,
    total_rounds: int = 100,
) -> FederationState:
    """Build the global generator and one worker per site dataset."""
    if not site_datasets:
        raise InvalidArgumentError("need at least one site dataset")
    torch.manual_seed(seed)
    generator = Generator(model_config)
    sites = [
        make_site(k, data, model_config, train_config, seed)
        for k, data in enumerate(site_datasets)
    ]
    weights = compute_site_weights([s.n_samples for s in sites])
    for site, w in zip(sites, weights):
        site.weight = w
    return FederationState(generator, sites, weights, model_config, total_rounds=total_rounds)


def run_federation(
    state: FederationState,
    train_config: TrainConfig,
    rounds: Optional[int] = None,
    checkpoint_dir=None,
    checkpoint_interval: int = 10,
) -> Tuple[Generator, List[RoundRecord]]:
    """Run communication rounds: broadcast, parallel-in-spirit local updates,
    weighted aggregation. A site failure aborts the round loudly; nothing is
    partially aggregated."""
    rounds = state.total_rounds if rounds is None else rounds
    cfg = state.model_config
    records: List[RoundRecord] = []
    first = state.round_index
    for round_index in range(first, first + rounds):
        t0 = time.time()
        if train_config.progressive_schedule:
            resolution, alpha = progressive_stage(round_index, train_config.progressive_schedule)
        else:
            resolution, alpha = cfg.resolution, 1.0
        stage = stage_for_resolution(resolution, cfg)

        payload = broadcast_payload(state.generator)
        manifest = payload_manifest(payload)
        arrays = deserialize_param_arrays(payload)
        site_g, site_d = [], []
        for site in state.sites:
            load_generator_param_arrays(site.generator, arrays)
            try:
                trace = local_update(
                    site,
                    cfg,
                    train_config,
                    stage=stage,
                    alpha=alpha,
                    round_index=round_index,
                )
            except ToolkitError as err:
                raise FailedSiteError(
                    f"site {site.site_id} failed in round {round_index}: {err}",
                    site_id=site.site_id,
                    round_index=round_index,
                ) from err
            site_g.append(sum(trace["G"]) / max(len(trace["G"]), 1))
            site_d.append(sum(trace["D"]) / max(len(trace["D"]), 1))

        aggregated = aggregate(
            [generator_param_arrays(site.generator) for site in state.sites], state.weights
        )
        load_generator_param_arrays(state.generator, aggregated)

        record = RoundRecord(
            round_index, resolution, alpha, site_g, site_d, time.time() - t0, manifest
        )
        records.append(record)
        state.history.append(record)
        state.round_index = round_index + 1
        logger.info(
            "round %d res=%d alpha=%.2f G=%s D=%s wall=%.1fs",
            round_index,
            resolution,
            alpha,
            ["%.3f" % g for g in site_g],
            ["%.3f" % d for d in site_d],
            record.wall_time,
        )

        done = round_index - first + 1
        if checkpoint_dir is not None and (done % checkpoint_interval == 0 or done == rounds):
            save_checkpoint(
                f"{checkpoint_dir}/round_{round_index + 1:04d}.npz",
                state.generator,
                {site.site_id: site.discriminator for site in state.sites},
                round_index=round_index + 1,
                progressive_stage=stage,
            )
    return state.generator, records


def train_centralized(
    data: torch.Tensor,
    model_config: ModelConfig,
    train_config: TrainConfig,
    epochs: int,
    seed: int,
) -> Tuple[Generator, Dict[str, List[float]]]:
    """Centralized benchmark: train the same model on pooled data without
    any communication rounds. With one site and matching seeds this is the
    exact trajectory of the federated loop."""
    torch.manual_seed(seed)
    generator = Generator(model_config)
    site = make_site(0, data, model_config, train_config, seed)
    site.generator = generator
    site.opt_g = torch.optim.Adam(
        generator.parameters(),
        lr=train_config.lr,
        betas=(train_config.adam_beta1, train_config.adam_beta2),
    )
    trace = local_update(site, model_config, train_config, epochs=epochs)
    return generator, trace


def write_loss_csv(path, sites: Sequence[SiteState]) -> None:
    rows = sorted(
        (row for site in sites for row in site.loss_rows),
        key=lambda r: (r[0], r[1], r[2], r[3]),
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "site", "epoch", "role", "loss"])
        writer.writerows(rows)
