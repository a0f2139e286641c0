"""Command-line entry points: data generation, federated training,
reconstruction, and evaluation ending in table-style reports.

Exit codes: 0 success, 2 configuration error, 3 runtime error. The short
error name is printed on stderr.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np
import torch

from .config import ExperimentConfig, load_experiment_config
from .data import (
    default_site_styles,
    load_manifest,
    load_split_images,
    make_phantom_set,
    simulate_acquisition,
    training_tensor,
)
from .errors import (
    EmptyInputError,
    InfeasibleMaskError,
    InvalidArgumentError,
    InvalidRateError,
    NotFoundError,
    ToolkitError,
)
from .federation import init_federation, run_federation, write_loss_csv
from .fileio import load_acquisition, load_complex_array, save_complex_array
from .imaging import ImagingOperator, adjoint, make_mask, make_synthetic_coils
from .inference import InferenceConfig, reconstruct
from .metrics import evaluate_pair, write_aggregate_csv
from .models import (
    generator_param_arrays,
    load_checkpoint,
    load_generator_param_arrays,
    save_checkpoint,
)

_CONFIG_ERRORS = (NotFoundError, InvalidArgumentError, InvalidRateError, InfeasibleMaskError)


def _cli_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _CONFIG_ERRORS as err:
            click.echo(err.name, err=True)
            sys.exit(2)
        except ToolkitError as err:
            click.echo(err.name, err=True)
            sys.exit(3)
        except FileNotFoundError:
            click.echo("not-found", err=True)
            sys.exit(2)
        except OSError:
            click.echo("io-error", err=True)
            sys.exit(3)

    return wrapper


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log per-round progress.")
def main(verbose):
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(message)s",
        stream=sys.stderr,
    )


def _load_config(config_path, **overrides) -> ExperimentConfig:
    return load_experiment_config(config_path, overrides)


@main.command("make-data")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--sites", "n_sites", type=int, default=None)
@click.option("--resolution", type=int, default=None)
@click.option("--subjects", default=None, help="train,val,test subject counts")
@click.option("--slices", "slices_per_subject", type=int, default=None)
@click.option("--rate", type=float, default=None)
@click.option("--density", type=click.Choice(["variable", "uniform"]), default=None)
@_cli_errors
def cmd_make_data(config_path, out, seed, n_sites, resolution, subjects, slices_per_subject, rate, density):
    """Generate per-site phantom datasets with manifests."""
    overrides = dict(
        seed=seed,
        n_sites=n_sites,
        resolution=resolution,
        slices_per_subject=slices_per_subject,
        rate=rate,
        density=density,
    )
    if subjects:
        overrides["subjects_split"] = tuple(int(x) for x in subjects.split(","))
    cfg = _load_config(config_path, **overrides)

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    styles = default_site_styles(cfg.n_sites)
    for k in range(cfg.n_sites):
        make_phantom_set(
            out_dir / f"site{k}",
            split=cfg.subjects_split,
            contrasts=cfg.contrasts,
            resolution=cfg.resolution,
            site_style=styles[k],
            seed=cfg.seed * 10007 + k,
            site_id=k,
            slices_per_subject=cfg.slices_per_subject,
            forward_model={"rate": cfg.rate, "density": cfg.density},
        )
    cfg.save(out_dir / "config.json")
    click.echo(f"wrote {cfg.n_sites} site manifests under {out_dir}")


def _site_manifests(data_dir: Path):
    manifests = sorted(data_dir.glob("site*/manifest.json"))
    if not manifests:
        raise NotFoundError(f"no site manifests under {data_dir}")
    return [load_manifest(p) for p in manifests]


@main.command("train")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--rounds", type=int, default=None)
@click.option("--epochs", "local_epochs", type=int, default=None)
@click.option("--progressive/--no-progressive", default=None)
@click.option("--resume", "resume_path", type=click.Path(), default=None)
@_cli_errors
def cmd_train(config_path, data_dir, out, seed, rounds, local_epochs, progressive, resume_path):
    """Federated training of the generative prior over the site datasets."""
    cfg = _load_config(
        config_path, seed=seed, rounds=rounds, local_epochs=local_epochs, progressive=progressive
    )
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifests = _site_manifests(Path(data_dir))
    cfg = dataclasses.replace(cfg, n_sites=len(manifests))

    datasets = [
        training_tensor(load_split_images(m, "train"), cfg.resolution, cfg.out_channels)
        for m in manifests
    ]
    state = init_federation(
        datasets, cfg.model_config(), cfg.train_config(), cfg.seed, total_rounds=cfg.rounds
    )
    if resume_path:
        generator, discriminators, metadata = load_checkpoint(resume_path)
        load_generator_param_arrays(state.generator, generator_param_arrays(generator))
        for site in state.sites:
            if site.site_id in discriminators:
                site.discriminator.load_state_dict(discriminators[site.site_id].state_dict())
        state.round_index = metadata.get("round_index", 0)

    remaining = cfg.rounds - state.round_index
    if remaining < 0:
        raise InvalidArgumentError(
            f"checkpoint is at round {state.round_index}, beyond --rounds {cfg.rounds}"
        )
    generator, records = run_federation(
        state,
        cfg.train_config(),
        rounds=remaining,
        checkpoint_dir=out_dir,
        checkpoint_interval=cfg.checkpoint_interval,
    )
    write_loss_csv(out_dir / "losses.csv", state.sites)
    save_checkpoint(
        out_dir / "checkpoint.npz",
        generator,
        {s.site_id: s.discriminator for s in state.sites},
        round_index=state.round_index,
    )
    cfg.save(out_dir / "config.json")
    click.echo(f"trained {len(records)} rounds; checkpoint at {out_dir / 'checkpoint.npz'}")


@main.command("reconstruct")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--acquisition", "acquisition_dir", type=click.Path(), default=None)
@click.option("--manifest", "manifest_path", type=click.Path(), default=None)
@click.option("--split", default="test")
@click.option("--index", type=int, default=0, help="slice index within the split")
@click.option("--site", type=int, default=0)
@click.option("--seed", type=int, default=None)
@click.option("--rate", type=float, default=None)
@click.option("--density", type=click.Choice(["variable", "uniform"]), default=None)
@click.option("--coils", "n_coils", type=int, default=None)
@click.option("--iterations", type=int, default=None)
@click.option("--final-dc/--no-final-dc", default=True)
@_cli_errors
def cmd_reconstruct(
    config_path,
    checkpoint,
    out,
    acquisition_dir,
    manifest_path,
    split,
    index,
    site,
    seed,
    rate,
    density,
    n_coils,
    iterations,
    final_dc,
):
    """Reconstruct one acquisition with the trained prior; the imaging
    operator may differ freely from the one seen during training."""
    cfg = _load_config(
        config_path,
        seed=seed,
        rate=rate,
        density=density,
        n_coils=n_coils,
        inference_iterations=iterations,
    )
    generator, _, metadata = load_checkpoint(checkpoint)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)

    reference = None
    if acquisition_dir:
        acq, reference = load_acquisition(acquisition_dir)
    elif manifest_path:
        manifest = load_manifest(manifest_path)
        entries = manifest.entries(split)
        if not entries:
            raise EmptyInputError(f"split {split!r} of {manifest_path} is empty")
        if not 0 <= index < len(entries):
            raise InvalidArgumentError(f"index {index} outside split of {len(entries)}")
        reference = load_complex_array(manifest.root / entries[index]["path"])
        shape = reference.shape
        mask = make_mask(shape, cfg.rate, cfg.density, cfg.calibration_lines, cfg.seed)
        coils = make_synthetic_coils(shape, cfg.n_coils, cfg.seed) if cfg.n_coils > 1 else None
        op = ImagingOperator(mask=mask, coils=coils, image_shape=shape)
        acq = simulate_acquisition(
            torch.from_numpy(reference), op, cfg.noise_snr_db, seed=cfg.seed
        )
    else:
        raise InvalidArgumentError("need --acquisition or --manifest")

    inference_cfg = cfg.inference_config()
    image, trace = reconstruct(
        generator, site, acq, inference_cfg, seed=cfg.seed, final_dc=final_dc
    )
    save_complex_array(out_dir / "reconstruction.bin", image.numpy())
    zf = adjoint(acq.operator, acq)
    save_complex_array(out_dir / "zero_filled.bin", zf.numpy())
    with open(out_dir / "trace.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "total", "data", "tv"])
        for i, (t, d, p) in enumerate(zip(trace.total, trace.data, trace.tv)):
            writer.writerow([i, t, d, p])

    if reference is not None:
        entry = evaluate_pair(reference, image)
        zf_entry = evaluate_pair(reference, zf)
        payload = {
            "method": "adapted-prior",
            "rate": acq.operator.mask.rate,
            "density": acq.operator.mask.density,
            "site": site,
            **entry,
            "zf_psnr_db": zf_entry["psnr_db"],
            "zf_ssim_pct": zf_entry["ssim_pct"],
        }
        (out_dir / "metrics.json").write_text(json.dumps(payload, indent=2))
    cfg.save(out_dir / "config.json")
    click.echo(f"reconstruction written to {out_dir}")


@main.command("evaluate")
@click.argument("results", nargs=-1, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@_cli_errors
def cmd_evaluate(results, out):
    """Aggregate reconstruction metrics into a CSV table and plots."""
    metric_files = []
    for root in results:
        root = Path(root)
        if root.is_file() and root.name.endswith(".json"):
            metric_files.append(root)
        else:
            metric_files.extend(sorted(root.rglob("metrics.json")))
    if not metric_files:
        raise EmptyInputError("no metrics found in the given result sets")

    groups = {}
    for path in sorted(metric_files):
        entry = json.loads(path.read_text())
        key = (entry.get("method", "unknown"), entry.get("rate"), entry.get("density"), entry.get("site"))
        groups.setdefault(key, []).append(entry)

    rows = []
    for (method, rate, density, site), entries in sorted(
        groups.items(), key=lambda kv: tuple(str(x) for x in kv[0])
    ):
        psnrs = np.array([e["psnr_db"] for e in entries])
        ssims = np.array([e["ssim_pct"] for e in entries])
        rows.append(
            {
                "method": method,
                "rate": rate,
                "density": density,
                "site": site,
                "psnr_mean": round(float(psnrs.mean()), 4),
                "psnr_std": round(float(psnrs.std()), 4),
                "ssim_mean": round(float(ssims.mean()), 4),
                "ssim_std": round(float(ssims.std()), 4),
                "n": len(entries),
            }
        )

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_aggregate_csv(out_dir / "aggregate.csv", rows)
    _plot_aggregate(rows, out_dir / "psnr.png")
    click.echo(f"wrote {len(rows)} aggregate rows to {out_dir / 'aggregate.csv'}")


def _plot_aggregate(rows, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [f"{r['method']}\nR={r['rate']} {r['density']}" for r in rows]
    means = [r["psnr_mean"] for r in rows]
    stds = [r["psnr_std"] for r in rows]
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(rows)), 3.2))
    ax.bar(range(len(rows)), means, yerr=stds, color="#4878a8")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylabel("PSNR (dB)")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


if __name__ == "__main__":
    main()
