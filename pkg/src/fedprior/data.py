"""Synthetic multi-contrast phantom datasets partitioned across simulated
sites, plus retrospective acquisition simulation.

Phantoms are randomized ellipse collections with smooth texture and a
smooth phase map; contrast variants remap tissue intensities and the site
style shifts geometry/intensity statistics to create cross-site domain
shift. Subjects never straddle split boundaries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from scipy.ndimage import gaussian_filter

from .errors import InvalidArgumentError, NotFoundError, ShapeError
from .fileio import load_complex_array, save_complex_array
from .imaging import ImagingOperator, KSpaceAcquisition, forward, pad_to

# per-contrast intensity of tissue classes (wm, gm, csf, lesion)
CONTRAST_TISSUES: Dict[str, Tuple[float, float, float, float]] = {
    "t1": (0.80, 0.55, 0.15, 0.40),
    "t2": (0.35, 0.55, 0.95, 0.80),
    "pd": (0.60, 0.75, 0.85, 0.70),
}


@dataclass(frozen=True)
class SiteStyle:
    """Knobs that shift a site's image distribution."""

    geometry_scale: float = 1.0
    intensity_gamma: float = 1.0
    n_ellipses: Tuple[int, int] = (5, 10)
    texture_amp: float = 0.04
    phase_strength: float = 0.25


def default_site_styles(n_sites: int) -> List[SiteStyle]:
    """Mildly different geometry/intensity statistics per simulated site."""
    styles = []
    for k in range(n_sites):
        styles.append(
            SiteStyle(
                geometry_scale=1.0 - 0.08 * (k % 3),
                intensity_gamma=(0.85, 1.0, 1.2)[k % 3],
                n_ellipses=(5 + (k % 3), 10 + (k % 3)),
                texture_amp=0.03 + 0.01 * (k % 3),
            )
        )
    return styles


def _ellipse_mask(yy, xx, cy, cx, ay, ax, angle) -> np.ndarray:
    ys, xs = yy - cy, xx - cx
    c, s = np.cos(angle), np.sin(angle)
    u = (c * xs + s * ys) / ax
    v = (-s * xs + c * ys) / ay
    return u * u + v * v <= 1.0


def render_phantom(
    rng: np.random.Generator, resolution: int, style: SiteStyle, contrast: str
) -> np.ndarray:
    """One coil-combined complex slice: ellipse tissues under the requested
    contrast weighting, smooth texture, and a smooth phase map."""
    if contrast not in CONTRAST_TISSUES:
        raise InvalidArgumentError(f"unknown contrast {contrast!r}")
    tissues = CONTRAST_TISSUES[contrast]
    coords = np.linspace(-1.0, 1.0, resolution)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")

    scale = style.geometry_scale
    mag = np.zeros((resolution, resolution))
    head_ay = scale * rng.uniform(0.75, 0.9)
    head_ax = scale * rng.uniform(0.6, 0.75)
    head = _ellipse_mask(yy, xx, 0.0, 0.0, head_ay, head_ax, rng.uniform(-0.2, 0.2))
    mag[head] = tissues[0] * rng.uniform(0.9, 1.1)

    n_ell = rng.integers(style.n_ellipses[0], style.n_ellipses[1] + 1)
    for _ in range(n_ell):
        tissue = int(rng.integers(1, len(tissues)))
        cy, cx = rng.uniform(-0.45, 0.45, size=2) * scale
        ay, ax = rng.uniform(0.06, 0.35, size=2) * scale
        angle = rng.uniform(0, np.pi)
        blob = _ellipse_mask(yy, xx, cy, cx, ay, ax, angle) & head
        mag[blob] = tissues[tissue] * rng.uniform(0.9, 1.1)

    texture = gaussian_filter(rng.standard_normal(mag.shape), sigma=resolution / 16)
    mag = mag + style.texture_amp * texture * head
    mag = np.clip(mag, 0.0, None) ** style.intensity_gamma
    mag = np.clip(mag / max(mag.max(), 1e-12), 0.0, 1.0)

    phase = gaussian_filter(rng.standard_normal(mag.shape), sigma=resolution / 8)
    phase = np.pi * style.phase_strength * phase / max(np.abs(phase).max(), 1e-12)
    return (mag * np.exp(1j * phase)).astype(np.complex64)


@dataclass
class DatasetManifest:
    site_id: int
    resolution: int
    contrasts: List[str]
    seed: int
    forward_model: Dict
    splits: Dict[str, List[Dict]]
    root: Path = field(default=Path("."), repr=False)

    def subject_ids(self, split: str) -> set:
        return {entry["subject"] for entry in self.splits.get(split, [])}

    def entries(self, split: str) -> List[Dict]:
        return self.splits.get(split, [])

    def save(self, path) -> None:
        payload = {
            "site_id": self.site_id,
            "resolution": self.resolution,
            "contrasts": self.contrasts,
            "seed": self.seed,
            "forward_model": self.forward_model,
            "splits": self.splits,
        }
        Path(path).write_text(json.dumps(payload, indent=2))


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"manifest {path} not found")
    payload = json.loads(path.read_text())
    return DatasetManifest(root=path.parent, **payload)


def make_phantom_set(
    out_dir,
    split: Tuple[int, int, int],
    contrasts: Sequence[str],
    resolution: int,
    site_style: SiteStyle,
    seed: int,
    site_id: int = 0,
    slices_per_subject: int = 7,
    forward_model: Optional[Dict] = None,
) -> DatasetManifest:
    """Generate (train, validation, test) subjects for one site and persist
    every slice in the ri-planes format. Deterministic in ``seed``."""
    n = resolution // 4
    if resolution < 4 or resolution % 4 or n & (n - 1):
        raise InvalidArgumentError(f"resolution must be 4 * 2^k, got {resolution}")
    if any(c not in CONTRAST_TISSUES for c in contrasts):
        raise InvalidArgumentError(f"contrasts must be among {sorted(CONTRAST_TISSUES)}")

    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    split_names = ("train", "validation", "test")
    splits: Dict[str, List[Dict]] = {name: [] for name in split_names}
    n_subjects = sum(split)

    seeds = np.random.SeedSequence(seed).spawn(max(n_subjects, 1))
    subject_index = 0
    for split_name, count in zip(split_names, split):
        for _ in range(count):
            subject = f"site{site_id}_subject{subject_index:03d}"
            rng = np.random.default_rng(seeds[subject_index])
            for contrast in contrasts:
                for slice_index in range(slices_per_subject):
                    image = render_phantom(rng, resolution, site_style, contrast)
                    rel = f"images/{subject}_{contrast}_{slice_index:02d}.bin"
                    save_complex_array(out_dir / rel, image)
                    splits[split_name].append(
                        {
                            "subject": subject,
                            "contrast": contrast,
                            "slice": slice_index,
                            "path": rel,
                        }
                    )
            subject_index += 1

    manifest = DatasetManifest(
        site_id=site_id,
        resolution=resolution,
        contrasts=list(contrasts),
        seed=seed,
        forward_model=forward_model or {"rate": 3.0, "density": "variable"},
        splits=splits,
        root=out_dir,
    )
    manifest.save(out_dir / "manifest.json")
    return manifest


def load_split_images(manifest: DatasetManifest, split: str) -> List[np.ndarray]:
    return [
        load_complex_array(manifest.root / entry["path"]) for entry in manifest.entries(split)
    ]


def training_tensor(
    images: Sequence[np.ndarray], resolution: int, out_channels: int = 2
) -> torch.Tensor:
    """Stack complex slices into a float training tensor, zero-padding up to
    the model resolution. Channels: (real, imag) or magnitude."""
    if not images:
        raise InvalidArgumentError("no images given")
    stacked = []
    for img in images:
        t = torch.from_numpy(np.ascontiguousarray(img))
        if out_channels == 2:
            planes = torch.stack([t.real, t.imag]).float()
        else:
            planes = t.abs().unsqueeze(0).float()
        stacked.append(pad_to(planes, (resolution, resolution)))
    return torch.stack(stacked)


def simulate_acquisition(
    m: torch.Tensor,
    op: ImagingOperator,
    noise_snr_db: Optional[float] = None,
    seed: int = 0,
) -> KSpaceAcquisition:
    """Retrospectively undersample a coil-combined image; optional complex
    white Gaussian noise at the given SNR on acquired samples only."""
    if tuple(m.shape[-2:]) != tuple(op.image_shape):
        raise ShapeError(f"image {tuple(m.shape)} does not match operator {op.image_shape}")
    acq = forward(op, m)
    if noise_snr_db is None:
        return acq
    mask = torch.from_numpy(op.mask.pattern.copy())
    acquired = acq.samples[:, mask]
    signal_power = acquired.abs().pow(2).mean()
    noise_power = signal_power * 10 ** (-noise_snr_db / 10)
    rng = torch.Generator()
    rng.manual_seed(seed)
    std = torch.sqrt(noise_power / 2)
    noise = torch.complex(
        std * torch.randn(acq.samples.shape, generator=rng),
        std * torch.randn(acq.samples.shape, generator=rng),
    )
    samples = acq.samples + noise.to(acq.samples.dtype) * mask
    return KSpaceAcquisition(samples=samples, operator=op)
