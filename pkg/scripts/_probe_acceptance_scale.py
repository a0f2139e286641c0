"""Throwaway probe: full acceptance-scale training + reconstruction margins."""

import dataclasses
import time

import numpy as np
import torch

from fedprior.data import default_site_styles, render_phantom
from fedprior.federation import init_federation, run_federation
from fedprior.imaging import ImagingOperator, adjoint, make_mask
from fedprior.inference import InferenceConfig, reconstruct
from fedprior.metrics import evaluate_pair
from fedprior.models import ModelConfig
from fedprior.training import TrainConfig
from fedprior.data import simulate_acquisition

SEED = 0
N_TEST = 8


def build_site_data(styles, n_train=70):
    datasets, test_images = [], []
    for k in range(3):
        rng = np.random.default_rng(1000 * SEED + 100 + k)
        imgs = [render_phantom(rng, 64, styles[k], c) for c in ("t1", "t2", "pd") for _ in range(n_train)]
        data = torch.stack([torch.from_numpy(i).abs().unsqueeze(0).float() for i in imgs])
        datasets.append(data)
        rng_t = np.random.default_rng(1000 * SEED + 900 + k)
        test_images.extend(
            render_phantom(rng_t, 64, styles[k], c) for c in ("t1", "t2", "pd")
        )
    return datasets, test_images[:N_TEST]


def recon_set(gen, test_images, rate, density, E):
    mask = make_mask((64, 64), rate, density, 4, seed=2)
    op = ImagingOperator(mask=mask)
    rec_psnr, zf_psnr = [], []
    for i, ph in enumerate(test_images):
        acq = simulate_acquisition(torch.from_numpy(ph), op)
        zf = adjoint(op, acq)
        img, _ = reconstruct(gen, i % 3, acq, InferenceConfig(iterations=E), seed=10 + i)
        rec_psnr.append(evaluate_pair(ph, img)["psnr_db"])
        zf_psnr.append(evaluate_pair(ph, zf)["psnr_db"])
    return float(np.mean(rec_psnr)), float(np.mean(zf_psnr))


def main():
    styles = [dataclasses.replace(s, phase_strength=0.0) for s in default_site_styles(3)]
    datasets, test_images = build_site_data(styles)
    print("slices per site:", [d.shape[0] for d in datasets], flush=True)

    for site_input in (True, False):
        cfg = ModelConfig(resolution=64, n_sites=3, out_channels=1, site_input=site_input)
        tcfg = TrainConfig(local_epochs=1, batch_size=16)
        state = init_federation(datasets, cfg, tcfg, seed=SEED, total_rounds=40)
        t0 = time.time()
        gen, recs = run_federation(state, tcfg, rounds=40)
        print(
            "site_input=%s trained 40 rounds in %.0fs G=%.2f D=%.2f"
            % (site_input, time.time() - t0, np.mean(recs[-1].site_g_loss), np.mean(recs[-1].site_d_loss)),
            flush=True,
        )
        t0 = time.time()
        rec, zf = recon_set(gen, test_images, 3.0, "variable", 1000)
        print(
            "  R=3 VD : recon %.2f dB vs ZF %.2f dB (margin %+.2f) [%.0fs]"
            % (rec, zf, rec - zf, time.time() - t0),
            flush=True,
        )
        if site_input:
            for rate, density in ((6.0, "variable"), (3.0, "uniform")):
                t0 = time.time()
                rec, zf = recon_set(gen, test_images, rate, density, 1000)
                print(
                    "  R=%g %s: recon %.2f dB vs ZF %.2f dB (margin %+.2f) [%.0fs]"
                    % (rate, density, rec, zf, rec - zf, time.time() - t0),
                    flush=True,
                )


if __name__ == "__main__":
    main()
