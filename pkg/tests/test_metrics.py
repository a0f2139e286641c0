import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedprior.errors import InvalidArgumentError, ShapeError
from fedprior.metrics import (
    MetricReport,
    evaluate_pair,
    normalize01,
    psnr,
    ssim,
    to_magnitude,
    write_aggregate_csv,
)


class TestNormalize01:
    def test_affine_rescale(self):
        assert np.allclose(normalize01(np.array([0.0, 5.0, 10.0])), [0.0, 0.5, 1.0])

    def test_full_range_input_unchanged(self):
        x = np.array([[0.0, 0.25], [0.75, 1.0]])
        assert np.allclose(normalize01(x), x)

    def test_constant_maps_to_zeros(self):
        assert np.array_equal(normalize01(np.full((4, 4), 7.0)), np.zeros((4, 4)))

    @settings(deadline=None, max_examples=30)
    @given(st.integers(0, 1000))
    def test_output_range(self, seed):
        rng = np.random.default_rng(seed)
        out = normalize01(rng.standard_normal((8, 8)) * rng.uniform(0.1, 100))
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestPSNR:
    def test_identical_images_capped(self):
        x = np.random.default_rng(0).random((16, 16))
        assert psnr(x, x) == 99.0

    def test_known_mse(self):
        # MSE = 0.01 -> 10 log10(1/0.01) = 20 dB exactly
        ref = np.zeros((8, 8))
        test = np.full((8, 8), 0.1)
        assert abs(psnr(ref, test) - 20.0) < 1e-12

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        a, b = rng.random((8, 8)), rng.random((8, 8))
        assert psnr(a, b) == psnr(b, a)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            psnr(np.zeros((4, 4)), np.zeros((8, 8)))

    def test_monotone_in_noise_level(self):
        rng = np.random.default_rng(2)
        ref = rng.random((32, 32))
        noise = rng.standard_normal((32, 32))
        values = [psnr(ref, np.clip(ref + s * noise, 0, 1)) for s in (0.01, 0.03, 0.1, 0.3)]
        assert all(a >= b for a, b in zip(values, values[1:]))


class TestSSIM:
    def test_identical_is_exactly_100(self):
        x = np.random.default_rng(0).random((32, 32))
        assert ssim(x, x) == 100.0

    def test_inverted_below_100(self):
        x = np.random.default_rng(1).random((32, 32))
        assert ssim(x, 1.0 - x) < 100.0

    def test_symmetric(self):
        rng = np.random.default_rng(2)
        a, b = rng.random((24, 24)), rng.random((24, 24))
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-9

    def test_window_larger_than_image_rejected(self):
        with pytest.raises(InvalidArgumentError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_matches_reference_implementation(self):
        # independent oracle: scikit-image with the canonical Wang setup
         # (Gaussian weights, sigma 1.5, 11x11 window, no sample covariance)
        from skimage.metrics import structural_similarity

        rng = np.random.default_rng(3)
        for trial in range(5):
            ref = rng.random((48, 48))
            test = np.clip(ref + rng.standard_normal((48, 48)) * 0.1 * (trial + 1) / 5, 0, 1)
            expected = (
                structural_similarity(
                    ref,
                    test,
                    win_size=11,
                    gaussian_weights=True,
                    sigma=1.5,
                    use_sample_covariance=False,
                    data_range=1.0,
                )
                * 100.0
            )
            assert abs(ssim(ref, test) - expected) < 0.1


class TestEvaluatePairAndReport:
    def test_complex_inputs_reduced_to_magnitude(self):
        rng = np.random.default_rng(4)
        mag = rng.random((32, 32))
        complex_img = mag * np.exp(1j * rng.uniform(-np.pi, np.pi, (32, 32)))
        entry = evaluate_pair(mag, complex_img)
        assert entry["psnr_db"] == 99.0
        assert entry["ssim_pct"] == 100.0

    def test_to_magnitude_torch_tensor(self):
        import torch

        t = torch.complex(torch.full((4, 4), 3.0), torch.full((4, 4), 4.0))
        assert np.allclose(to_magnitude(t), 5.0)

    def test_aggregate_matches_mean(self):
        report = MetricReport()
        rng = np.random.default_rng(5)
        ref = rng.random((32, 32))
        for i in range(4):
            report.add(ref, np.clip(ref + 0.05 * rng.standard_normal((32, 32)), 0, 1))
        agg = report.aggregate()
        psnrs = [e["psnr_db"] for e in report.per_image]
        assert abs(agg["psnr_mean"] - np.mean(psnrs)) < 1e-9
        assert abs(agg["ssim_mean"] - np.mean([e["ssim_pct"] for e in report.per_image])) < 1e-9
        assert agg["n"] == 4

    def test_empty_report_rejected(self):
        with pytest.raises(InvalidArgumentError):
            MetricReport().aggregate()

    def test_report_save(self, tmp_path):
        import json

        report = MetricReport()
        rng = np.random.default_rng(6)
        ref = rng.random((32, 32))
        report.add(ref, np.clip(ref + 0.1 * rng.standard_normal((32, 32)), 0, 1))
        report.save(tmp_path / "metrics.json")
        payload = json.loads((tmp_path / "metrics.json").read_text())
        assert "per_image" in payload and "aggregate" in payload

    def test_aggregate_csv(self, tmp_path):
        rows = [
            {"method": "adapted-prior", "rate": 3.0, "density": "variable", "site": 0,
             "psnr_mean": 30.0, "psnr_std": 1.0, "ssim_mean": 90.0, "ssim_std": 2.0, "n": 5},
            {"method": "zero-filled", "rate": 3.0, "density": "variable", "site": 0,
             "psnr_mean": 22.0, "psnr_std": 1.5, "ssim_mean": 70.0, "ssim_std": 3.0, "n": 5},
        ]
        write_aggregate_csv(tmp_path / "agg.csv", rows)
        lines = (tmp_path / "agg.csv").read_text().strip().splitlines()
        assert len(lines) == 3
        with pytest.raises(InvalidArgumentError):
            write_aggregate_csv(tmp_path / "empty.csv", [])
