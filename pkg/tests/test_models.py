import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from fedprior.errors import ShapeError
from fedprior.models import (
    Discriminator,
    Generator,
    Mapper,
    ModelConfig,
    Synthesizer,
    adain,
    channels_to_complex,
    complex_to_channels,
    generator_param_arrays,
    load_checkpoint,
    load_generator_param_arrays,
    noise_inject,
    save_checkpoint,
    site_onehot,
)


class TestMapper:
    def test_zero_weights_zero_output(self, tiny_config):
        mapper = Mapper(tiny_config)
        for p in mapper.parameters():
            torch.nn.init.zeros_(p)
        z = torch.randn(4, tiny_config.latent_dim)
        v = site_onehot(1, tiny_config.n_sites, 4)
        assert torch.count_nonzero(mapper(z, v)) == 0

    def test_site_specific_latents(self, tiny_config):
        mapper = Mapper(tiny_config)
        z = torch.randn(1, tiny_config.latent_dim)
        w1 = mapper(z, site_onehot(0, 3))
        w2 = mapper(z, site_onehot(2, 3))
        assert not torch.allclose(w1, w2)

    def test_two_ones_rejected(self, tiny_config):
        mapper = Mapper(tiny_config)
        v = torch.zeros(1, 3)
        v[0, 0] = v[0, 1] = 1.0
        with pytest.raises(ShapeError):
            mapper(torch.randn(1, 32), v)

    def test_dim_mismatch_rejected(self, tiny_config):
        mapper = Mapper(tiny_config)
        with pytest.raises(ShapeError):
            mapper(torch.randn(1, 16), site_onehot(0, 3))
        with pytest.raises(ShapeError):
            mapper(torch.randn(1, 32), torch.zeros(1, 5))

    def test_layer_shapes(self, tiny_config):
        mapper = Mapper(tiny_config)
        J, K = tiny_config.latent_dim, tiny_config.n_sites
        assert tuple(mapper.layers[0].weight.shape) == (J, J + K)
        for layer in mapper.layers[1:]:
            assert tuple(layer.weight.shape) == (J, J)
        assert len(mapper.layers) == 8

    def test_no_site_input_variant(self):
        cfg = ModelConfig(resolution=16, n_sites=3, site_input=False, base_channels=4)
        mapper = Mapper(cfg)
        assert tuple(mapper.layers[0].weight.shape) == (32, 32)
        w = mapper(torch.randn(2, 32))
        assert w.shape == (2, 32)


class TestAdain:
    def test_identity_on_normalized_input(self):
        g = torch.Generator().manual_seed(0)
        x = torch.randn(2, 3, 16, 16, generator=g, dtype=torch.float64)
        x = (x - x.mean(dim=(-2, -1), keepdim=True)) / x.std(dim=(-2, -1), unbiased=False, keepdim=True)
        out = adain(x, torch.ones(3, dtype=torch.float64), torch.zeros(3, dtype=torch.float64))
        assert torch.allclose(out, x, atol=1e-6)

    def test_output_moments(self):
        g = torch.Generator().manual_seed(1)
        x = torch.randn(4, 5, 32, 32, generator=g, dtype=torch.float64)
        gamma = torch.full((5,), 2.0, dtype=torch.float64)
        beta = torch.full((5,), 5.0, dtype=torch.float64)
        out = adain(x, gamma, beta)
        means = out.mean(dim=(-2, -1))
        stds = out.std(dim=(-2, -1), unbiased=False)
        assert (means - 5.0).abs().max() < 1e-5
        assert (stds - 2.0).abs().max() < 1e-4

    @settings(deadline=None, max_examples=25)
    @given(gamma=st.floats(-3, 3), beta=st.floats(-5, 5), seed=st.integers(0, 100))
    def test_moments_property(self, gamma, beta, seed):
        g = torch.Generator().manual_seed(seed)
        x = torch.randn(1, 2, 24, 24, generator=g, dtype=torch.float64)
        out = adain(
            x,
            torch.tensor([gamma, gamma], dtype=torch.float64),
            torch.tensor([beta, beta], dtype=torch.float64),
        )
        assert (out.mean(dim=(-2, -1)) - beta).abs().max() < 1e-4
        assert (out.std(dim=(-2, -1), unbiased=False) - abs(gamma)).abs().max() < 1e-4

    def test_constant_channel_maps_to_beta(self):
        # 3.5 is exactly representable, so the centered input is exactly zero
        x = torch.full((1, 2, 8, 8), 3.5)
        out = adain(x, torch.tensor([2.0, 2.0]), torch.tensor([1.5, -0.5]))
        assert torch.equal(out[0, 0], torch.full((8, 8), 1.5))
        assert torch.equal(out[0, 1], torch.full((8, 8), -0.5))

    def test_constant_channel_float64(self):
        x = torch.full((1, 1, 8, 8), 3.7, dtype=torch.float64)
        out = adain(x, torch.tensor([2.0], dtype=torch.float64), torch.tensor([0.25], dtype=torch.float64))
        assert torch.allclose(out, torch.full_like(out, 0.25), atol=1e-6)


class TestNoiseInject:
    def test_zero_scale_is_plain_activation(self):
        x = torch.randn(1, 3, 8, 8)
        n = torch.randn(1, 3, 8, 8)
        out = noise_inject(x, n, torch.zeros(3))
        assert torch.equal(out, torch.nn.functional.leaky_relu(x, 0.2))

    def test_identity_region(self):
        # zero features, unit scale, non-negative noise: activation is identity
        n = torch.rand(1, 2, 8, 8)
        out = noise_inject(torch.zeros(1, 2, 8, 8), n, torch.ones(2))
        assert torch.equal(out, n)

    def test_locality(self):
        x = torch.randn(1, 2, 8, 8)
        n = torch.randn(1, 2, 8, 8)
        base = noise_inject(x, n, torch.ones(2))
        n2 = n.clone()
        n2[0, 1, 3, 4] += 0.5
        pert = noise_inject(x, n2, torch.ones(2))
        diff = (pert - base).abs()
        assert diff[0, 1, 3, 4] > 0
        diff[0, 1, 3, 4] = 0
        assert torch.count_nonzero(diff) == 0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            noise_inject(torch.zeros(1, 2, 8, 8), torch.zeros(1, 2, 4, 4), torch.ones(2))


class TestSynthesizer:
    def test_deterministic(self, tiny_config):
        synth = Synthesizer(tiny_config)
        w = torch.randn(1, 32)
        noise = synth.sample_noise(1, generator=torch.Generator().manual_seed(0))
        a = synth(w, noise)
        b = synth(w, noise)
        assert torch.equal(a, b)

    def test_resolution_law(self):
        # 4 layers -> 4 * 2^3 = 32
        cfg = ModelConfig(resolution=32, base_channels=4, max_channels=8)
        assert cfg.synth_layers == 4
        synth = Synthesizer(cfg)
        out = synth(torch.randn(1, 32), synth.sample_noise(1))
        assert out.shape[-2:] == (32, 32)

    @pytest.mark.parametrize("resolution", [8, 16, 64])
    def test_resolution_law_general(self, resolution):
        cfg = ModelConfig(resolution=resolution, base_channels=4, max_channels=8)
        assert 4 * 2 ** (cfg.synth_layers - 1) == resolution

    def test_output_channels(self, tiny_config):
        synth = Synthesizer(tiny_config)
        out = synth(torch.randn(2, 32), synth.sample_noise(2))
        assert out.shape == (2, 2, 16, 16)

    def test_style_pathway_live(self, tiny_config):
        synth = Synthesizer(tiny_config)
        noise = synth.sample_noise(1, generator=torch.Generator().manual_seed(3))
        g = torch.Generator().manual_seed(4)
        out1 = synth(torch.randn(1, 32, generator=g), noise)
        out2 = synth(torch.randn(1, 32, generator=g), noise)
        assert (out1.mean() - out2.mean()).abs() > 0 or (out1.std() - out2.std()).abs() > 0
        assert not torch.allclose(out1, out2)

    def test_bad_noise_shape_rejected(self, tiny_config):
        synth = Synthesizer(tiny_config)
        noise = synth.sample_noise(1)
        noise[1] = (noise[1][0][:, :, :2, :2], noise[1][1])
        with pytest.raises(ShapeError):
            synth(torch.randn(1, 32), noise)

    def test_progressive_stage_resolutions(self, tiny_config):
        synth = Synthesizer(tiny_config)
        for stage in range(1, tiny_config.synth_layers + 1):
            noise = synth.sample_noise(1, stage=stage)
            out = synth(torch.randn(1, 32), noise, stage=stage)
            assert out.shape[-1] == 4 * 2 ** (stage - 1)
            assert out.shape[1] == tiny_config.out_channels

    def test_fade_blends_previous_stage(self, tiny_config):
        synth = Synthesizer(tiny_config)
        w = torch.randn(1, 32)
        noise = synth.sample_noise(1, stage=2, generator=torch.Generator().manual_seed(0))
        full = synth(w, noise, stage=2, alpha=1.0)
        half = synth(w, noise, stage=2, alpha=0.5)
        assert not torch.allclose(full, half)

    def test_constant_initialized_to_ones(self, tiny_config):
        synth = Synthesizer(tiny_config)
        assert torch.all(synth.constant == 1.0)


class TestDiscriminator:
    def test_pure_and_deterministic(self, tiny_config):
        disc = Discriminator(tiny_config)
        x = torch.randn(3, 2, 16, 16)
        assert torch.equal(disc(x), disc(x))

    def test_zero_weights_zero_output(self, tiny_config):
        disc = Discriminator(tiny_config)
        for p in disc.parameters():
            torch.nn.init.zeros_(p)
        out = disc(torch.randn(2, 2, 16, 16))
        assert torch.count_nonzero(out) == 0

    def test_scalar_per_image(self, tiny_config):
        disc = Discriminator(tiny_config)
        assert disc(torch.randn(5, 2, 16, 16)).shape == (5,)

    def test_resolution_mismatch_rejected(self, tiny_config):
        disc = Discriminator(tiny_config)
        with pytest.raises(ShapeError):
            disc(torch.randn(1, 2, 8, 8))  # full stage expects 16x16
        with pytest.raises(ShapeError):
            disc(torch.randn(1, 2, 16, 16), stage=2)  # stage 2 expects 8x8

    def test_gradient_matches_finite_differences(self):
        # central-difference oracle on an 8x8 input, float64
        cfg = ModelConfig(resolution=8, base_channels=4, max_channels=8)
        disc = Discriminator(cfg).double()
        x = torch.randn(1, 2, 8, 8, dtype=torch.float64, requires_grad=True)
        out = disc(x)
        (grad,) = torch.autograd.grad(out.sum(), x)
        eps = 1e-5
        fd = torch.zeros_like(grad)
        with torch.no_grad():
            flat = x.detach().clone().reshape(-1)
            for i in range(flat.numel()):
                xp = flat.clone()
                xm = flat.clone()
                xp[i] += eps
                xm[i] -= eps
                fp = disc(xp.reshape(1, 2, 8, 8)).item()
                fm = disc(xm.reshape(1, 2, 8, 8)).item()
                fd.reshape(-1)[i] = (fp - fm) / (2 * eps)
        rel = (grad - fd).norm() / fd.norm()
        assert rel < 1e-4


class TestGeneratorAndCheckpoints:
    def test_generator_composition(self, tiny_config):
        gen = Generator(tiny_config)
        z = torch.randn(2, 32)
        v = site_onehot(1, 3, 2)
        noise = gen.synthesizer.sample_noise(2)
        direct = gen.synthesizer(gen.mapper(z, v), noise)
        assert torch.equal(gen(z, v, noise), direct)

    def test_param_array_namespaces(self, tiny_config):
        gen = Generator(tiny_config)
        arrays = generator_param_arrays(gen)
        assert all(k.startswith(("mapper/", "synthesizer/")) for k in arrays)
        assert any(k.startswith("mapper/") for k in arrays)
        assert any(k.startswith("synthesizer/") for k in arrays)

    def test_param_round_trip(self, tiny_config):
        gen_a = Generator(tiny_config)
        gen_b = Generator(tiny_config)
        load_generator_param_arrays(gen_b, generator_param_arrays(gen_a))
        for (ka, pa), (kb, pb) in zip(
            gen_a.state_dict().items(), gen_b.state_dict().items()
        ):
            assert ka == kb
            assert torch.equal(pa, pb)

    def test_checkpoint_round_trip(self, tmp_path, tiny_config):
        gen = Generator(tiny_config)
        discs = {0: Discriminator(tiny_config), 1: Discriminator(tiny_config)}
        save_checkpoint(tmp_path / "ckpt.npz", gen, discs, round_index=12)
        gen2, discs2, meta = load_checkpoint(tmp_path / "ckpt.npz")
        assert meta["round_index"] == 12
        assert meta["latent_dim"] == 32
        assert meta["channel_schedule"] == tiny_config.channel_schedule()
        for pa, pb in zip(gen.parameters(), gen2.parameters()):
            assert torch.equal(pa, pb)
        assert sorted(discs2) == [0, 1]
        for k in discs:
            for pa, pb in zip(discs[k].parameters(), discs2[k].parameters()):
                assert torch.equal(pa, pb)


class TestChannelHelpers:
    def test_complex_channel_round_trip(self):
        g = torch.Generator().manual_seed(0)
        m = torch.complex(torch.randn(8, 8, generator=g), torch.randn(8, 8, generator=g))
        back = channels_to_complex(complex_to_channels(m, 2))
        assert torch.allclose(back, m)

    def test_magnitude_mode(self):
        m = torch.complex(torch.full((4, 4), 3.0), torch.full((4, 4), 4.0))
        ch = complex_to_channels(m, 1)
        assert ch.shape == (1, 4, 4)
        assert torch.allclose(ch, torch.full((1, 4, 4), 5.0))
