import numpy as np
import pytest
import torch

from fedprior.models import ModelConfig


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(1234)


@pytest.fixture
def tiny_config():
    """16x16 model, small widths: fast enough for per-test training."""
    return ModelConfig(resolution=16, latent_dim=32, n_sites=3, base_channels=4, max_channels=16)


@pytest.fixture
def tiny_mag_config():
    return ModelConfig(
        resolution=16, latent_dim=32, n_sites=3, base_channels=4, max_channels=16, out_channels=1
    )


def random_complex(shape, seed=0, dtype=torch.complex128):
    g = torch.Generator().manual_seed(seed)
    real_dtype = torch.float64 if dtype == torch.complex128 else torch.float32
    return torch.complex(
        torch.randn(shape, generator=g, dtype=real_dtype),
        torch.randn(shape, generator=g, dtype=real_dtype),
    ).to(dtype)


def hash_arrays(arrays: dict) -> str:
    import hashlib

    digest = hashlib.sha256()
    for key in sorted(arrays):
        digest.update(key.encode())
        digest.update(np.ascontiguousarray(arrays[key]).tobytes())
    return digest.hexdigest()
