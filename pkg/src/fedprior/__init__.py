"""Federated training of a generative MR image prior and operator-decoupled
reconstruction of undersampled acquisitions."""

__version__ = "0.1.0"
