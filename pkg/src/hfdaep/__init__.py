"""High-frequency denoising-autoencoder priors for MRI and CT reconstruction."""

__version__ = "0.1.0"
