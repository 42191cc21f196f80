"""Synthetic stand-ins for VAE-encoded video latents.

Each class has a smooth random mean field; items are the class mean plus a
smooth within-class perturbation. Smoothing is a periodic Gaussian filter
over every axis after the first (time and space for a C x T x H x W shape),
and channels are mixed through a matrix with geometrically decaying
singular values, so every mode unfolding has a decaying spectrum.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .archive_io import LatentDataset


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 10
    items_per_class: int = 16
    latent_shape: tuple = (4, 8, 16, 16)
    mean_scale: float = 4.0
    within_scale: float = 1.0
    smoothness: float = 1.5
    channel_decay: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1 or self.items_per_class < 1:
            raise ValueError("class and item counts must be positive")
        if not self.latent_shape or min(self.latent_shape) < 1:
            raise ValueError(f"bad latent shape {self.latent_shape}")
        if self.smoothness < 0 or not 0 < self.channel_decay <= 1:
            raise ValueError("smoothness must be >= 0 and channel_decay in (0, 1]")


def class_rng(seed, class_id):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(class_id)]))


def _smooth_fields(rng, count, shape, spec):
    x = rng.standard_normal((count,) + tuple(shape))
    if len(shape) >= 2:
        sigma = (0, 0) + (spec.smoothness,) * (len(shape) - 1)
    else:
        sigma = (0, spec.smoothness)
    if spec.smoothness > 0:
        x = gaussian_filter(x, sigma=sigma, mode="wrap")
    if len(shape) >= 2:
        c = shape[0]
        q, _ = np.linalg.qr(rng.standard_normal((c, c)))
        mix = q * spec.channel_decay ** np.arange(c)
        x = np.einsum("ij,nj...->ni...", mix, x)
    std = x.reshape(count, -1).std(axis=1)
    std[std == 0] = 1.0
    return x / std.reshape((count,) + (1,) * len(shape))


def generate_synthetic(spec=SynthSpec()):
    shape = tuple(spec.latent_shape)
    n = spec.items_per_class
    latents = np.empty((spec.num_classes * n,) + shape, dtype=np.float32)
    ids, classes = [], []
    for c in range(spec.num_classes):
        rng = class_rng(spec.seed, c)
        mean = _smooth_fields(rng, 1, shape, spec)[0]
        noise = _smooth_fields(rng, n, shape, spec)
        latents[c * n:(c + 1) * n] = spec.mean_scale * mean + spec.within_scale * noise
        ids.extend(f"c{c:03d}_i{j:05d}" for j in range(n))
        classes.extend([c] * n)
    return LatentDataset(ids, np.array(classes), latents, spec.num_classes)
