"""Synthetic datasets and the on-disk dataset layout.

A dataset directory holds one ``.npy`` file per sample (``sample_00000.npy``,
...) and ``labels.npy`` with one label per sample in file-name order.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .arrayio import load_array, save_array


def blobs(n=64, shape=(2, 8, 8), noise=0.5, seed=0):
    """Two linearly separable classes: class ``c`` adds +1 to channel ``c``."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    x = noise * rng.standard_normal((n, *shape))
    x[np.arange(n), labels] += 1.0
    return x, labels


def _smooth(rng, count, size, sigma):
    f = gaussian_filter(rng.standard_normal((count, size, size)), sigma=(0, sigma, sigma), mode="wrap")
    f -= f.mean(axis=(1, 2), keepdims=True)
    return f / f.std(axis=(1, 2), keepdims=True)


def low_rank_images(n=64, channels=16, size=16, rank=4, texture=0.05, sigma=2.0, seed=0):
    """Images whose channels mix ``rank`` smooth spatial maps, plus white texture.

    Each sample draws its own maps and Gaussian mixing weights, so the
    channel matrix has rank ``rank`` before the texture is added.
    """
    rng = np.random.default_rng(seed)
    out = np.empty((n, channels, size, size))
    for s in range(n):
        maps = _smooth(rng, rank, size, sigma).reshape(rank, -1)
        mix = rng.standard_normal((channels, rank))
        x = (mix @ maps).reshape(channels, size, size)
        out[s] = x + texture * rng.standard_normal(x.shape)
    return out


def correlated_gaussian_images(n=500, channels=3, size=32, length_scale=4.0, seed=0):
    """Spatially correlated Gaussian fields with a Gaussian covariance of the given length-scale."""
    rng = np.random.default_rng(seed)
    return np.stack([_smooth(rng, channels, size, length_scale) for _ in range(n)])


def save_dataset(directory, x, labels=None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, sample in enumerate(x):
        save_array(d / f"sample_{i:05d}.npy", sample)
    if labels is None:
        labels = np.zeros(len(x))
    save_array(d / "labels.npy", np.asarray(labels, dtype=np.float64))


def load_dataset(directory):
    """Returns ``(x, labels)`` with ``x`` stacked in file-name order."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {directory}")
    files = sorted(p for p in d.glob("*.npy") if p.name != "labels.npy")
    if not files:
        raise ValueError(f"no samples in {directory}")
    x = np.stack([load_array(p) for p in files])
    lab_path = d / "labels.npy"
    if not lab_path.exists():
        raise FileNotFoundError(f"missing labels.npy in {directory}")
    labels = load_array(lab_path)
    if labels.shape != (len(files),):
        raise ValueError(f"labels.npy has shape {labels.shape}, expected ({len(files)},)")
    if np.any(labels != np.round(labels)):
        raise ValueError("labels must be integers")
    return x, labels.astype(np.int64)
