"""SVD-channel entropy and the output-entropy bounds built on it.

The SVD-channel entropy of singular values ``s`` is ``-log2(sum(sbar**2))``
with ``sbar = s / sum(s)``: an order-2 Renyi entropy of the normalized
spectrum, measured in bits.  ``2**mu`` is then an effective channel count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor
from .spectral import SpectralProfile, channel_spectrum
from .tensor import ShapeError, as_tensor

# Guards ceil() against 2**mu landing a rounding error above an integer.
_CEIL_SLACK = 1e-9


def svd_channel_entropy(s):
    """Entropy in bits of a non-negative spectrum; an all-zero spectrum has entropy 0."""
    s = np.asarray(s, dtype=np.float64)
    if np.any(s < 0):
        raise ValueError("singular values must be non-negative")
    total = s.sum()
    if total == 0.0:
        return 0.0
    sbar = s / total
    return max(0.0, -math.log2(float(np.sum(sbar * sbar))))


def principal_count(mu):
    """Number of principal channels, ``ceil(2**mu)``."""
    return max(1, math.ceil(2.0 ** mu - _CEIL_SLACK))


def energy_fraction(s, n):
    """Fraction of squared spectral energy in the first ``n`` values."""
    s = np.asarray(s, dtype=np.float64)
    total = float(np.sum(s * s))
    if total == 0.0:
        return 1.0
    return float(np.sum(s[:n] ** 2)) / total


@dataclass(frozen=True)
class GeometricSpectrum:
    scale: float
    decay: float
    length: int

    def __post_init__(self):
        if self.scale <= 0 or not 0 < self.decay < 1 or self.length < 1:
            raise ValueError(f"invalid geometric spectrum {self}")

    def values(self):
        return self.scale * self.decay ** np.arange(self.length)


def profile(x):
    """Spectral profile of an ``(N, H, W)`` activation."""
    return channel_spectrum(tensor.flatten_channels(as_tensor(x, 3)))


def extract_patches(x, k):
    """Shifted copies of each channel, one per kernel tap.

    Output has ``N * k * k`` channels ordered ``(j, q, r)``; patch ``(j, q, r)``
    holds ``x[j, h + q - k//2, w + r - k//2]`` with zeros where the shift
    leaves the image.  Weighting patch ``(j, q, r)`` by ``w[i, j, q, r]`` and
    summing reproduces the same-padded ``k x k`` convolution.
    """
    x = as_tensor(x, 3)
    if k < 1 or k % 2 == 0:
        raise ShapeError(f"patch extraction needs an odd kernel size, got {k}")
    n, h, w = x.shape
    c = k // 2
    xp = np.pad(x, ((0, 0), (c, c), (c, c)))
    out = np.empty((n, k * k, h, w))
    for q in range(k):
        for r in range(k):
            out[:, q * k + r] = xp[:, q : q + h, r : r + w]
    return out.reshape(n * k * k, h, w)


@dataclass(frozen=True)
class PatchEntropyReport:
    kernel: int
    patch_entropies: np.ndarray
    principal: int
    mean: float
    bound: float


def patch_entropy_report(x, k, input_profile=None):
    """Per-channel patch entropies and the ``k x k`` output-entropy bound.

    Each channel's ``k*k`` shifted copies are treated as a matrix of their
    own.  The bound sums ``ceil(2**mu_j)`` over the ``N'`` lowest patch
    entropies, ``N'`` being the principal count of ``x``.
    """
    x = as_tensor(x, 3)
    n = x.shape[0]
    p = profile(x) if input_profile is None else input_profile
    patches = extract_patches(x, k).reshape(n, k * k, -1)
    mus = np.array([channel_spectrum(patches[j]).entropy for j in range(n)])
    npr = min(p.principal_count, n)
    lowest = np.sort(mus)[:npr]
    bound = math.log2(sum(principal_count(m) for m in lowest))
    return PatchEntropyReport(k, mus, npr, float(lowest.mean()), bound)


def conv_output_entropy_bound(profile_in, patch_report=None):
    """Upper bound on the output entropy of a convolution.

    Without a patch report the kernels are taken as ``1 x 1`` and the bound is
    ``log2(ceil(2**mu_X))``.
    """
    if patch_report is None:
        return math.log2(profile_in.principal_count)
    return patch_report.bound


def pooling_entropy_bound(profile_in):
    """Upper bound on the entropy after average pooling, ``log2(ceil(2**mu_X))``."""
    return math.log2(profile_in.principal_count)


def entropy_delta_study(x, op, k=2):
    """Measured entropy before and after ``op`` in ``{"relu", "maxpool", "avgpool"}``."""
    x = as_tensor(x, 3)
    if op == "relu":
        y = tensor.relu_forward(x)
    elif op == "maxpool":
        y = tensor.pool_forward(x, k, "max")
    elif op == "avgpool":
        y = tensor.pool_forward(x, k, "avg")
    else:
        raise ValueError(f"unknown op {op!r}")
    return profile(x).entropy, profile(y).entropy


def image_patch_entropy(img, k):
    """Mean over channels of the entropy of each channel's ``k*k`` patches."""
    img = as_tensor(img, 3)
    n = img.shape[0]
    patches = extract_patches(img, k).reshape(n, k * k, -1)
    return float(np.mean([channel_spectrum(patches[j]).entropy for j in range(n)]))


def kernel_size_entropy_study(dataset, k_list):
    """Distribution over images of the patch entropy for each kernel size.

    Returns one JSON-ready record per ``k``:
    ``{k, mean_mu, q10, q50, q90, n_samples}``.
    """
    records = []
    for k in k_list:
        vals = np.array([image_patch_entropy(img, k) for img in dataset])
        q10, q50, q90 = np.quantile(vals, [0.1, 0.5, 0.9])
        records.append(
            {
                "k": int(k),
                "mean_mu": float(vals.mean()),
                "q10": float(q10),
                "q50": float(q50),
                "q90": float(q90),
                "n_samples": int(len(vals)),
            }
        )
    return records


__all__ = [
    "GeometricSpectrum",
    "PatchEntropyReport",
    "SpectralProfile",
    "conv_output_entropy_bound",
    "energy_fraction",
    "entropy_delta_study",
    "extract_patches",
    "image_patch_entropy",
    "kernel_size_entropy_study",
    "patch_entropy_report",
    "pooling_entropy_bound",
    "principal_count",
    "profile",
    "svd_channel_entropy",
]
