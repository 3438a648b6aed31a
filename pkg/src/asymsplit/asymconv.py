"""Convolution split into a factored trusted path and a dense untrusted path.

With ``X = X_T + X_U`` and ``X_T = sum_j' a[:, j'] * V_j'`` (r basis maps),
linearity gives ``conv(X, W) = conv(V, W') + conv(X_U, W)`` where the
transformed kernels ``W'[i, j'] = sum_j a[j, j'] W[i, j]`` act on only ``r``
input channels.  Weight gradients split the same way.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import FactoredActivation, reconstruct
from .tensor import (
    ConvGeometry,
    ShapeError,
    as_tensor,
    conv2d_backward_weight,
    conv2d_forward,
    conv_macs,
)


@dataclass(frozen=True)
class DecomposedActivation:
    trusted: FactoredActivation
    untrusted: np.ndarray

    def dense(self):
        return reconstruct(self.trusted) + self.untrusted


@dataclass(frozen=True)
class TransformedKernels:
    weights: np.ndarray  # (M, r, k, k)

    @property
    def rank(self):
        return self.weights.shape[1]


def transform_macs(out_channels, in_channels, r, kernel):
    return out_channels * in_channels * r * kernel * kernel


def transform_kernels(w, f):
    """Mix the N input-channel kernels into r kernels using the factor coefficients."""
    w = as_tensor(w, 4, "w")
    if w.shape[1] != f.shape[0]:
        raise ShapeError(f"in_channels: kernel has {w.shape[1]}, factors have {f.shape[0]}")
    return TransformedKernels(np.einsum("rn,mnab->mrab", f.u, w))


def _check_geometry(f, g):
    if f.shape[0] != g.in_channels:
        raise ShapeError(f"in_channels: geometry says {g.in_channels}, factors have {f.shape[0]}")


def trusted_forward(f, wt, g):
    """Convolve the r basis maps with the transformed kernels."""
    _check_geometry(f, g)
    if wt.rank != f.rank:
        raise ShapeError(f"rank: kernels have {wt.rank}, factors have {f.rank}")
    return conv2d_forward(f.channels(), wt.weights, g.with_in_channels(f.rank))


def trusted_forward_macs(f, g):
    _, h, w = f.shape
    ho, wo = g.output_size(h, w)
    return conv_macs(f.rank, g.out_channels, g.kernel, ho, wo) + transform_macs(
        g.out_channels, g.in_channels, f.rank, g.kernel
    )


def untrusted_forward(xu, w, g):
    return conv2d_forward(xu, w, g)


def merge_outputs(yt, yu, bias=None):
    """``yt + yu`` (trusted addend first), plus an optional per-channel bias."""
    yt = as_tensor(yt, (3, 4), "yt")
    yu = as_tensor(yu, yt.ndim, "yu")
    if yt.shape != yu.shape:
        raise ShapeError(f"merge: trusted {yt.shape} vs untrusted {yu.shape}")
    y = yt + yu
    if bias is not None:
        y = y + np.asarray(bias, dtype=np.float64)[:, None, None]
    return y


def trusted_weight_grad(f, dy, g):
    """Weight gradient contributed by the factored part.

    Correlates each of the r basis maps with ``dy`` once, then expands to the
    N input channels with the factor coefficients.
    """
    _check_geometry(f, g)
    per_basis = conv2d_backward_weight(f.channels(), dy, g.with_in_channels(f.rank))
    return np.einsum("rn,mrab->mnab", f.u, per_basis)


def trusted_weight_grad_macs(f, g):
    return trusted_forward_macs(f, g)


def untrusted_weight_grad(xu, dy, g):
    return conv2d_backward_weight(xu, dy, g)


__all__ = [
    "ConvGeometry",
    "DecomposedActivation",
    "TransformedKernels",
    "merge_outputs",
    "transform_kernels",
    "transform_macs",
    "trusted_forward",
    "trusted_forward_macs",
    "trusted_weight_grad",
    "trusted_weight_grad_macs",
    "untrusted_forward",
    "untrusted_weight_grad",
]
