"""Dense kernels for small convolutional networks.

Activations are float64 arrays shaped ``(N, H, W)`` or, with a leading batch
axis, ``(B, N, H, W)``.  Kernels are ``(M, N, k, k)``.  Convolution is
cross-correlation with zero padding, and every output element is accumulated
in a fixed order (input channel, then kernel row, then kernel column) so
results are reproducible bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit


class ShapeError(ValueError):
    """Raised when array extents disagree with the requested operation."""


def as_tensor(a, ndim=None, name="x"):
    """Return ``a`` as a C-contiguous float64 array, checking rank and finiteness."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if ndim is not None:
        allowed = (ndim,) if isinstance(ndim, int) else tuple(ndim)
        if arr.ndim not in allowed:
            raise ShapeError(f"{name}: expected ndim in {allowed}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class ConvGeometry:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if min(self.in_channels, self.out_channels) < 0 or self.kernel < 1:
            raise ShapeError(f"invalid convolution extents: {self}")
        if self.stride < 1:
            raise ShapeError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ShapeError(f"padding must be >= 0, got {self.padding}")

    def output_size(self, height, width):
        ho = (height + 2 * self.padding - self.kernel) // self.stride + 1
        wo = (width + 2 * self.padding - self.kernel) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(
                f"kernel {self.kernel} with padding {self.padding} does not fit "
                f"input {height}x{width}"
            )
        return ho, wo

    def with_in_channels(self, n):
        return ConvGeometry(n, self.out_channels, self.kernel, self.stride, self.padding)


def _check_conv(x, w, g):
    if w.ndim != 4:
        raise ShapeError(f"kernel: expected 4 dims (M, N, k, k), got shape {w.shape}")
    m, n, kh, kw = w.shape
    if kh != kw or kh != g.kernel:
        raise ShapeError(f"kernel size: geometry says {g.kernel}, kernel has {kh}x{kw}")
    if m != g.out_channels:
        raise ShapeError(f"out_channels: geometry says {g.out_channels}, kernel has {m}")
    if n != g.in_channels:
        raise ShapeError(f"in_channels: geometry says {g.in_channels}, kernel has {n}")
    if x.shape[-3] != n:
        raise ShapeError(f"in_channels: kernel expects {n}, input has {x.shape[-3]}")
    return g.output_size(x.shape[-2], x.shape[-1])


@njit(cache=True)
def _conv_fwd(x, w, stride, pad, ho, wo):
    n, h, wd = x.shape
    m = w.shape[0]
    k = w.shape[2]
    y = np.zeros((m, ho, wo))
    for i in range(m):
        for oh in range(ho):
            for ow in range(wo):
                acc = 0.0
                for j in range(n):
                    for q in range(k):
                        ih = oh * stride + q - pad
                        if ih < 0 or ih >= h:
                            continue
                        for r in range(k):
                            iw = ow * stride + r - pad
                            if iw < 0 or iw >= wd:
                                continue
                            acc += x[j, ih, iw] * w[i, j, q, r]
                y[i, oh, ow] = acc
    return y


@njit(cache=True)
def _conv_bwd_weight(x, dy, stride, pad, k):
    n, h, wd = x.shape
    m, ho, wo = dy.shape
    dw = np.zeros((m, n, k, k))
    for i in range(m):
        for j in range(n):
            for q in range(k):
                for r in range(k):
                    acc = 0.0
                    for oh in range(ho):
                        ih = oh * stride + q - pad
                        if ih < 0 or ih >= h:
                            continue
                        for ow in range(wo):
                            iw = ow * stride + r - pad
                            if iw < 0 or iw >= wd:
                                continue
                            acc += dy[i, oh, ow] * x[j, ih, iw]
                    dw[i, j, q, r] = acc
    return dw


@njit(cache=True)
def _conv_bwd_input(dy, w, stride, pad, h, wd):
    m, ho, wo = dy.shape
    n = w.shape[1]
    k = w.shape[2]
    dx = np.zeros((n, h, wd))
    for j in range(n):
        for i in range(m):
            for q in range(k):
                for r in range(k):
                    c = w[i, j, q, r]
                    for oh in range(ho):
                        ih = oh * stride + q - pad
                        if ih < 0 or ih >= h:
                            continue
                        for ow in range(wo):
                            iw = ow * stride + r - pad
                            if iw < 0 or iw >= wd:
                                continue
                            dx[j, ih, iw] += dy[i, oh, ow] * c
    return dx


def conv2d_forward(x, w, g):
    """Cross-correlate ``x`` with ``w``; returns ``(M, H', W')`` (or batched)."""
    x = as_tensor(x, (3, 4), "x")
    w = as_tensor(w, 4, "w")
    ho, wo = _check_conv(x, w, g)
    if x.ndim == 4:
        return np.stack([_conv_fwd(xb, w, g.stride, g.padding, ho, wo) for xb in x]) \
            if len(x) else np.zeros((0, g.out_channels, ho, wo))
    return _conv_fwd(x, w, g.stride, g.padding, ho, wo)


def conv2d_backward_weight(x, dy, g):
    """Gradient of the loss w.r.t. the kernels, summed over the batch in order."""
    x = as_tensor(x, (3, 4), "x")
    dy = as_tensor(dy, x.ndim, "dy")
    if x.shape[-3] != g.in_channels:
        raise ShapeError(f"in_channels: geometry says {g.in_channels}, input has {x.shape[-3]}")
    ho, wo = g.output_size(x.shape[-2], x.shape[-1])
    if dy.shape[-3:] != (g.out_channels, ho, wo):
        raise ShapeError(f"dy: expected {(g.out_channels, ho, wo)}, got {dy.shape[-3:]}")
    if x.ndim == 3:
        return _conv_bwd_weight(x, dy, g.stride, g.padding, g.kernel)
    if x.shape[0] != dy.shape[0]:
        raise ShapeError(f"batch: x has {x.shape[0]}, dy has {dy.shape[0]}")
    dw = np.zeros((g.out_channels, g.in_channels, g.kernel, g.kernel))
    for xb, db in zip(x, dy):
        dw += _conv_bwd_weight(xb, db, g.stride, g.padding, g.kernel)
    return dw


def conv2d_backward_input(dy, w, g, input_hw):
    """Gradient w.r.t. the convolution input (transposed convolution of ``dy``)."""
    dy = as_tensor(dy, (3, 4), "dy")
    w = as_tensor(w, 4, "w")
    h, wd = input_hw
    ho, wo = g.output_size(h, wd)
    if w.shape != (g.out_channels, g.in_channels, g.kernel, g.kernel):
        raise ShapeError(f"kernel: expected {(g.out_channels, g.in_channels, g.kernel, g.kernel)}, got {w.shape}")
    if dy.shape[-3:] != (g.out_channels, ho, wo):
        raise ShapeError(f"dy: expected {(g.out_channels, ho, wo)}, got {dy.shape[-3:]}")
    if dy.ndim == 4:
        return np.stack([_conv_bwd_input(db, w, g.stride, g.padding, h, wd) for db in dy]) \
            if len(dy) else np.zeros((0, g.in_channels, h, wd))
    return _conv_bwd_input(dy, w, g.stride, g.padding, h, wd)


def conv_macs(in_channels, out_channels, kernel, out_h, out_w):
    """Nominal multiply-accumulate count of a dense convolution (padding taps included)."""
    return in_channels * out_channels * out_h * out_w * kernel * kernel


def relu_forward(x):
    return np.maximum(as_tensor(x), 0.0)


def relu_backward(x, dy):
    x = as_tensor(x)
    dy = as_tensor(dy, name="dy")
    if x.shape != dy.shape:
        raise ShapeError(f"relu_backward: x {x.shape} vs dy {dy.shape}")
    return np.where(x > 0.0, dy, 0.0)


def _windows(x, k):
    if k < 1:
        raise ShapeError(f"pool size must be >= 1, got {k}")
    h, w = x.shape[-2:]
    ho, wo = h // k, w // k
    if ho < 1 or wo < 1:
        raise ShapeError(f"pool size {k} larger than input {h}x{w}")
    lead = x.shape[:-2]
    win = x[..., : ho * k, : wo * k].reshape(*lead, ho, k, wo, k)
    win = np.moveaxis(win, -3, -2).reshape(*lead, ho, wo, k * k)
    return win, ho, wo


def pool_forward(x, k, mode="max"):
    """Non-overlapping ``k x k`` pooling; trailing rows/columns that do not fill a window are dropped."""
    x = as_tensor(x)
    win, _, _ = _windows(x, k)
    if mode == "max":
        return win.max(axis=-1)
    if mode == "avg":
        return win.sum(axis=-1) / (k * k)
    raise ValueError(f"unknown pool mode {mode!r}")


def pool_backward(x, dy, k, mode="max"):
    x = as_tensor(x)
    dy = as_tensor(dy, name="dy")
    win, ho, wo = _windows(x, k)
    if dy.shape != win.shape[:-1]:
        raise ShapeError(f"pool_backward: dy expected {win.shape[:-1]}, got {dy.shape}")
    if mode == "max":
        # np.argmax returns the first maximal index in row-major window order
        idx = win.argmax(axis=-1)
        dwin = np.zeros_like(win)
        np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
    elif mode == "avg":
        dwin = np.repeat(dy[..., None] / (k * k), k * k, axis=-1)
    else:
        raise ValueError(f"unknown pool mode {mode!r}")
    lead = x.shape[:-2]
    dwin = dwin.reshape(*lead, ho, wo, k, k)
    dwin = np.moveaxis(dwin, -2, -3).reshape(*lead, ho * k, wo * k)
    dx = np.zeros_like(x)
    dx[..., : ho * k, : wo * k] = dwin
    return dx


def flatten_channels(x):
    """``(N, H, W) -> (N, H*W)``; row j is channel j in row-major spatial order."""
    x = as_tensor(x, 3)
    return x.reshape(x.shape[0], -1)


def unflatten_channels(xf, shape):
    xf = as_tensor(xf, 2, "xf")
    n, h, w = shape
    if xf.shape != (n, h * w):
        raise ShapeError(f"cannot reshape {xf.shape} to {shape}")
    return xf.reshape(n, h, w)


def linear_forward(x, w, b=None):
    """Fully connected layer: ``x`` is ``(IN,)`` or ``(B, IN)``, ``w`` is ``(OUT, IN)``."""
    x = as_tensor(x, (1, 2))
    w = as_tensor(w, 2, "w")
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: weight expects {w.shape[1]} inputs, got {x.shape[-1]}")
    y = x @ w.T
    if b is not None:
        y = y + b
    return y


def linear_backward(x, w, dy):
    """Returns ``(dx, dw, db)``; batch contributions are summed."""
    x = as_tensor(x, (1, 2))
    dy = as_tensor(dy, x.ndim, "dy")
    x2 = np.atleast_2d(x)
    d2 = np.atleast_2d(dy)
    dw = d2.T @ x2
    db = d2.sum(axis=0)
    dx = dy @ w
    return dx, dw, db
