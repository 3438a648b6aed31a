"""Channel spectra and the alternating-optimization low-rank split.

The channel spectrum of an activation ``X`` (``N x H x W``) is the set of
singular values of its channel-flattened matrix ``Xf`` (``N x HW``).  They are
obtained from the ``N x N`` Gram matrix with cyclic Jacobi rotations, which is
cheap because ``N`` is small compared to ``HW``.

:func:`light_svd` peels off ``r`` rank-one components by alternating least
squares with deflation.  It makes no orthogonality demands on the factors, and
the returned residual satisfies ``reconstruct(factors) + residual == Xf`` up
to rounding no matter how many iterations are run.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit

from .tensor import ShapeError, as_tensor, flatten_channels

JACOBI_TOL = 1e-12
DEFAULT_MAX_ITER = 2


@njit(cache=True)
def _jacobi(a, tol, max_sweeps):
    n = a.shape[0]
    norm = 0.0
    for i in range(n):
        for j in range(n):
            norm += a[i, j] * a[i, j]
    norm = math.sqrt(norm)
    sweeps = 0
    for sweep in range(max_sweeps):
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off += 2.0 * a[i, j] * a[i, j]
        if math.sqrt(off) <= tol * norm:
            break
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = 0.5 * (a[q, q] - a[p, p]) / apq
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                tau = s / (1.0 + c)
                a[p, p] -= t * apq
                a[q, q] += t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    if k == p or k == q:
                        continue
                    g = a[k, p]
                    h = a[k, q]
                    a[k, p] = g - s * (h + g * tau)
                    a[k, q] = h + s * (g - h * tau)
                    a[p, k] = a[k, p]
                    a[q, k] = a[k, q]
    return np.diag(a).copy(), sweeps


def jacobi_eigenvalues(sym, tol=JACOBI_TOL, max_sweeps=100):
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Iterates until the off-diagonal Frobenius norm is at most ``tol`` times
    the Frobenius norm of the input.  Returned in descending order.
    """
    a = np.array(sym, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {a.shape}")
    vals, _ = _jacobi(a, tol, max_sweeps)
    return np.sort(vals)[::-1]


@dataclass(frozen=True)
class SpectralProfile:
    singular_values: np.ndarray
    normalized: np.ndarray
    entropy: float
    principal_count: int

    @property
    def n_channels(self):
        return len(self.singular_values)


def channel_spectrum(xf):
    """Singular values and SVD-channel entropy of an ``N x HW`` matrix.

    Eigenvalues of the Gram matrix that fall below the Jacobi tolerance
    (relative to its Frobenius norm) are treated as exact zeros; they are
    below what the rotation sweep resolves.
    """
    from .entropy import principal_count, svd_channel_entropy

    xf = as_tensor(xf, 2, "xf")
    n, hw = xf.shape
    if n < 1 or hw < 1:
        raise ShapeError(f"channel_spectrum needs a non-empty matrix, got {xf.shape}")
    gram = xf @ xf.T
    lam = jacobi_eigenvalues(gram)[: min(n, hw)]
    floor = JACOBI_TOL * np.linalg.norm(gram)
    lam = np.where(lam > floor, lam, 0.0)
    s = np.sqrt(lam)
    total = s.sum()
    sbar = s / total if total > 0 else np.zeros_like(s)
    mu = svd_channel_entropy(s)
    return SpectralProfile(s, sbar, mu, principal_count(mu))


@dataclass(frozen=True)
class FactoredActivation:
    """Low-rank trusted part kept as ``r`` vector pairs.

    ``u[i]`` has length N (channel mixing coefficients) and ``v[i]`` length
    H*W (a spatial map).  The coefficient of basis map ``j'`` in channel ``j``
    is ``u[j', j]``.
    """

    u: np.ndarray
    v: np.ndarray
    shape: tuple
    svd_macs: int = 0

    def __post_init__(self):
        n, h, w = self.shape
        if self.u.shape != (self.rank, n) or self.v.shape != (self.rank, h * w):
            raise ShapeError(
                f"factor shapes u{self.u.shape} v{self.v.shape} inconsistent with {self.shape}"
            )

    @property
    def rank(self):
        return self.u.shape[0]

    @property
    def coefficients(self):
        """``(N, r)`` matrix ``a`` with ``a[j, j'] = u[j', j]``."""
        return self.u.T

    def channels(self):
        """The r basis maps as an ``(r, H, W)`` tensor."""
        _, h, w = self.shape
        return self.v.reshape(self.rank, h, w)

    @property
    def stored_values(self):
        return self.u.size + self.v.size


def _cold_init(x, i):
    row = x[i]
    if not np.any(row):
        norms = np.einsum("ij,ij->i", x, x)
        row = x[int(np.argmax(norms))]
    nrm = np.linalg.norm(row)
    return row / nrm if nrm > 0 else row.copy()


def light_svd(xf, r, init_v=None, max_iter=DEFAULT_MAX_ITER, shape=None):
    """Rank-``r`` split of ``xf`` by alternating optimization with deflation.

    For each component the pair is refined ``max_iter`` times via
    ``u = X v / |v|^2`` then ``v = X^T u / |u|^2`` and then subtracted from
    the working matrix.  ``init_v`` supplies starting spatial vectors for the
    leading components; missing ones start from the matching row of the
    current residual.  Returns ``(factors, residual)``.

    Only the two matrix-vector products per iteration are counted in
    ``factors.svd_macs`` (``2 * N * HW`` each iteration).
    """
    x = np.array(as_tensor(xf, 2, "xf"), copy=True)
    n, hw = x.shape
    if shape is None:
        shape = (n, 1, hw)
    if r < 0 or r > min(n, hw):
        raise ShapeError(f"rank r={r} outside [0, min(N, HW)] = [0, {min(n, hw)}]")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    inits = [] if init_v is None else [np.asarray(v, dtype=np.float64) for v in init_v]
    us = np.zeros((r, n))
    vs = np.zeros((r, hw))
    macs = 0
    for i in range(r):
        if i < len(inits):
            v = inits[i]
            if v.shape != (hw,):
                raise ShapeError(f"init_v[{i}] has shape {v.shape}, expected ({hw},)")
        else:
            v = _cold_init(x, i)
        u = np.zeros(n)
        for _ in range(max_iter):
            vv = v @ v
            if vv == 0.0:
                u = np.zeros(n)
                break
            u = (x @ v) / vv
            uu = u @ u
            macs += n * hw
            if uu == 0.0:
                u = np.zeros(n)
                break
            v = (x.T @ u) / uu
            macs += n * hw
        us[i] = u
        vs[i] = v
        if np.any(u):
            x -= np.outer(u, v)
    return FactoredActivation(us, vs, tuple(shape), macs), x


def reconstruct(f):
    """Dense ``(N, H, W)`` tensor of the factored part."""
    n, h, w = f.shape
    if f.rank == 0:
        return np.zeros((n, h, w))
    return (f.u.T @ f.v).reshape(n, h, w)


def _exact_split(x):
    """Full-rank split with an identity on the smaller side and an all-zero residual."""
    n, h, w = x.shape
    xf = flatten_channels(x)
    if n <= h * w:
        u, v = np.eye(n), xf.copy()
    else:
        u, v = xf.T.copy(), np.eye(h * w)
    return FactoredActivation(u, v, (n, h, w), 0), np.zeros_like(x)


def decompose_activation(x, r, warm_start=None, max_iter=DEFAULT_MAX_ITER):
    """Split ``x`` (``N x H x W``) into rank-``r`` factors and a dense residual.

    ``warm_start`` is a previous :class:`FactoredActivation`; its spatial
    vectors seed the iteration when the spatial size matches.  Ranks above
    ``min(N, H*W)`` are clamped with a :class:`RuntimeWarning`.  At full rank
    no iteration is run: the trusted part takes ``x`` whole (identity
    coefficients) and the residual is exactly zero.
    """
    x = as_tensor(x, 3)
    n, h, w = x.shape
    limit = min(n, h * w)
    if r > limit:
        warnings.warn(f"rank {r} exceeds min(N, HW)={limit}; clamped", RuntimeWarning, stacklevel=2)
        r = limit
    if r == limit:
        return _exact_split(x)
    init = None
    if warm_start is not None and warm_start.shape[1:] == (h, w):
        init = list(warm_start.v[:r])
    f, res = light_svd(flatten_channels(x), r, init_v=init, max_iter=max_iter, shape=(n, h, w))
    return f, res.reshape(n, h, w)
