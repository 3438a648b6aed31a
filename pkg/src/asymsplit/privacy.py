"""Information leakage of the untrusted residual.

Mutual information is estimated with a plug-in estimator on a joint
histogram: 64 equal-width bins over each stream's observed range, each tensor
position contributing one paired sample.  Bin indices are computed once per
stream, so ``estimate_mi(a, a)`` equals the binned entropy of ``a``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import decompose_activation
from .tensor import as_tensor

DEFAULT_BINS = 64


def add_noise(xu, nsr, seed=0):
    """Add zero-mean Gaussian noise with variance ``nsr * mean(xu**2)``.

    ``seed`` is anything accepted by :func:`numpy.random.default_rng`.
    """
    xu = as_tensor(xu, name="xu")
    if not nsr >= 0:
        raise ValueError(f"nsr must be >= 0, got {nsr}")
    if nsr == 0:
        return xu.copy()
    scale = np.sqrt(nsr * np.mean(xu * xu))
    noise = np.random.default_rng(seed).standard_normal(xu.shape)
    return xu + scale * noise


def _range(a):
    a = np.asarray(a, dtype=np.float64).ravel()
    if a.size == 0:
        raise ValueError("empty sample stream")
    return float(a.min()), float(a.max())


def bin_index(a, lo, hi, bins=DEFAULT_BINS):
    """Equal-width bin of each value over ``[lo, hi]``; the top edge joins the last bin."""
    a = np.asarray(a, dtype=np.float64).ravel()
    if hi <= lo:
        return np.zeros(a.size, dtype=np.int64)
    idx = np.floor((a - lo) / (hi - lo) * bins).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


class JointHistogram:
    """Integer joint counts over fixed bin edges; merging is exact and order-free."""

    def __init__(self, range_a, range_b, bins=DEFAULT_BINS):
        self.range_a = tuple(range_a)
        self.range_b = tuple(range_b)
        self.bins = bins
        self.counts = np.zeros((bins, bins), dtype=np.int64)

    def add(self, a, b):
        ia = bin_index(a, *self.range_a, self.bins)
        ib = bin_index(b, *self.range_b, self.bins)
        if ia.size != ib.size:
            raise ValueError(f"paired streams differ in length: {ia.size} vs {ib.size}")
        np.add.at(self.counts, (ia, ib), 1)
        return self

    def merge(self, other):
        if (other.range_a, other.range_b, other.bins) != (self.range_a, self.range_b, self.bins):
            raise ValueError("cannot merge histograms with different binning")
        out = JointHistogram(self.range_a, self.range_b, self.bins)
        out.counts = self.counts + other.counts
        return out

    @property
    def n_samples(self):
        return int(self.counts.sum())

    def mutual_information(self):
        return mi_from_counts(self.counts)


def mi_from_counts(counts):
    """Plug-in mutual information in bits of a joint count table."""
    c = np.asarray(counts, dtype=np.float64)
    n = c.sum()
    if n == 0:
        return 0.0
    ca = c.sum(axis=1)
    cb = c.sum(axis=0)
    i, j = np.nonzero(c)
    cij = c[i, j]
    return float(np.sum(cij / n * np.log2(cij * n / (ca[i] * cb[j]))))


def binned_entropy(a, bins=DEFAULT_BINS):
    """Entropy in bits of ``a`` binned like :func:`estimate_mi` bins it."""
    idx = bin_index(a, *_range(a), bins)
    c = np.bincount(idx, minlength=bins).astype(np.float64)
    p = c[c > 0] / idx.size
    return float(-np.sum(p * np.log2(p)))


def estimate_mi(a, b, bins=DEFAULT_BINS):
    """Mutual information in bits between paired scalar streams ``a`` and ``b``."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ValueError(f"paired streams differ in length: {a.size} vs {b.size}")
    return JointHistogram(_range(a), _range(b), bins).add(a, b).mutual_information()


@dataclass(frozen=True)
class LeakageReport:
    nsr: float
    mi_bits: float
    self_info_bits: float
    relative_leakage: float
    n_samples: int
    bins: int = DEFAULT_BINS

    def to_dict(self):
        return {
            "nsr": self.nsr,
            "relative_leakage": self.relative_leakage,
            "mi_bits": self.mi_bits,
            "self_info_bits": self.self_info_bits,
            "n_samples": self.n_samples,
        }


def pooled_leakage(xs, ys, bins=DEFAULT_BINS, nsr=0.0):
    """Relative leakage ``I(X; Y) / I(X; X)`` pooled over paired sample lists.

    Bin ranges are taken over all samples first, then one histogram per
    sample is accumulated and the histograms are merged.
    """
    xs = [np.asarray(x, dtype=np.float64).ravel() for x in xs]
    ys = [np.asarray(y, dtype=np.float64).ravel() for y in ys]
    if len(xs) != len(ys) or not xs:
        raise ValueError("need equally many, and at least one, X and Y samples")
    ra = (min(x.min() for x in xs), max(x.max() for x in xs))
    rb = (min(y.min() for y in ys), max(y.max() for y in ys))
    joint = JointHistogram(ra, rb, bins)
    self_joint = JointHistogram(ra, ra, bins)
    for x, y in zip(xs, ys):
        joint = joint.merge(JointHistogram(ra, rb, bins).add(x, y))
        self_joint = self_joint.merge(JointHistogram(ra, ra, bins).add(x, x))
    mi = joint.mutual_information()
    self_info = self_joint.mutual_information()
    rel = mi / self_info if self_info > 0 else 0.0
    return LeakageReport(float(nsr), mi, self_info, rel, joint.n_samples, bins)


def _first_conv(model, layer):
    convs = model.conv_indices()
    if not convs:
        raise ValueError("model has no convolution layer")
    if layer is None:
        return convs[0]
    if layer not in convs:
        raise ValueError(f"layer {layer} is not a convolution (convs: {convs})")
    return layer


def leakage_sweep(
    dataset, model, plan, nsr_list, layer=None, seed=0, params=None, r=None, bins=DEFAULT_BINS
):
    """Relative leakage ``I(X; X_U) / I(X; X)`` at one conv layer for each nsr.

    ``dataset`` is a sequence of model inputs.  ``X`` is the input of the
    chosen conv layer (the first one by default); layers before it run densely
    with ``params``.  Each sample is split at the planned rank (or ``r``), the
    residual is masked with noise, and the estimate is pooled over samples.
    Sample ``i`` draws its noise from seed ``(seed, i)`` at every nsr.
    """
    from .simulator import dense_prefix

    layer = _first_conv(model, layer)
    rank = plan.rank(layer) if r is None else r
    xs, residuals = [], []
    for x in dataset:
        a = dense_prefix(model, params, x, layer)
        _, xu = decompose_activation(a, rank, max_iter=plan.max_iter)
        xs.append(a)
        residuals.append(xu)
    reports = []
    for nsr in nsr_list:
        ys = [add_noise(xu, nsr, (seed, i)) for i, xu in enumerate(residuals)]
        reports.append(pooled_leakage(xs, ys, bins, nsr))
    return reports


def gradient_leakage_check(
    data, labels, model, plan, params=None, epochs=30, probe_every=10, lr=0.05,
    seed=0, batch_size=16, mode="decomposed", bins=DEFAULT_BINS,
):
    """Relative ``I(X; grad_X L)`` at the first conv layer during a short training run.

    Probes at epoch 0 and every ``probe_every`` epochs up to ``epochs``.
    Returns a list of ``{"epoch", "relative_leakage", "mi_bits",
    "self_info_bits", "n_samples"}`` records.
    """
    from .model import init_params
    from .simulator import input_gradients
    from .training import train

    layer = _first_conv(model, None)
    params = init_params(model, seed) if params is None else params
    probes = sorted({0, *range(probe_every, epochs + 1, probe_every)} | {epochs})
    series = []
    done = 0
    for ep in probes:
        if ep > done:
            res = train(model, params, plan, (data, labels), ep - done, lr,
                        seed=seed + done, mode=mode, batch_size=batch_size)
            params = res.params
            done = ep
        xs, gs = input_gradients(model, params, data, labels, layer)
        rep = pooled_leakage(xs, gs, bins)
        d = rep.to_dict()
        del d["nsr"]
        series.append({"epoch": ep, **d})
    return series
