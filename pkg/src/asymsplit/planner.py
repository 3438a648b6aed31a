"""Rank schedule and trusted/untrusted cost accounting.

Costs are counted, not timed: one multiply-accumulate is one MAC, memory is
the number of float64 values resident in a context, and a transfer of ``n``
values costs ``8 * n`` bytes.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

from .asymconv import transform_macs
from .spectral import DEFAULT_MAX_ITER
from .tensor import conv_macs

BYTES_PER_VALUE = 8
DEFAULT_R_CAP = 32
REPORT_KEYS = (
    "layer",
    "kind",
    "r",
    "macs_trusted",
    "macs_untrusted",
    "mem_trusted",
    "mem_untrusted",
    "xfer_fwd_bytes",
    "xfer_bwd_bytes",
)


@dataclass(frozen=True)
class CostReport:
    layer: int
    kind: str
    r: int | None
    macs_trusted: int
    macs_untrusted: int
    mem_trusted: int
    mem_untrusted: int
    xfer_fwd_bytes: int
    xfer_bwd_bytes: int
    # breakdown of macs_trusted
    macs_trusted_conv: int = 0
    macs_transform: int = 0
    macs_svd: int = 0
    macs_other: int = 0

    def to_dict(self):
        d = asdict(self)
        return {k: d[k] for k in REPORT_KEYS}


@dataclass(frozen=True)
class PartitionPlan:
    ranks: dict
    max_iter: int = DEFAULT_MAX_ITER
    r_cap: int = DEFAULT_R_CAP
    warnings: tuple = ()
    costs: tuple = field(default=(), compare=False)

    def rank(self, layer):
        return self.ranks[layer]

    def series(self):
        return [self.ranks[i] for i in sorted(self.ranks)]

    def to_dict(self):
        return {
            "ranks": self.series(),
            "conv_layers": sorted(self.ranks),
            "max_iter": self.max_iter,
            "r_cap": self.r_cap,
            "layers": [c.to_dict() for c in self.costs],
            "warnings": list(self.warnings),
        }


def _clamp(r, layer, r_cap):
    n, h, w = layer.in_shape
    return max(0, min(r, r_cap, n, h * w))


def plan_r_schedule(model, r_cap=DEFAULT_R_CAP, max_iter=DEFAULT_MAX_ITER):
    """Rank 1 at the first convolution, doubled for each later conv or residual block.

    Convolutions inside one ``block-begin``/``block-end`` group share a rank.
    Each layer's rank is clamped to ``min(r_cap, N, H*W)`` without affecting
    the running doubling.
    """
    convs = model.conv_indices()
    notes = []
    if not convs:
        msg = "model has no convolution layer; plan is empty"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    ranks = {}
    running = None
    unit = None
    for i in convs:
        layer = model.layers[i]
        key = ("block", layer.block) if layer.block is not None else ("conv", i)
        if key != unit:
            running = 1 if running is None else running * 2
            unit = key
        ranks[i] = _clamp(running, layer, r_cap)
    return _finish(model, ranks, max_iter, r_cap, notes)


def plan_with_ranks(model, ranks, max_iter=DEFAULT_MAX_ITER):
    """Plan with explicitly chosen ranks, either a list in conv order or a ``{layer: r}`` dict."""
    convs = model.conv_indices()
    if not isinstance(ranks, dict):
        ranks = list(ranks)
        if len(ranks) != len(convs):
            raise ValueError(f"need {len(convs)} ranks, got {len(ranks)}")
        ranks = dict(zip(convs, ranks))
    if sorted(ranks) != convs:
        raise ValueError(f"ranks must cover conv layers {convs}, got {sorted(ranks)}")
    for i, r in ranks.items():
        n, h, w = model.layers[i].in_shape
        if not 0 <= r <= min(n, h * w):
            raise ValueError(f"layer {i}: rank {r} outside [0, {min(n, h * w)}]")
    return _finish(model, dict(ranks), max_iter, max(ranks.values(), default=0), [])


def plan_rank_ratio(model, ratio, max_iter=DEFAULT_MAX_ITER):
    """Plan with ``r = ratio * N`` at every convolution; ``ratio * N`` must be an integer."""
    ranks = {}
    for i in model.conv_indices():
        n = model.layers[i].conv.in_channels
        r = ratio * n
        if abs(r - round(r)) > 1e-9:
            raise ValueError(f"layer {i}: ratio {ratio} of {n} channels is not an integer")
        ranks[i] = int(round(r))
    return plan_with_ranks(model, ranks, max_iter)


def _finish(model, ranks, max_iter, r_cap, notes):
    plan = PartitionPlan(ranks, max_iter, r_cap, tuple(notes))
    return PartitionPlan(ranks, max_iter, r_cap, tuple(notes), tuple(cost_model(model, plan)))


def conv_layer_cost(layer, r, max_iter, batch=1, needs_input_grad=True, index=0):
    g = layer.conv
    n, h, w = layer.in_shape
    m, ho, wo = layer.out_shape
    hw, hwo = h * w, ho * wo
    spatial = conv_macs(r, m, g.kernel, ho, wo) * batch
    transform = transform_macs(m, n, r, g.kernel) * batch
    # a full-rank split needs no iteration (identity factors, empty residual)
    svd = 0 if r == min(n, hw) else 2 * max_iter * r * n * hw * batch
    untrusted = conv_macs(n, m, g.kernel, ho, wo) * batch
    fwd = (n * hw + m * hwo) * batch
    bwd = m * hwo * batch + m * n * g.kernel * g.kernel
    if needs_input_grad:
        bwd += n * hw * batch
    return CostReport(
        layer=index,
        kind="conv",
        r=r,
        macs_trusted=spatial + transform + svd,
        macs_untrusted=untrusted,
        mem_trusted=(r * (n + hw) + m * hwo) * batch,
        mem_untrusted=(n * hw + m * hwo) * batch,
        xfer_fwd_bytes=BYTES_PER_VALUE * fwd,
        xfer_bwd_bytes=BYTES_PER_VALUE * bwd,
        macs_trusted_conv=spatial,
        macs_transform=transform,
        macs_svd=svd,
    )


def cost_model(model, plan, batch=1):
    """Per-layer cost reports for one forward pass (transfers cover both passes).

    Convolutions: the untrusted side runs the full dense convolution on the
    residual; the trusted side pays the r-channel convolution, the kernel
    transform and the light SVD of the layer input.  Forward transfers are the
    residual going out and the untrusted output coming back; backward
    transfers are the output gradient going out, the trusted weight gradient
    going out and, when an earlier layer needs it, the input gradient coming
    back.  Element-wise layers and linear layers run in the trusted context.
    """
    reports = []
    for i, layer in enumerate(model.layers):
        if layer.kind == "conv":
            reports.append(
                conv_layer_cost(
                    layer, plan.ranks[i], plan.max_iter, batch, model.needs_input_grad(i), i
                )
            )
            continue
        if layer.kind in ("relu", "maxpool", "avgpool"):
            ops = layer.in_values * batch
            mem = (layer.in_values + layer.out_values) * batch
        elif layer.kind == "linear":
            ops = layer.units[0] * layer.units[1] * batch
            mem = (layer.in_values + layer.out_values) * batch
        else:
            ops = 0
            mem = layer.in_values * batch
        reports.append(
            CostReport(
                layer=i,
                kind=layer.kind,
                r=None,
                macs_trusted=ops,
                macs_untrusted=0,
                mem_trusted=mem,
                mem_untrusted=0,
                xfer_fwd_bytes=0,
                xfer_bwd_bytes=0,
                macs_other=ops,
            )
        )
    return reports
