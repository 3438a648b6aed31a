"""Two-context execution of a model with cost and transfer accounting.

The trusted context holds the data owner's view: it decomposes every conv
input, runs the r-channel convolution on the factored part, merges outputs,
and runs all element-wise and linear layers.  The untrusted context only
ever sees residuals ``X_U`` and output gradients.  The contexts exchange
tensors by value through order-preserving links; every send gets a sequence
number from the coordinating thread, so traces are identical whether the two
contexts compute concurrently or one after the other.
"""
from __future__ import annotations

import json
import queue
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensor
from .asymconv import (
    merge_outputs,
    transform_kernels,
    transform_macs,
    trusted_forward,
    trusted_weight_grad,
    untrusted_forward,
    untrusted_weight_grad,
)
from .planner import BYTES_PER_VALUE
from .privacy import add_noise
from .spectral import decompose_activation, reconstruct

TRUSTED = "trusted"
UNTRUSTED = "untrusted"
MODES = ("monolithic", "decomposed")
LINEAR_NOTE = "linear layers run in the trusted context"


class PlanMismatch(ValueError):
    pass


class ExecutionTrace:
    """MAC counts, resident values and transfer events of one run."""

    def __init__(self):
        self._lock = threading.Lock()
        self.macs = {}
        self.resident = {}
        self.transfers = []
        self.notes = []

    def add_macs(self, layer, phase, context, category, n):
        key = (int(layer), phase, context, category)
        with self._lock:
            self.macs[key] = self.macs.get(key, 0) + int(n)

    def set_resident(self, layer, context, n):
        with self._lock:
            self.resident[(int(layer), context)] = int(n)

    def record(self, event, msg):
        with self._lock:
            self.transfers.append(
                {
                    "seq": msg.seq,
                    "event": event,
                    "phase": msg.phase,
                    "layer": msg.layer,
                    "src": msg.src,
                    "dst": msg.dst,
                    "tag": msg.tag,
                    "bytes": msg.nbytes,
                }
            )

    def note(self, text):
        if text not in self.notes:
            self.notes.append(text)

    def mac_total(self, layer=None, phase=None, context=None, category=None):
        total = 0
        for (li, ph, ctx, cat), n in self.macs.items():
            if layer is not None and li != layer:
                continue
            if phase is not None and ph != phase:
                continue
            if context is not None and ctx != context:
                continue
            if category is not None and cat != category:
                continue
            total += n
        return total

    def transfer_bytes(self, layer=None, phase=None, src=None):
        return sum(
            t["bytes"]
            for t in self.transfers
            if t["event"] == "send"
            and (layer is None or t["layer"] == layer)
            and (phase is None or t["phase"] == phase)
            and (src is None or t["src"] == src)
        )

    def unmatched(self):
        """Sequence numbers sent but not received exactly once (or received unsent)."""
        sends = [t["seq"] for t in self.transfers if t["event"] == "send"]
        recvs = [t["seq"] for t in self.transfers if t["event"] == "recv"]
        bad = set(s for s in sends if recvs.count(s) != 1)
        bad |= set(r for r in recvs if sends.count(r) != 1)
        return sorted(bad)

    def to_dict(self):
        macs = [
            {"layer": li, "phase": ph, "context": ctx, "category": cat, "macs": n}
            for (li, ph, ctx, cat), n in sorted(self.macs.items())
        ]
        resident = [
            {"layer": li, "context": ctx, "values": n}
            for (li, ctx), n in sorted(self.resident.items())
        ]
        transfers = sorted(self.transfers, key=lambda t: (t["seq"], t["event"] != "send"))
        return {"macs": macs, "resident": resident, "transfers": transfers, "notes": list(self.notes)}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def merge(self, other):
        """Fold ``other`` into this trace (sequence numbers must not overlap)."""
        for key, n in other.macs.items():
            self.macs[key] = self.macs.get(key, 0) + n
        self.resident.update(other.resident)
        self.transfers.extend(other.transfers)
        for n in other.notes:
            self.note(n)
        return self


@dataclass(frozen=True)
class Message:
    seq: int
    phase: str
    layer: int
    src: str
    dst: str
    tag: str
    array: np.ndarray
    shape: tuple = ()

    @property
    def nbytes(self):
        return BYTES_PER_VALUE * int(self.array.size)


class Link:
    """One-directional FIFO between the two contexts."""

    def __init__(self, src, dst, trace, counter):
        self.src = src
        self.dst = dst
        self._q = queue.Queue()
        self._trace = trace
        self._counter = counter

    def send(self, phase, layer, tag, array):
        """Queue a copy of ``array``.

        An all-zero backward tensor is sent as a zero-byte control message
        carrying only its shape.
        """
        arr = np.array(array, dtype=np.float64, copy=True)
        shape = arr.shape
        if phase == "backward" and not arr.any():
            arr = np.empty(0)
        arr.flags.writeable = False
        msg = Message(next(self._counter), phase, int(layer), self.src, self.dst, tag, arr, shape)
        self._trace.record("send", msg)
        self._q.put(msg)
        return msg.seq

    def recv(self):
        msg = self._q.get_nowait()
        self._trace.record("recv", msg)
        if msg.array.shape != msg.shape:
            return np.zeros(msg.shape)
        return msg.array


class _Seq:
    def __init__(self, start=0):
        self.n = start

    def __next__(self):
        n = self.n
        self.n += 1
        return n


class Session:
    """The two links plus the schedule used to run paired context work."""

    def __init__(self, concurrent=False, trace=None, seq_start=0):
        self.trace = ExecutionTrace() if trace is None else trace
        self.counter = _Seq(seq_start)
        self.to_untrusted = Link(TRUSTED, UNTRUSTED, self.trace, self.counter)
        self.to_trusted = Link(UNTRUSTED, TRUSTED, self.trace, self.counter)
        self.concurrent = concurrent

    def both(self, trusted_fn, untrusted_fn):
        """Run one step of each context; returns ``(trusted_result, untrusted_result)``."""
        if not self.concurrent:
            return trusted_fn(), untrusted_fn()
        with ThreadPoolExecutor(max_workers=2) as pool:
            ft = pool.submit(trusted_fn)
            fu = pool.submit(untrusted_fn)
            return ft.result(), fu.result()


@dataclass
class ForwardCache:
    mode: str
    batched: bool
    inputs: list = field(default_factory=list)  # trusted-side layer inputs (dense)
    factors: dict = field(default_factory=dict)  # conv layer -> list of factors per sample
    residuals: dict = field(default_factory=dict)  # conv layer -> untrusted (B, N, H, W)
    seq_end: int = 0


def _batch(x):
    x = np.asarray(x, dtype=np.float64)
    return (x[None], False) if x.ndim in (1, 3) else (x, True)


def _check_plan(model, plan, mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "decomposed" and sorted(plan.ranks) != model.conv_indices():
        raise PlanMismatch(
            f"plan covers layers {sorted(plan.ranks)}, model convs are {model.conv_indices()}"
        )


def dense_layer_forward(layer, p, x):
    """Forward of one layer on a batch ``x`` using dense kernels only."""
    if layer.kind == "conv":
        return tensor.conv2d_forward(x, p["w"], layer.conv) + p["b"][:, None, None]
    if layer.kind == "relu":
        return tensor.relu_forward(x)
    if layer.kind == "maxpool":
        return tensor.pool_forward(x, layer.pool, "max")
    if layer.kind == "avgpool":
        return tensor.pool_forward(x, layer.pool, "avg")
    if layer.kind == "flatten":
        return x.reshape(x.shape[0], -1)
    if layer.kind == "linear":
        return tensor.linear_forward(x, p["w"], p["b"])
    raise ValueError(f"unknown layer kind {layer.kind!r}")


def dense_prefix(model, params, x, stop):
    """Input of layer ``stop`` for a single sample, computed densely."""
    xb, _ = _batch(x)
    for i in range(stop):
        xb = dense_layer_forward(model.layers[i], params.get(i) if params else None, xb)
    return xb[0]


def _elementwise_cost(trace, i, layer, x, y, phase="forward"):
    ops = x.size if layer.kind in ("relu", "maxpool", "avgpool") else 0
    trace.add_macs(i, phase, TRUSTED, "elementwise", ops)
    if phase == "forward":
        trace.set_resident(i, TRUSTED, x.size + (y.size if layer.kind != "flatten" else 0))


def run_forward(model, params, plan, x, mode="decomposed", concurrent=False, nsr=0.0,
                seed=0, warm=None, trace=None, seq_start=0):
    """Run the model on ``x`` (one sample or a batch).

    Returns ``(output, trace, cache)``.  In decomposed mode each conv input is
    split with the planned rank; ``warm`` maps conv layers to factors from a
    previous run used to seed the split.  ``nsr > 0`` masks each residual
    before it leaves the trusted context, with noise seeded from
    ``(seed, layer, sample)``.  Monolithic mode charges everything to the
    trusted context.
    """
    _check_plan(model, plan, mode)
    xb, batched = _batch(x)
    if xb.shape[1:] != tuple(model.input_shape):
        raise tensor.ShapeError(f"input: model expects {model.input_shape}, got {xb.shape[1:]}")
    sess = Session(concurrent, trace, seq_start)
    tr = sess.trace
    cache = ForwardCache(mode, batched)
    warm = warm or {}
    for i, layer in enumerate(model.layers):
        cache.inputs.append(xb)
        p = params.get(i)
        if layer.kind == "conv" and mode == "decomposed":
            xb = _conv_decomposed(sess, i, layer, p, xb, plan, nsr, seed, warm.get(i), cache)
            continue
        if layer.kind == "conv":
            y = dense_layer_forward(layer, p, xb)
            g = layer.conv
            tr.add_macs(i, "forward", TRUSTED, "conv",
                        len(xb) * tensor.conv_macs(g.in_channels, g.out_channels, g.kernel, *y.shape[2:]))
            tr.set_resident(i, TRUSTED, xb.size + y.size)
            xb = y
            continue
        y = dense_layer_forward(layer, p, xb)
        if layer.kind == "linear":
            tr.add_macs(i, "forward", TRUSTED, "linear", len(xb) * layer.units[0] * layer.units[1])
            tr.set_resident(i, TRUSTED, xb.size + y.size)
            if mode == "decomposed":
                tr.note(LINEAR_NOTE)
        else:
            _elementwise_cost(tr, i, layer, xb, y)
        xb = y
    cache.seq_end = sess.counter.n
    out = xb if batched else xb[0]
    return out, tr, cache


def _conv_decomposed(sess, i, layer, p, xb, plan, nsr, seed, warm, cache):
    tr = sess.trace
    g = layer.conv
    r = plan.rank(i)
    factors, residuals = [], []
    for b, xs in enumerate(xb):
        f, xu = decompose_activation(xs, r, warm_start=warm, max_iter=plan.max_iter)
        if nsr:
            xu = add_noise(xu, nsr, (seed, i, b))
        factors.append(f)
        residuals.append(xu)
        tr.add_macs(i, "forward", TRUSTED, "svd", f.svd_macs)
    xu_all = np.stack(residuals)
    sess.to_untrusted.send("forward", i, "x_u", xu_all)

    def trusted_part():
        ys = []
        for f in factors:
            wt = transform_kernels(p["w"], f)
            tr.add_macs(i, "forward", TRUSTED, "transform",
                        transform_macs(g.out_channels, g.in_channels, f.rank, g.kernel))
            y = trusted_forward(f, wt, g)
            tr.add_macs(i, "forward", TRUSTED, "conv",
                        tensor.conv_macs(f.rank, g.out_channels, g.kernel, *y.shape[1:]))
            ys.append(y)
        return np.stack(ys)

    def untrusted_part():
        xu_recv = sess.to_untrusted.recv()
        y = untrusted_forward(xu_recv, p["w"], g)
        tr.add_macs(i, "forward", UNTRUSTED, "conv",
                    len(xu_recv) * tensor.conv_macs(g.in_channels, g.out_channels, g.kernel, *y.shape[2:]))
        return xu_recv, y

    yt, (xu_held, yu) = sess.both(trusted_part, untrusted_part)
    sess.to_trusted.send("forward", i, "y_u", yu)
    yu_recv = sess.to_trusted.recv()
    y = np.stack([merge_outputs(a, c, p["b"]) for a, c in zip(yt, yu_recv)])
    tr.set_resident(i, TRUSTED, sum(f.stored_values for f in factors) + yt.size)
    tr.set_resident(i, UNTRUSTED, xu_held.size + yu.size)
    cache.factors[i] = factors
    cache.residuals[i] = xu_held
    return y


def run_backward(model, params, plan, cache, dout, concurrent=False, input_grad=False,
                 trace=None, seq_start=None):
    """Backpropagate ``dout`` through a cached forward run.

    Returns ``(grads, trace)`` where ``grads`` maps layer index to
    ``{"w", "b"}`` and, with ``input_grad``, key ``"input"`` holds the
    gradient w.r.t. the model input.  In decomposed mode the trusted context
    runs element-wise and linear backward and the factored weight gradient;
    the untrusted context computes the residual weight gradient, merges the
    trusted part into it, and computes every conv input gradient.
    """
    mode = cache.mode
    _check_plan(model, plan, mode)
    sess = Session(concurrent, trace, cache.seq_end if seq_start is None else seq_start)
    tr = sess.trace
    dy = np.asarray(dout, dtype=np.float64)
    if not cache.batched:
        dy = dy[None]
    grads = {}
    for i in range(len(model.layers) - 1, -1, -1):
        if dy is None:
            break
        layer = model.layers[i]
        x = cache.inputs[i]
        p = params.get(i)
        want_dx = input_grad or model.needs_input_grad(i)
        if layer.kind == "conv" and mode == "decomposed":
            dy = _conv_backward_decomposed(sess, i, layer, p, x, dy, cache, want_dx, grads)
            continue
        if layer.kind == "conv":
            g = layer.conv
            macs = len(x) * tensor.conv_macs(g.in_channels, g.out_channels, g.kernel, *dy.shape[2:])
            grads[i] = {"w": tensor.conv2d_backward_weight(x, dy, g), "b": dy.sum(axis=(0, 2, 3))}
            tr.add_macs(i, "backward", TRUSTED, "conv_weight", macs)
            if want_dx:
                dy = tensor.conv2d_backward_input(dy, p["w"], g, x.shape[2:])
                tr.add_macs(i, "backward", TRUSTED, "conv_input", macs)
            else:
                dy = None
            continue
        if layer.kind == "linear":
            dx, dw, db = tensor.linear_backward(x, p["w"], dy)
            grads[i] = {"w": dw, "b": db}
            tr.add_macs(i, "backward", TRUSTED, "linear", 2 * len(x) * layer.units[0] * layer.units[1])
            dy = dx
        elif layer.kind == "relu":
            dy = tensor.relu_backward(x, dy)
        elif layer.kind in ("maxpool", "avgpool"):
            dy = tensor.pool_backward(x, dy, layer.pool, "max" if layer.kind == "maxpool" else "avg")
        elif layer.kind == "flatten":
            dy = dy.reshape(x.shape)
        _elementwise_cost(tr, i, layer, x, x, "backward")
    if input_grad:
        grads["input"] = dy if cache.batched else dy[0]
    return grads, tr


def _conv_backward_decomposed(sess, i, layer, p, x, dy, cache, want_dx, grads):
    tr = sess.trace
    g = layer.conv
    factors = cache.factors[i]
    sess.to_untrusted.send("backward", i, "grad_y", dy)

    def trusted_part():
        dw_t = np.zeros_like(p["w"])
        for f, d in zip(factors, dy):
            dw_t += trusted_weight_grad(f, d, g)
            tr.add_macs(i, "backward", TRUSTED, "conv_weight",
                        tensor.conv_macs(f.rank, g.out_channels, g.kernel, *d.shape[1:])
                        + transform_macs(g.out_channels, g.in_channels, f.rank, g.kernel))
        return dw_t

    def untrusted_part():
        d = sess.to_untrusted.recv()
        xu = cache.residuals[i]
        macs = len(xu) * tensor.conv_macs(g.in_channels, g.out_channels, g.kernel, *d.shape[2:])
        dw_u = untrusted_weight_grad(xu, d, g)
        tr.add_macs(i, "backward", UNTRUSTED, "conv_weight", macs)
        dx = None
        if want_dx:
            dx = tensor.conv2d_backward_input(d, p["w"], g, xu.shape[2:])
            tr.add_macs(i, "backward", UNTRUSTED, "conv_input", macs)
        return dw_u, dx

    dw_t, (dw_u, dx) = sess.both(trusted_part, untrusted_part)
    db = dy.sum(axis=(0, 2, 3))
    sess.to_untrusted.send("backward", i, "grad_w_t", dw_t)
    # merged in the untrusted context, trusted addend first
    dw = sess.to_untrusted.recv() + dw_u
    grads[i] = {"w": dw, "b": db}
    if dx is None:
        return None
    sess.to_trusted.send("backward", i, "grad_x", dx)
    return sess.to_trusted.recv()


def input_gradients(model, params, data, labels, layer=0):
    """Per-sample ``(X, grad_X L)`` at the input of ``layer`` under cross-entropy loss."""
    from .training import softmax_cross_entropy

    xs, gs = [], []
    for x, y in zip(data, labels):
        a = dense_prefix(model, params, x, layer)
        xb = a[None]
        inputs = []
        for j in range(layer, len(model.layers)):
            inputs.append(xb)
            xb = dense_layer_forward(model.layers[j], params.get(j), xb)
        _, dout = softmax_cross_entropy(xb, np.array([y]))
        d = dout
        for j in range(len(model.layers) - 1, layer - 1, -1):
            lay = model.layers[j]
            xin = inputs[j - layer]
            p = params.get(j)
            if lay.kind == "conv":
                d = tensor.conv2d_backward_input(d, p["w"], lay.conv, xin.shape[2:])
            elif lay.kind == "linear":
                d = d @ p["w"]
            elif lay.kind == "relu":
                d = tensor.relu_backward(xin, d)
            elif lay.kind in ("maxpool", "avgpool"):
                d = tensor.pool_backward(xin, d, lay.pool, "max" if lay.kind == "maxpool" else "avg")
            else:
                d = d.reshape(xin.shape)
        xs.append(a)
        gs.append(d[0])
    return xs, gs


def reconstruct_input(cache, layer):
    """Dense conv input rebuilt from the cached split (for checks)."""
    return np.stack([reconstruct(f) for f in cache.factors[layer]]) + cache.residuals[layer]
