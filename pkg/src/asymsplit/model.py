"""Plain-text model descriptions.

One directive per line, ``#`` starts a comment::

    input C H W
    conv IN OUT K STRIDE PAD
    relu
    maxpool K
    avgpool K
    flatten
    linear IN OUT
    block-begin
    block-end

``block-begin``/``block-end`` group layers into a residual block; they only
affect the rank schedule.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .tensor import ConvGeometry, ShapeError

LAYER_KINDS = ("conv", "relu", "maxpool", "avgpool", "flatten", "linear")
_ARITY = {
    "input": 3,
    "conv": 5,
    "relu": 0,
    "maxpool": 1,
    "avgpool": 1,
    "flatten": 0,
    "linear": 2,
    "block-begin": 0,
    "block-end": 0,
}


class ModelSyntaxError(ValueError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        loc = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(loc + message)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_shape: tuple
    out_shape: tuple
    conv: ConvGeometry | None = None
    pool: int | None = None
    units: tuple | None = None
    block: int | None = None

    @property
    def in_values(self):
        return int(np.prod(self.in_shape))

    @property
    def out_values(self):
        return int(np.prod(self.out_shape))


@dataclass(frozen=True)
class ModelSpec:
    input_shape: tuple
    layers: tuple = field(default_factory=tuple)

    def conv_indices(self):
        return [i for i, layer in enumerate(self.layers) if layer.kind == "conv"]

    @property
    def output_shape(self):
        return self.layers[-1].out_shape if self.layers else self.input_shape

    def needs_input_grad(self, index):
        """True when some layer before ``index`` has trainable parameters."""
        return any(layer.kind in ("conv", "linear") for layer in self.layers[:index])


def _ints(tokens, line):
    out = []
    for tok, col in tokens:
        try:
            val = int(tok)
        except ValueError:
            raise ModelSyntaxError(f"expected an integer, got {tok!r}", line, col) from None
        out.append(val)
    return out


def _tokenize(raw):
    toks = []
    col = 0
    for part in raw.split():
        col = raw.index(part, col)
        toks.append((part, col + 1))
        col += len(part)
    return toks


def _next_shape(kind, args, shape, line, col):
    if kind == "conv":
        n, m, k, s, p = args
        if len(shape) != 3:
            raise ModelSyntaxError(f"conv needs a C x H x W input, got shape {shape}", line, col)
        if n != shape[0]:
            raise ModelSyntaxError(f"conv expects {shape[0]} in-channels, got {n}", line, col)
        try:
            g = ConvGeometry(n, m, k, s, p)
            ho, wo = g.output_size(shape[1], shape[2])
        except ShapeError as exc:
            raise ModelSyntaxError(str(exc), line, col) from None
        if m < 1:
            raise ModelSyntaxError("conv needs at least one output channel", line, col)
        return (m, ho, wo), {"conv": g}
    if kind == "relu":
        return shape, {}
    if kind in ("maxpool", "avgpool"):
        (k,) = args
        if len(shape) != 3:
            raise ModelSyntaxError(f"{kind} needs a C x H x W input, got shape {shape}", line, col)
        if k < 1 or shape[1] // k < 1 or shape[2] // k < 1:
            raise ModelSyntaxError(f"{kind} {k} does not fit input {shape}", line, col)
        return (shape[0], shape[1] // k, shape[2] // k), {"pool": k}
    if kind == "flatten":
        return (int(np.prod(shape)),), {}
    if kind == "linear":
        i, o = args
        if len(shape) != 1:
            raise ModelSyntaxError(f"linear needs a flat input, got shape {shape}", line, col)
        if i != shape[0]:
            raise ModelSyntaxError(f"linear expects {shape[0]} inputs, got {i}", line, col)
        if o < 1:
            raise ModelSyntaxError("linear needs at least one output", line, col)
        return (o,), {"units": (i, o)}
    raise AssertionError(kind)


def parse_model(text):
    """Parse a model description, validating the shape chain."""
    input_shape = None
    layers = []
    in_block = False
    block = None
    n_blocks = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        raw = raw.split("#", 1)[0]
        toks = _tokenize(raw)
        if not toks:
            continue
        (word, col), rest = toks[0], toks[1:]
        if word not in _ARITY:
            raise ModelSyntaxError(f"unknown directive {word!r}", lineno, col)
        if len(rest) != _ARITY[word]:
            raise ModelSyntaxError(
                f"{word} takes {_ARITY[word]} argument(s), got {len(rest)}", lineno, col
            )
        args = _ints(rest, lineno)
        if word == "input":
            if input_shape is not None:
                raise ModelSyntaxError("input declared twice", lineno, col)
            if min(args) < 1:
                raise ModelSyntaxError("input extents must be positive", lineno, col)
            input_shape = tuple(args)
            continue
        if input_shape is None:
            raise ModelSyntaxError("no input declared", lineno, col)
        if word == "block-begin":
            if in_block:
                raise ModelSyntaxError("nested blocks are not supported", lineno, col)
            in_block = True
            continue
        if word == "block-end":
            if not in_block:
                raise ModelSyntaxError("block-end without block-begin", lineno, col)
            in_block = False
            block = None
            continue
        shape = layers[-1].out_shape if layers else input_shape
        out_shape, extra = _next_shape(word, args, shape, lineno, col)
        if in_block and block is None:
            # ids count non-empty blocks only, so printing and re-parsing is stable
            block = n_blocks
            n_blocks += 1
        layers.append(LayerSpec(word, shape, out_shape, block=block, **extra))
    if input_shape is None:
        raise ModelSyntaxError("no input declared")
    if in_block:
        raise ModelSyntaxError("unterminated block")
    return ModelSpec(input_shape, tuple(layers))


def format_model(model):
    """Canonical text for a model; ``parse_model(format_model(m)) == m``."""
    lines = ["input " + " ".join(map(str, model.input_shape))]
    current = None
    for layer in model.layers:
        if layer.block != current:
            if current is not None:
                lines.append("block-end")
            if layer.block is not None:
                lines.append("block-begin")
            current = layer.block
        if layer.kind == "conv":
            g = layer.conv
            lines.append(f"conv {g.in_channels} {g.out_channels} {g.kernel} {g.stride} {g.padding}")
        elif layer.kind in ("maxpool", "avgpool"):
            lines.append(f"{layer.kind} {layer.pool}")
        elif layer.kind == "linear":
            lines.append(f"linear {layer.units[0]} {layer.units[1]}")
        else:
            lines.append(layer.kind)
    if current is not None:
        lines.append("block-end")
    return "\n".join(lines) + "\n"


def load_model(path):
    """Read a model file; bare names of bundled models (e.g. ``vgg6``) are accepted."""
    p = Path(path)
    if not p.exists():
        bundled = resources.files("asymsplit") / "models" / f"{path}.txt"
        if bundled.is_file():
            return parse_model(bundled.read_text(encoding="utf-8"))
        raise FileNotFoundError(f"model file not found: {path}")
    return parse_model(p.read_text(encoding="utf-8"))


def bundled_models():
    root = resources.files("asymsplit") / "models"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".txt"))


def init_params(model, seed=0):
    """He-normal weights and zero biases for every conv and linear layer."""
    rng = np.random.default_rng(seed)
    params = {}
    for i, layer in enumerate(model.layers):
        if layer.kind == "conv":
            g = layer.conv
            fan_in = g.in_channels * g.kernel * g.kernel
            w = rng.standard_normal((g.out_channels, g.in_channels, g.kernel, g.kernel))
            params[i] = {"w": w * np.sqrt(2.0 / fan_in), "b": np.zeros(g.out_channels)}
        elif layer.kind == "linear":
            n_in, n_out = layer.units
            w = rng.standard_normal((n_out, n_in)) * np.sqrt(2.0 / n_in)
            params[i] = {"w": w, "b": np.zeros(n_out)}
    return params
