import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asymsplit.model import (
    ModelSyntaxError,
    bundled_models,
    format_model,
    init_params,
    load_model,
    parse_model,
)


def test_parse_example():
    m = parse_model("input 1 4 4\nconv 1 2 3 1 1\nrelu")
    assert m.input_shape == (1, 4, 4)
    assert [layer.kind for layer in m.layers] == ["conv", "relu"]
    assert m.layers[0].out_shape == (2, 4, 4)


def test_no_input():
    with pytest.raises(ModelSyntaxError, match="no input declared") as e:
        parse_model("conv 3 64 3 1 1")
    assert e.value.line == 1 and e.value.column == 1


def test_channel_mismatch():
    with pytest.raises(ModelSyntaxError, match="expects 3 in-channels, got 4") as e:
        parse_model("input 3 32 32\nconv 4 8 3 1 1")
    assert e.value.line == 2


@pytest.mark.parametrize(
    "text,msg,line,col",
    [
        ("input 1 4 4\n  pool 2", "unknown directive", 2, 3),
        ("input 1 4 4\nconv 1 2 3", "takes 5", 2, 1),
        ("input 1 4 4\nconv 1 2 x 1 1", "expected an integer", 2, 10),
        ("input 1 4 4\nmaxpool 8", "does not fit", 2, 1),
        ("input 1 4 4\nlinear 16 2", "flat input", 2, 1),
        ("input 1 4 4\nflatten\nlinear 15 2", "expects 16 inputs", 3, 1),
        ("input 1 4 4\nblock-begin\nrelu", "unterminated", None, None),
        ("input 1 4 4\nblock-end", "without block-begin", 2, 1),
        ("input 1 4 4\ninput 1 4 4", "twice", 2, 1),
        ("", "no input declared", None, None),
    ],
)
def test_errors(text, msg, line, col):
    with pytest.raises(ModelSyntaxError, match=msg) as e:
        parse_model(text)
    assert (e.value.line, e.value.column) == (line, col)


def test_comments_and_blank_lines():
    m = parse_model("# net\n\ninput 2 4 4  # rgb-ish\nrelu\n")
    assert len(m.layers) == 1


def test_bundled_models_roundtrip():
    names = bundled_models()
    assert {"vgg6", "toy", "pyramid", "resblocks", "lowrank16"} <= set(names)
    for name in names:
        m = load_model(name)
        assert parse_model(format_model(m)) == m


def test_missing_model_file():
    with pytest.raises(FileNotFoundError):
        load_model("/nonexistent/model.txt")


def test_needs_input_grad():
    m = load_model("toy")
    assert not m.needs_input_grad(0)
    assert m.needs_input_grad(4)


def test_init_params_deterministic():
    m = load_model("toy")
    a, b = init_params(m, 3), init_params(m, 3)
    assert sorted(a) == [0, 4]
    assert all(np.array_equal(a[i]["w"], b[i]["w"]) for i in a)
    assert a[0]["w"].shape == (4, 2, 3, 3) and a[4]["w"].shape == (2, 64)


_SIMPLE = st.sampled_from(["relu", "conv", "block"])


@settings(max_examples=60, deadline=None)
@given(ops=st.lists(_SIMPLE, max_size=8), c=st.integers(1, 4))
def test_roundtrip_random_models(ops, c):
    lines = [f"input {c} 6 6"]
    for op in ops:
        if op == "conv":
            lines.append(f"conv {c} {c} 3 1 1")
        elif op == "relu":
            lines.append("relu")
        else:
            lines += ["block-begin", f"conv {c} {c} 1 1 0", "relu", "block-end"]
    lines += ["avgpool 2", "flatten", f"linear {c * 9} 2"]
    m = parse_model("\n".join(lines))
    assert parse_model(format_model(m)) == m
    assert format_model(parse_model(format_model(m))) == format_model(m)


def test_empty_block_roundtrip():
    m = parse_model("input 1 4 4\nblock-begin\nblock-end\nblock-begin\nconv 1 1 1 1 0\nblock-end")
    assert m.layers[0].block == 0
    assert parse_model(format_model(m)) == m
