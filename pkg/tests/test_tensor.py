import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asymsplit import tensor
from asymsplit.tensor import ConvGeometry, ShapeError


def loop_conv(x, w, stride, pad):
    """Plain-Python cross-correlation with the same summation order as the kernel."""
    n, h, wd = x.shape
    m, _, k, _ = w.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    y = np.zeros((m, ho, wo))
    for i in range(m):
        for oh in range(ho):
            for ow in range(wo):
                acc = 0.0
                for j in range(n):
                    for q in range(k):
                        ih = oh * stride + q - pad
                        if not 0 <= ih < h:
                            continue
                        for r in range(k):
                            iw = ow * stride + r - pad
                            if not 0 <= iw < wd:
                                continue
                            acc += float(x[j, ih, iw]) * float(w[i, j, q, r])
                y[i, oh, ow] = acc
    return y


def central_diff(f, a, eps=1e-5):
    g = np.zeros_like(a)
    it = np.nditer(a, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = a[idx]
        a[idx] = old + eps
        fp = f()
        a[idx] = old - eps
        fm = f()
        a[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def test_identity_kernel():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    y = tensor.conv2d_forward(x, np.ones((1, 1, 1, 1)), ConvGeometry(1, 1, 1))
    assert np.array_equal(y, x)


def test_delta_kernel_same_padding():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    assert np.array_equal(tensor.conv2d_forward(x, w, ConvGeometry(1, 1, 3, 1, 1)), x)


def test_ramp_all_ones():
    x = np.arange(32.0).reshape(2, 4, 4)
    y = tensor.conv2d_forward(x, np.ones((1, 2, 3, 3)), ConvGeometry(2, 1, 3))
    assert y.shape == (1, 2, 2)
    assert y[0, 0, 0] == x[0, :3, :3].sum() + x[1, :3, :3].sum()
    assert y[0, 1, 1] == x[:, 1:4, 1:4].sum()


@pytest.mark.parametrize("k,s,p", [(1, 1, 0), (3, 1, 1), (3, 2, 1), (3, 1, 0), (5, 2, 2), (2, 1, 0)])
def test_forward_bitwise_equals_loop_oracle(rng, k, s, p):
    x = rng.standard_normal((3, 7, 6))
    w = rng.standard_normal((4, 3, k, k))
    y = tensor.conv2d_forward(x, w, ConvGeometry(3, 4, k, s, p))
    assert np.array_equal(y, loop_conv(x, w, s, p))


def test_batched_forward_matches_per_sample(rng):
    x = rng.standard_normal((3, 2, 5, 5))
    w = rng.standard_normal((2, 2, 3, 3))
    g = ConvGeometry(2, 2, 3, 1, 1)
    yb = tensor.conv2d_forward(x, w, g)
    for b in range(3):
        assert np.array_equal(yb[b], tensor.conv2d_forward(x[b], w, g))


def test_shape_errors_name_dimension(rng):
    x = rng.standard_normal((3, 5, 5))
    with pytest.raises(ShapeError, match="in_channels"):
        tensor.conv2d_forward(x, rng.standard_normal((2, 4, 3, 3)), ConvGeometry(4, 2, 3))
    with pytest.raises(ShapeError, match="out_channels"):
        tensor.conv2d_forward(x, rng.standard_normal((2, 3, 3, 3)), ConvGeometry(3, 5, 3))
    with pytest.raises(ShapeError, match="kernel size"):
        tensor.conv2d_forward(x, rng.standard_normal((2, 3, 3, 3)), ConvGeometry(3, 2, 5))
    with pytest.raises(ShapeError):
        ConvGeometry(3, 2, 7).output_size(5, 5)


def test_geometry_output_size():
    assert ConvGeometry(1, 1, 3, 2, 1).output_size(7, 8) == (4, 4)
    with pytest.raises(ShapeError):
        ConvGeometry(1, 1, 3, stride=0)
    with pytest.raises(ShapeError):
        ConvGeometry(1, 1, 3, padding=-1)


def test_nonfinite_rejected():
    with pytest.raises(ValueError, match="NaN"):
        tensor.as_tensor([1.0, np.nan])


def test_inputs_not_mutated(rng):
    x = rng.standard_normal((2, 4, 4))
    w = rng.standard_normal((3, 2, 3, 3))
    x0, w0 = x.copy(), w.copy()
    tensor.conv2d_forward(x, w, ConvGeometry(2, 3, 3, 1, 1))
    assert np.array_equal(x, x0) and np.array_equal(w, w0)


def test_backward_weight_zero_dy(rng):
    x = rng.standard_normal((2, 4, 4))
    g = ConvGeometry(2, 3, 3, 1, 1)
    assert not tensor.conv2d_backward_weight(x, np.zeros((3, 4, 4)), g).any()


def test_backward_weight_1x1_dot():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    dw = tensor.conv2d_backward_weight(x, np.ones((1, 2, 2)), ConvGeometry(1, 1, 1))
    assert dw.shape == (1, 1, 1, 1) and dw[0, 0, 0, 0] == 10.0


def test_backward_input_zero_and_scalar():
    g = ConvGeometry(1, 1, 1)
    w = np.full((1, 1, 1, 1), 2.0)
    assert not tensor.conv2d_backward_input(np.zeros((1, 2, 2)), w, g, (2, 2)).any()
    dx = tensor.conv2d_backward_input(np.array([[[1.0, 0.0], [0.0, 1.0]]]), w, g, (2, 2))
    assert np.array_equal(dx, [[[2.0, 0.0], [0.0, 2.0]]])


@pytest.mark.parametrize("k,s,p", [(3, 1, 0), (3, 1, 1), (3, 2, 1), (2, 2, 0)])
def test_conv_backward_finite_differences(rng, k, s, p):
    x = rng.standard_normal((2, 5, 5))
    w = rng.standard_normal((2, 2, k, k))
    g = ConvGeometry(2, 2, k, s, p)

    def loss():
        y = tensor.conv2d_forward(x, w, g)
        return 0.5 * np.sum(y * y)

    dy = tensor.conv2d_forward(x, w, g)
    assert rel(tensor.conv2d_backward_weight(x, dy, g), central_diff(loss, w)) < 1e-4
    assert rel(tensor.conv2d_backward_input(dy, w, g, (5, 5)), central_diff(loss, x)) < 1e-4


def test_relu_examples():
    x = np.array([-1.0, 0.0, 2.0])
    assert np.array_equal(tensor.relu_forward(x), [0, 0, 2])
    assert np.array_equal(tensor.relu_backward(x, np.full(3, 5.0)), [0, 0, 5])


def test_relu_finite_differences(rng):
    x = rng.standard_normal((3, 4, 4))
    x[np.abs(x) < 1e-3] = 0.5
    c = rng.standard_normal(x.shape)

    def loss():
        return np.sum(c * tensor.relu_forward(x))

    assert rel(tensor.relu_backward(x, c), central_diff(loss, x)) < 1e-6


def test_pool_examples():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    assert np.array_equal(tensor.pool_forward(x, 2, "avg"), [[[2.5]]])
    assert np.array_equal(tensor.pool_forward(x, 2, "max"), [[[4.0]]])
    dmax = tensor.pool_backward(x, np.array([[[1.0]]]), 2, "max")
    assert np.array_equal(dmax, [[[0.0, 0.0], [0.0, 1.0]]])
    davg = tensor.pool_backward(x, np.array([[[1.0]]]), 2, "avg")
    assert np.array_equal(davg, np.full((1, 2, 2), 0.25))


def test_maxpool_tie_goes_to_first():
    x = np.ones((1, 2, 2))
    d = tensor.pool_backward(x, np.array([[[1.0]]]), 2, "max")
    assert np.array_equal(d, [[[1.0, 0.0], [0.0, 0.0]]])


@pytest.mark.parametrize("mode", ["max", "avg"])
def test_pool_finite_differences(rng, mode):
    x = rng.standard_normal((2, 4, 6))
    c = rng.standard_normal((2, 2, 3))

    def loss():
        return np.sum(c * tensor.pool_forward(x, 2, mode))

    assert rel(tensor.pool_backward(x, c, 2, mode), central_diff(loss, x)) < 1e-6


def test_flatten_examples(rng):
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    assert np.array_equal(tensor.flatten_channels(x), [[1, 2, 3, 4]])
    y = rng.standard_normal((8, 5, 7))
    f = tensor.flatten_channels(y)
    assert np.array_equal(tensor.unflatten_channels(f, y.shape), y)
    assert np.linalg.norm(f) == np.linalg.norm(y)


def test_linear_finite_differences(rng):
    x = rng.standard_normal((3, 5))
    w = rng.standard_normal((4, 5))
    b = rng.standard_normal(4)
    c = rng.standard_normal((3, 4))

    def loss():
        return np.sum(c * tensor.linear_forward(x, w, b))

    dx, dw, db = tensor.linear_backward(x, w, c)
    assert rel(dw, central_diff(loss, w)) < 1e-6
    assert rel(dx, central_diff(loss, x)) < 1e-6
    assert rel(db, central_diff(loss, b)) < 1e-6


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    n=st.integers(1, 4),
    m=st.integers(1, 4),
    k=st.sampled_from([1, 3]),
    s=st.integers(1, 2),
)
def test_linearity(seed, n, m, k, s):
    r = np.random.default_rng(seed)
    x1, x2 = r.standard_normal((2, n, 6, 6))
    w = r.standard_normal((m, n, k, k))
    g = ConvGeometry(n, m, k, s, k // 2)
    lhs = tensor.conv2d_forward(x1 + x2, w, g)
    rhs = tensor.conv2d_forward(x1, w, g) + tensor.conv2d_forward(x2, w, g)
    assert rel(lhs, rhs) <= 1e-12
