import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asymsplit import spectral
from asymsplit.spectral import FactoredActivation, decompose_activation, light_svd, reconstruct
from asymsplit.tensor import ShapeError


def charpoly_eigs(g):
    """Eigenvalues of a symmetric 1x1, 2x2 or 3x3 matrix from its characteristic polynomial."""
    n = g.shape[0]
    if n == 1:
        return np.array([g[0, 0]])
    if n == 2:
        tr = g[0, 0] + g[1, 1]
        det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
        disc = math.sqrt(max(tr * tr / 4 - det, 0.0))
        return np.array([tr / 2 + disc, tr / 2 - disc])
    # trigonometric roots of the depressed cubic
    q = np.trace(g) / 3
    p2 = np.sum((g - q * np.eye(3)) ** 2) / 6
    p = math.sqrt(p2)
    if p == 0:
        return np.array([q, q, q])
    b = (g - q * np.eye(3)) / p
    half_det = np.linalg.det(b) / 2
    phi = math.acos(min(1.0, max(-1.0, half_det))) / 3
    e1 = q + 2 * p * math.cos(phi)
    e3 = q + 2 * p * math.cos(phi + 2 * math.pi / 3)
    return np.array([e1, 3 * q - e1 - e3, e3])


@pytest.mark.parametrize("n", [1, 2, 3])
def test_jacobi_matches_characteristic_polynomial(rng, n):
    for _ in range(50):
        a = rng.standard_normal((n, 7))
        g = a @ a.T
        got = spectral.jacobi_eigenvalues(g)
        want = np.sort(charpoly_eigs(g))[::-1]
        assert np.allclose(got, want, rtol=0, atol=1e-10 * np.linalg.norm(g))


def test_spectrum_matches_numpy_svd(rng):
    for n, hw in [(5, 40), (16, 64), (12, 9)]:
        x = rng.standard_normal((n, hw))
        s = spectral.channel_spectrum(x).singular_values
        ref = np.linalg.svd(x, compute_uv=False)
        assert np.allclose(s, ref, rtol=1e-9, atol=1e-9 * ref[0])


def test_spectrum_rank_one():
    x = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
    p = spectral.channel_spectrum(x)
    assert np.allclose(p.singular_values, [math.sqrt(28), 0.0], atol=1e-12)
    assert p.entropy == 0.0 and p.principal_count == 1


def test_spectrum_diag():
    p = spectral.channel_spectrum(np.diag([2.0, 1.0]))
    assert np.allclose(p.singular_values, [2.0, 1.0], atol=1e-14)
    assert abs(p.entropy - (2 * math.log2(3) - math.log2(5))) < 1e-12
    assert abs(p.entropy - 0.8480) < 1e-4
    assert p.principal_count == 2


def test_spectrum_orthogonal_rows():
    x = np.zeros((4, 8))
    for j in range(4):
        x[j, 2 * j] = 3.0
    assert abs(spectral.channel_spectrum(x).entropy - 2.0) < 1e-12


def test_spectrum_zero_matrix():
    p = spectral.channel_spectrum(np.zeros((3, 5)))
    assert not p.singular_values.any() and p.entropy == 0.0


def test_profile_invariants(rng):
    for _ in range(20):
        x = rng.standard_normal((6, 10)) * rng.random(6)[:, None]
        p = spectral.channel_spectrum(x)
        assert np.all(np.diff(p.singular_values) <= 0) and np.all(p.singular_values >= 0)
        assert abs(p.normalized.sum() - 1.0) < 1e-12
        assert 0 <= p.entropy <= math.log2(6) + 1e-9


def test_hand_step_diag():
    f, res = light_svd(np.diag([2.0, 1.0]), 1, init_v=[np.array([1.0, 0.0])], max_iter=1)
    assert np.array_equal(f.u[0], [2.0, 0.0])
    assert np.array_equal(f.v[0], [1.0, 0.0])
    assert np.array_equal(reconstruct(f).reshape(2, 2), [[2.0, 0.0], [0.0, 0.0]])
    assert np.array_equal(res, [[0.0, 0.0], [0.0, 1.0]])


def test_rank_one_fixed_point(rng):
    u0, v0 = rng.standard_normal(5), rng.standard_normal(12)
    x = np.outer(u0, v0)
    init = v0 + 0.3 * rng.standard_normal(12)
    _, res = light_svd(x, 1, init_v=[init], max_iter=1)
    assert np.linalg.norm(res) <= 1e-12 * np.linalg.norm(x)


def test_reconstruct_examples():
    f = FactoredActivation(np.zeros((0, 2)), np.zeros((0, 4)), (2, 2, 2))
    assert not reconstruct(f).any() and reconstruct(f).shape == (2, 2, 2)
    f = FactoredActivation(np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]]), (2, 1, 2))
    assert np.array_equal(reconstruct(f), np.array([[3.0, 4.0], [6.0, 8.0]]).reshape(2, 1, 2))


def test_residual_monotone_in_r_and_iterations(rng):
    x = rng.standard_normal((16, 64))
    norms = np.array([[np.linalg.norm(light_svd(x, r, max_iter=it)[1]) for it in range(1, 5)]
                      for r in range(1, 9)])
    assert np.all(np.diff(norms, axis=0) <= 1e-12)
    assert np.all(np.diff(norms, axis=1) <= 1e-12)


def test_mac_count_linear_in_r(rng):
    x = rng.standard_normal((8, 30))
    for r in range(0, 6):
        for it in (1, 2, 3):
            f, _ = light_svd(x, r, max_iter=it)
            assert f.svd_macs == 2 * it * r * 8 * 30


def test_degenerate_zero_input():
    x = np.zeros((3, 4))
    f, res = light_svd(x, 2)
    assert not f.u.any() and not res.any()
    assert np.isfinite(f.v).all()


def test_zero_init_vector_gives_zero_component(rng):
    x = rng.standard_normal((3, 4))
    f, res = light_svd(x, 1, init_v=[np.zeros(4)])
    assert not f.u.any() and np.array_equal(res, x)


def test_bad_rank_and_iterations(rng):
    x = rng.standard_normal((3, 4))
    with pytest.raises(ShapeError):
        light_svd(x, 4)
    with pytest.raises(ValueError):
        light_svd(x, 1, max_iter=0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 12), hw=st.integers(1, 40),
       it=st.integers(1, 4), data=st.data())
def test_split_identity(seed, n, hw, it, data):
    r = data.draw(st.integers(0, min(n, hw)))
    x = np.random.default_rng(seed).standard_normal((n, hw))
    f, res = light_svd(x, r, max_iter=it)
    back = reconstruct(f).reshape(n, hw) + res
    assert np.linalg.norm(back - x) <= 1e-12 * np.linalg.norm(x)
    assert np.linalg.matrix_rank(reconstruct(f).reshape(n, hw)) <= r


def test_decompose_low_rank_input(rng):
    a = rng.standard_normal((12, 3))
    b = rng.standard_normal((3, 64))
    x = (a @ b).reshape(12, 8, 8)
    _, res = decompose_activation(x, 3)
    assert np.linalg.norm(res) <= 1e-9 * np.linalg.norm(x)


def test_decompose_full_rank(rng):
    x = rng.standard_normal((6, 5, 5))
    _, res = decompose_activation(x, 6, max_iter=200)
    assert np.sum(res**2) <= 1e-6 * np.sum(x**2)
    # the iterative path alone also extracts everything given enough iterations
    _, res = light_svd(x.reshape(6, 25), 6, max_iter=200)
    assert np.sum(res**2) <= 1e-6 * np.sum(x**2)


def test_decompose_clamps_rank(rng):
    x = rng.standard_normal((4, 2, 2))
    with pytest.warns(RuntimeWarning, match="clamped"):
        f, res = decompose_activation(x, 9)
    assert f.rank == 4


def test_warm_start_one_iteration(rng):
    s = 0.5 ** np.arange(10)
    q1, _ = np.linalg.qr(rng.standard_normal((10, 10)))
    q2, _ = np.linalg.qr(rng.standard_normal((36, 10)))
    x = ((q1 * s) @ q2.T).reshape(10, 6, 6)
    best, _ = decompose_activation(x, 3, max_iter=300)
    _, warm_res = decompose_activation(x, 3, warm_start=best, max_iter=1)
    _, cold_res = decompose_activation(x, 3, max_iter=2)
    assert np.linalg.norm(warm_res) <= np.linalg.norm(cold_res) + 1e-9


def test_warm_start_ignored_on_shape_change(rng):
    x = rng.standard_normal((4, 3, 3))
    prev, _ = decompose_activation(rng.standard_normal((4, 2, 2)), 2)
    f1, r1 = decompose_activation(x, 2, warm_start=prev)
    f2, r2 = decompose_activation(x, 2)
    assert np.array_equal(r1, r2)


def test_full_rank_split_is_exact(rng):
    x = rng.standard_normal((4, 3, 3))
    f, res = decompose_activation(x, 4)
    assert not res.any() and f.svd_macs == 0
    assert np.array_equal(reconstruct(f), x)
    tall = rng.standard_normal((6, 1, 2))
    f, res = decompose_activation(tall, 2)
    assert not res.any() and np.array_equal(reconstruct(f), tall)
