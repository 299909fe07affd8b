import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metakernel import finite_width as fw
from metakernel.errors import ShapeError, ValidationError
from metakernel.ntk import NetConfig, expand_outputs, layer_covariances, ntk_matrix

from oracles import ntk_dense, ntk_relu_scalar


def test_oracle_hand_value():
    # Sigma^1 = 2, Sigma^2 = 2, Sigma_dot^2 = 1  ->  Theta = 2 + 2 * 1
    assert ntk_relu_scalar([1.0], [1.0], 1, 2.0, 0.0) == pytest.approx(4.0, rel=1e-15)


def test_hand_value():
    res = ntk_matrix([[1.0]], [[1.0]], NetConfig(depth_L=1, sigma_w_sq=2.0, sigma_b_sq=0.0))
    assert res.theta.shape == (1, 1)
    assert res.theta[0, 0] == pytest.approx(4.0, rel=1e-14)
    assert res.nngp[0, 0] == pytest.approx(2.0, rel=1e-14)


def test_self_kernel_positive():
    x = np.array([[0.6, 0.8]])
    for cfg in (NetConfig(), NetConfig(depth_L=3, sigma_b_sq=0.0)):
        assert ntk_matrix(x, x, cfg).theta[0, 0] > 0


def test_swap_gives_transpose():
    rng = np.random.default_rng(0)
    X, Z = rng.standard_normal((5, 3)), rng.standard_normal((4, 3))
    a = ntk_matrix(X, Z).theta
    b = ntk_matrix(Z, X).theta
    np.testing.assert_array_equal(a, b.T)


def test_matches_straight_line_oracle():
    rng = np.random.default_rng(1)
    X, Z = rng.standard_normal((6, 2)), rng.standard_normal((3, 2))
    for L in (1, 2, 4):
        cfg = NetConfig(depth_L=L, sigma_w_sq=1.7, sigma_b_sq=0.3)
        np.testing.assert_allclose(ntk_matrix(X, Z, cfg).theta, ntk_dense(X, Z, L, 1.7, 0.3),
                                   rtol=1e-12)


def test_errors():
    with pytest.raises(ShapeError):
        ntk_matrix(np.ones((2, 2)), np.ones((2, 3)))
    with pytest.raises(ValidationError):
        ntk_matrix([[np.inf]], [[1.0]])
    with pytest.raises(ShapeError):
        ntk_matrix(np.ones((0, 2)), np.ones((1, 2)))
    for bad in (dict(depth_L=0), dict(sigma_w_sq=0.0), dict(sigma_b_sq=-1.0),
                dict(activation="tanh")):
        with pytest.raises(ValidationError):
            NetConfig(**bad)


def test_one_d_inputs_are_columns():
    a = ntk_matrix(np.array([0.1, 0.5]), np.array([0.2])).theta
    b = ntk_matrix([[0.1], [0.5]], [[0.2]]).theta
    np.testing.assert_array_equal(a, b)


def test_expand_outputs_kron():
    K = np.array([[2.0, 1.0], [1.0, 3.0]])
    E = expand_outputs(K, 2)
    assert E.shape == (4, 4)
    assert E[0, 2] == 1.0 and E[0, 3] == 0.0 and E[1, 3] == 1.0
    assert expand_outputs(K, 1) is not None


def test_rho_clamp_no_nan():
    x = np.array([[1e-8, 3.0], [1e-8, 3.0]])
    th = ntk_matrix(x, x, NetConfig(depth_L=3, sigma_b_sq=0.0)).theta
    assert np.all(np.isfinite(th))


def test_monte_carlo_oracle_4096():
    """Average of (1/l) J J^T over 200 random width-4096 nets, within 3% of 4."""
    cfg = NetConfig(depth_L=1, sigma_w_sq=2.0, sigma_b_sq=0.0)
    vals = []
    for seed in range(200):
        p = fw.init_params(cfg, 4096, 1, 1, seed)
        J = fw.jacobian(p, [[1.0]])
        vals.append((J @ J.T)[0, 0] / 4096)
    assert np.mean(vals) == pytest.approx(4.0, rel=0.03)


def test_monte_carlo_general_point():
    cfg = NetConfig(depth_L=2, sigma_w_sq=2.0, sigma_b_sq=0.1)
    X = np.array([[0.3, -0.4], [0.9, 0.2]])
    ana = ntk_matrix(X, X, cfg).theta
    acc = np.zeros((2, 2))
    for seed in range(20):
        J = fw.jacobian(fw.init_params(cfg, 1024, 2, 1, seed), X)
        acc += J @ J.T / 1024
    np.testing.assert_allclose(acc / 20, ana, rtol=0.05)


# -- properties ---------------------------------------------------------------

pts = st.integers(min_value=1, max_value=7)


@settings(max_examples=40, deadline=None)
@given(n=pts, d=st.integers(1, 4), L=st.integers(1, 4), seed=st.integers(0, 2**31 - 1),
       sb=st.floats(0.0, 1.0))
def test_prop_psd(n, d, L, seed, sb):
    X = np.random.default_rng(seed).standard_normal((n, d))
    res = ntk_matrix(X, X, NetConfig(depth_L=L, sigma_b_sq=sb))
    for K in (res.theta, res.nngp):
        S = 0.5 * (K + K.T)
        w = np.linalg.eigvalsh(S)
        assert w[0] >= -1e-8 * abs(w[-1])
        assert np.max(np.abs(K - K.T)) <= 1e-12 * np.max(np.abs(K))


@settings(max_examples=30, deadline=None)
@given(d=st.integers(1, 5), seed=st.integers(0, 2**31 - 1))
def test_prop_depth_monotone_on_diagonal(d, seed):
    x = np.random.default_rng(seed).standard_normal((1, d))
    x /= np.linalg.norm(x)
    vals = [ntk_matrix(x, x, NetConfig(depth_L=L, sigma_w_sq=2.0, sigma_b_sq=0.0)).theta[0, 0]
            for L in range(1, 6)]
    assert np.all(np.diff(vals) > 0)


@settings(max_examples=30, deadline=None)
@given(d=st.integers(1, 5), seed=st.integers(0, 2**31 - 1), c=st.floats(0.01, 100.0))
def test_prop_first_layer_scale_equivariance(d, seed, c):
    rng = np.random.default_rng(seed)
    X, Z = rng.standard_normal((3, d)), rng.standard_normal((2, d))
    cfg = NetConfig(depth_L=1, sigma_b_sq=0.0)
    s1 = layer_covariances(X, Z, cfg)[0]
    s1c = layer_covariances(c * X, c * Z, cfg)[0]
    np.testing.assert_allclose(s1c, c * c * s1, rtol=1e-12, atol=1e-300)


def test_empirical_convergence_over_widths():
    cfg = NetConfig(depth_L=1, sigma_w_sq=2.0, sigma_b_sq=0.01)
    X = np.linspace(-1, 1, 6)[:, None]
    ana = ntk_matrix(X, X, cfg).theta
    med = []
    for width in (64, 256, 1024, 4096):
        errs = []
        for seed in range(5):
            J = fw.jacobian(fw.init_params(cfg, width, 1, 1, seed), X)
            errs.append(np.linalg.norm(J @ J.T / width - ana) / np.linalg.norm(ana))
        med.append(np.median(errs))
    assert all(a > b for a, b in zip(med, med[1:])), med
