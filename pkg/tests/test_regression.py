import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metakernel.errors import ShapeError, ValidationError
from metakernel.mnk import MetaKernelConfig, inner_predictions
from metakernel.ntk import NetConfig
from metakernel.regression import (
    bound_from_model, expected_loss, fit_meta, generalization_bound, meta_predict, pfg_decompose,
    test_loss as loss_fn,
)
from metakernel.tasks import TaskData, gen_piecewise_tasks, gen_quadratic_tasks

from oracles import meta_predict_dense

NET = NetConfig(depth_L=1, sigma_w_sq=2.0, sigma_b_sq=0.5)


def quad_task(alpha, seed, n=8, m=2):
    rng = np.random.default_rng(seed)
    X, Xs = rng.uniform(size=(n, 1)), rng.uniform(size=(m, 1))
    return TaskData(X, alpha * X**2, Xs, alpha * Xs**2, alpha=alpha)


def test_matches_dense_oracle_defaults():
    train = [quad_task(0.3, 1), quad_task(0.7, 2)]
    test = quad_task(0.5, 3)
    cfg = MetaKernelConfig(net=NetConfig())
    ref, ref_base = meta_predict_dense(test, train, 2, 2.0, 0.01, 1.0, math.inf, 1.0, math.inf,
                                       1e-5)
    pred = meta_predict(test, train, cfg)
    assert np.linalg.norm(pred.values - ref) <= 1e-8 * np.linalg.norm(ref)
    assert np.linalg.norm(pred.base_learner - ref_base) <= 1e-8 * np.linalg.norm(ref_base)


def test_matches_dense_oracle_finite_times():
    train = [quad_task(0.3, 1), quad_task(0.7, 2), quad_task(0.1, 4)]
    test = quad_task(0.5, 3)
    cfg = MetaKernelConfig(net=NET, lambda_inner=0.4, tau=3.0, eta_outer=0.2, t_outer=25.0)
    ref, _ = meta_predict_dense(test, train, 1, 2.0, 0.5, 0.4, 3.0, 0.2, 25.0, 1e-5)
    pred = meta_predict(test, train, cfg)
    assert np.linalg.norm(pred.values - ref) <= 1e-8 * np.linalg.norm(ref)


def test_no_meta_training_means_base():
    train = gen_quadratic_tasks(3, 8, 2, seed=0).tasks
    test = quad_task(0.5, 9)
    pred = meta_predict(test, train, MetaKernelConfig(net=NET, t_outer=0))
    np.testing.assert_array_equal(pred.values, pred.base_learner)
    np.testing.assert_array_equal(pred.pfg, np.zeros_like(pred.pfg))


def test_interpolates_training_task():
    train = gen_quadratic_tasks(4, 8, 2, seed=1).tasks
    cfg = MetaKernelConfig(net=NET, ridge=0.0)
    for t in train:
        pred = meta_predict(t, train, cfg)
        np.testing.assert_allclose(pred.values, t.Y, atol=1e-6)


def test_stacked_interpolation_relative():
    train = gen_quadratic_tasks(5, 8, 2, seed=2).tasks
    model = fit_meta(train, MetaKernelConfig(net=NET, ridge=0.0))
    P = np.vstack([model.predict(t).values for t in train])
    Y = np.vstack([t.Y for t in train])
    assert np.linalg.norm(P - Y) <= 1e-6 * np.linalg.norm(Y)


def test_pfg_identity_bit_exact():
    train = gen_quadratic_tasks(6, 8, 2, seed=3).tasks
    pred = meta_predict(quad_task(0.5, 10), train, MetaKernelConfig(net=NET))
    base, meta, pfg = pfg_decompose(pred)
    np.testing.assert_array_equal(base - pfg, meta)
    assert np.linalg.norm(pfg) > 0


def test_empty_training_set():
    with pytest.raises(ValidationError):
        meta_predict(quad_task(0.5, 0), [], MetaKernelConfig(net=NET))


def test_test_loss():
    Y = np.random.default_rng(0).standard_normal((8, 1))
    assert loss_fn(Y, Y) == 0.0
    P = Y.copy()
    P[3, 0] += 1.0
    assert loss_fn(P, Y) == pytest.approx(0.5, abs=1e-15)
    R = np.random.default_rng(1).standard_normal((8, 1))
    ref = 0.0
    for a, b in zip(R.ravel(), Y.ravel()):
        ref += 0.5 * (a - b) * (a - b)
    assert loss_fn(R, Y) == pytest.approx(ref, abs=1e-14)
    with pytest.raises(ShapeError):
        loss_fn(np.ones(3), np.ones(4))


def test_expected_loss_is_per_query_mean():
    tasks = gen_quadratic_tasks(3, 8, 2, seed=0).tasks
    preds = [t.Y + 1.0 for t in tasks]
    assert expected_loss(preds, tasks) == pytest.approx(0.5)


def test_bound_zero_residual():
    train = gen_quadratic_tasks(3, 8, 2, seed=0).tasks
    cfg = MetaKernelConfig(net=NET, tau=5.0)
    G = inner_predictions(train, cfg)
    fitted = [t.with_labels(g, t.Y_sup) for t, g in zip(train, G)]
    rep = generalization_bound(fitted, cfg, normalize=True)
    assert rep.bound == pytest.approx(0.0, abs=1e-12)
    assert rep.normalized_bound == pytest.approx(0.0, abs=1e-6)


def test_bound_recompute_and_homogeneity():
    train = gen_quadratic_tasks(5, 8, 2, seed=4).tasks
    model = fit_meta(train, MetaKernelConfig(net=NET))
    rep = bound_from_model(model, normalize=True)
    assert rep.recompute() == pytest.approx(rep.bound, rel=1e-10)
    assert rep.y_tilde_g.shape == (40,)
    for c in (-3.0, 0.5, 2.0):
        rc = bound_from_model(model, residual=c * model.residual)
        assert rc.bound == pytest.approx(abs(c) * rep.bound, rel=1e-10)
    assert bound_from_model(model).normalized_bound is None
    assert rep.normalized_bound > 0


def test_bound_monotone_along_top_direction():
    train = gen_quadratic_tasks(4, 8, 2, seed=5).tasks
    model = fit_meta(train, MetaKernelConfig(net=NET))
    y1 = model.residual
    v = model.eig.eigenvectors[:, [0]]  # top eigenvector of Phi^-1
    if (y1.T @ v)[0, 0] < 0:
        v = -v
    b1 = bound_from_model(model).bound
    for c in (0.01, 0.1, 1.0):
        assert bound_from_model(model, residual=y1 + c * v).bound >= b1


def test_bound_permutation_invariant():
    train = gen_quadratic_tasks(6, 8, 2, seed=6).tasks
    cfg = MetaKernelConfig(net=NET)
    a = generalization_bound(train, cfg)
    b = generalization_bound(train[::-1], cfg)
    assert b.quad_form == pytest.approx(a.quad_form, rel=1e-10)


def test_bound_grows_with_noise_single_seed():
    from metakernel.tasks import add_label_noise
    b = gen_quadratic_tasks(40, 8, 2, seed=0)
    cfg = MetaKernelConfig(net=NET, lambda_inner=0.1, tau=20, mode="discrete")
    vals = [generalization_bound(add_label_noise(b, xi, 1).tasks, cfg).bound
            for xi in (0.0, 0.1, 0.4)]
    assert vals[0] < vals[1] < vals[2]


def test_piecewise_bound_exceeds_quadratic():
    cfg = MetaKernelConfig(net=NET, lambda_inner=0.1, tau=20, mode="discrete")
    q = [generalization_bound(gen_quadratic_tasks(40, 8, 2, seed=s).tasks, cfg).bound
         for s in range(5)]
    p = [generalization_bound(gen_piecewise_tasks(40, 8, 2, seed=s).tasks, cfg).bound
         for s in range(5)]
    assert np.median(p) > np.median(q)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), t=st.sampled_from([0.0, 3.0, math.inf]))
def test_prop_decomposition_identity(seed, t):
    train = gen_quadratic_tasks(3, 5, 2, seed=seed).tasks
    test = gen_quadratic_tasks(1, 7, 2, seed=seed + 1).tasks[0]
    pred = meta_predict(test, train, MetaKernelConfig(net=NET, t_outer=t, eta_outer=0.3))
    np.testing.assert_array_equal(pred.base_learner - pred.pfg, pred.values)
