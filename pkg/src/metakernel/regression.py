"""Kernel form of the trained meta-learner, its functional-gradient split and
the MNK generalization bound.

The meta-learner output on a test task is::

    F(test) = G(test) + Phi(test, train) T(t) (Y - G(train))

with ``T(t) = (Phi + ridge I)^-1 (I - exp(-eta (Phi + ridge I) t))``.  The
second term is the correction the meta-training adds to the base learner;
it is stored with the opposite sign as ``pfg`` so that
``values = base_learner - pfg`` holds bit for bit.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ShapeError, ValidationError
from .linalg import EigenPair, check_psd, psd_solve, sym_eig
from .mnk import MetaKernelConfig, _TaskKernelCache, assemble_mnk, evolution_values
from .tasks import TaskData, check_consistent


@dataclass(frozen=True)
class MetaPrediction:
    """Meta-learner prediction split into base learner and PFG term."""

    values: np.ndarray
    base_learner: np.ndarray
    pfg: np.ndarray


class MetaKernelModel:
    """Kernel regression over training tasks, factorized once.

    Built by :func:`fit_meta`; :meth:`predict` is cheap per test task.
    """

    def __init__(self, train_tasks, cfg: MetaKernelConfig):
        train_tasks = list(train_tasks)
        if not train_tasks:
            raise ValidationError("meta-prediction needs at least one training task")
        check_consistent(train_tasks, "training tasks")
        self.cfg = cfg
        self.train_tasks = train_tasks
        self.phi = assemble_mnk(train_tasks, train_tasks, cfg)
        self.eig: EigenPair = sym_eig(self.phi.scalar)
        check_psd(self.eig, "meta kernel")
        cache = _TaskKernelCache([train_tasks], cfg)
        self.G_train = [cache.A[cache.index[id(t)]] @ t.Y_sup for t in train_tasks]
        # residual stacked as (sum n, k): the scalar kernel acts on each output column
        self.residual = np.vstack([t.Y - g for t, g in zip(train_tasks, self.G_train)])
        self.weights = self._apply_T(self.residual)

    def _apply_T(self, R):
        cfg = self.cfg
        if math.isinf(cfg.t_outer):
            return psd_solve(self.eig, R, cfg.ridge)
        g = evolution_values(self.eig.eigenvalues, cfg.eta_outer, cfg.t_outer, cfg.ridge, cfg.mode)
        V = self.eig.eigenvectors
        return V @ (g[:, None] * (V.T @ R))

    def predict(self, task: TaskData) -> MetaPrediction:
        if task.d != self.train_tasks[0].d or task.k != self.train_tasks[0].k:
            raise ShapeError("test task dims differ from training tasks")
        cache = _TaskKernelCache([[task], self.train_tasks], self.cfg)
        base = cache.A[cache.index[id(task)]] @ task.Y_sup
        cross = np.hstack([cache.block(task, t) for t in self.train_tasks])
        correction = cross @ self.weights
        return MetaPrediction(values=base + correction, base_learner=base, pfg=-correction)


def fit_meta(train_tasks, cfg: MetaKernelConfig) -> MetaKernelModel:
    """Factorize the train/train kernel once for repeated predictions."""
    return MetaKernelModel(train_tasks, cfg)


def meta_predict(test_task: TaskData, train_tasks, cfg: MetaKernelConfig) -> MetaPrediction:
    """Infinite-width meta-learner prediction on the query set of `test_task`."""
    return fit_meta(train_tasks, cfg).predict(test_task)


def pfg_decompose(pred: MetaPrediction):
    """Return ``(base, meta, pfg)`` with ``meta = base - pfg``."""
    return pred.base_learner, pred.values, pred.pfg


@dataclass(frozen=True)
class BoundReport:
    """Data-dependent complexity ``(L + 1) sqrt(y^T Phi^-1 y / (N n))``."""

    bound: float
    y_tilde_g: np.ndarray
    normalized_bound: Optional[float]
    min_eig_phi: float
    quad_form: float
    depth_L: int
    n_tasks: int
    n_query: int

    def recompute(self):
        return (self.depth_L + 1) * math.sqrt(self.quad_form / (self.n_tasks * self.n_query))


def quadratic_form(eig: EigenPair, y, ridge):
    """``y^T (Phi + ridge I)^-1 y`` for a stacked ``(sum n, k)`` residual."""
    return float(np.sum(y * psd_solve(eig, y, ridge)))


def generalization_bound(train_tasks, cfg: MetaKernelConfig, normalize=False) -> BoundReport:
    """Evaluate the MNK generalization bound on the training tasks.

    Parameters
    ----------
    train_tasks : sequence of TaskData
    cfg : MetaKernelConfig
        The same ridge is used as for prediction.
    normalize : bool
        Also report the bound with the residual scaled to unit norm.
    """
    model = fit_meta(train_tasks, cfg)
    return bound_from_model(model, normalize=normalize)


def bound_from_model(model: MetaKernelModel, residual=None, normalize=False) -> BoundReport:
    """Bound for a fitted model, optionally with a substitute residual."""
    y = model.residual if residual is None else np.asarray(residual, dtype=np.float64).reshape(
        model.residual.shape)
    N = len(model.train_tasks)
    n = model.train_tasks[0].n
    L = model.cfg.net.depth_L
    q = quadratic_form(model.eig, y, model.cfg.ridge)
    bound = (L + 1) * math.sqrt(max(q, 0.0) / (N * n))
    nb = None
    if normalize:
        norm = float(np.linalg.norm(y))
        if norm == 0:
            nb = 0.0
        else:
            qn = quadratic_form(model.eig, y / norm, model.cfg.ridge)
            nb = (L + 1) * math.sqrt(max(qn, 0.0) / (N * n))
    return BoundReport(bound=bound, y_tilde_g=y.reshape(-1).copy(), normalized_bound=nb,
                       min_eig_phi=float(model.eig.eigenvalues[0]), quad_form=q,
                       depth_L=L, n_tasks=N, n_query=n)


def test_loss(pred, Y):
    """``0.5 * sum((pred - Y)^2)``."""
    pred = np.asarray(pred, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if pred.shape != Y.shape:
        raise ShapeError(f"prediction shape {pred.shape} != label shape {Y.shape}")
    return 0.5 * float(np.sum((pred - Y) ** 2))


test_loss.__test__ = False  # keep pytest from collecting it


def expected_loss(preds, tasks):
    """Per-query population-loss estimate: mean over tasks of ``test_loss / n``."""
    preds, tasks = list(preds), list(tasks)
    if len(preds) != len(tasks) or not tasks:
        raise ValidationError("need one prediction per task and at least one task")
    return float(np.mean([test_loss(p, t.Y) / t.n for p, t in zip(preds, tasks)]))
