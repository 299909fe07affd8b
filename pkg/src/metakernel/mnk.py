"""Meta Neural Kernel: time-evolution operators, the inner-loop predictor and
block assembly of the task-by-task kernel matrix.

Conventions
-----------
* Kernels are built for scalar outputs and expanded with ``K (x) I_k``;
  label matrices ``(n, k)`` are flattened row-major (sample-major).
* ``lambda_inner`` and ``eta_outer`` are *width-normalized* rates: a network
  of width ``l`` trained with step sizes ``lambda_inner / l`` and
  ``eta_outer / l`` follows these kernel dynamics in the large-width limit.
* ``tau`` and ``t_outer`` are times. In ``"continuous"`` mode the operator is
  ``K^-1 (I - exp(-rate K time))`` (gradient flow); in ``"discrete"`` mode it
  is ``K^-1 (I - (I - rate K)^time)``, the exact image of ``time`` plain
  gradient-descent steps on a linearized model.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import ShapeError, ValidationError
from .linalg import EigenPair, check_psd, clipped_eigenvalues, psd_solve, sym_eig
from .ntk import NetConfig, expand_outputs, ntk_matrix
from .tasks import TaskData, _matrix

MODES = ("continuous", "discrete")


@dataclass(frozen=True)
class MetaKernelConfig:
    """Hyperparameters of the kernel view of MAML.

    Attributes
    ----------
    net : NetConfig
    lambda_inner : float
        Inner-loop (adaptation) rate.
    tau : float
        Inner-loop time; ``math.inf`` gives pure support-set interpolation.
    eta_outer : float
        Outer (meta-training) rate.
    t_outer : float
        Meta-training time; ``math.inf`` gives kernel regression.
    ridge : float
        Ridge added to the task-level kernel before inversion.
    inner_ridge : float
        Ridge added to support-set kernels inside the inner operator.
    mode : {"continuous", "discrete"}
    """

    net: NetConfig = field(default_factory=NetConfig)
    lambda_inner: float = 1.0
    tau: float = math.inf
    eta_outer: float = 1.0
    t_outer: float = math.inf
    ridge: float = 1e-5
    inner_ridge: float = 0.0
    mode: str = "continuous"

    def __post_init__(self):
        if not self.lambda_inner > 0:
            raise ValidationError(f"lambda_inner must be positive, got {self.lambda_inner}")
        if not self.eta_outer > 0:
            raise ValidationError(f"eta_outer must be positive, got {self.eta_outer}")
        if not self.tau >= 0 or not self.t_outer >= 0:
            raise ValidationError("tau and t_outer must be nonnegative")
        if not self.ridge >= 0 or not self.inner_ridge >= 0:
            raise ValidationError("ridge values must be nonnegative")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "discrete":
            for name in ("tau", "t_outer"):
                v = getattr(self, name)
                if math.isfinite(v) and v != int(v):
                    raise ValidationError(f"discrete mode needs an integer {name}, got {v}")


def evolution_values(w, rate, steps, ridge=0.0, mode="continuous"):
    """Eigenvalue map of the time-evolution operator.

    ``g(mu) = (1 - exp(-rate mu steps)) / mu`` (continuous) or
    ``(1 - (1 - rate mu)^steps) / mu`` (discrete), with ``g(0) = rate steps``
    and ``mu = w + ridge``. ``steps = inf`` gives the (clipped) inverse.
    """
    if steps == 0:
        return np.zeros_like(w)
    if math.isinf(steps):
        return 1.0 / clipped_eigenvalues(w, ridge)
    mu = np.maximum(w, 0.0) + ridge
    if mode == "continuous":
        num = -np.expm1(-rate * steps * mu)
    else:
        a = rate * mu
        safe = np.where(a < 1.0, a, 0.0)
        num = np.where(a < 1.0, -np.expm1(steps * np.log1p(-safe)), 1.0 - (1.0 - a) ** steps)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(mu > 0, num / np.where(mu > 0, mu, 1.0), rate * steps)


def time_evolution(theta_ss, rate, steps, ridge=0.0, mode="continuous"):
    """``Theta^-1 (I - exp(-rate Theta steps))`` for a symmetric PSD `theta_ss`.

    Accepts an :class:`EigenPair` in place of the matrix.

    Raises
    ------
    PSDViolationError
        If `theta_ss` has an eigenvalue below ``-1e-8 * lambda_max``.
    """
    eig = theta_ss if isinstance(theta_ss, EigenPair) else sym_eig(theta_ss)
    check_psd(eig, "kernel")
    return eig.reconstruct(evolution_values(eig.eigenvalues, rate, steps, ridge, mode))


def _support_of(task):
    if isinstance(task, TaskData):
        return task.X, task.X_sup
    X, Xs = task
    return _matrix(X, "X"), _matrix(Xs, "X_sup")


def support_operator(X_sup, cfg: MetaKernelConfig):
    """Inner-loop operator ``T~(X', tau)`` on a support set (``m x m``)."""
    K = ntk_matrix(X_sup, X_sup, cfg.net).theta
    return time_evolution(0.5 * (K + K.T), cfg.lambda_inner, cfg.tau, cfg.inner_ridge, cfg.mode)


def inner_predictor_G(task: TaskData, eval_points, cfg: MetaKernelConfig):
    """Infinite-width base learner ``Theta(x, X') T~(X', tau) Y'``.

    Parameters
    ----------
    task : TaskData
        Only the support set is used.
    eval_points : (r, d) array_like

    Returns
    -------
    (r, k) ndarray
    """
    Xs = task.X_sup
    K_ss = ntk_matrix(Xs, Xs, cfg.net).theta
    K_es = ntk_matrix(eval_points, Xs, cfg.net).theta
    if math.isinf(cfg.tau):
        coef = psd_solve(0.5 * (K_ss + K_ss.T), task.Y_sup, cfg.inner_ridge)
    else:
        coef = time_evolution(0.5 * (K_ss + K_ss.T), cfg.lambda_inner, cfg.tau,
                              cfg.inner_ridge, cfg.mode) @ task.Y_sup
    return K_es @ coef


def mnk_block(task_i, task_j, cfg: MetaKernelConfig, out_dim=1):
    """One ``(k n_i) x (k n_j)`` block of the Meta Neural Kernel.

    ``Theta(Xi, Xj) + Theta(Xi, Xi') Ti Theta(Xi', Xj') Tj^T Theta(Xj', Xj)
    - Theta(Xi, Xi') Ti Theta(Xi', Xj) - Theta(Xi, Xj') Tj^T Theta(Xj', Xj)``

    Tasks are :class:`TaskData` or ``(X, X_sup)`` pairs.
    """
    Xi, Si = _support_of(task_i)
    Xj, Sj = _support_of(task_j)
    if Xi.shape[1] != Xj.shape[1]:
        raise ShapeError("tasks have different feature dimensions")
    th = lambda A, B: ntk_matrix(A, B, cfg.net).theta  # noqa: E731
    Ti = support_operator(Si, cfg)
    Tj = support_operator(Sj, cfg)
    Ai = th(Xi, Si) @ Ti
    Aj = th(Xj, Sj) @ Tj
    blk = th(Xi, Xj) + Ai @ th(Si, Sj) @ Aj.T - Ai @ th(Si, Xj) - th(Xi, Sj) @ Aj.T
    return expand_outputs(blk, out_dim)


@dataclass(frozen=True, eq=False)
class MnkMatrix:
    """Block kernel matrix over tasks.

    ``phi`` holds the full ``(k sum n_i) x (k sum n_j)`` matrix and
    ``scalar`` its single-output counterpart (``phi = scalar (x) I_k``).
    ``block_index[(i, j)]`` gives the ``(row slice, col slice)`` of block
    ``(i, j)`` inside ``phi``.
    """

    phi: np.ndarray
    scalar: np.ndarray
    block_index: Dict[Tuple[int, int], Tuple[slice, slice]]
    out_dim: int = 1
    symmetric: bool = False

    def block(self, i, j):
        rs, cs = self.block_index[(i, j)]
        return self.phi[rs, cs]

    @property
    def n_blocks(self):
        return len(self.block_index)


def _offsets(sizes):
    return np.concatenate([[0], np.cumsum(sizes)]).astype(int)


class _TaskKernelCache:
    """NTK over the union of all points, plus per-task inner operators."""

    def __init__(self, task_lists: Sequence[Sequence[TaskData]], cfg: MetaKernelConfig):
        uniq: List[TaskData] = []
        seen = {}
        for lst in task_lists:
            for t in lst:
                if id(t) not in seen:
                    seen[id(t)] = len(uniq)
                    uniq.append(t)
        d = {t.d for t in uniq}
        k = {t.k for t in uniq}
        if len(d) != 1 or len(k) != 1:
            raise ShapeError(f"tasks must share feature and output dims, got d={sorted(d)}, k={sorted(k)}")
        self.k = k.pop()
        self.index = seen
        blocks = []
        for t in uniq:
            blocks += [t.X, t.X_sup]
        sizes = [b.shape[0] for b in blocks]
        off = _offsets(sizes)
        P = np.vstack(blocks)
        K = ntk_matrix(P, P, cfg.net).theta
        self.K = 0.5 * (K + K.T)
        self.q = [slice(off[2 * u], off[2 * u + 1]) for u in range(len(uniq))]
        self.s = [slice(off[2 * u + 1], off[2 * u + 2]) for u in range(len(uniq))]
        # per-task inner operators, computed once and shared by all blocks
        self.A = []
        for u in range(len(uniq)):
            T = time_evolution(self.K[self.s[u], self.s[u]], cfg.lambda_inner, cfg.tau,
                               cfg.inner_ridge, cfg.mode)
            self.A.append(self.K[self.q[u], self.s[u]] @ T)

    def block(self, ti, tj):
        u, v = self.index[id(ti)], self.index[id(tj)]
        K, A = self.K, self.A
        qi, si, qj, sj = self.q[u], self.s[u], self.q[v], self.s[v]
        return (K[qi, qj] + A[u] @ K[si, sj] @ A[v].T
                - A[u] @ K[si, qj] - K[qi, sj] @ A[v].T)


def assemble_mnk(row_tasks, col_tasks, cfg: MetaKernelConfig) -> MnkMatrix:
    """Assemble the block matrix with block ``(i, j) = mnk_block(row_i, col_j)``.

    When `col_tasks` is `row_tasks` (or None) the result is the symmetric
    train/train kernel: only blocks with ``j >= i`` are computed and the
    rest mirrored.
    """
    row_tasks = list(row_tasks)
    symmetric = col_tasks is None or col_tasks is row_tasks or (
        len(col_tasks) == len(row_tasks) and all(a is b for a, b in zip(row_tasks, col_tasks)))
    col_tasks = row_tasks if symmetric else list(col_tasks)
    if not row_tasks or not col_tasks:
        raise ValidationError("assemble_mnk needs at least one row and one column task")
    cache = _TaskKernelCache([row_tasks, col_tasks], cfg)
    ro = _offsets([t.n for t in row_tasks])
    co = _offsets([t.n for t in col_tasks])
    S = np.empty((ro[-1], co[-1]))
    for i, ti in enumerate(row_tasks):
        for j in range(i if symmetric else 0, len(col_tasks)):
            blk = cache.block(ti, col_tasks[j])
            S[ro[i]:ro[i + 1], co[j]:co[j + 1]] = blk
            if symmetric and j > i:
                S[co[j]:co[j + 1], ro[i]:ro[i + 1]] = blk.T
    if symmetric:
        # diagonal blocks are symmetric only up to rounding
        S = 0.5 * (S + S.T)
    k = cache.k
    index = {(i, j): (slice(k * ro[i], k * ro[i + 1]), slice(k * co[j], k * co[j + 1]))
             for i in range(len(row_tasks)) for j in range(len(col_tasks))}
    return MnkMatrix(phi=expand_outputs(S, k), scalar=S, block_index=index,
                     out_dim=k, symmetric=symmetric)


def inner_predictions(tasks, cfg: MetaKernelConfig):
    """``G`` evaluated on each task's own query set, as a list of ``(n, k)`` arrays."""
    cache = _TaskKernelCache([list(tasks)], cfg)
    out = []
    for t in tasks:
        u = cache.index[id(t)]
        out.append(cache.A[u] @ t.Y_sup)
    return out
