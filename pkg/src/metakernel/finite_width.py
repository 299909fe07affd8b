"""Finite-width ground truth: an MLP, MAML training and the empirical meta-kernel.

Parameterization
----------------
The trainable variables are stored at scale ``1/sqrt(l)`` (entries drawn from
``N(0, 1/l)`` for hidden width ``l``) and enter the forward pass through fixed
per-layer multipliers::

    h^{i+1} = sqrt(l sigma_w^2 / fan_in) * z^i W^{i+1} + sqrt(l sigma_b^2) * b^{i+1}

so the *effective* weights have variance ``sigma_w^2 / fan_in`` and effective
biases variance ``sigma_b^2`` (see :meth:`MLPParams.effective_weights`).  With
this scaling ``(1/l) J J^T`` converges to the analytic NTK of
:func:`metakernel.ntk.ntk_matrix`, and step sizes ``eta_0 / l`` and
``lambda_0 / l`` give width-independent function-space dynamics.

Flat parameter order
--------------------
``W^1, b^1, W^2, b^2, ..., W^{L+1}, b^{L+1}``, each matrix row-major
(``W^i`` has shape ``fan_in x fan_out``).  Jacobians, drifts and
checkpoints all use this order.

Checkpoint layout (little endian)
---------------------------------
====== ======= =====================================================
offset type    field
====== ======= =====================================================
0      8 bytes magic ``b"MKPARAM1"``
8      int64   L (hidden layers)
16     int64   width
24     int64   d (input dim)
32     int64   k (output dim)
40     int64   seed
48     float64 sigma_w_sq
56     float64 sigma_b_sq
64     int64   centered flag (0/1)
72     float64 payload: flat parameters (D values), then, when
               centered, the flat anchor parameters (D values)
====== ======= =====================================================
"""

import functools
import math
import os
import struct
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

import jax

jax.config.update("jax_enable_x64", True)
import jax.numpy as jnp  # noqa: E402
from jax.flatten_util import ravel_pytree  # noqa: E402

from .errors import DivergenceError, ResourceError, ShapeError, ValidationError  # noqa: E402
from .linalg import check_psd, sym_eig  # noqa: E402
from .mnk import MetaKernelConfig, MnkMatrix, _offsets, evolution_values  # noqa: E402
from .ntk import NetConfig  # noqa: E402
from .tasks import TaskData, check_consistent, stream  # noqa: E402

MAX_KERNEL_WIDTH = 4096
#: bytes allowed for one materialized Jacobian
MAX_JACOBIAN_BYTES = int(os.environ.get("METAKERNEL_MAX_JACOBIAN_BYTES", 2 * 1024**3))
_MAGIC = b"MKPARAM1"
_HEADER = struct.Struct("<8sqqqqqddq")


@dataclass(frozen=True, eq=False)
class MLPParams:
    """Parameters of a fully-connected ReLU network with ``L`` hidden layers.

    ``weights[i]`` has shape ``(l_i, l_{i+1})`` with ``l_0 = d`` and
    ``l_{L+1} = k``; values are the raw trainable variables (see the module
    docstring for the multipliers). If `anchor` is set the network computes
    ``g_theta(x) - g_anchor(x)``, which vanishes identically at
    initialization while leaving gradients unchanged.
    """

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    cfg: NetConfig
    width: int
    out_dim: int
    seed: int = 0
    anchor: Optional[tuple] = None

    def __post_init__(self):
        L = self.cfg.depth_L
        if len(self.weights) != L + 1 or len(self.biases) != L + 1:
            raise ShapeError(f"expected {L + 1} weight and bias arrays")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            fan_out = self.out_dim if i == L else self.width
            if W.ndim != 2 or W.shape[1] != fan_out or b.shape != (fan_out,):
                raise ShapeError(f"layer {i}: bad shapes W{W.shape}, b{b.shape}")
            if i > 0 and W.shape[0] != self.width:
                raise ShapeError(f"layer {i}: fan-in {W.shape[0]} != width {self.width}")

    @property
    def in_dim(self):
        return self.weights[0].shape[0]

    @property
    def n_params(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    @property
    def centered(self):
        return self.anchor is not None

    def scales(self):
        return layer_scales(self.cfg, self.width, self.in_dim)

    def effective_weights(self):
        """Weights as they act in the forward pass (variance ``sigma_w^2 / fan_in``)."""
        return [cw * W for W, (cw, _) in zip(self.weights, self.scales())]

    def effective_biases(self):
        return [cb * b for b, (_, cb) in zip(self.biases, self.scales())]

    def tree(self):
        return tuple((jnp.asarray(W), jnp.asarray(b)) for W, b in zip(self.weights, self.biases))

    def flat(self):
        return np.concatenate([a.reshape(-1) for W, b in zip(self.weights, self.biases) for a in (W, b)])

    def with_flat(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise ShapeError(f"flat vector must have {self.n_params} entries")
        ws, bs, pos = [], [], 0
        for W, b in zip(self.weights, self.biases):
            ws.append(vec[pos:pos + W.size].reshape(W.shape))
            pos += W.size
            bs.append(vec[pos:pos + b.size].copy())
            pos += b.size
        return replace(self, weights=ws, biases=bs)

    def with_tree(self, tree):
        return replace(self, weights=[np.asarray(W) for W, _ in tree],
                       biases=[np.asarray(b) for _, b in tree])

    def center(self):
        """Copy whose output is ``g_theta - g_theta0`` (zero at initialization)."""
        anchor = (tuple(W.copy() for W in self.weights), tuple(b.copy() for b in self.biases))
        return replace(self, anchor=anchor)

    def anchor_tree(self):
        if self.anchor is None:
            return None
        return tuple((jnp.asarray(W), jnp.asarray(b)) for W, b in zip(*self.anchor))


def layer_scales(cfg: NetConfig, width, d):
    """Forward multipliers ``(weight, bias)`` for each of the ``L + 1`` layers."""
    out = []
    for i in range(cfg.depth_L + 1):
        fan_in = d if i == 0 else width
        out.append((math.sqrt(width * cfg.sigma_w_sq / fan_in), math.sqrt(width * cfg.sigma_b_sq)))
    return tuple(out)


def init_params(cfg: NetConfig, width, d, k, seed) -> MLPParams:
    """Gaussian initialization; layer ``i`` draws from stream ``(seed, i, 0/1)``."""
    for name, v in (("width", width), ("d", d), ("k", k)):
        if int(v) != v or v < 1:
            raise ValidationError(f"{name} must be a positive integer, got {v}")
    sizes = [d] + [width] * cfg.depth_L + [k]
    sd = 1.0 / math.sqrt(width)
    ws, bs = [], []
    for i in range(cfg.depth_L + 1):
        ws.append(stream(seed, i, 0).normal(scale=sd, size=(sizes[i], sizes[i + 1])))
        bs.append(stream(seed, i, 1).normal(scale=sd, size=sizes[i + 1]))
    return MLPParams(ws, bs, cfg, int(width), int(k), seed=int(seed))


# -- jax kernels ------------------------------------------------------------


def _tree_axpy(a, x, y):
    return jax.tree_util.tree_map(lambda u, v: v - a * u, x, y)


class _Net:
    """Jitted pure functions for one architecture (fixed layer multipliers)."""

    def __init__(self, scales):
        self.scales = scales
        self.meta_batch = jax.vmap(self.meta_output, in_axes=(None, None, 0, 0, 0, None, None))
        self.jit_forward = jax.jit(self.f)
        self.jit_meta_batch = jax.jit(self.meta_batch, static_argnums=(6,))
        self.jit_loss_grad = jax.jit(jax.value_and_grad(self.maml_loss), static_argnums=(7,))
        self.jit_task_grad = jax.jit(jax.value_and_grad(self.task_loss), static_argnums=(7,))
        self.jit_inner_step = jax.jit(self.inner_step)
        self.jit_support_loss = jax.jit(self.support_loss)
        self.jit_train = jax.jit(self.train_segment, static_argnums=(8, 9))

    def g(self, p, X):
        h = X
        last = len(p) - 1
        for i, ((W, b), (cw, cb)) in enumerate(zip(p, self.scales)):
            h = cw * (h @ W) + cb * b
            if i < last:
                h = jax.nn.relu(h)
        return h

    def f(self, p, anchor, X):
        out = self.g(p, X)
        if anchor is not None:
            out = out - self.g(anchor, X)
        return out

    def support_loss(self, p, anchor, Xs, Ys):
        r = self.f(p, anchor, Xs) - Ys
        return 0.5 * jnp.sum(r * r)

    def inner_step(self, p, anchor, Xs, Ys, lam):
        return _tree_axpy(lam, jax.grad(self.support_loss)(p, anchor, Xs, Ys), p)

    def adapt(self, p, anchor, Xs, Ys, lam, tau):
        if tau == 0:
            return p
        return jax.lax.fori_loop(0, tau, lambda _, q: self.inner_step(q, anchor, Xs, Ys, lam), p)

    def meta_output(self, p, anchor, X, Xs, Ys, lam, tau):
        return self.f(self.adapt(p, anchor, Xs, Ys, lam, tau), anchor, X)

    def maml_loss(self, p, anchor, Xq, Yq, Xs, Ys, lam, tau):
        r = self.meta_batch(p, anchor, Xq, Xs, Ys, lam, tau) - Yq
        return 0.5 * jnp.sum(r * r)

    def task_loss(self, p, anchor, X, Y, Xs, Ys, lam, tau):
        r = self.meta_output(p, anchor, X, Xs, Ys, lam, tau) - Y
        return 0.5 * jnp.sum(r * r)

    def train_segment(self, p, anchor, p0flat, Xq, Yq, Xs, Ys, eta_lam, tau, steps):
        eta, lam = eta_lam

        def body(q, _):
            loss, grad = jax.value_and_grad(self.maml_loss)(q, anchor, Xq, Yq, Xs, Ys, lam, tau)
            q = _tree_axpy(eta, grad, q)
            drift = jnp.linalg.norm(ravel_pytree(q)[0] - p0flat)
            return q, (loss, drift)

        return jax.lax.scan(body, p, None, length=steps)

    @functools.lru_cache(maxsize=None)
    def jacobian_fn(self, kind, tau):
        def fn(flat, unravel, anchor, *data):
            p = unravel(flat)
            if kind == "plain":
                return self.f(p, anchor, data[0]).reshape(-1)
            Xq, Xs, Ys, lam = data
            return self.meta_batch(p, anchor, Xq, Xs, Ys, lam, tau).reshape(-1)

        return jax.jit(jax.jacrev(fn), static_argnums=(1,))


@functools.lru_cache(maxsize=None)
def _net_for(scales):
    return _Net(scales)


def _net(params: MLPParams):
    return _net_for(params.scales())


def _samples(X, d, name="X"):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] != d:
        raise ShapeError(f"{name} must have shape (samples, {d}), got {X.shape}")
    return X


def _stack(tasks, params: MLPParams):
    tasks = list(tasks)
    n, m, d, k = check_consistent(tasks)
    if d != params.in_dim or k != params.out_dim:
        raise ShapeError(f"tasks have (d, k) = ({d}, {k}); network expects "
                         f"({params.in_dim}, {params.out_dim})")
    Xq = jnp.asarray(np.stack([t.X for t in tasks]))
    Yq = jnp.asarray(np.stack([t.Y for t in tasks]))
    Xs = jnp.asarray(np.stack([t.X_sup for t in tasks]))
    Ys = jnp.asarray(np.stack([t.Y_sup for t in tasks]))
    return Xq, Yq, Xs, Ys


def _check_tau(tau):
    if int(tau) != tau or tau < 0:
        raise ValidationError(f"inner steps must be a nonnegative integer, got {tau}")
    return int(tau)


# -- public operations ------------------------------------------------------


def forward(params: MLPParams, X):
    """Network outputs ``(n, k)`` on samples `X` ``(n, d)``."""
    X = _samples(X, params.in_dim)
    return np.asarray(_net(params).jit_forward(params.tree(), params.anchor_tree(), jnp.asarray(X)))


def jacobian(params: MLPParams, X):
    """``d f(X) / d theta`` as an ``(n k) x D`` matrix (flat parameter order)."""
    X = _samples(X, params.in_dim)
    _check_jacobian_size(params, X.shape[0] * params.out_dim)
    flat, unravel = ravel_pytree(params.tree())
    fn = _net(params).jacobian_fn("plain", 0)
    return np.asarray(fn(flat, unravel, params.anchor_tree(), jnp.asarray(X)))


def inner_adapt(params: MLPParams, X_sup, Y_sup, lam, tau) -> MLPParams:
    """`tau` full-batch gradient steps of size `lam` on ``0.5 ||f(X') - Y'||^2``.

    Raises
    ------
    DivergenceError
        If the support loss becomes non-finite; ``err.step`` is the step index.
    """
    tau = _check_tau(tau)
    Xs = jnp.asarray(_samples(X_sup, params.in_dim, "X_sup"))
    Ys = jnp.asarray(np.asarray(Y_sup, dtype=np.float64).reshape(Xs.shape[0], params.out_dim))
    net = _net(params)
    p, anchor = params.tree(), params.anchor_tree()
    if tau == 0 or lam == 0:
        return params
    for j in range(tau):
        p = net.jit_inner_step(p, anchor, Xs, Ys, lam)
        loss = float(net.jit_support_loss(p, anchor, Xs, Ys))
        if not math.isfinite(loss):
            raise DivergenceError(f"inner adaptation diverged at step {j + 1}", step=j + 1)
    return params.with_tree(p)


def meta_output(params: MLPParams, task: TaskData, lam, tau):
    """Query predictions after adapting on the support set: ``f_{theta'}(X)``."""
    return meta_outputs(params, [task], lam, tau)[0]


def meta_outputs(params: MLPParams, tasks, lam, tau):
    """:func:`meta_output` for a list of equally shaped tasks, ``(N, n, k)``."""
    tau = _check_tau(tau)
    Xq, _, Xs, Ys = _stack(tasks, params)
    out = _net(params).jit_meta_batch(params.tree(), params.anchor_tree(), Xq, Xs, Ys, lam, tau)
    return np.asarray(out)


def maml_loss(params: MLPParams, tasks, lam, tau):
    """MAML objective ``0.5 sum_i ||F(X_i, X_i', Y_i') - Y_i||^2``."""
    tau = _check_tau(tau)
    data = _stack(tasks, params)
    loss, _ = _net(params).jit_loss_grad(params.tree(), params.anchor_tree(), *data, lam, tau)
    return float(loss)


def maml_gradient(params: MLPParams, tasks, lam, tau):
    """Exact gradient of :func:`maml_loss` (through all inner steps), flat order."""
    tau = _check_tau(tau)
    data = _stack(tasks, params)
    _, g = _net(params).jit_loss_grad(params.tree(), params.anchor_tree(), *data, lam, tau)
    return np.asarray(ravel_pytree(g)[0])


@dataclass(frozen=True)
class TrainTrace:
    """Per-step record of a MAML run.

    ``losses[s]`` and ``param_drift[s]`` are measured after ``s`` outer steps
    (so both have ``steps + 1`` entries). ``kernel_drift`` holds
    ``||Phi_0 - Phi_s||_F`` at the steps listed in ``kernel_steps``.
    """

    losses: np.ndarray
    param_drift: np.ndarray
    kernel_drift: Optional[np.ndarray] = None
    kernel_steps: Optional[np.ndarray] = None


def _first_bad(a):
    bad = ~np.isfinite(a)
    return int(np.argmax(bad)) if bad.any() else None


def maml_train_gd(params: MLPParams, train_tasks, eta, lam, tau, steps, kernel_checkpoints=0):
    """Full-batch MAML: gradient descent on the bi-level objective.

    Parameters
    ----------
    params : MLPParams
        Initialization ``theta_0``.
    train_tasks : sequence of TaskData
    eta, lam : float
        Outer and inner step sizes (actual, not width-normalized).
    tau : int
        Inner gradient steps; outer gradients differentiate through all of them.
    steps : int
        Outer steps.
    kernel_checkpoints : int
        If positive, the empirical meta-kernel is evaluated at this many evenly
        spaced steps (plus step 0) and its drift recorded.

    Returns
    -------
    (MLPParams, TrainTrace)
    """
    tau = _check_tau(tau)
    if int(steps) != steps or steps < 0:
        raise ValidationError(f"steps must be a nonnegative integer, got {steps}")
    steps = int(steps)
    net = _net(params)
    data = _stack(train_tasks, params)
    anchor = params.anchor_tree()
    p = params.tree()
    p0flat = ravel_pytree(p)[0]

    n_seg = max(int(kernel_checkpoints), 1) if steps > 0 else 1
    bounds = [round(steps * s / n_seg) for s in range(n_seg + 1)]
    track = kernel_checkpoints > 0
    if track:
        phi0 = empirical_meta_kernel(params, train_tasks, lam, tau).phi
        kdrift, ksteps = [0.0], [0]
    losses, drifts = [], []
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b == a:
            continue
        p, (seg_loss, seg_drift) = net.jit_train(p, anchor, p0flat, *data, (eta, lam), tau, b - a)
        seg_loss = np.asarray(seg_loss)
        bad = _first_bad(seg_loss)
        if bad is not None:
            raise DivergenceError(f"MAML training diverged at outer step {a + bad}", step=a + bad)
        losses.append(seg_loss)
        drifts.append(np.asarray(seg_drift))
        if track:
            phi = empirical_meta_kernel(params.with_tree(p), train_tasks, lam, tau).phi
            kdrift.append(float(np.linalg.norm(phi - phi0)))
            ksteps.append(b)
    final, _ = net.jit_loss_grad(p, anchor, *data, lam, tau)
    final = float(final)
    if not math.isfinite(final):
        raise DivergenceError(f"MAML training diverged at outer step {steps}", step=steps)
    trace = TrainTrace(
        losses=np.concatenate(losses + [[final]]),
        param_drift=np.concatenate([[0.0]] + drifts),
        kernel_drift=np.array(kdrift) if track else None,
        kernel_steps=np.array(ksteps) if track else None,
    )
    return params.with_tree(p), trace


def maml_train_sgd(params: MLPParams, train_tasks, eta, lam, seed, tau=1):
    """One pass of single-task SGD over `train_tasks` in the given order.

    Returns the uniformly chosen iterate ``theta_hat`` (from
    ``theta_0 .. theta_{N-1}``, drawn with `seed`) and all ``N + 1`` iterates.
    """
    tau = _check_tau(tau)
    tasks = list(train_tasks)
    if not tasks:
        raise ValidationError("SGD training needs at least one task")
    net = _net(params)
    anchor = params.anchor_tree()
    p = params.tree()
    iterates = [params]
    for i, t in enumerate(tasks):
        X, Y, Xs, Ys = (jnp.asarray(a) for a in (t.X, t.Y, t.X_sup, t.Y_sup))
        loss, g = net.jit_task_grad(p, anchor, X, Y, Xs, Ys, lam, tau)
        if not math.isfinite(float(loss)):
            raise DivergenceError(f"SGD diverged at step {i}", step=i)
        p = _tree_axpy(eta, g, p)
        iterates.append(params.with_tree(p))
    pick = int(stream(seed, 0, 0).integers(len(tasks)))
    return iterates[pick], iterates


def _check_jacobian_size(params: MLPParams, rows):
    if params.width > MAX_KERNEL_WIDTH:
        raise ResourceError(f"width {params.width} exceeds the cap of {MAX_KERNEL_WIDTH} "
                            "for kernel-materializing operations")
    nbytes = 8 * rows * params.n_params
    if nbytes > MAX_JACOBIAN_BYTES:
        raise ResourceError(f"Jacobian would need {nbytes / 2**30:.2f} GiB "
                            f"(cap {MAX_JACOBIAN_BYTES / 2**30:.2f} GiB)")


def meta_jacobian(params: MLPParams, tasks, lam, tau):
    """Jacobian of the stacked meta-outputs, ``(N n k) x D``."""
    tau = _check_tau(tau)
    tasks = list(tasks)
    Xq, _, Xs, Ys = _stack(tasks, params)
    _check_jacobian_size(params, Xq.shape[0] * Xq.shape[1] * params.out_dim)
    flat, unravel = ravel_pytree(params.tree())
    fn = _net(params).jacobian_fn("meta", tau)
    return np.asarray(fn(flat, unravel, params.anchor_tree(), Xq, Xs, Ys, lam))


def empirical_meta_kernel(params: MLPParams, tasks, lam, tau) -> MnkMatrix:
    """``(1/l) J J^T`` with ``J`` the meta-output Jacobian (inner loop unrolled)."""
    tasks = list(tasks)
    J = meta_jacobian(params, tasks, lam, tau)
    phi = J @ J.T / params.width
    phi = 0.5 * (phi + phi.T)
    k = params.out_dim
    off = _offsets([t.n * k for t in tasks])
    index = {(i, j): (slice(off[i], off[i + 1]), slice(off[j], off[j + 1]))
             for i in range(len(tasks)) for j in range(len(tasks))}
    scalar = phi if k == 1 else phi[::k, ::k]
    return MnkMatrix(phi=phi, scalar=scalar, block_index=index, out_dim=k, symmetric=True)


def finite_rates(cfg: MetaKernelConfig, width):
    """Actual step sizes ``(eta, lambda)`` for a width-`width` network."""
    return cfg.eta_outer / width, cfg.lambda_inner / width


def analytic_meta_output(params0: MLPParams, test_task: TaskData, train_tasks,
                         cfg: MetaKernelConfig, center=False):
    """Linearized (large-width) meta-output after meta-training time ``cfg.t_outer``.

    ``F_t(test) = F_0(test) + Phi_0(test, train) T(t) (Y - F_0(train))`` built
    from the empirical kernel and meta-outputs at `params0`. The inner loop
    runs ``cfg.tau`` steps of size ``cfg.lambda_inner / width``. With
    ``center=True`` the initial network function is subtracted, i.e. the
    small-initialization setting ``f_0 = 0``.
    """
    return analytic_meta_outputs(params0, [test_task], train_tasks, cfg, center)[0]


def analytic_meta_outputs(params0: MLPParams, test_tasks, train_tasks,
                          cfg: MetaKernelConfig, center=False):
    """:func:`analytic_meta_output` for several test tasks, sharing the train side."""
    if math.isinf(cfg.tau):
        raise ValidationError("the finite-width path needs a finite number of inner steps")
    tau = int(cfg.tau)
    p = params0.center() if center and not params0.centered else params0
    _, lam = finite_rates(cfg, p.width)
    train_tasks = list(train_tasks)
    F0_train = meta_outputs(p, train_tasks, lam, tau).reshape(-1, p.out_dim)
    J_tr = meta_jacobian(p, train_tasks, lam, tau)
    phi = J_tr @ J_tr.T / p.width
    eig = sym_eig(0.5 * (phi + phi.T))
    check_psd(eig, "empirical meta kernel")
    resid = np.concatenate([t.Y.reshape(-1) for t in train_tasks]) - F0_train.reshape(-1)
    g = evolution_values(eig.eigenvalues, cfg.eta_outer, cfg.t_outer, cfg.ridge, cfg.mode)
    V = eig.eigenvectors
    # J_tr^T w is the linearized parameter displacement
    delta = J_tr.T @ (V @ (g * (V.T @ resid))) / p.width
    out = []
    for task in test_tasks:
        F0 = meta_output(p, task, lam, tau)
        J_te = meta_jacobian(p, [task], lam, tau)
        out.append(F0 + (J_te @ delta).reshape(F0.shape))
    return out


# -- checkpoints ------------------------------------------------------------


def save_params(params: MLPParams, path):
    """Write `params` in the flat binary checkpoint layout."""
    c = params.cfg
    header = _HEADER.pack(_MAGIC, c.depth_L, params.width, params.in_dim, params.out_dim,
                          params.seed, c.sigma_w_sq, c.sigma_b_sq, int(params.centered))
    payload = params.flat()
    if params.centered:
        anchor = replace(params, anchor=None, weights=list(params.anchor[0]),
                         biases=list(params.anchor[1]))
        payload = np.concatenate([payload, anchor.flat()])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.astype("<f8").tobytes())


def load_params(path) -> MLPParams:
    """Read a checkpoint written by :func:`save_params`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValidationError(f"{path}: truncated checkpoint header")
    magic, L, width, d, k, seed, sw, sb, centered = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValidationError(f"{path}: not a parameter checkpoint")
    cfg = NetConfig(depth_L=L, sigma_w_sq=sw, sigma_b_sq=sb)
    shell = init_params(cfg, width, d, k, 0)
    D = shell.n_params
    payload = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    if payload.size != D * (2 if centered else 1):
        raise ValidationError(f"{path}: payload has {payload.size} values, expected "
                              f"{D * (2 if centered else 1)}")
    params = replace(shell.with_flat(payload[:D]), seed=seed)
    if centered:
        a = shell.with_flat(payload[D:])
        params = replace(params, anchor=(tuple(a.weights), tuple(a.biases)))
    return params
