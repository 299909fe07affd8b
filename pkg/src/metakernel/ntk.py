"""Analytic Neural Tangent Kernel of a fully-connected ReLU network.

The kernel is computed with the arc-cosine layer recursion::

    Sigma^1(x, z)   = sigma_w^2 * <x, z> / d + sigma_b^2
    rho             = Sigma^h(x, z) / sqrt(Sigma^h(x, x) Sigma^h(z, z))
    Sigma^{h+1}     = sigma_w^2 sqrt(..) (sqrt(1 - rho^2) + rho (pi - acos rho)) / (2 pi) + sigma_b^2
    Sigma_dot^{h+1} = sigma_w^2 (pi - acos rho) / (2 pi)
    Theta^1 = Sigma^1,   Theta^{h+1} = Sigma^{h+1} + Theta^h * Sigma_dot^{h+1}

and the network output kernel is ``Theta^{L+1}`` for ``L`` hidden layers.
This is the width limit of ``(1/l) J J^T`` for the parameterization used in
:mod:`metakernel.finite_width`.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError

ACTIVATIONS = ("relu",)


@dataclass(frozen=True)
class NetConfig:
    """Architecture and initialization scales of the network.

    Attributes
    ----------
    depth_L : int
        Number of hidden layers.
    sigma_w_sq : float
        Weight variance scale; layer weights have variance ``sigma_w_sq / fan_in``.
    sigma_b_sq : float
        Bias variance.
    activation : str
        Only ``"relu"`` is supported.
    """

    depth_L: int = 2
    sigma_w_sq: float = 2.0
    sigma_b_sq: float = 0.01
    activation: str = "relu"

    def __post_init__(self):
        if int(self.depth_L) != self.depth_L or self.depth_L < 1:
            raise ValidationError(f"depth_L must be a positive integer, got {self.depth_L}")
        if not self.sigma_w_sq > 0:
            raise ValidationError(f"sigma_w_sq must be positive, got {self.sigma_w_sq}")
        if not self.sigma_b_sq >= 0:
            raise ValidationError(f"sigma_b_sq must be nonnegative, got {self.sigma_b_sq}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unsupported activation {self.activation!r}")


@dataclass(frozen=True)
class NtkMatrix:
    """NTK and NNGP covariance between two sample sets (rows x columns)."""

    theta: np.ndarray
    nngp: np.ndarray
    row_inputs: np.ndarray
    col_inputs: np.ndarray


def _as_samples(X, name):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise ShapeError(f"{name} must be a nonempty (samples x features) array, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError(f"{name} contains non-finite values")
    return X


def _arccos_step(S, dx, dz, cfg):
    """One ReLU layer: returns (Sigma^{h+1}, Sigma_dot^{h+1}, new diagonals)."""
    norm = np.sqrt(np.outer(dx, dz))
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(norm > 0, S / norm, 0.0)
    rho = np.clip(rho, -1.0, 1.0)
    angle = np.pi - np.arccos(rho)
    two_pi = 2.0 * np.pi
    S_next = cfg.sigma_w_sq * norm * (np.sqrt(1.0 - rho * rho) + rho * angle) / two_pi + cfg.sigma_b_sq
    S_dot = cfg.sigma_w_sq * angle / two_pi
    # rho = 1 on the diagonal, so the diagonal recursion is closed form
    dx_next = 0.5 * cfg.sigma_w_sq * dx + cfg.sigma_b_sq
    dz_next = 0.5 * cfg.sigma_w_sq * dz + cfg.sigma_b_sq
    return S_next, S_dot, dx_next, dz_next


def layer_covariances(X, Z, cfg: NetConfig):
    """Return the list ``[Sigma^1, ..., Sigma^{L+1}]`` of pre-activation covariances."""
    X = _as_samples(X, "X")
    Z = _as_samples(Z, "Z")
    if X.shape[1] != Z.shape[1]:
        raise ShapeError(f"feature dimensions differ: {X.shape[1]} vs {Z.shape[1]}")
    d = X.shape[1]
    S = cfg.sigma_w_sq * (X @ Z.T) / d + cfg.sigma_b_sq
    dx = cfg.sigma_w_sq * np.einsum("ij,ij->i", X, X) / d + cfg.sigma_b_sq
    dz = cfg.sigma_w_sq * np.einsum("ij,ij->i", Z, Z) / d + cfg.sigma_b_sq
    out = [S]
    for _ in range(cfg.depth_L):
        S, _, dx, dz = _arccos_step(S, dx, dz, cfg)
        out.append(S)
    return out


def ntk_matrix(X, Z, cfg: NetConfig = NetConfig()) -> NtkMatrix:
    """Analytic NTK ``Theta(X, Z)`` and NNGP covariance for scalar outputs.

    Parameters
    ----------
    X : (r, d) array_like
    Z : (c, d) array_like
        1-d arrays are read as ``d = 1`` samples.
    cfg : NetConfig

    Returns
    -------
    NtkMatrix
        ``theta`` and ``nngp`` of shape ``(r, c)``.
    """
    X = _as_samples(X, "X")
    Z = _as_samples(Z, "Z")
    if X.shape[1] != Z.shape[1]:
        raise ShapeError(f"feature dimensions differ: {X.shape[1]} vs {Z.shape[1]}")
    d = X.shape[1]
    S = cfg.sigma_w_sq * (X @ Z.T) / d + cfg.sigma_b_sq
    dx = cfg.sigma_w_sq * np.einsum("ij,ij->i", X, X) / d + cfg.sigma_b_sq
    dz = cfg.sigma_w_sq * np.einsum("ij,ij->i", Z, Z) / d + cfg.sigma_b_sq
    theta = S
    for _ in range(cfg.depth_L):
        S, S_dot, dx, dz = _arccos_step(S, dx, dz, cfg)
        theta = S + theta * S_dot
    return NtkMatrix(theta=theta, nngp=S, row_inputs=X, col_inputs=Z)


def expand_outputs(K, k):
    """Extend a scalar-output kernel to ``k`` independent outputs: ``K (x) I_k``.

    Outputs are ordered sample-major, matching a row-major flattening of an
    ``(n, k)`` label matrix.
    """
    K = np.asarray(K, dtype=np.float64)
    if k == 1:
        return K
    return np.kron(K, np.eye(k))
