"""Dense symmetric linear algebra.

Eigendecomposition, spectral matrix functions and ridge-regularized solves.
All kernel formulas in the package reduce to these three operations.
Everything is float64; inputs are never modified.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import NumericError, PSDViolationError, ShapeError, SingularMatrixError

#: relative asymmetry tolerated before symmetrization
SYMMETRY_RTOL = 1e-10
#: eigenvalues below CLIP_RTOL * lambda_max are floored when inverting
CLIP_RTOL = 1e-10
#: negative eigenvalues above -PSD_RTOL * lambda_max are treated as zero
PSD_RTOL = 1e-8


@dataclass(frozen=True)
class EigenPair:
    """Eigenvalues (ascending) and orthonormal eigenvectors (as columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self, values=None):
        """Return ``V diag(values) V^T`` (defaults to the eigenvalues)."""
        w = self.eigenvalues if values is None else values
        V = self.eigenvectors
        out = (V * w) @ V.T
        return 0.5 * (out + out.T)


def as_symmetric(A, name="matrix"):
    """Validate `A` as a symmetric matrix and return its exact symmetrization.

    Raises
    ------
    ShapeError
        If `A` is not square or its asymmetry exceeds ``1e-10 * max|A|``.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {A.shape}")
    if A.shape[0] == 0:
        raise ShapeError(f"{name} must have positive order")
    if not np.all(np.isfinite(A)):
        raise NumericError(f"{name} contains non-finite entries")
    scale = np.max(np.abs(A))
    asym = np.max(np.abs(A - A.T))
    if asym > SYMMETRY_RTOL * scale:
        raise ShapeError(
            f"{name} is not symmetric: max|A - A^T| = {asym:.3e} "
            f"exceeds {SYMMETRY_RTOL:g} * max|A| = {SYMMETRY_RTOL * scale:.3e}"
        )
    return 0.5 * (A + A.T)


def sym_eig(A):
    """Eigendecomposition of a symmetric matrix.

    Parameters
    ----------
    A : (r, r) array_like
        Symmetric matrix; symmetrized before decomposition.

    Returns
    -------
    EigenPair
        Ascending eigenvalues and orthonormal eigenvectors.
    """
    S = as_symmetric(A)
    try:
        w, V = scipy.linalg.eigh(S, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NumericError(
            f"symmetric eigendecomposition failed to converge for a matrix of order {S.shape[0]}"
        ) from exc
    return EigenPair(w, V)


def _as_eig(A):
    return A if isinstance(A, EigenPair) else sym_eig(A)


def matrix_func(A, f: Callable[[np.ndarray], np.ndarray]):
    """Apply a scalar function spectrally: ``V f(Lambda) V^T``.

    `f` is called once on the vector of eigenvalues. `A` may be an
    :class:`EigenPair` to reuse an existing decomposition.

    Raises
    ------
    SingularMatrixError
        If `f` is undefined (non-finite) at some eigenvalue.
    """
    eig = _as_eig(A)
    with np.errstate(all="ignore"):
        fw = np.asarray(f(eig.eigenvalues), dtype=np.float64)
    if fw.shape != eig.eigenvalues.shape:
        raise ShapeError("f must map the eigenvalue vector elementwise")
    bad = ~np.isfinite(fw)
    if np.any(bad):
        mu = eig.eigenvalues[np.argmax(bad)]
        raise SingularMatrixError(f"matrix function undefined at eigenvalue {mu!r}")
    return eig.reconstruct(fw)


def clipped_eigenvalues(w, ridge=0.0):
    """Eigenvalues used for inversion, following the clipping rule.

    With ``ridge > 0`` the ridge is added and nothing is clipped. Otherwise
    eigenvalues below ``1e-10 * lambda_max`` are floored to that value.
    """
    if ridge < 0:
        raise ShapeError(f"ridge must be nonnegative, got {ridge}")
    if ridge > 0:
        return w + ridge
    top = w[-1]
    if top <= 0:
        raise SingularMatrixError(
            "matrix has effective rank zero (no positive eigenvalue) and ridge = 0"
        )
    return np.maximum(w, CLIP_RTOL * top)


def psd_solve(A, B, ridge=0.0):
    """Solve ``(A + ridge I) X = B`` for symmetric PSD `A`.

    Uses the eigendecomposition of `A` with the clipping rule of
    :func:`clipped_eigenvalues`. `A` may be an :class:`EigenPair`.
    """
    eig = _as_eig(A)
    B = np.asarray(B, dtype=np.float64)
    vec = B.ndim == 1
    if vec:
        B = B[:, None]
    if B.ndim != 2 or B.shape[0] != eig.eigenvalues.shape[0]:
        raise ShapeError(
            f"right-hand side has {B.shape[0] if B.ndim else 0} rows, "
            f"matrix order is {eig.eigenvalues.shape[0]}"
        )
    w = clipped_eigenvalues(eig.eigenvalues, ridge)
    V = eig.eigenvectors
    X = V @ ((V.T @ B) / w[:, None])
    return X[:, 0] if vec else X


def check_psd(eig: EigenPair, name="matrix"):
    """Raise if `eig` has a negative eigenvalue beyond tolerance."""
    w = eig.eigenvalues
    scale = max(abs(w[0]), abs(w[-1]))
    if w[0] < -PSD_RTOL * scale:
        raise PSDViolationError(
            f"{name} has eigenvalue {w[0]:.3e} below -{PSD_RTOL:g} * lambda_max"
        )
