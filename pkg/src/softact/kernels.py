"""Small dense kernels for the shape-targeting model.

Conventions used throughout the package:

* ``vec`` flattens a 3x3 matrix row by row, so ``vec(M)[3*i + j] == M[i, j]``.
  With numpy's C ordering this is simply ``M.reshape(9)``.
* The expanded ("hat") matrices turn matrix products into matrix-vector
  products on row-wise vectorizations::

      vec(R @ A) == hat_sym(A) @ vec(R) == hat_R(R) @ vec(A)
      vec(F @ A) == hat_F(F) @ vec(A)  == hat_sym(A) @ vec(F)

Every function accepts a leading batch shape so per-sample quantities can be
evaluated for a whole sample set at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_I3 = np.eye(3)

# d vec(A) / d b for the 6-parameter actuation layout
#   [[1+b1, b2,   b3  ],
#    [b2,   1+b4, b5  ],
#    [b3,   b5,   1+b6]]
DA_DB = np.zeros((9, 6))
for _k, _entries in enumerate([(0,), (1, 3), (2, 6), (4,), (5, 7), (8,)]):
    for _e in _entries:
        DA_DB[_e, _k] = 1.0
DA_DB.setflags(write=False)

# skew generators paired with (sigma_x, sigma_y), (sigma_y, sigma_z), (sigma_x, sigma_z)
_TWIST = np.array([
    [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
    [[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]],
    [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
]) / np.sqrt(2.0)
_PAIRS = ((0, 1), (1, 2), (0, 2))


def vec(M: np.ndarray) -> np.ndarray:
    """Row-wise flattening of (..., 3, 3) into (..., 9)."""
    M = np.asarray(M)
    return M.reshape(M.shape[:-2] + (9,))


def unvec(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    return m.reshape(m.shape[:-1] + (3, 3))


def hat_sym(A: np.ndarray) -> np.ndarray:
    """Block-diagonal expansion of ``A`` (9x9).

    The blocks hold ``A.T`` so the identities stay exact for non-symmetric
    input; for the symmetric actuation matrices this is ``diag(A, A, A)``.
    """
    A = np.asarray(A, dtype=float)
    out = np.zeros(A.shape[:-2] + (9, 9))
    At = np.swapaxes(A, -1, -2)
    for k in range(3):
        out[..., 3 * k:3 * k + 3, 3 * k:3 * k + 3] = At
    return out


def _kron_i3(M: np.ndarray) -> np.ndarray:
    # kron(M, I3) with batch support
    M = np.asarray(M, dtype=float)
    out = np.zeros(M.shape[:-2] + (9, 9))
    for i in range(3):
        for k in range(3):
            for j in range(3):
                out[..., 3 * i + j, 3 * k + j] = M[..., i, k]
    return out


def hat_F(F: np.ndarray) -> np.ndarray:
    """9x9 matrix with ``vec(F @ A) == hat_F(F) @ vec(A)``."""
    return _kron_i3(F)


def hat_R(R: np.ndarray) -> np.ndarray:
    """9x9 matrix with ``vec(R @ A) == hat_R(R) @ vec(A)``."""
    return _kron_i3(R)


def actuation_from_params(b: np.ndarray) -> np.ndarray:
    """Map actuation parameters (..., 6) to symmetric matrices (..., 3, 3)."""
    b = np.asarray(b, dtype=float)
    if b.shape[-1] != 6:
        raise ValueError(f"actuation parameters must have 6 entries, got {b.shape[-1]}")
    a = b @ DA_DB.T
    A = unvec(a)
    return A + _I3


def params_from_actuation(A: np.ndarray) -> np.ndarray:
    """Inverse of :func:`actuation_from_params` (symmetrizes first)."""
    A = np.asarray(A, dtype=float)
    S = 0.5 * (A + np.swapaxes(A, -1, -2)) - _I3
    return np.stack([S[..., 0, 0], S[..., 0, 1], S[..., 0, 2],
                     S[..., 1, 1], S[..., 1, 2], S[..., 2, 2]], axis=-1)


@dataclass(frozen=True)
class PolarFactors:
    """Polar/SVD factors of a batch of 3x3 matrices ``M = R S = U diag(sigma) V^T``.

    ``sigma`` is sorted in descending order; after the reflection fix the last
    entry may be negative so that ``det(R) = +1``.
    """

    R: np.ndarray
    S: np.ndarray
    U: np.ndarray
    V: np.ndarray
    sigma: np.ndarray


def polar_decompose(M: np.ndarray) -> PolarFactors:
    """Rotation-preserving polar decomposition via SVD.

    If ``U V^T`` is a reflection, the column of ``U`` paired with the smallest
    singular value is negated together with that singular value. Rank-deficient
    input still yields a proper rotation; ties follow LAPACK's ordering.
    """
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise ValueError("polar_decompose received non-finite entries")
    U, s, Vt = np.linalg.svd(M)
    U = U.copy()
    s = s.copy()
    sign = np.where(np.linalg.det(U) * np.linalg.det(Vt) < 0.0, -1.0, 1.0)
    U[..., :, 2] *= sign[..., None]
    s[..., 2] *= sign
    V = np.swapaxes(Vt, -1, -2)
    R = U @ Vt
    S = (V * s[..., None, :]) @ Vt
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    return PolarFactors(R=R, S=S, U=U, V=V, sigma=s)


def denominator_floor(sigma: np.ndarray) -> np.ndarray:
    return 1e-6 * np.maximum(1.0, sigma[..., 0])


@dataclass(frozen=True)
class RotationGradient:
    H: np.ndarray        # (..., 9, 9)
    lam: np.ndarray      # (..., 3)
    q: np.ndarray        # (..., 3, 9) rows are vec(Q_i)
    clamped: int         # number of clamped denominators in the batch


def rotation_gradient(f: PolarFactors) -> RotationGradient:
    """Derivative of ``vec(R)`` with respect to ``vec(M)`` in eigen form.

    ``H = sum_i lam_i q_i q_i^T`` with ``lam_i = 2 / (sigma_a + sigma_b)`` for
    the pairs (x, y), (y, z), (x, z) and ``q_i = vec(U K_i V^T)``.
    Denominators below ``1e-6 * max(1, sigma_x)`` are clamped to that floor.
    """
    s = f.sigma
    floor = denominator_floor(s)
    denoms = np.stack([s[..., a] + s[..., b] for a, b in _PAIRS], axis=-1)
    low = denoms < floor[..., None]
    clamped = int(np.count_nonzero(low))
    if clamped:
        denoms = np.where(low, floor[..., None], denoms)
    lam = 2.0 / denoms
    Q = f.U[..., None, :, :] @ _TWIST @ np.swapaxes(f.V, -1, -2)[..., None, :, :]
    q = Q.reshape(Q.shape[:-2] + (9,))
    H = np.einsum("...i,...ia,...ib->...ab", lam, q, q)
    return RotationGradient(H=H, lam=lam, q=q, clamped=clamped)
