"""Shape-targeting energy, gradients, closed-form Hessians and global assembly.

Per sample point the energy density is ``psi = 1/2 |G u_e - hat(A) r|^2`` with
``r = vec(R)`` the rotation of the polar decomposition of ``F A``. The
assembled energy weights each sample by ``V_e / N``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import CORNERS, FREE, HexMesh, SampleSet
from .kernels import (DA_DB, PolarFactors, actuation_from_params, hat_F, hat_R, hat_sym,
                      polar_decompose, rotation_gradient, vec)


class ActuationError(ValueError):
    """Raised for inadmissible actuation (non-positive determinant)."""


class StaleRotationError(RuntimeError):
    pass


# --------------------------------------------------------------------------- per sample

def sample_energy(u_e, G, A, r):
    """``1/2 |G u_e - hat(A) r|^2``; batched over leading axes."""
    res = np.einsum("...ij,...j->...i", G, u_e) - np.einsum("...ij,...j->...i", hat_sym(A), r)
    return 0.5 * np.sum(res * res, axis=-1)


def sample_gradient(u_e, G, A, r):
    res = np.einsum("...ij,...j->...i", G, u_e) - np.einsum("...ij,...j->...i", hat_sym(A), r)
    return np.einsum("...ji,...j->...i", G, res)


def optimal_rotation(u_e, G, A) -> PolarFactors:
    F = np.einsum("...ij,...j->...i", G, u_e).reshape(np.shape(u_e)[:-1] + (3, 3))
    return polar_decompose(F @ A)


def sample_hessian_u(u_e, G, A, factors: PolarFactors, rg=None):
    """``G^T G - G^T hat(A) H_R hat(A) G`` (24x24), plus the clamp count."""
    rg = rotation_gradient(factors) if rg is None else rg
    AG = hat_sym(A) @ G
    H = np.swapaxes(G, -1, -2) @ G - np.swapaxes(AG, -1, -2) @ rg.H @ AG
    return H, rg.clamped


def sample_hessian_a(u_e, G, A, factors: PolarFactors, F=None, rg=None):
    """``d grad(psi) / d vec(A) = -G^T hat(A) H_R hat(F) - G^T hat(R)`` (24x9).

    Returns ``(H_a, H_b, clamped)`` where ``H_b = H_a @ d vec(A)/db`` (24x6).
    """
    if F is None:
        F = np.einsum("...ij,...j->...i", G, u_e).reshape(np.shape(u_e)[:-1] + (3, 3))
    rg = rotation_gradient(factors) if rg is None else rg
    Gt = np.swapaxes(G, -1, -2)
    Ha = -(Gt @ hat_sym(A) @ rg.H @ hat_F(F)) - Gt @ hat_R(factors.R)
    return Ha, Ha @ DA_DB, rg.clamped


# --------------------------------------------------------------------------- actuation state

@dataclass
class SampleActuation:
    """Actuation matrices per sample plus the rotation cache for one state ``u``."""

    A: np.ndarray
    factors: PolarFactors | None = None
    _u: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        det = np.linalg.det(self.A)
        bad = np.flatnonzero(~(det > 0.0))
        if len(bad):
            raise ActuationError(f"actuation with det(A) <= 0 at samples {bad[:20].tolist()}")

    @classmethod
    def from_params(cls, b) -> "SampleActuation":
        return cls(actuation_from_params(b))

    @classmethod
    def identity(cls, n: int) -> "SampleActuation":
        return cls(np.broadcast_to(np.eye(3), (n, 3, 3)).copy())

    def refresh(self, mesh: HexMesh, samples: SampleSet, u) -> "SampleActuation":
        u = np.asarray(u, dtype=float).reshape(-1)
        u_e = u[mesh.element_dofs[samples.element]]
        self.factors = optimal_rotation(u_e, samples.G, self.A)
        self._u = u.copy()
        return self

    def check_fresh(self, u) -> PolarFactors:
        u = np.asarray(u).reshape(-1)
        if self.factors is None or self._u is None or not np.array_equal(self._u, u):
            raise StaleRotationError("rotation cache was computed for a different state")
        return self.factors


# --------------------------------------------------------------------------- assembly

@dataclass(frozen=True)
class Partition:
    """Split of the flat dof vector into free (c) and Dirichlet (d) blocks."""

    free: np.ndarray
    dirichlet: np.ndarray
    n_dofs: int

    @classmethod
    def from_mesh(cls, mesh: HexMesh) -> "Partition":
        dofs = np.arange(3 * mesh.n_nodes).reshape(-1, 3)
        free_nodes = mesh.tags == FREE
        return cls(free=dofs[free_nodes].reshape(-1), dirichlet=dofs[~free_nodes].reshape(-1),
                   n_dofs=3 * mesh.n_nodes)

    def combine(self, u_c, u_d) -> np.ndarray:
        u = np.empty(self.n_dofs)
        u[self.free] = u_c
        u[self.dirichlet] = u_d
        return u


@dataclass(frozen=True)
class GlobalSystem:
    energy: float
    force: np.ndarray          # gradient of the energy over all dofs
    H: sp.csr_matrix | None    # Hessian over all dofs
    partition: Partition
    clamped: int = 0
    H_b: np.ndarray | None = None   # per-sample (24, 6) blocks of dgrad/db, unweighted
    sample_energy: np.ndarray | None = None

    @property
    def H_cc(self) -> sp.csr_matrix:
        p = self.partition
        return self.H[p.free][:, p.free]

    @property
    def H_cd(self) -> sp.csr_matrix:
        p = self.partition
        return self.H[p.free][:, p.dirichlet]

    @property
    def H_dd(self) -> sp.csr_matrix:
        p = self.partition
        return self.H[p.dirichlet][:, p.dirichlet]

    @property
    def force_free(self) -> np.ndarray:
        return self.force[self.partition.free]


def _chunks(n: int, workers: int):
    workers = max(1, int(workers))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    return [slice(bounds[i], bounds[i + 1]) for i in range(workers) if bounds[i + 1] > bounds[i]]


def _per_sample(u_e, G, A, factors, hessian):
    r = vec(factors.R)
    psi = sample_energy(u_e, G, A, r)
    grad = sample_gradient(u_e, G, A, r)
    Hu = Hb = None
    clamped = 0
    if hessian:
        rg = rotation_gradient(factors)
        Hu, clamped = sample_hessian_u(u_e, G, A, factors, rg=rg)
        _, Hb, _ = sample_hessian_a(u_e, G, A, factors, rg=rg)
    return psi, grad, Hu, Hb, clamped


def _slice_factors(f: PolarFactors, s: slice) -> PolarFactors:
    return PolarFactors(R=f.R[s], S=f.S[s], U=f.U[s], V=f.V[s], sigma=f.sigma[s])


def assemble(mesh: HexMesh, samples: SampleSet, act: SampleActuation, u, *,
             hessian: bool = True, partition: Partition | None = None, workers: int = 1) -> GlobalSystem:
    """Weighted sum of per-sample energy, gradient and Hessian over the mesh.

    Per-sample work is split across ``workers`` threads; all reductions run
    afterwards in sample order, so the result does not depend on ``workers``.
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    factors = act.check_fresh(u)
    edofs = mesh.element_dofs[samples.element]
    u_e = u[edofs]
    parts = _chunks(len(samples), workers)

    def run(s):
        return _per_sample(u_e[s], samples.G[s], act.A[s], _slice_factors(factors, s), hessian)

    if len(parts) > 1:
        with ThreadPoolExecutor(max_workers=len(parts)) as pool:
            results = list(pool.map(run, parts))
    else:
        results = [run(s) for s in parts]
    psi = np.concatenate([r[0] for r in results])
    grad = np.concatenate([r[1] for r in results])
    finite = np.isfinite(psi) & np.all(np.isfinite(grad), axis=1)
    if not np.all(finite):
        raise FloatingPointError(f"non-finite energy contribution at sample {int(np.flatnonzero(~finite)[0])}")
    w = samples.weights
    energy = float(np.sum(w * psi))
    force = np.zeros(3 * mesh.n_nodes)
    np.add.at(force, edofs.reshape(-1), (w[:, None] * grad).reshape(-1))
    H = Hb = None
    clamped = 0
    if hessian:
        Hu = np.concatenate([r[2] for r in results])
        Hb = np.concatenate([r[3] for r in results])
        clamped = sum(r[4] for r in results)
        rows = np.repeat(edofs, 24, axis=1).reshape(-1)
        cols = np.tile(edofs, (1, 24)).reshape(-1)
        n = 3 * mesh.n_nodes
        H = sp.coo_matrix(((w[:, None, None] * Hu).reshape(-1), (rows, cols)), shape=(n, n)).tocsr()
    return GlobalSystem(energy=energy, force=force, H=H, partition=partition or Partition.from_mesh(mesh),
                        clamped=clamped, H_b=Hb, sample_energy=psi)


def total_energy(mesh: HexMesh, samples: SampleSet, A, u) -> float:
    """Energy with rotations solved at ``u`` (no caching, used by oracles)."""
    u = np.asarray(u, dtype=float).reshape(-1)
    u_e = u[mesh.element_dofs[samples.element]]
    f = optimal_rotation(u_e, samples.G, A)
    return float(np.sum(samples.weights * sample_energy(u_e, samples.G, A, vec(f.R))))


# --------------------------------------------------------------------------- quadratic extras

@dataclass(frozen=True)
class Quadratic:
    """Extra energy ``1/2 u^T Q u - q^T u + c`` over all dofs (drag springs, hourglass control)."""

    Q: sp.csr_matrix
    q: np.ndarray
    c: float = 0.0

    def energy(self, u):
        return float(0.5 * u @ (self.Q @ u) - self.q @ u + self.c)

    def gradient(self, u):
        return self.Q @ u - self.q

    def __add__(self, other: "Quadratic") -> "Quadratic":
        return Quadratic((self.Q + other.Q).tocsr(), self.q + other.q, self.c + other.c)


# hourglass base vectors of the unit cube, orthogonal to every affine nodal field
_SIGNS = 2.0 * CORNERS - 1.0
HOURGLASS = np.stack([_SIGNS[:, 1] * _SIGNS[:, 2], _SIGNS[:, 0] * _SIGNS[:, 2],
                      _SIGNS[:, 0] * _SIGNS[:, 1], _SIGNS[:, 0] * _SIGNS[:, 1] * _SIGNS[:, 2]]) / np.sqrt(8.0)
HOURGLASS_STIFFNESS = 0.05


def hourglass_penalty(mesh: HexMesh, stiffness: float = HOURGLASS_STIFFNESS) -> Quadratic:
    """Rotation-invariant penalty on the non-affine nodal modes of each element.

    One-point quadrature cannot see these modes; the penalty
    ``1/2 k sum_e sum_a |sum_c gamma_ac u_c|^2`` with ``k = stiffness * V_e / h^2``
    vanishes for every affine (in particular rest and rigid) element state.
    """
    k = stiffness * mesh.element_volume / mesh.h ** 2
    P = k * (HOURGLASS.T @ HOURGLASS)                       # (8, 8)
    block = np.kron(P, np.eye(3))                           # (24, 24) node-major
    edofs = mesh.element_dofs
    rows = np.repeat(edofs, 24, axis=1).reshape(-1)
    cols = np.tile(edofs, (1, 24)).reshape(-1)
    n = 3 * mesh.n_nodes
    Q = sp.coo_matrix((np.tile(block.reshape(-1), mesh.n_elements), (rows, cols)), shape=(n, n)).tocsr()
    return Quadratic(Q, np.zeros(n), 0.0)
