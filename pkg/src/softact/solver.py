"""Quasi-static projective-dynamics solve.

The global matrix ``L = sum_s w_s G_s^T G_s`` does not depend on the
actuation or on the Dirichlet values, so it is factored once per
(mesh, samples, partition) and reused by every solve.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .energy import Partition, Quadratic, SampleActuation, assemble, hourglass_penalty, sample_energy
from .geometry import HexMesh, SampleSet
from .kernels import denominator_floor, vec

log = logging.getLogger(__name__)

ENERGY_FLOOR = 1e-12
DESCENT_SLACK = 1e-12


class SolverError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class FactorizationError(SolverError):
    pass


class SPDFactor:
    """Sparse LU in symmetric mode; the pivots expose definiteness."""

    def __init__(self, M: sp.spmatrix):
        M = sp.csc_matrix(M)
        self.n = M.shape[0]
        self.spd = True
        if self.n == 0:
            self._lu = None
            return
        self._lu = spla.splu(M, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                             options={"SymmetricMode": True})
        d = self._lu.U.diagonal()
        perm_ok = np.array_equal(self._lu.perm_r, self._lu.perm_c)
        self.spd = bool(perm_ok and np.all(d > 0.0) and np.all(np.isfinite(d)))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.n == 0:
            return np.zeros_like(rhs)
        return self._lu.solve(rhs)


class PivotingFactor(SPDFactor):
    def __init__(self, M: sp.spmatrix):
        M = sp.csc_matrix(M)
        self.n = M.shape[0]
        self.spd = False
        self._lu = spla.splu(M) if self.n else None


@dataclass
class GlobalFactorization:
    mesh: HexMesh
    samples: SampleSet
    partition: Partition
    L: sp.csr_matrix
    L_cd: sp.csr_matrix
    factor: SPDFactor
    extra: Quadratic | None = None


def pd_matrix(mesh: HexMesh, samples: SampleSet) -> sp.csr_matrix:
    edofs = mesh.element_dofs[samples.element]
    GtG = np.einsum("sji,sjk->sik", samples.G, samples.G) * samples.weights[:, None, None]
    rows = np.repeat(edofs, 24, axis=1).reshape(-1)
    cols = np.tile(edofs, (1, 24)).reshape(-1)
    n = 3 * mesh.n_nodes
    return sp.coo_matrix((GtG.reshape(-1), (rows, cols)), shape=(n, n)).tocsr()


def prefactor(mesh: HexMesh, samples: SampleSet, partition: Partition | None = None,
              extra: Quadratic | None = None, hourglass: bool | None = None) -> GlobalFactorization:
    """Factor the free block of the constant projective-dynamics matrix.

    ``hourglass`` adds :func:`hourglass_penalty`; by default it is switched on
    for one-point sample sets only, whose matrix is otherwise singular.
    """
    partition = partition or Partition.from_mesh(mesh)
    if hourglass is None:
        hourglass = samples.n_per_element == 1
    if hourglass:
        hg = hourglass_penalty(mesh)
        extra = hg if extra is None else extra + hg
    L = pd_matrix(mesh, samples)
    if extra is not None:
        L = (L + extra.Q).tocsr()
    Lc = L[partition.free]
    L_cc = Lc[:, partition.free]
    fac = SPDFactor(L_cc)
    if not fac.spd:
        raise FactorizationError("global matrix is not positive definite; is every free node "
                                 "connected to the Dirichlet set (or anchored by springs)?")
    return GlobalFactorization(mesh=mesh, samples=samples, partition=partition, L=L,
                               L_cd=Lc[:, partition.dirichlet], factor=fac, extra=extra)


def local_step(u, mesh: HexMesh, samples: SampleSet, act: SampleActuation) -> SampleActuation:
    """Refresh the per-sample optimal rotations of ``F A`` at state ``u``."""
    if not np.all(np.isfinite(u)):
        raise SolverError("non-finite state in local step")
    return act.refresh(mesh, samples, u)


def projection_rhs(fact: GlobalFactorization, act: SampleActuation) -> np.ndarray:
    mesh, samples = fact.mesh, fact.samples
    p = vec(act.factors.R @ act.A)
    contrib = np.einsum("sji,sj->si", samples.G, p) * samples.weights[:, None]
    rhs = np.zeros(3 * mesh.n_nodes)
    np.add.at(rhs, mesh.element_dofs[samples.element].reshape(-1), contrib.reshape(-1))
    if fact.extra is not None:
        rhs += fact.extra.q
    return rhs


def global_step(fact: GlobalFactorization, act: SampleActuation, u_d) -> np.ndarray:
    """Minimize the quadratic with the current rotations held fixed; returns ``u_c``."""
    rhs = projection_rhs(fact, act)
    b = rhs[fact.partition.free] - fact.L_cd @ np.asarray(u_d, dtype=float)
    if not np.all(np.isfinite(b)):
        raise SolverError("non-finite right-hand side in global step")
    return fact.factor.solve(b)


@dataclass
class SolveReport:
    iterations: int = 0
    energy_trace: list = field(default_factory=list)
    relative_progress: float = float("nan")
    force_norm: float = float("nan")
    initial_force_norm: float = float("nan")
    clamp_warnings: int = 0
    wall_time: float = 0.0
    converged: bool = False
    newton_steps: int = 0

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "energy_trace": [float(e) for e in self.energy_trace],
            "relative_progress": float(self.relative_progress),
            "force_norm": float(self.force_norm),
            "initial_force_norm": float(self.initial_force_norm),
            "clamp_warnings": int(self.clamp_warnings),
            "wall_time": float(self.wall_time),
            "converged": bool(self.converged),
            "newton_steps": int(self.newton_steps),
        }


@dataclass
class QuasiStaticState:
    u: np.ndarray                 # (n_nodes, 3)
    partition: Partition
    u_d: np.ndarray               # flat, ordered like partition.dirichlet
    act: SampleActuation          # rotations fresh at u

    @property
    def u_flat(self) -> np.ndarray:
        return self.u.reshape(-1)

    @property
    def u_c(self) -> np.ndarray:
        return self.u_flat[self.partition.free]


def _energy(fact: GlobalFactorization, act: SampleActuation, u) -> float:
    mesh, samples = fact.mesh, fact.samples
    u_e = u[mesh.element_dofs[samples.element]]
    e = float(np.sum(samples.weights * sample_energy(u_e, samples.G, act.A, vec(act.factors.R))))
    if fact.extra is not None:
        e += fact.extra.energy(u)
    return e


def free_force(fact: GlobalFactorization, act: SampleActuation, u) -> np.ndarray:
    mesh, samples = fact.mesh, fact.samples
    u_e = u[mesh.element_dofs[samples.element]]
    res = np.einsum("sij,sj->si", samples.G, u_e) - vec(act.factors.R @ act.A)
    g = np.einsum("sji,sj->si", samples.G, res) * samples.weights[:, None]
    force = np.zeros(3 * mesh.n_nodes)
    np.add.at(force, mesh.element_dofs[samples.element].reshape(-1), g.reshape(-1))
    if fact.extra is not None:
        force += fact.extra.gradient(u)
    return force[fact.partition.free]


def solve_quasistatic(fact: GlobalFactorization, act: SampleActuation, u_d, u_init=None, *,
                      tol: float = 1e-6, max_iters: int = 300, newton_tol: float | None = None,
                      newton_max: int = 20) -> tuple[QuasiStaticState, SolveReport]:
    """Alternate local rotation fits and global solves until the relative
    energy progress ``(E_k - E_{k+1}) / max(E_k, 1e-12)`` drops below ``tol``
    or ``max_iters`` iterations have run.

    ``newton_tol`` optionally polishes the result with Newton steps on the
    exact Hessian until the free-force infinity norm is below it (used by the
    finite-difference gradient checks, which need equilibria far tighter than
    the energy criterion delivers).
    """
    t0 = time.perf_counter()
    mesh, part = fact.mesh, fact.partition
    u_d = np.asarray(u_d, dtype=float).reshape(-1).copy()
    if len(u_d) != len(part.dirichlet):
        raise SolverError(f"expected {len(part.dirichlet)} Dirichlet values, got {len(u_d)}")
    u = (mesh.nodes.reshape(-1) if u_init is None else np.asarray(u_init, dtype=float).reshape(-1)).copy()
    u[part.dirichlet] = u_d
    report = SolveReport()
    local_step(u, mesh, fact.samples, act)
    E = _energy(fact, act, u)
    report.energy_trace.append(E)
    report.initial_force_norm = float(np.abs(free_force(fact, act, u)).max(initial=0.0))
    for it in range(1, max_iters + 1):
        u[part.free] = global_step(fact, act, u_d)
        local_step(u, mesh, fact.samples, act)
        E_new = _energy(fact, act, u)
        report.energy_trace.append(E_new)
        report.iterations = it
        if E_new > E + DESCENT_SLACK:
            report.wall_time = time.perf_counter() - t0
            raise SolverError(f"energy increased from {E!r} to {E_new!r} at iteration {it}", report)
        progress = (E - E_new) / max(E, ENERGY_FLOOR)
        report.relative_progress = progress
        E = E_new
        if progress < tol:
            report.converged = True
            break
    if newton_tol is not None:
        u = _newton_polish(fact, act, u, newton_tol, newton_max, report)
    report.clamp_warnings = count_clamps(act.factors)
    force = free_force(fact, act, u)
    report.force_norm = float(np.abs(force).max(initial=0.0))
    report.wall_time = time.perf_counter() - t0
    log.debug("quasi-static solve: %d iterations, E=%.6g, |f|=%.3g", report.iterations, E, report.force_norm)
    state = QuasiStaticState(u=u.reshape(-1, 3), partition=part, u_d=u_d, act=act)
    return state, report


def count_clamps(factors) -> int:
    s = factors.sigma
    floor = denominator_floor(s)
    return int(sum(np.count_nonzero(s[:, a] + s[:, b] < floor) for a, b in ((0, 1), (1, 2), (0, 2))))


def hessian(fact: GlobalFactorization, act: SampleActuation, u):
    """Assembled system at ``u`` with any extra quadratic folded into ``H``."""
    system = assemble(fact.mesh, fact.samples, act, u, partition=fact.partition)
    if fact.extra is not None:
        system = replace(system, H=(system.H + fact.extra.Q).tocsr(),
                         force=system.force + fact.extra.gradient(np.asarray(u).reshape(-1)))
    return system


def _newton_polish(fact, act, u, tol, max_steps, report):
    mesh, samples, part = fact.mesh, fact.samples, fact.partition
    for _ in range(max_steps):
        f = free_force(fact, act, u)
        if np.abs(f).max(initial=0.0) <= tol:
            break
        step = PivotingFactor(hessian(fact, act, u).H_cc).solve(f)
        E0 = _energy(fact, act, u)
        alpha = 1.0
        while True:
            trial = u.copy()
            trial[part.free] -= alpha * step
            local_step(trial, mesh, samples, act)
            if _energy(fact, act, trial) <= E0 + DESCENT_SLACK or alpha < 1e-4:
                break
            alpha *= 0.5
        u = trial
        report.newton_steps += 1
    local_step(u, mesh, samples, act)
    return u
