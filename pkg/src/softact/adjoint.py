"""Backward pass through the quasi-static equilibrium.

With ``lambda = H_cc^{-1} dL/du_c`` the loss gradients are::

    dL/db_s  = -lambda_e^T (w_s dgrad(psi_s)/db)        per sample
    dL/du_d  = -lambda^T H_cd                            (implicit part)

``H_Omega`` is never formed; each sample contributes a 24x6 block product.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .energy import GlobalSystem
from .geometry import HexMesh, SampleSet
from .solver import (GlobalFactorization, PivotingFactor, QuasiStaticState, SolverError, SPDFactor,
                     hessian)

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-8


class AdjointError(SolverError):
    pass


@dataclass
class AdjointWorkspace:
    lam: np.ndarray
    dL_du_c: np.ndarray
    dL_db: np.ndarray | None = None
    dL_dud: np.ndarray | None = None
    indefinite: bool = False
    residual: float = 0.0
    diagnostics: list = field(default_factory=list)


def adjoint_solve(system: GlobalSystem, dL_du_c) -> AdjointWorkspace:
    """Solve ``H_cc lambda = dL/du_c`` at the converged state."""
    g = np.asarray(dL_du_c, dtype=float).reshape(-1)
    ws = AdjointWorkspace(lam=np.zeros_like(g), dL_du_c=g)
    if not np.any(g):
        return ws
    H_cc = system.H_cc
    try:
        fac = SPDFactor(H_cc)
        if not fac.spd:
            ws.indefinite = True
            ws.diagnostics.append("H_cc is not positive definite at the converged state; "
                                  "using a pivoting factorization")
            log.warning(ws.diagnostics[-1])
            fac = PivotingFactor(H_cc)
        lam = fac.solve(g)
    except RuntimeError as exc:  # singular factor
        raise AdjointError(f"adjoint factorization failed ({exc}); inspect rotation-gradient "
                           f"denominator clamps ({system.clamped} recorded)") from exc
    res = np.linalg.norm(H_cc @ lam - g) / max(np.linalg.norm(g), 1e-300)
    ws.residual = float(res)
    if not np.all(np.isfinite(lam)) or res > RESIDUAL_TOL:
        raise AdjointError(f"adjoint solve residual {res:.3g} exceeds {RESIDUAL_TOL:g}; "
                           f"{system.clamped} denominator clamps recorded")
    ws.lam = lam
    return ws


def _full_lambda(system: GlobalSystem, lam: np.ndarray) -> np.ndarray:
    full = np.zeros(system.partition.n_dofs)
    full[system.partition.free] = lam
    return full


def grad_actuation(lam, system: GlobalSystem, mesh: HexMesh, samples: SampleSet) -> np.ndarray:
    """Per-sample gradient (S, 6) of the loss with respect to the actuation parameters."""
    lam_e = _full_lambda(system, lam)[mesh.element_dofs[samples.element]]
    return -samples.weights[:, None] * np.einsum("si,sij->sj", lam_e, system.H_b)


def grad_dirichlet(lam, system: GlobalSystem) -> np.ndarray:
    """Implicit part ``-lambda^T H_cd`` of the gradient over Dirichlet dofs."""
    if len(system.partition.dirichlet) == 0:
        return np.zeros(0)
    return -(system.H_cd.T @ np.asarray(lam, dtype=float))


def backward(state: QuasiStaticState, fact: GlobalFactorization, dL_du) -> AdjointWorkspace:
    """Full backward pass from ``dL/du`` (all dofs) at a solved state.

    The direct dependence of the loss on the Dirichlet dofs is added to the
    implicit part, so ``dL_dud`` is the total gradient.
    """
    dL_du = np.asarray(dL_du, dtype=float).reshape(-1)
    part = state.partition
    system = hessian(fact, state.act, state.u_flat)
    ws = adjoint_solve(system, dL_du[part.free])
    ws.dL_db = grad_actuation(ws.lam, system, fact.mesh, fact.samples)
    ws.dL_dud = grad_dirichlet(ws.lam, system) + dL_du[part.dirichlet]
    return ws
