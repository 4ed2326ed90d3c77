"""Two-stage training, the surface loss, Adam, latent fitting and interpolation.

Stage 1 regresses the actuation network onto actuations estimated by dragging
the rest mesh into each target with zero-rest-length springs. Stage 2 runs the
simulator in the loop: network -> quasi-static solve -> surface loss ->
adjoint -> network gradients.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .adjoint import AdjointError, backward
from .energy import ActuationError, Partition, Quadratic, SampleActuation
from .field import ActuationField, apply_jaw, apply_jaw_backward
from .geometry import (JAW, EmbeddingMap, GeometryError, HexMesh, SampleSet, SurfaceMesh,
                       build_samples, embed_surface, face_normals_raw, vertex_normals,
                       vertex_normals_backward)
from .kernels import DA_DB, actuation_from_params, polar_decompose
from .solver import GlobalFactorization, QuasiStaticState, SolverError, prefactor, solve_quasistatic

log = logging.getLogger(__name__)

SMOOTH_DELTA = 1e-6
SPD_FLOOR = 1e-3
DIVERGENCE_FACTOR = 10.0
DIVERGENCE_EPOCHS = 3
METRIC_COLUMNS = ("epoch", "stage", "loss", "position", "normal", "mean_vertex_error",
                  "solver_iterations", "wall_time")


class TrainingError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


# --------------------------------------------------------------------------- config

@dataclass
class TrainConfig:
    alpha: float = 0.0
    stage1_epochs: int = 1700
    stage1_batch: int = 4
    stage1_lr: float = 2e-4
    stage2_epochs: int = 30
    stage2_batch: int = 1
    stage2_lr: float = 1e-4
    decay: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    fit_iters: int = 10
    fit_lr: float = 1e-2
    solver_tol: float = 1e-6
    max_iters: int = 300
    jaw_gradients: bool = True
    max_fail_fraction: float = 0.2
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        for name in ("stage1_lr", "stage2_lr", "fit_lr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("stage1_epochs", "stage2_epochs", "stage1_batch", "stage2_batch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.fit_iters < 0:
            raise ValueError("fit_iters must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def lr_at(self, stage: int, epoch: int) -> float:
        lr, n = (self.stage1_lr, self.stage1_epochs) if stage == 1 else (self.stage2_lr, self.stage2_epochs)
        return lr * (1.0 - epoch / n) if self.decay else lr


# --------------------------------------------------------------------------- Adam

def adam_step(param, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns ``(param, m, v)`` as new arrays."""
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient passed to Adam")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict, lr: float | None = None, frozen=()) -> None:
        """Update ``params`` in place; keys whose group prefix is in ``frozen`` are left alone."""
        lr = self.lr if lr is None else lr
        self.t += 1
        for k in sorted(grads):
            if k.split(".")[0] in frozen or k not in params:
                continue
            g = grads[k]
            m = self.m.get(k, np.zeros_like(params[k]))
            v = self.v.get(k, np.zeros_like(params[k]))
            params[k], self.m[k], self.v[k] = adam_step(params[k], g, m, v, self.t, lr,
                                                        self.beta1, self.beta2, self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "m": dict(self.m), "v": dict(self.v)}

    @classmethod
    def from_state(cls, state: dict) -> "Adam":
        opt = cls(state["lr"], state["beta1"], state["beta2"], state["eps"])
        opt.t = int(state["t"])
        opt.m = {k: np.array(v) for k, v in state.get("m", {}).items()}
        opt.v = {k: np.array(v) for k, v in state.get("v", {}).items()}
        return opt


# --------------------------------------------------------------------------- targets and descriptors

@dataclass
class TargetPose:
    vertices: np.ndarray                 # (V, 3) observed surface positions
    faces: np.ndarray
    descriptor: np.ndarray | None = None
    u_d: np.ndarray | None = None        # optional Dirichlet positions (flat)
    index: int = 0                       # row in an auto-decoder latent table
    name: str = ""

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError(f"target {self.name!r} has non-finite vertices")
        self.normals = vertex_normals(self.vertices, self.faces)


class ShapePCA:
    """Whitened PCA of surface displacements, zero-padded to a fixed size."""

    def __init__(self, rest: np.ndarray, mean: np.ndarray, components: np.ndarray, scale: np.ndarray,
                 dim: int = 16):
        self.rest = np.asarray(rest, dtype=float)
        self.mean = np.asarray(mean, dtype=float)
        self.components = np.asarray(components, dtype=float)
        self.scale = np.asarray(scale, dtype=float)
        self.dim = dim

    @classmethod
    def fit(cls, rest, shapes, dim: int = 16) -> "ShapePCA":
        rest = np.asarray(rest, dtype=float)
        X = np.stack([np.asarray(s, dtype=float).reshape(-1) - rest.reshape(-1) for s in shapes])
        mean = X.mean(axis=0)
        _, sv, Vt = np.linalg.svd(X - mean, full_matrices=False)
        std = sv / np.sqrt(max(len(X) - 1, 1))
        keep = std > 1e-10 * max(std.max(initial=0.0), 1e-300)
        keep[dim:] = False
        return cls(rest, mean, Vt[keep], std[keep], dim)

    def transform(self, vertices) -> np.ndarray:
        d = np.asarray(vertices, dtype=float).reshape(-1) - self.rest.reshape(-1) - self.mean
        out = np.zeros(self.dim)
        out[:len(self.scale)] = (self.components @ d) / self.scale
        return out

    def to_dict(self) -> dict:
        return {"rest": self.rest.tolist(), "mean": self.mean.tolist(), "components": self.components.tolist(),
                "scale": self.scale.tolist(), "dim": self.dim}

    @classmethod
    def from_dict(cls, d: dict) -> "ShapePCA":
        comps = np.array(d["components"], dtype=float).reshape(len(d["scale"]), -1)
        return cls(np.array(d["rest"]), np.array(d["mean"]), comps, np.array(d["scale"]), d["dim"])


# --------------------------------------------------------------------------- scene

@dataclass
class Scene:
    """Everything the simulator needs for one (mesh, samples, surface) combination."""

    mesh: HexMesh
    samples: SampleSet
    surface: SurfaceMesh
    embedding: EmbeddingMap
    fact: GlobalFactorization
    W: sp.csr_matrix = field(repr=False)

    @classmethod
    def build(cls, mesh: HexMesh, surface: SurfaceMesh, n_per_element: int = 8,
              samples: SampleSet | None = None, embedding: EmbeddingMap | None = None,
              partition: Partition | None = None) -> "Scene":
        samples = samples if samples is not None else build_samples(mesh, n_per_element)
        embedding = embedding if embedding is not None else embed_surface(mesh, surface)
        fact = prefactor(mesh, samples, partition)
        return cls(mesh, samples, surface, embedding, fact, embedding.matrix(mesh))

    def with_samples(self, n_per_element: int) -> "Scene":
        return Scene.build(self.mesh, self.surface, n_per_element, embedding=self.embedding,
                           partition=self.fact.partition)

    @property
    def partition(self) -> Partition:
        return self.fact.partition

    @property
    def resolution(self) -> float:
        return float(len(self.samples))

    @property
    def dirichlet_nodes(self) -> np.ndarray:
        return self.partition.dirichlet[::3] // 3

    @property
    def jaw_mask(self) -> np.ndarray:
        return self.mesh.tags[self.dirichlet_nodes] == JAW

    def dirichlet_values(self, T=None, u_d=None) -> np.ndarray:
        """Prescribed positions: ``u_d`` (or rest), with jaw nodes moved by ``T``."""
        nodes = self.dirichlet_nodes
        vals = (self.mesh.nodes[nodes].copy() if u_d is None
                else np.asarray(u_d, dtype=float).reshape(-1, 3).copy())
        if T is not None:
            mask = self.jaw_mask
            vals[mask] = apply_jaw(T, self.mesh.nodes[nodes[mask]])
        return vals.reshape(-1)

    def surface_vertices(self, u) -> np.ndarray:
        return self.W @ np.asarray(u, dtype=float).reshape(-1, 3)


# --------------------------------------------------------------------------- loss

def smooth_l1(x, delta: float = SMOOTH_DELTA):
    """``|x|`` with a cubic blend below ``delta``; returns value and derivative."""
    a = np.abs(x)
    small = a < delta
    val = np.where(small, 2.0 * x * x / delta - a ** 3 / delta ** 2, a)
    der = np.where(small, 4.0 * x / delta - 3.0 * x * a / delta ** 2, np.sign(x))
    return val, der


@dataclass
class LossResult:
    loss: float
    position: float
    normal: float
    grad_u: np.ndarray          # flat over all dofs
    mean_error: float
    vertices: np.ndarray
    vertex_error: np.ndarray


def surface_loss(u, scene: Scene, target: TargetPose, alpha: float = 0.0) -> LossResult:
    """Per-coordinate smoothed L1 on embedded vertices plus ``alpha * (1 - n_hat . n)``."""
    s_hat = scene.surface_vertices(u)
    diff = s_hat - target.vertices
    val, der = smooth_l1(diff)
    position = float(val.sum())
    g_s = der
    normal = 0.0
    if alpha:
        faces = scene.surface.faces
        area = np.linalg.norm(face_normals_raw(s_hat, faces), axis=1)
        rest_area = np.linalg.norm(face_normals_raw(scene.surface.vertices, faces), axis=1)
        bad = np.flatnonzero(area <= 1e-12 * rest_area)
        if len(bad):
            raise GeometryError(f"degenerate deformed face {int(bad[0])} (area {area[bad[0]]:.3g})")
        n_hat = vertex_normals(s_hat, faces)
        normal = float(alpha * np.sum(1.0 - np.sum(n_hat * target.normals, axis=1)))
        g_s = g_s + vertex_normals_backward(s_hat, faces, -alpha * target.normals)
    grad_u = (scene.W.T @ g_s).reshape(-1)
    err = np.linalg.norm(diff, axis=1)
    return LossResult(position + normal, position, normal, grad_u, float(err.mean()), s_hat, err)


# --------------------------------------------------------------------------- forward / backward per frame

@dataclass
class FrameResult:
    state: QuasiStaticState
    report: object
    b: np.ndarray
    theta: np.ndarray | None
    act_cache: object
    jaw_cache: object


def latent_of(field_: ActuationField, target: TargetPose):
    if field_.config.latent_mode == "encoder":
        if target.descriptor is None:
            raise ValueError(f"target {target.name!r} has no descriptor")
        z, cache = field_.encode(target.descriptor)
    else:
        z, cache = field_.lookup([target.index])
    return z[0], cache


def simulate(field_: ActuationField, scene: Scene, z, *, u_d=None, u_init=None, tol: float = 1e-6,
             max_iters: int = 300, newton_tol: float | None = None) -> FrameResult:
    """Evaluate the networks at ``z`` and solve for the quasi-static state."""
    cfg = field_.config
    res = scene.resolution if cfg.resolution_branch else None
    b, act_cache = field_.eval_actuation(scene.samples.points, z, res)
    act = SampleActuation.from_params(b)
    theta = T = jaw_cache = None
    if cfg.jaw:
        theta, T, jaw_cache = field_.eval_jaw(z)
    vals = scene.dirichlet_values(T, u_d)
    state, report = solve_quasistatic(scene.fact, act, vals, u_init, tol=tol, max_iters=max_iters,
                                      newton_tol=newton_tol)
    return FrameResult(state, report, b, theta, act_cache, jaw_cache)


def frame_gradients(field_: ActuationField, scene: Scene, frame: FrameResult, loss: LossResult,
                    latent_cache=None, jaw_gradients: bool = True) -> tuple[dict, np.ndarray]:
    """Adjoint solve and network backward pass for one simulated frame."""
    ws = backward(frame.state, scene.fact, loss.grad_u)
    grad_theta = None
    if frame.theta is not None and jaw_gradients:
        mask = scene.jaw_mask
        g = ws.dL_dud.reshape(-1, 3)[mask]
        grad_theta = apply_jaw_backward(frame.theta, field_.config.pivot,
                                        scene.mesh.nodes[scene.dirichlet_nodes[mask]], g)
    return field_.backward_field(frame.act_cache, ws.dL_db, frame.jaw_cache, grad_theta, latent_cache)


# --------------------------------------------------------------------------- stage 1

@dataclass
class InitFrame:
    """Stage-1 regression target for one frame."""

    A: np.ndarray                     # (S, 3, 3) symmetric, det > 0
    points: np.ndarray                # (S, 3) sample positions
    target: TargetPose
    resolution: float | None = None
    jaw_rest: np.ndarray | None = None
    jaw_goal: np.ndarray | None = None
    projected: int = 0
    converged: bool = True


def project_spd(A, floor: float = SPD_FLOOR) -> tuple[np.ndarray, int]:
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    w, Q = np.linalg.eigh(A)
    low = w < floor
    n = int(np.count_nonzero(np.any(low, axis=-1)))
    w = np.maximum(w, floor)
    return (Q * w[..., None, :]) @ np.swapaxes(Q, -1, -2), n


def spring_quadratic(scene: Scene, goal, k: float) -> Quadratic:
    """``k * sum_i |W u - goal_i|^2`` as a quadratic over all dofs."""
    W3 = sp.kron(scene.W, sp.identity(3), format="csr")
    goal = np.asarray(goal, dtype=float).reshape(-1)
    return Quadratic((2.0 * k * (W3.T @ W3)).tocsr(), 2.0 * k * (W3.T @ goal), float(k * goal @ goal))


def stage1_init(scene: Scene, target: TargetPose, k: float | None = None, *, tol: float = 1e-6,
                max_iters: int = 300) -> InitFrame:
    """Drag the rest mesh onto ``target`` with springs; take ``A`` as the stretch of ``F``."""
    mesh, samples = scene.mesh, scene.samples
    if k is None:
        k = 10.0 * mesh.element_volume
    springs = spring_quadratic(scene, target.vertices, k)
    fact = prefactor(mesh, samples, scene.partition, extra=springs)
    act = SampleActuation.identity(len(samples))
    state, report = solve_quasistatic(fact, act, scene.dirichlet_values(None, target.u_d), tol=tol,
                                      max_iters=max_iters)
    if not report.converged:
        log.warning("spring drag for %r did not converge in %d iterations; using the last iterate",
                    target.name, max_iters)
    u_e = state.u_flat[mesh.element_dofs[samples.element]]
    F = np.einsum("sij,sj->si", samples.G, u_e).reshape(-1, 3, 3)
    A, n_proj = project_spd(polar_decompose(F).S)
    jaw_rest = jaw_goal = None
    if target.u_d is not None and np.any(scene.jaw_mask):
        jaw_rest = mesh.nodes[scene.dirichlet_nodes[scene.jaw_mask]]
        jaw_goal = np.asarray(target.u_d, dtype=float).reshape(-1, 3)[scene.jaw_mask]
    return InitFrame(A=A, points=samples.points, target=target, resolution=scene.resolution,
                     jaw_rest=jaw_rest, jaw_goal=jaw_goal, projected=n_proj, converged=report.converged)


def _pretrain_frame(field_: ActuationField, frame: InitFrame):
    z, lcache = latent_of(field_, frame.target)
    res = frame.resolution if field_.config.resolution_branch else None
    b, acache = field_.eval_actuation(frame.points, z, res)
    D = actuation_from_params(b) - frame.A
    S = len(b)
    loss = float(np.sum(D * D)) / S
    grad_b = (2.0 / S) * (D.reshape(S, 9) @ DA_DB)
    jcache = grad_theta = None
    if field_.config.jaw and frame.jaw_rest is not None:
        theta, T, jcache = field_.eval_jaw(z)
        r = apply_jaw(T, frame.jaw_rest) - frame.jaw_goal
        nj = len(r)
        loss += float(np.sum(r * r)) / nj
        grad_theta = apply_jaw_backward(theta, field_.config.pivot, frame.jaw_rest, 2.0 * r / nj)
    grads, _ = field_.backward_field(acache, grad_b, jcache, grad_theta, lcache)
    return loss, grads


def _accumulate(total: dict, grads: dict, scale: float) -> None:
    for k, g in grads.items():
        total[k] = total[k] + scale * g if k in total else scale * g


def pretrain(field_: ActuationField, frames: list[InitFrame], config: TrainConfig, *,
             optimizer: Adam | None = None, start_epoch: int = 0, on_epoch=None) -> list[dict]:
    """Regress the networks onto the stage-1 targets with Adam; returns per-epoch metrics."""
    opt = optimizer or Adam(config.stage1_lr, config.beta1, config.beta2, config.eps)
    history: list[dict] = []
    initial = None
    bad_streak = 0
    for epoch in range(start_epoch, config.stage1_epochs):
        t0 = time.perf_counter()
        lr = config.lr_at(1, epoch)
        # seeded per epoch so a resumed run shuffles exactly like an uninterrupted one
        order = np.random.default_rng([config.seed, 1, epoch]).permutation(len(frames))
        losses = []
        for start in range(0, len(order), config.stage1_batch):
            batch = order[start:start + config.stage1_batch]
            total: dict = {}
            for i in batch:
                loss, grads = _pretrain_frame(field_, frames[i])
                losses.append(loss)
                _accumulate(total, grads, 1.0 / len(batch))
            opt.step(field_.params, total, lr)
            field_.touch()
        mean_loss = float(np.mean(losses)) if losses else 0.0
        row = {"epoch": epoch, "stage": 1, "loss": mean_loss, "position": mean_loss, "normal": 0.0,
               "mean_vertex_error": float("nan"), "solver_iterations": 0,
               "wall_time": time.perf_counter() - t0}
        history.append(row)
        if on_epoch is not None:
            on_epoch(row, field_, opt)
        if initial is None:
            initial = max(mean_loss, 1e-300)
        bad_streak = bad_streak + 1 if mean_loss > DIVERGENCE_FACTOR * initial else 0
        if bad_streak >= DIVERGENCE_EPOCHS:
            raise TrainingError(f"stage-1 loss diverged ({mean_loss:.4g} vs initial {initial:.4g})",
                                {"history": history})
    return history


# --------------------------------------------------------------------------- stage 2

def _stage2_frame(field_, scene, target, config, u_init):
    z, lcache = latent_of(field_, target)
    frame = simulate(field_, scene, z, u_d=target.u_d, u_init=u_init, tol=config.solver_tol,
                     max_iters=config.max_iters)
    loss = surface_loss(frame.state.u_flat, scene, target, config.alpha)
    grads, _ = frame_gradients(field_, scene, frame, loss, lcache, config.jaw_gradients)
    return frame, loss, grads


_FRAME_ERRORS = (SolverError, AdjointError, ActuationError, FloatingPointError, GeometryError)


def train_stage2(field_: ActuationField, scenes, targets: list[TargetPose], config: TrainConfig, *,
                 optimizer: Adam | None = None, start_epoch: int = 0, on_epoch=None,
                 frozen=()) -> list[dict]:
    """Simulator-in-the-loop fine-tuning.

    ``scenes`` is one :class:`Scene` or a list; every target is trained on
    every scene (used for training across sample resolutions). Failed frames
    are skipped; an epoch with more than ``max_fail_fraction`` failures aborts.
    """
    scenes = [scenes] if isinstance(scenes, Scene) else list(scenes)
    items = [(s, t) for s in scenes for t in targets]
    history: list[dict] = []
    if not items:
        return history
    frozen = set(frozen)
    if field_.config.jaw and not config.jaw_gradients:
        frozen.add("jaw")
    opt = optimizer or Adam(config.stage2_lr, config.beta1, config.beta2, config.eps)
    warm: dict = {}
    for epoch in range(start_epoch, config.stage2_epochs):
        t0 = time.perf_counter()
        lr = config.lr_at(2, epoch)
        order = np.random.default_rng([config.seed, 2, epoch]).permutation(len(items))
        records, failures = [], []
        for start in range(0, len(order), config.stage2_batch):
            batch = order[start:start + config.stage2_batch]

            def run(i):
                scene, target = items[i]
                try:
                    return _stage2_frame(field_, scene, target, config, warm.get(i))
                except _FRAME_ERRORS as exc:
                    return exc

            if config.workers > 1 and len(batch) > 1:
                with ThreadPoolExecutor(max_workers=config.workers) as pool:
                    results = list(pool.map(run, batch))
            else:
                results = [run(i) for i in batch]
            total: dict = {}
            ok = [(i, r) for i, r in zip(batch, results) if not isinstance(r, Exception)]
            for i, r in zip(batch, results):
                if isinstance(r, Exception):
                    failures.append({"frame": int(i), "error": str(r),
                                     "report": getattr(getattr(r, "report", None), "to_dict", lambda: None)()})
                    log.warning("frame %d skipped: %s", i, r)
            for i, (frame, loss, grads) in ok:
                warm[i] = frame.state.u_flat.copy()
                records.append((loss, frame.report.iterations))
                _accumulate(total, grads, 1.0 / len(ok))
            if total:
                opt.step(field_.params, total, lr, frozen)
                field_.touch()
        row = {"epoch": epoch, "stage": 2,
               "loss": float(np.mean([r[0].loss for r in records])) if records else float("nan"),
               "position": float(np.mean([r[0].position for r in records])) if records else float("nan"),
               "normal": float(np.mean([r[0].normal for r in records])) if records else float("nan"),
               "mean_vertex_error": float(np.mean([r[0].mean_error for r in records])) if records else float("nan"),
               "solver_iterations": int(sum(r[1] for r in records)),
               "wall_time": time.perf_counter() - t0, "failures": failures}
        history.append(row)
        if on_epoch is not None:
            on_epoch(row, field_, opt)
        if len(failures) > config.max_fail_fraction * len(items):
            raise TrainingError(f"{len(failures)} of {len(items)} frames failed in epoch {epoch}",
                                {"history": history, "failures": failures})
    return history


# --------------------------------------------------------------------------- evaluation helpers

def evaluate(field_: ActuationField, scene: Scene, targets: list[TargetPose], config: TrainConfig,
             tol: float | None = None) -> list[LossResult]:
    out = []
    for t in targets:
        z, _ = latent_of(field_, t)
        frame = simulate(field_, scene, z, u_d=t.u_d, tol=config.solver_tol if tol is None else tol,
                         max_iters=config.max_iters)
        out.append(surface_loss(frame.state.u_flat, scene, t, config.alpha))
    return out


@dataclass
class FitResult:
    z: np.ndarray
    theta: np.ndarray | None
    losses: list
    frame: FrameResult | None
    loss: LossResult | None


def fit_new_pose(field_: ActuationField, scene: Scene, target: TargetPose, config: TrainConfig,
                 iters: int | None = None, z0=None) -> FitResult:
    """Optimize only the latent code against the surface loss; network weights stay fixed."""
    iters = config.fit_iters if iters is None else iters
    z = (latent_of(field_, target)[0] if z0 is None else np.asarray(z0, dtype=float)).copy()
    opt = Adam(config.fit_lr, config.beta1, config.beta2, config.eps)
    losses = []
    u_init = None
    frame = loss = None
    for it in range(iters + 1):
        frame = simulate(field_, scene, z, u_d=target.u_d, u_init=u_init, tol=config.solver_tol,
                         max_iters=config.max_iters)
        loss = surface_loss(frame.state.u_flat, scene, target, config.alpha)
        losses.append(loss.loss)
        if it == iters:
            break
        u_init = frame.state.u_flat.copy()
        _, grad_z = frame_gradients(field_, scene, frame, loss, None, True)
        holder = {"z": z}
        opt.step(holder, {"z": grad_z})
        z = holder["z"]
    return FitResult(z=z, theta=frame.theta, losses=losses, frame=frame, loss=loss)


def interpolate(field_: ActuationField, scene: Scene, z1, z2, steps: int, *, tol: float = 1e-6,
                max_iters: int = 300, u_d=None) -> list[np.ndarray]:
    """Surface vertices at ``steps + 1`` evenly spaced latent codes from ``z1`` to ``z2``.

    Every interpolant is solved from the rest pose, so the endpoints equal
    plain simulations of ``z1`` and ``z2``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    shapes = []
    for t in np.linspace(0.0, 1.0, steps + 1):
        z = (1.0 - t) * z1 + t * z2
        frame = simulate(field_, scene, z, u_d=u_d, tol=tol, max_iters=max_iters)
        shapes.append(scene.surface_vertices(frame.state.u_flat))
    return shapes


def write_metrics(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([r[c] for c in METRIC_COLUMNS])


def append_metrics(path, row: dict) -> None:
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(METRIC_COLUMNS)
        w.writerow([row[c] for c in METRIC_COLUMNS])


def save_config(path, config: TrainConfig) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2))
