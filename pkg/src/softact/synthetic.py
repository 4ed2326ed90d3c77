"""Synthetic scenes with known ground truth, used by the acceptance runs and the CLI demo project."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .energy import SampleActuation
from .field import apply_jaw, jaw_transform
from .geometry import BONE, JAW, HexMesh, SurfaceMesh, box_surface, grid_mesh
from .solver import solve_quasistatic
from .training import Scene, ShapePCA, TargetPose


@dataclass
class SyntheticSet:
    mesh: HexMesh
    surface: SurfaceMesh
    coeffs: np.ndarray            # (F, k) per-frame ground-truth coefficients
    targets: list
    pca: ShapePCA | None = None
    thetas: np.ndarray | None = None


def bar_actuation(points, c, length: float = 6.0) -> np.ndarray:
    """Smooth actuation field on the bar: two bending modes and a swelling mode."""
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    s = np.sin(np.pi * x / length)
    b = np.zeros((len(points), 6))
    b[:, 0] = 0.15 * s * (c[0] * (y - 1.0) + c[1] * (z - 1.0))
    b[:, 3] = 0.1 * c[2] * x / length
    b[:, 5] = 0.1 * c[2] * x / length
    return b


def bar_mesh(shape=(6, 2, 2), h: float = 1.0) -> tuple[HexMesh, SurfaceMesh]:
    mesh = grid_mesh(shape, h)
    mesh = mesh.tag_nodes(mesh.nodes[:, 0] <= 1e-9, BONE)
    hi = np.array(shape, dtype=float) * h
    return mesh, box_surface((0.0, 0.0, 0.0), hi, shape)


def targets_from_field(scene: Scene, field_fn, coeffs, *, tol: float = 1e-10, u_ds=None) -> list[TargetPose]:
    out = []
    for i, c in enumerate(coeffs):
        act = SampleActuation.from_params(field_fn(scene.samples.points, c))
        u_d = scene.dirichlet_values(None, None if u_ds is None else u_ds[i])
        state, _ = solve_quasistatic(scene.fact, act, u_d, tol=tol, max_iters=5000)
        verts = scene.surface_vertices(state.u_flat)
        out.append(TargetPose(verts, scene.surface.faces, index=i, name=f"frame{i:03d}",
                              u_d=None if u_ds is None else u_d))
    return out


def attach_descriptors(targets, rest, dim: int = 16) -> ShapePCA:
    pca = ShapePCA.fit(rest, [t.vertices for t in targets], dim)
    for t in targets:
        t.descriptor = pca.transform(t.vertices)
    return pca


def recovery_bar(n_frames: int = 8, n_per_element: int = 27, seed: int = 0) -> SyntheticSet:
    """Bar 6x2x2 fixed at x = 0, deformed by ``bar_actuation`` with random coefficients.

    Targets are simulated with ``n_per_element`` samples per element.
    """
    mesh, surface = bar_mesh()
    scene = Scene.build(mesh, surface, n_per_element)
    coeffs = np.random.default_rng(seed).uniform(-1.0, 1.0, (n_frames, 3))
    targets = targets_from_field(scene, bar_actuation, coeffs)
    pca = attach_descriptors(targets, surface.vertices)
    return SyntheticSet(mesh, surface, coeffs, targets, pca)


JAW_PIVOT = (0.0, 1.0, 1.0)


def jaw_block(thetas, n_per_element: int = 8, pivot=JAW_PIVOT) -> SyntheticSet:
    """Block 4x2x2 with a fixed "skull" face at x = 0 and a rigid "mandible" at x = 4.

    Each frame moves the mandible nodes by the transform of one row of ``thetas``.
    """
    shape = (4, 2, 2)
    mesh = grid_mesh(shape, 1.0)
    mesh = mesh.tag_nodes(mesh.nodes[:, 0] <= 1e-9, BONE)
    mesh = mesh.tag_nodes(mesh.nodes[:, 0] >= 4.0 - 1e-9, JAW)
    surface = box_surface((0.0, 0.0, 0.0), shape, shape)
    scene = Scene.build(mesh, surface, n_per_element)
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    u_ds = [scene.dirichlet_values(jaw_transform(th, pivot)) for th in thetas]
    targets = targets_from_field(scene, lambda p, c: np.zeros((len(p), 6)), np.zeros((len(thetas), 1)),
                                 u_ds=u_ds)
    for t in targets:
        t.u_d = None          # the jaw pose is what the network has to find
    return SyntheticSet(mesh, surface, np.zeros((len(thetas), 1)), targets, None, thetas)


def jaw_positions(mesh: HexMesh, theta, pivot=JAW_PIVOT) -> np.ndarray:
    return apply_jaw(jaw_transform(theta, pivot), mesh.nodes[mesh.tags == JAW])
