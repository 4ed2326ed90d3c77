"""Hexahedral simulation domain: voxelization, cuts, surface embedding, samples.

Corner ordering of every hex element is z-fastest lexicographic::

    corner c = 4*dx + 2*dy + dz,   (dx, dy, dz) in {0, 1}^3

so corner 0 is the element's min corner and corner 7 its max corner. The same
order is used for the mapping matrices ``G``, global assembly and the JSON
container.

Degrees of freedom are node-major: coordinate ``k`` of node ``n`` lives at
flat index ``3*n + k``.
"""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

CORNERS = np.array([[(c >> 2) & 1, (c >> 1) & 1, c & 1] for c in range(8)], dtype=np.int64)

FREE, BONE, JAW = 0, 1, 2
TAG_NAMES = ("free", "bone", "jaw")

# corner sets of the six element faces: x-, x+, y-, y+, z-, z+
_FACE_CORNERS = [np.flatnonzero(CORNERS[:, ax] == side) for ax in range(3) for side in (0, 1)]


class GeometryError(ValueError):
    pass


class OpenSurfaceError(GeometryError):
    def __init__(self, edges):
        self.edges = [tuple(int(v) for v in e) for e in edges]
        shown = ", ".join(str(e) for e in self.edges[:20])
        more = "" if len(self.edges) <= 20 else f" (+{len(self.edges) - 20} more)"
        super().__init__(f"surface is not closed; edges without exactly two faces: {shown}{more}")


# --------------------------------------------------------------------------- surfaces

def face_normals_raw(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    p0, p1, p2 = (vertices[faces[:, i]] for i in range(3))
    return np.cross(p1 - p0, p2 - p0)


def vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted unit vertex normals."""
    acc = np.zeros_like(vertices, dtype=float)
    c = face_normals_raw(vertices, faces)
    for i in range(3):
        np.add.at(acc, faces[:, i], c)
    norm = np.linalg.norm(acc, axis=1, keepdims=True)
    if np.any(norm == 0.0):
        bad = np.flatnonzero(norm[:, 0] == 0.0)
        raise GeometryError(f"vertices without a defined normal: {bad[:20].tolist()}")
    return acc / norm


def vertex_normals_backward(vertices: np.ndarray, faces: np.ndarray,
                            grad_normals: np.ndarray) -> np.ndarray:
    """Pull a gradient on unit vertex normals back onto vertex positions."""
    acc = np.zeros_like(vertices, dtype=float)
    c = face_normals_raw(vertices, faces)
    for i in range(3):
        np.add.at(acc, faces[:, i], c)
    norm = np.linalg.norm(acc, axis=1, keepdims=True)
    n = acc / norm
    g_acc = (grad_normals - n * np.sum(n * grad_normals, axis=1, keepdims=True)) / norm
    g_c = sum(g_acc[faces[:, i]] for i in range(3))
    p0, p1, p2 = (vertices[faces[:, i]] for i in range(3))
    # c = p0 x p1 + p1 x p2 + p2 x p0
    grad = np.zeros_like(vertices, dtype=float)
    np.add.at(grad, faces[:, 0], np.cross(p1 - p2, g_c))
    np.add.at(grad, faces[:, 1], np.cross(p2 - p0, g_c))
    np.add.at(grad, faces[:, 2], np.cross(p0 - p1, g_c))
    return grad


@dataclass(frozen=True)
class SurfaceMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        f = np.ascontiguousarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise GeometryError("vertices must be an (n, 3) array")
        if f.ndim != 2 or f.shape[1] != 3:
            raise GeometryError("faces must be an (m, 3) array of triangles")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise GeometryError("face index out of range")
        area = np.linalg.norm(face_normals_raw(v, f), axis=1)
        if np.any(area <= 0.0):
            raise GeometryError(f"degenerate faces: {np.flatnonzero(area <= 0.0)[:20].tolist()}")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def normals(self) -> np.ndarray:
        return vertex_normals(self.vertices, self.faces)

    def open_edges(self) -> np.ndarray:
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e = np.sort(e, axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq[counts != 2]

    def with_vertices(self, vertices: np.ndarray) -> "SurfaceMesh":
        return replace(self, vertices=np.asarray(vertices, dtype=float))


def read_obj(path) -> SurfaceMesh:
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    return SurfaceMesh(np.array(verts, dtype=float).reshape(-1, 3),
                       np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_obj(path, vertices: np.ndarray, faces: np.ndarray, colors: np.ndarray | None = None) -> None:
    lines = []
    for i, v in enumerate(np.asarray(vertices, dtype=float)):
        s = "v " + " ".join(format(x, ".17g") for x in v)
        if colors is not None:
            s += " " + " ".join(format(c, ".6g") for c in colors[i])
        lines.append(s)
    lines.extend("f " + " ".join(str(int(i) + 1) for i in f) for f in faces)
    Path(path).write_text("\n".join(lines) + "\n")


def box_surface(lo, hi, divisions=(1, 1, 1)) -> SurfaceMesh:
    """Closed, outward-oriented triangulated box with a regular vertex grid per face."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    div = np.asarray(divisions, dtype=int)
    index: dict[tuple, int] = {}
    verts: list[np.ndarray] = []

    def vid(ijk):
        key = tuple(int(x) for x in ijk)
        if key not in index:
            index[key] = len(verts)
            verts.append(lo + (hi - lo) * np.asarray(key) / div)
        return index[key]

    faces = []
    for ax in range(3):
        u, v = (ax + 1) % 3, (ax + 2) % 3
        for side in (0, 1):
            for a in range(div[u]):
                for b in range(div[v]):
                    quad = []
                    for da, db in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        ijk = [0, 0, 0]
                        ijk[ax] = side * div[ax]
                        ijk[u] = a + da
                        ijk[v] = b + db
                        quad.append(vid(ijk))
                    if side == 0:
                        quad = quad[::-1]
                    faces.append([quad[0], quad[1], quad[2]])
                    faces.append([quad[0], quad[2], quad[3]])
    return SurfaceMesh(np.array(verts), np.array(faces))


def sphere_surface(radius: float = 1.0, n_lat: int = 12, n_lon: int = 24, center=(0.0, 0.0, 0.0)) -> SurfaceMesh:
    """Closed UV sphere."""
    center = np.asarray(center, dtype=float)
    verts = [center + [0.0, 0.0, radius]]
    for i in range(1, n_lat):
        th = math.pi * i / n_lat
        for j in range(n_lon):
            ph = 2.0 * math.pi * j / n_lon
            verts.append(center + radius * np.array([math.sin(th) * math.cos(ph),
                                                     math.sin(th) * math.sin(ph),
                                                     math.cos(th)]))
    verts.append(center + [0.0, 0.0, -radius])
    south = len(verts) - 1
    faces = []
    ring = lambda i, j: 1 + (i - 1) * n_lon + (j % n_lon)  # noqa: E731
    for j in range(n_lon):
        faces.append([0, ring(1, j), ring(1, j + 1)])
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append([a, c, d])
            faces.append([a, d, b])
    for j in range(n_lon):
        faces.append([south, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)])
    return SurfaceMesh(np.array(verts), np.array(faces))


def winding_number(surface: SurfaceMesh, points: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Generalized winding number of a closed triangle mesh at each point."""
    points = np.asarray(points, dtype=float)
    tri = surface.vertices[surface.faces]
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        p = points[s:s + chunk]
        a = tri[None, :, 0] - p[:, None]
        b = tri[None, :, 1] - p[:, None]
        c = tri[None, :, 2] - p[:, None]
        la, lb, lc = (np.linalg.norm(x, axis=-1) for x in (a, b, c))
        num = np.einsum("...i,...i", a, np.cross(b, c))
        den = (la * lb * lc + np.einsum("...i,...i", a, b) * lc
               + np.einsum("...i,...i", b, c) * la + np.einsum("...i,...i", c, a) * lb)
        out[s:s + chunk] = np.sum(2.0 * np.arctan2(num, den), axis=1) / (4.0 * math.pi)
    return out


def _triangle_hits_boxes(tri: np.ndarray, centers: np.ndarray, half: float) -> np.ndarray:
    """Separating-axis test of one triangle against axis-aligned cubes.

    Touching counts as separated, so faces lying on voxel walls do not claim
    the neighbouring voxel.
    """
    e = np.array([tri[1] - tri[0], tri[2] - tri[1], tri[0] - tri[2]])
    axes = [np.eye(3)[k] for k in range(3)] + [np.cross(e[0], e[1])]
    for k in range(3):
        for j in range(3):
            axes.append(np.cross(np.eye(3)[k], e[j]))
    axes = np.array(axes)
    lens = np.linalg.norm(axes, axis=1)
    axes = axes[lens > 1e-14 * max(1.0, lens.max())]
    rel = tri[None, :, :] - centers[:, None, :]               # (K, 3, 3)
    proj = np.einsum("kvd,ad->kav", rel, axes)                  # (K, A, 3)
    r = half * np.abs(axes).sum(axis=1)                         # (A,)
    tol = 1e-9 * half * np.abs(axes).sum(axis=1)
    sep = (proj.min(axis=2) >= r - tol) | (proj.max(axis=2) <= -r + tol)
    return ~np.any(sep, axis=1)


# --------------------------------------------------------------------------- hex mesh

@dataclass(frozen=True)
class HexMesh:
    """Voxel hex mesh. ``voxels[e]`` is the integer grid cell of element ``e``;
    its min corner sits at ``origin + h * voxels[e]``."""

    nodes: np.ndarray
    elements: np.ndarray
    h: float
    voxels: np.ndarray
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tags: np.ndarray | None = None
    cuts: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "elements", np.asarray(self.elements, dtype=np.int64).reshape(-1, 8))
        object.__setattr__(self, "voxels", np.asarray(self.voxels, dtype=np.int64).reshape(-1, 3))
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "h", float(self.h))
        tags = np.zeros(len(self.nodes), dtype=np.int8) if self.tags is None else np.asarray(self.tags, dtype=np.int8)
        if tags.shape != (len(self.nodes),):
            raise GeometryError("one tag per node required")
        object.__setattr__(self, "tags", tags)
        for arr in (self.nodes, self.elements, self.voxels, self.tags):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def element_volume(self) -> float:
        return self.h ** 3

    @property
    def element_dofs(self) -> np.ndarray:
        return (3 * self.elements[:, :, None] + np.arange(3)).reshape(-1, 24)

    def with_tags(self, tags: np.ndarray) -> "HexMesh":
        return replace(self, tags=np.asarray(tags, dtype=np.int8))

    def tag_nodes(self, mask: np.ndarray, tag: int) -> "HexMesh":
        tags = self.tags.copy()
        tags[np.asarray(mask)] = tag
        return self.with_tags(tags)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.nodes.min(axis=0), self.nodes.max(axis=0)


def grid_mesh(shape, h: float = 1.0, origin=(0.0, 0.0, 0.0)) -> HexMesh:
    """Regular block of ``shape = (nx, ny, nz)`` elements."""
    nx, ny, nz = shape
    vox = np.array([(i, j, k) for i in range(nx) for j in range(ny) for k in range(nz)], dtype=np.int64)
    return _mesh_from_voxels(vox, h, np.asarray(origin, dtype=float))


def _mesh_from_voxels(vox: np.ndarray, h: float, origin: np.ndarray) -> HexMesh:
    corners = (vox[:, None, :] + CORNERS[None]).reshape(-1, 3)
    uniq, inv = np.unique(corners, axis=0, return_inverse=True)
    elements = inv.reshape(-1, 8)
    nodes = origin + h * uniq.astype(float)
    return HexMesh(nodes=nodes, elements=elements, h=h, voxels=vox, origin=origin)


def voxelize(surface: SurfaceMesh, h: float, occupancy: str = "center_or_intersect") -> HexMesh:
    """Voxelize a closed surface on the grid of integer multiples of ``h``.

    A voxel is occupied when its center is inside the surface (winding number
    above one half) or, for the default rule, when any triangle intersects
    the voxel's open interior. ``occupancy="center"`` uses the center test
    alone.
    """
    if not h > 0:
        raise GeometryError("voxel size must be positive")
    if occupancy not in ("center", "center_or_intersect"):
        raise GeometryError(f"unknown occupancy rule {occupancy!r}")
    open_edges = surface.open_edges()
    if len(open_edges):
        raise OpenSurfaceError(open_edges)
    lo = np.floor(surface.vertices.min(axis=0) / h).astype(np.int64) - 1
    hi = np.ceil(surface.vertices.max(axis=0) / h).astype(np.int64) + 1
    ranges = [np.arange(lo[d], hi[d]) for d in range(3)]
    grid = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, 3)
    centers = h * (grid + 0.5)
    occupied = np.abs(winding_number(surface, centers)) > 0.5
    if occupancy == "center_or_intersect":
        dims = hi - lo
        flat = occupied.reshape(tuple(dims))
        tris = surface.vertices[surface.faces]
        for tri in tris:
            a = np.clip(np.floor(tri.min(axis=0) / h).astype(np.int64) - lo, 0, dims - 1)
            b = np.clip(np.floor(tri.max(axis=0) / h).astype(np.int64) - lo + 1, 1, dims)
            sub = np.stack(np.meshgrid(*[np.arange(a[d], b[d]) for d in range(3)], indexing="ij"),
                           axis=-1).reshape(-1, 3)
            hit = _triangle_hits_boxes(tri, h * (sub + lo + 0.5), 0.5 * h)
            if np.any(hit):
                s = sub[hit]
                flat[s[:, 0], s[:, 1], s[:, 2]] = True
        occupied = flat.reshape(-1)
    vox = grid[occupied]
    if len(vox) == 0:
        raise GeometryError("voxelization produced no occupied voxels")
    return _mesh_from_voxels(vox, h, np.zeros(3))


def _element_faces(mesh: HexMesh):
    faces = defaultdict(list)
    for e, nodes in enumerate(mesh.elements):
        for fc in _FACE_CORNERS:
            faces[frozenset(int(n) for n in nodes[fc])].append(e)
    return faces


def duplicate_cut_vertices(mesh: HexMesh, cut) -> HexMesh:
    """Split the mesh along a seam of element faces.

    ``cut`` is a sequence of quad faces, each given by its four node indices.
    Around every seam node the incident elements are grouped by face
    adjacency that does not cross the seam; each group beyond the first gets
    its own copy of the node.
    """
    cut = [tuple(int(n) for n in quad) for quad in cut]
    if not cut:
        return mesh
    faces = _element_faces(mesh)
    seam = set()
    for quad in cut:
        key = frozenset(quad)
        if len(key) != 4 or len(faces.get(key, ())) != 2:
            raise GeometryError(f"cut face {quad} is not shared by exactly two elements")
        seam.add(key)
    seam_nodes = sorted({n for quad in cut for n in quad})

    incident = defaultdict(list)
    for e, nodes in enumerate(mesh.elements):
        for n in nodes:
            incident[int(n)].append(e)

    elements = mesh.elements.copy()
    nodes = list(mesh.nodes)
    tags = list(mesh.tags)
    split_any = False
    for n in seam_nodes:
        elems = incident[n]
        parent = {e: e for e in elems}

        def find(e):
            while parent[e] != e:
                parent[e] = parent[parent[e]]
                e = parent[e]
            return e

        for key, owners in faces.items():
            if n in key and key not in seam and len(owners) == 2:
                a, b = find(owners[0]), find(owners[1])
                if a != b:
                    parent[max(a, b)] = min(a, b)
        groups = defaultdict(list)
        for e in elems:
            groups[find(e)].append(e)
        if len(groups) < 2:
            continue
        split_any = True
        for root in sorted(groups)[1:]:
            new_id = len(nodes)
            nodes.append(mesh.nodes[n].copy())
            tags.append(mesh.tags[n])
            for e in groups[root]:
                elements[e][elements[e] == n] = new_id
    if not split_any:
        raise GeometryError("cut does not separate any element neighbourhood")
    return replace(mesh, nodes=np.array(nodes), elements=elements, tags=np.array(tags, dtype=np.int8),
                   cuts=tuple(mesh.cuts) + tuple(cut))


def shared_face(mesh: HexMesh, e0: int, e1: int) -> tuple[int, ...]:
    """Node indices of the face shared by two elements (helper for building cuts)."""
    common = set(mesh.elements[e0].tolist()) & set(mesh.elements[e1].tolist())
    if len(common) != 4:
        raise GeometryError(f"elements {e0} and {e1} do not share a face")
    return tuple(n for n in mesh.elements[e0].tolist() if n in common)


# --------------------------------------------------------------------------- shape functions

def trilinear_weights(local: np.ndarray) -> np.ndarray:
    """Trilinear weights (..., 8) at local coordinates in [0, 1]^3."""
    local = np.asarray(local, dtype=float)
    w = np.ones(local.shape[:-1] + (8,))
    for d in range(3):
        x = local[..., d:d + 1]
        w = w * np.where(CORNERS[:, d] == 1, x, 1.0 - x)
    return w


def trilinear_gradients(local: np.ndarray, h: float) -> np.ndarray:
    """Spatial gradients (..., 8, 3) of the trilinear weights."""
    local = np.asarray(local, dtype=float)
    fac = [np.where(CORNERS[:, d] == 1, local[..., d:d + 1], 1.0 - local[..., d:d + 1]) for d in range(3)]
    dfac = np.where(CORNERS == 1, 1.0, -1.0) / h
    grads = np.empty(local.shape[:-1] + (8, 3))
    grads[..., 0] = dfac[:, 0] * fac[1] * fac[2]
    grads[..., 1] = fac[0] * dfac[:, 1] * fac[2]
    grads[..., 2] = fac[0] * fac[1] * dfac[:, 2]
    return grads


def mapping_matrix(local: np.ndarray, h: float) -> np.ndarray:
    """``G`` (..., 9, 24) with ``vec(F) = G @ u_e``."""
    dw = trilinear_gradients(local, h)
    G = np.zeros(dw.shape[:-2] + (9, 24))
    for a in range(3):
        for b in range(3):
            G[..., 3 * a + b, a::3] = dw[..., :, b]
    return G


# --------------------------------------------------------------------------- embedding

@dataclass(frozen=True)
class EmbeddingMap:
    element: np.ndarray   # (V,)
    local: np.ndarray     # (V, 3)
    weights: np.ndarray   # (V, 8)

    def matrix(self, mesh: HexMesh) -> sp.csr_matrix:
        """Sparse (V, n_nodes) interpolation matrix."""
        V = len(self.element)
        rows = np.repeat(np.arange(V), 8)
        cols = mesh.elements[self.element].reshape(-1)
        return sp.csr_matrix((self.weights.reshape(-1), (rows, cols)), shape=(V, mesh.n_nodes))

    def interpolate(self, mesh: HexMesh, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u).reshape(-1, 3)
        return np.einsum("vc,vcd->vd", self.weights, u[mesh.elements[self.element]])


def embed_surface(mesh: HexMesh, surface: SurfaceMesh | np.ndarray) -> EmbeddingMap:
    """Attach surface vertices to host elements with trilinear weights.

    Vertices outside the voxel domain but within ``h/2`` of an element are
    clamped onto it; anything farther is an error.
    """
    pts = surface.vertices if isinstance(surface, SurfaceMesh) else np.asarray(surface, dtype=float)
    lookup = {tuple(v): e for e, v in enumerate(mesh.voxels.tolist())}
    q = (pts - mesh.origin) / mesh.h
    base = np.floor(q).astype(np.int64)
    best_e = np.full(len(pts), -1)
    best_d = np.full(len(pts), np.inf)
    offsets = [(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)]
    offsets.sort(key=lambda o: (abs(o[0]) + abs(o[1]) + abs(o[2]), o))
    for off in offsets:
        cand = base + off
        eid = np.array([lookup.get(tuple(c), -1) for c in cand.tolist()])
        has = eid >= 0
        if not np.any(has):
            continue
        # distance (in units of h) from the point to the candidate cell
        gap = np.maximum(np.maximum(cand - q, q - (cand + 1)), 0.0)
        d = np.linalg.norm(gap, axis=1)
        better = has & (d < best_d - 1e-12)
        best_e[better] = eid[better]
        best_d[better] = d[better]
    bad = np.flatnonzero(best_d > 0.5 + 1e-9)
    if len(bad):
        raise GeometryError(f"surface vertices farther than h/2 from the hex domain: {bad[:20].tolist()}")
    local = np.clip(q - mesh.voxels[best_e], 0.0, 1.0)
    return EmbeddingMap(element=best_e, local=local, weights=trilinear_weights(local))


# --------------------------------------------------------------------------- samples

@dataclass(frozen=True)
class SampleSet:
    points: np.ndarray    # (S, 3) material coordinates
    element: np.ndarray   # (S,)
    local: np.ndarray     # (S, 3)
    G: np.ndarray         # (S, 9, 24)
    weights: np.ndarray   # (S,) V_e / N
    n_per_element: int

    def __len__(self) -> int:
        return len(self.element)


def build_samples(mesh: HexMesh, n_per_element: int) -> SampleSet:
    """Place ``N = k^3`` points per element at the centers of a k x k x k subdivision."""
    k = round(n_per_element ** (1.0 / 3.0))
    if n_per_element < 1 or k ** 3 != n_per_element:
        raise GeometryError(f"samples per element must be a perfect cube, got {n_per_element}")
    t = (np.arange(k) + 0.5) / k
    local1 = np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1).reshape(-1, 3)
    E = mesh.n_elements
    local = np.tile(local1, (E, 1))
    element = np.repeat(np.arange(E), n_per_element)
    points = mesh.origin + mesh.h * (mesh.voxels[element] + local)
    G1 = mapping_matrix(local1, mesh.h)
    G = np.tile(G1, (E, 1, 1))
    weights = np.full(E * n_per_element, mesh.element_volume / n_per_element)
    return SampleSet(points=points, element=element, local=local, G=G, weights=weights,
                     n_per_element=n_per_element)


def samples_from_local(mesh: HexMesh, element: np.ndarray, local: np.ndarray, n_per_element: int) -> SampleSet:
    element = np.asarray(element, dtype=np.int64)
    local = np.asarray(local, dtype=float)
    return SampleSet(points=mesh.origin + mesh.h * (mesh.voxels[element] + local), element=element,
                     local=local, G=mapping_matrix(local, mesh.h),
                     weights=np.full(len(element), mesh.element_volume / n_per_element),
                     n_per_element=n_per_element)


# --------------------------------------------------------------------------- JSON container

def _json_text(obj, indent: int = 0) -> str:
    pad = " " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}  {json.dumps(str(k))}: {_json_text(v, indent + 2)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if obj and all(isinstance(x, (list, tuple, np.ndarray)) for x in obj):
            inner = [pad + "  " + _json_text(x, indent + 2) for x in obj]
            return "[\n" + ",\n".join(inner) + "\n" + pad + "]"
        return "[" + ", ".join(_json_text(x, indent) for x in obj) + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        if not math.isfinite(obj):
            raise ValueError("non-finite value cannot be serialized")
        return format(float(obj), ".17g")
    if obj is None:
        return "null"
    return json.dumps(obj)


NODE_ORDER_DOC = "corner c = 4*dx + 2*dy + dz (z fastest); dofs node-major (3*n + k)"


def save_bundle(path, mesh: HexMesh, samples: SampleSet | None = None,
                embedding: EmbeddingMap | None = None) -> None:
    """Write mesh (+ optional samples and embedding) as a JSON container."""
    doc = {
        "format": "softact-hexmesh",
        "version": 1,
        "node_order": NODE_ORDER_DOC,
        "h": mesh.h,
        "origin": mesh.origin,
        "nodes": mesh.nodes,
        "elements": mesh.elements,
        "voxels": mesh.voxels,
        "dirichlet_tags": [TAG_NAMES[t] for t in mesh.tags],
        "cuts": [list(c) for c in mesh.cuts],
    }
    if samples is not None:
        doc["samples"] = {"n_per_element": samples.n_per_element, "element": samples.element,
                          "local": samples.local, "weight": samples.weights}
    if embedding is not None:
        doc["embedding"] = {"element": embedding.element, "local": embedding.local,
                            "weights": embedding.weights}
    Path(path).write_text(_json_text(doc) + "\n")


def load_bundle(path):
    """Inverse of :func:`save_bundle`; returns ``(mesh, samples, embedding)``."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "softact-hexmesh":
        raise GeometryError(f"{path} is not a hex mesh container")
    tags = np.array([TAG_NAMES.index(t) for t in doc["dirichlet_tags"]], dtype=np.int8)
    mesh = HexMesh(nodes=np.array(doc["nodes"], dtype=float), elements=np.array(doc["elements"]),
                   h=doc["h"], voxels=np.array(doc["voxels"]), origin=np.array(doc["origin"], dtype=float),
                   tags=tags, cuts=tuple(tuple(c) for c in doc["cuts"]))
    samples = embedding = None
    if "samples" in doc:
        s = doc["samples"]
        samples = samples_from_local(mesh, np.array(s["element"]), np.array(s["local"], dtype=float).reshape(-1, 3),
                                     s["n_per_element"])
    if "embedding" in doc:
        e = doc["embedding"]
        embedding = EmbeddingMap(element=np.array(e["element"], dtype=np.int64),
                                 local=np.array(e["local"], dtype=float).reshape(-1, 3),
                                 weights=np.array(e["weights"], dtype=float).reshape(-1, 8))
    return mesh, samples, embedding
