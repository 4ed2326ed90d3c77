import numpy as np
import pytest

from softact.energy import SampleActuation
from softact.geometry import (BONE, FREE, GeometryError, OpenSurfaceError, SurfaceMesh, box_surface,
                              build_samples, duplicate_cut_vertices, embed_surface, grid_mesh,
                              load_bundle, mapping_matrix, read_obj, save_bundle, shared_face,
                              sphere_surface, trilinear_weights, vertex_normals, vertex_normals_backward,
                              voxelize, winding_number, write_obj)
from softact.kernels import vec
from softact.solver import prefactor, solve_quasistatic

from conftest import fixed_bar


def test_unit_cube_voxel_counts():
    cube = box_surface((0, 0, 0), (1, 1, 1), (2, 2, 2))
    m = voxelize(cube, 0.5)
    assert (m.n_elements, m.n_nodes) == (8, 27)
    m = voxelize(cube, 1.0)
    assert (m.n_elements, m.n_nodes) == (1, 8)
    assert m.element_volume == 1.0


def _inside_by_parity(surface, points, direction=(0.5773, 0.5774, 0.5771)):
    """Ray-casting parity test (Moller-Trumbore), independent of the library's winding number."""
    d = np.asarray(direction) / np.linalg.norm(direction)
    tri = surface.vertices[surface.faces]
    e1, e2 = tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    p = np.cross(d, e2)
    det = np.sum(e1 * p, axis=1)
    out = np.zeros(len(points), dtype=bool)
    for k, o in enumerate(points):
        t0 = o - tri[:, 0]
        u = np.sum(t0 * p, axis=1) / det
        q = np.cross(t0, e1)
        v = (q @ d) / det
        t = np.sum(e2 * q, axis=1) / det
        hit = (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
        out[k] = np.count_nonzero(hit) % 2 == 1
    return out


def test_sphere_matches_brute_force_center_test():
    s = sphere_surface(1.0, 16, 32)
    h = 0.25
    m = voxelize(s, h, occupancy="center")
    g = np.arange(-1.25, 1.25, h) + h / 2
    centers = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
    assert m.n_elements == int(_inside_by_parity(s, centers).sum())
    # the default rule also keeps voxels the surface passes through
    assert voxelize(s, h).n_elements >= m.n_elements


def test_winding_number_simple():
    cube = box_surface((0, 0, 0), (1, 1, 1))
    w = winding_number(cube, np.array([[0.5, 0.5, 0.5], [2.0, 0.5, 0.5]]))
    np.testing.assert_allclose(w, [1.0, 0.0], atol=1e-9)


def test_voxelize_errors():
    cube = box_surface((0, 0, 0), (1, 1, 1))
    open_surf = SurfaceMesh(cube.vertices, cube.faces[:-1])
    with pytest.raises(OpenSurfaceError) as err:
        voxelize(open_surf, 0.5)
    assert len(err.value.edges) > 0
    with pytest.raises(GeometryError):
        voxelize(cube, -1.0)


def test_voxelize_translation_equivariant():
    s = sphere_surface(0.8, 10, 20)
    h = 0.25
    m0 = voxelize(s, h)
    shift = np.array([2 * h, -3 * h, h])
    m1 = voxelize(SurfaceMesh(s.vertices + shift, s.faces), h)
    a = np.sort(m0.nodes.round(9).view([("", float)] * 3), axis=0)
    b = np.sort((m1.nodes - shift).round(9).view([("", float)] * 3), axis=0)
    np.testing.assert_array_equal(a, b)


def test_surface_mesh_validation():
    with pytest.raises(GeometryError):
        SurfaceMesh(np.zeros((3, 3)), np.array([[0, 1, 2]]))
    with pytest.raises(GeometryError):
        SurfaceMesh(np.eye(3), np.array([[0, 1, 5]]))


def test_obj_round_trip(tmp_path):
    s = sphere_surface(1.0, 6, 8)
    write_obj(tmp_path / "s.obj", s.vertices, s.faces)
    t = read_obj(tmp_path / "s.obj")
    np.testing.assert_array_equal(t.vertices, s.vertices)
    np.testing.assert_array_equal(t.faces, s.faces)


def test_box_normals_point_outward():
    cube = box_surface((0, 0, 0), (1, 1, 1), (2, 2, 2))
    n = cube.normals
    d = cube.vertices - 0.5
    assert np.all(np.sum(n * d, axis=1) > 0)
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0)


def test_vertex_normals_backward_matches_fd(rng):
    s = sphere_surface(1.0, 6, 10)
    v = s.vertices + 0.05 * rng.normal(size=s.vertices.shape)
    g = rng.normal(size=v.shape)
    grad = vertex_normals_backward(v, s.faces, g)
    eps = 1e-6
    for _ in range(10):
        i, k = rng.integers(len(v)), rng.integers(3)
        vp, vm = v.copy(), v.copy()
        vp[i, k] += eps
        vm[i, k] -= eps
        fd = (np.sum(g * vertex_normals(vp, s.faces)) - np.sum(g * vertex_normals(vm, s.faces))) / (2 * eps)
        assert abs(fd - grad[i, k]) <= 1e-6 * max(1.0, abs(fd))


def test_cut_duplicates_shared_face():
    m = grid_mesh((2, 1, 1), 1.0)
    assert m.n_nodes == 12
    face = shared_face(m, 0, 1)
    cut = duplicate_cut_vertices(m, [face])
    assert cut.n_nodes == 16
    assert cut.n_elements == m.n_elements
    assert cut.element_volume == m.element_volume
    new = np.arange(12, 16)
    # copies keep rest positions and element 0 / 1 no longer share nodes
    assert set(cut.elements[0]).isdisjoint(cut.elements[1])
    for n in new:
        twin = np.flatnonzero(np.all(m.nodes == cut.nodes[n], axis=1))
        assert len(twin) == 1
    assert duplicate_cut_vertices(m, []) is m


def test_cut_errors():
    m = grid_mesh((2, 1, 1), 1.0)
    outer = [n for n in range(m.n_nodes) if m.nodes[n, 0] == 0.0]
    with pytest.raises(GeometryError):
        duplicate_cut_vertices(m, [outer])


def test_cut_bar_opens_under_actuation():
    m = grid_mesh((2, 1, 1), 1.0)
    m = duplicate_cut_vertices(m, [shared_face(m, 0, 1)])
    # fix the outer faces so each half is anchored
    m = m.tag_nodes((m.nodes[:, 0] <= 1e-9) | (m.nodes[:, 0] >= 2 - 1e-9), BONE)
    samples = build_samples(m, 8)
    fact = prefactor(m, samples)
    b = np.zeros((len(samples), 6))
    b[:, 0] = -0.3              # both halves shorten along x
    state, _ = solve_quasistatic(fact, SampleActuation.from_params(b), m.nodes[m.tags != FREE].reshape(-1),
                                 tol=1e-10, max_iters=2000)
    u = state.u
    for n in range(12, 16):
        twin = np.flatnonzero(np.all(m.nodes[:12] == m.nodes[n], axis=1))[0]
        assert np.linalg.norm(u[n] - u[twin]) > 0.1


def test_trilinear_weights_and_embedding():
    m = grid_mesh((2, 2, 2), 0.5)
    np.testing.assert_allclose(trilinear_weights(np.array([[0.5, 0.5, 0.5]])), np.full((1, 8), 0.125))
    w = trilinear_weights(np.array([[0.0, 0.0, 0.0]]))
    np.testing.assert_array_equal(w, np.eye(8)[:1])
    pts = np.random.default_rng(0).uniform(0.01, 0.99, (50, 3))
    emb = embed_surface(m, pts)
    np.testing.assert_allclose(emb.interpolate(m, m.nodes), pts, atol=1e-10)
    np.testing.assert_allclose(emb.weights.sum(axis=1), 1.0, atol=1e-15)
    assert np.all((emb.weights >= 0) & (emb.weights <= 1))


def test_embedding_clamps_and_rejects():
    m = grid_mesh((1, 1, 1), 1.0)
    emb = embed_surface(m, np.array([[1.2, 0.5, 0.5]]))
    np.testing.assert_allclose(emb.interpolate(m, m.nodes), [[1.0, 0.5, 0.5]])
    with pytest.raises(GeometryError):
        embed_surface(m, np.array([[2.0, 0.5, 0.5]]))


def test_samples_layout():
    m = grid_mesh((1, 1, 1), 2.0)
    s1 = build_samples(m, 1)
    np.testing.assert_allclose(s1.points, [[1.0, 1.0, 1.0]])
    s8 = build_samples(m, 8)
    off = np.sort(np.unique(np.round(s8.points - 1.0, 12)))
    np.testing.assert_allclose(off, [-0.5, 0.5])       # +-h/4
    np.testing.assert_allclose(s8.weights, m.element_volume / 8)
    with pytest.raises(GeometryError):
        build_samples(m, 4)


@pytest.mark.parametrize("n", [1, 8, 27])
def test_mapping_matrix_rest_and_fd(n, rng):
    m = grid_mesh((2, 1, 1), 0.7)
    s = build_samples(m, n)
    rest = m.nodes.reshape(-1)[m.element_dofs[s.element]]
    F = np.einsum("sij,sj->si", s.G, rest)
    assert np.abs(F - vec(np.eye(3))).max() < 1e-12
    # G u_e equals the FD gradient of the trilinear interpolant
    u = m.nodes + 0.1 * rng.normal(size=m.nodes.shape)
    e = s.element[0]
    ue = u[m.elements[e]]
    eps = 1e-6 * m.h
    J = np.zeros((3, 3))
    for b in range(3):
        d = np.zeros(3)
        d[b] = eps / m.h
        xp = trilinear_weights(s.local[:1] + d) @ ue
        xm = trilinear_weights(s.local[:1] - d) @ ue
        J[:, b] = (xp - xm)[0] / (2 * eps)
    np.testing.assert_allclose((s.G[0] @ ue.reshape(-1)).reshape(3, 3), J, atol=1e-6)
    np.testing.assert_array_equal(mapping_matrix(s.local[:1], m.h)[0], s.G[0])


def test_bundle_round_trip(tmp_path):
    m = fixed_bar((2, 1, 1))
    m = duplicate_cut_vertices(m, [shared_face(m, 0, 1)])
    s = build_samples(m, 8)
    surf = box_surface((0, 0, 0), (2, 1, 1), (2, 1, 1))
    emb = embed_surface(m, surf)
    save_bundle(tmp_path / "m.json", m, s, emb)
    m2, s2, e2 = load_bundle(tmp_path / "m.json")
    np.testing.assert_array_equal(m2.nodes, m.nodes)
    np.testing.assert_array_equal(m2.elements, m.elements)
    np.testing.assert_array_equal(m2.tags, m.tags)
    assert m2.cuts == m.cuts
    np.testing.assert_array_equal(s2.G, s.G)
    np.testing.assert_array_equal(s2.points, s.points)
    np.testing.assert_array_equal(e2.weights, emb.weights)
    text = (tmp_path / "m.json").read_text()
    assert "node_order" in text
