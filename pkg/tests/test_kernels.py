import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from softact.kernels import (DA_DB, actuation_from_params, hat_F, hat_R, hat_sym, params_from_actuation,
                             polar_decompose, rotation_gradient, unvec, vec)

from conftest import random_rotation, rot_z


def fd_rotation_jacobian(M, eps=1e-6):
    J = np.zeros((9, 9))
    for k in range(9):
        d = np.zeros(9)
        d[k] = eps
        Rp = polar_decompose(M + unvec(d)).R
        Rm = polar_decompose(M - unvec(d)).R
        J[:, k] = vec(Rp - Rm) / (2 * eps)
    return J


def test_vec_is_row_major():
    M = np.arange(9.0).reshape(3, 3)
    assert vec(M)[3 * 1 + 2] == M[1, 2]
    np.testing.assert_array_equal(unvec(vec(M)), M)


def test_hat_of_identity_is_identity():
    np.testing.assert_array_equal(hat_sym(np.eye(3)), np.eye(9))


def test_hat_identities(rng):
    for _ in range(50):
        R = random_rotation(rng)
        A = rng.normal(size=(3, 3))
        A = A + A.T
        F = rng.normal(size=(3, 3))
        assert np.abs(vec(R @ A) - hat_sym(A) @ vec(R)).max() < 1e-13
        assert np.abs(vec(R @ A) - hat_R(R) @ vec(A)).max() < 1e-13
        assert np.abs(vec(F @ A) - hat_F(F) @ vec(A)).max() < 1e-13
        assert np.abs(vec(F @ A) - hat_sym(A) @ vec(F)).max() < 1e-13


def test_hat_identities_batched(rng):
    A = rng.normal(size=(5, 3, 3))
    F = rng.normal(size=(5, 3, 3))
    np.testing.assert_allclose(np.einsum("sij,sj->si", hat_F(F), vec(A)), vec(F @ A), atol=1e-13)


def test_actuation_layout():
    np.testing.assert_array_equal(actuation_from_params(np.zeros(6)), np.eye(3))
    np.testing.assert_array_equal(actuation_from_params([0.1, 0, 0, 0, 0, 0]), np.diag([1.1, 1.0, 1.0]))
    A = actuation_from_params([0, 0.2, 0, 0, 0, 0])
    assert A[0, 1] == A[1, 0] == 0.2
    b = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    A = actuation_from_params(b)
    np.testing.assert_allclose(A, [[1.1, 0.2, 0.3], [0.2, 1.4, 0.5], [0.3, 0.5, 1.6]])
    np.testing.assert_allclose(params_from_actuation(A), b)


def test_actuation_linear_and_symmetric(rng):
    b1, b2 = rng.normal(size=(2, 4, 6))
    A = actuation_from_params(b1 + b2)
    np.testing.assert_allclose(A - np.eye(3), (actuation_from_params(b1) - np.eye(3))
                               + (actuation_from_params(b2) - np.eye(3)), atol=1e-14)
    np.testing.assert_array_equal(A, np.swapaxes(A, -1, -2))
    np.testing.assert_allclose(vec(A - np.eye(3)), (b1 + b2) @ DA_DB.T, atol=1e-14)


def test_actuation_rejects_wrong_size():
    with pytest.raises(ValueError):
        actuation_from_params(np.zeros(5))


def test_polar_examples():
    f = polar_decompose(np.eye(3))
    np.testing.assert_allclose(f.R, np.eye(3), atol=1e-14)
    np.testing.assert_allclose(f.S, np.eye(3), atol=1e-14)
    f = polar_decompose(np.diag([2.0, 1.0, 1.0]))
    np.testing.assert_allclose(f.R, np.eye(3), atol=1e-14)
    np.testing.assert_allclose(f.S, np.diag([2.0, 1.0, 1.0]), atol=1e-14)
    f = polar_decompose(rot_z(0.3))
    np.testing.assert_allclose(f.R, rot_z(0.3), atol=1e-14)
    np.testing.assert_allclose(f.S, np.eye(3), atol=1e-14)


def test_polar_reflection_fix():
    M = np.diag([2.0, 1.0, -0.5])
    f = polar_decompose(M)
    assert np.linalg.det(f.R) == pytest.approx(1.0)
    np.testing.assert_allclose(f.R @ f.S, M, atol=1e-14)
    assert f.sigma[2] < 0


def test_polar_rank_deficient_gives_rotation():
    f = polar_decompose(np.diag([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(f.R.T @ f.R, np.eye(3), atol=1e-12)
    assert np.linalg.det(f.R) == pytest.approx(1.0)


def test_polar_invariants_random(rng):
    M = rng.normal(size=(10000, 3, 3))
    M = M[np.linalg.det(M) > 0.1]
    f = polar_decompose(M)
    I = np.eye(3)
    assert np.abs(np.swapaxes(f.R, -1, -2) @ f.R - I).max() < 1e-10
    np.testing.assert_allclose(np.linalg.det(f.R), 1.0, atol=1e-10)
    assert np.abs(f.S - np.swapaxes(f.S, -1, -2)).max() < 1e-10
    rec = np.linalg.norm(f.R @ f.S - M, axis=(1, 2)) / np.linalg.norm(M, axis=(1, 2))
    assert rec.max() < 1e-8
    usv = (f.U * f.sigma[:, None, :]) @ np.swapaxes(f.V, -1, -2)
    assert (np.linalg.norm(usv - M, axis=(1, 2)) / np.linalg.norm(M, axis=(1, 2))).max() < 1e-8
    assert np.all(np.diff(np.abs(f.sigma[:, :2]), axis=1) <= 0)


def test_polar_rejects_nan():
    with pytest.raises(ValueError):
        polar_decompose(np.full((3, 3), np.nan))


def test_rotation_gradient_identity():
    rg = rotation_gradient(polar_decompose(np.eye(3)))
    np.testing.assert_allclose(rg.lam, [1.0, 1.0, 1.0])
    assert rg.clamped == 0


def test_rotation_gradient_matches_fd(rng):
    for _ in range(30):
        M = rng.normal(size=(3, 3))
        if np.linalg.det(M) < 0:
            M[:, 0] *= -1
        f = polar_decompose(M)
        s = f.sigma
        if min(s[0] + s[1], s[1] + s[2], s[0] + s[2]) < 0.1:
            continue
        J = fd_rotation_jacobian(M)
        H = rotation_gradient(f).H
        assert np.linalg.norm(H - J) / np.linalg.norm(J) < 1e-4


def test_rotation_gradient_symmetric_and_eigen_form(rng):
    f = polar_decompose(rng.normal(size=(20, 3, 3)))
    rg = rotation_gradient(f)
    assert np.abs(rg.H - np.swapaxes(rg.H, -1, -2)).max() < 1e-12
    H2 = sum(rg.lam[:, i, None, None] * rg.q[:, i, :, None] * rg.q[:, i, None, :] for i in range(3))
    np.testing.assert_allclose(rg.H, H2, atol=1e-14)
    # each q_i has unit norm and they are orthogonal
    G = np.einsum("sia,sja->sij", rg.q, rg.q)
    np.testing.assert_allclose(G, np.broadcast_to(np.eye(3), G.shape), atol=1e-12)


def test_rotation_gradient_clamps_degenerate_pairs():
    f = polar_decompose(np.diag([1.0, 1e-9, -1e-9]))
    rg = rotation_gradient(f)
    assert rg.clamped >= 1
    assert np.all(np.isfinite(rg.H))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 3), elements=st.floats(-3, 3)))
def test_polar_property(M):
    f = polar_decompose(M)
    np.testing.assert_allclose(f.R.T @ f.R, np.eye(3), atol=1e-9)
    assert np.linalg.det(f.R) == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(f.R @ f.S, M, atol=1e-9 * max(1.0, np.abs(M).max()))
