import numpy as np
import pytest

from softact.field import (ActuationField, FieldConfig, StaleCacheError, apply_jaw, apply_jaw_backward,
                           jaw_transform, load_checkpoint, positional_encoding, save_checkpoint)

from conftest import rel_err

BOX = dict(bbox_min=(0.0, 0.0, 0.0), bbox_max=(2.0, 1.0, 1.0))


def small(**kw):
    cfg = dict(width=8, n_layers=3, latent_dim=4, mod_hidden=6, jaw_hidden=5, enc_hidden=6,
               descriptor_dim=3, res_hidden=5, omega0=3.0, seed=3, **BOX)
    cfg.update(kw)
    return ActuationField.create(FieldConfig(**cfg))


def randomized(field, rng, scale=0.3):
    # zero-initialized output layers would hide gradients of everything upstream
    for k, v in field.params.items():
        field.params[k] = v + scale * rng.normal(size=v.shape)
    field.touch()
    return field


def test_modulation_identity_is_bitwise():
    f = small()
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (20, 3))
    z = rng.normal(size=4)
    a, _ = f.eval_actuation(x, z)
    b, _ = f.eval_actuation(x, z, modulate=False)
    assert all(np.array_equal(m, np.ones_like(m)) for m in f.modulations(z)[0])
    np.testing.assert_array_equal(a, b)


def test_fresh_field_outputs_identity_actuation():
    f = small(jaw=True)
    b, _ = f.eval_actuation(np.random.default_rng(1).uniform(0, 1, (5, 3)), np.ones(4))
    np.testing.assert_array_equal(b, 0.0)
    theta, T, _ = f.eval_jaw(np.ones(4))
    np.testing.assert_array_equal(theta, 0.0)
    np.testing.assert_array_equal(T, np.eye(4))


def test_init_is_deterministic():
    a, b = small(seed=9), small(seed=9)
    assert a.params.keys() == b.params.keys()
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    c = small(seed=10)
    assert not np.array_equal(a.params["siren.W0"], c.params["siren.W0"])


def test_siren_init_bounds():
    f = ActuationField.create(FieldConfig(width=64, **BOX))
    assert np.abs(f.params["siren.W0"]).max() <= 1 / 3
    assert np.abs(f.params["siren.W1"]).max() <= np.sqrt(6 / 64) / 30


def test_encoder_is_pure_and_checks_size():
    f = randomized(small(), np.random.default_rng(2))
    d = np.array([[0.1, -0.2, 0.3], [1.0, 0.0, -1.0]])
    z1, _ = f.encode(d)
    z2, _ = f.encode(d.copy())
    np.testing.assert_array_equal(z1, z2)
    assert z1.shape == (2, 4)
    with pytest.raises(ValueError):
        f.encode(np.zeros(5))


def test_zero_upstream_gradient_gives_zero_grads(rng):
    f = randomized(small(jaw=True), rng)
    z, lc = f.encode(rng.normal(size=3))
    _, ac = f.eval_actuation(rng.uniform(0, 1, (6, 3)), z)
    _, _, jc = f.eval_jaw(z)
    grads, gz = f.backward_field(ac, np.zeros((6, 6)), jc, np.zeros(5), lc)
    assert all(not np.any(g) for g in grads.values())
    assert not np.any(gz)


def test_stale_cache_detected(rng):
    f = small()
    _, cache = f.eval_actuation(rng.uniform(0, 1, (3, 3)), np.zeros(4))
    f.params["siren.bout"] += 1.0
    f.touch()
    with pytest.raises(StaleCacheError):
        f.actuation_backward(cache, np.ones((3, 6)))


def test_non_finite_parameter_reported():
    f = small()
    f.params["siren.b1"][0] = np.nan
    with pytest.raises(FloatingPointError, match="siren.b1"):
        f.eval_actuation(np.zeros((1, 3)), np.zeros(4))


def _objective(f, x, d, res, gb, gt):
    z, lc = f.encode(d)
    b, ac = f.eval_actuation(x, z[0], res)
    theta, _, jc = f.eval_jaw(z[0])
    return float(np.sum(gb * b) + np.sum(gt * theta)), (ac, jc, lc)


@pytest.mark.parametrize("mode", ["encoder", "autodecoder"])
def test_all_groups_match_fd(mode, rng):
    f = randomized(small(jaw=True, resolution_branch=True, res_reference=27.0, latent_mode=mode, n_frames=3),
                   rng)
    x = rng.uniform(0, 1, (7, 3)) * [2, 1, 1]
    gb, gt = rng.normal(size=(7, 6)), rng.normal(size=5)
    d = rng.normal(size=(1, 3))

    def obj(fld):
        if mode == "encoder":
            return _objective(fld, x, d, 8, gb, gt)
        z, lc = fld.lookup([1])
        b, ac = fld.eval_actuation(x, z[0], 8)
        theta, _, jc = fld.eval_jaw(z[0])
        return float(np.sum(gb * b) + np.sum(gt * theta)), (ac, jc, lc)

    _, (ac, jc, lc) = obj(f)
    grads, _ = f.backward_field(ac, gb, jc, gt, lc)
    assert set(grads) == set(f.params)
    eps = 1e-6
    for name, p in f.params.items():
        idx = [tuple(rng.integers(s) for s in p.shape) for _ in range(3)]
        fd, an = [], []
        for i in idx:
            old = p[i]
            p[i] = old + eps
            lp = obj(f)[0]
            p[i] = old - eps
            lm = obj(f)[0]
            p[i] = old
            fd.append((lp - lm) / (2 * eps))
            an.append(grads[name][i])
        # floor sized to the central-difference roundoff (|f| * 1e-16 / eps)
        assert rel_err(an, fd, floor=1e-3) < 1e-5, name


def test_positional_encoding():
    np.testing.assert_allclose(positional_encoding(0.5, 4), [1.0, 0.0, 0.0, -1.0], atol=1e-15)
    with pytest.raises(ValueError):
        FieldConfig(pe_size=3)


def test_jaw_transform_examples():
    p = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(jaw_transform(np.zeros(5), p), np.eye(4))
    T = jaw_transform([0, 0, 0.5, -1.0, 2.0], p)
    np.testing.assert_allclose(apply_jaw(T, [[0.0, 0.0, 0.0]]), [[0.5, -1.0, 2.0]])
    # the pivot is a fixed point of pure rotations
    T = jaw_transform([0.3, -0.2, 0, 0, 0], p)
    np.testing.assert_allclose(apply_jaw(T, p[None]), p[None], atol=1e-15)
    R = T[:3, :3]
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-15)
    # rotation about x first, then y
    T = jaw_transform([np.pi / 2, np.pi / 2, 0, 0, 0], np.zeros(3))
    np.testing.assert_allclose(apply_jaw(T, [[0.0, 1.0, 0.0]]), [[1.0, 0.0, 0.0]], atol=1e-15)


def test_jaw_backward_matches_fd(rng):
    theta = rng.normal(size=5) * 0.3
    p = rng.normal(size=3)
    x = rng.normal(size=(9, 3))
    g = rng.normal(size=(9, 3))
    an = apply_jaw_backward(theta, p, x, g)
    fd = np.zeros(5)
    for k in range(5):
        d = np.zeros(5)
        d[k] = 1e-6
        fd[k] = (np.sum(g * apply_jaw(jaw_transform(theta + d, p), x))
                 - np.sum(g * apply_jaw(jaw_transform(theta - d, p), x))) / 2e-6
    assert rel_err(an, fd) < 1e-8


def test_checkpoint_round_trip_is_bit_exact(tmp_path, rng):
    f = randomized(small(jaw=True, resolution_branch=True), rng, scale=1.0)
    opt = {"t": 7, "lr": 1e-3, "m": {k: rng.normal(size=v.shape) for k, v in f.params.items()},
           "v": {k: rng.uniform(size=v.shape) for k, v in f.params.items()}}
    save_checkpoint(tmp_path / "ck", f, opt, meta={"stage": 2, "epoch": 4})
    g, opt2, meta = load_checkpoint(tmp_path / "ck")
    assert g.config == f.config
    assert meta == {"stage": 2, "epoch": 4}
    for k in f.params:
        assert f.params[k].tobytes() == g.params[k].tobytes()
        assert opt["m"][k].tobytes() == opt2["m"][k].tobytes()
        assert opt["v"][k].tobytes() == opt2["v"][k].tobytes()
    assert opt2["t"] == 7
    x = rng.uniform(0, 1, (4, 3))
    z = rng.normal(size=4)
    assert f.eval_actuation(x, z, 8)[0].tobytes() == g.eval_actuation(x, z, 8)[0].tobytes()


def test_load_rejects_foreign_directory(tmp_path):
    (tmp_path / "manifest.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path)
