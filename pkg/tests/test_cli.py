import json

import numpy as np
import pytest

from softact.cli import main, make_demo_project
from softact.field import ActuationField, FieldConfig, save_checkpoint
from softact.geometry import box_surface, load_bundle, read_obj, write_obj


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    root = make_demo_project(tmp_path_factory.mktemp("demo"), "bar", n_frames=2)
    manifest = json.loads((root / "project.json").read_text())
    manifest["field"].update(width=8, latent_dim=4, mod_hidden=8, enc_hidden=8)
    manifest["train"].update(stage1_epochs=2, stage2_epochs=1)
    (root / "project.json").write_text(json.dumps(manifest))
    return root


def identity_checkpoint(root):
    cfg = FieldConfig.from_dict(json.loads((root / "project.json").read_text())["field"])
    save_checkpoint(root / "checkpoints" / "identity", ActuationField.create(cfg))
    return root / "checkpoints" / "identity"


def test_voxelize_cube(tmp_path, capsys):
    cube = box_surface((0, 0, 0), (1, 1, 1), (2, 2, 2))
    write_obj(tmp_path / "cube.obj", cube.vertices, cube.faces)
    code = main(["voxelize", "--surface", str(tmp_path / "cube.obj"), "--h", "0.5", "--out",
                 str(tmp_path / "m.json"), "--tag-box", "bone", "0", "0", "0", "0", "1", "1"])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["elements"] == 8 and summary["nodes"] == 27
    mesh, samples, _ = load_bundle(tmp_path / "m.json")
    assert np.count_nonzero(mesh.tags) == 9
    assert len(samples) == 64


def test_voxelize_with_cut(tmp_path):
    bar = box_surface((0, 0, 0), (2, 1, 1), (2, 1, 1))
    write_obj(tmp_path / "bar.obj", bar.vertices, bar.faces)
    quad = [[1, 0, 0], [1, 1, 0], [1, 1, 1], [1, 0, 1]]
    (tmp_path / "cut.json").write_text(json.dumps({"quads_xyz": [quad]}))
    code = main(["voxelize", "--surface", str(tmp_path / "bar.obj"), "--h", "1", "--out",
                 str(tmp_path / "m.json"), "--cut-spec", str(tmp_path / "cut.json")])
    assert code == 0
    mesh, _, _ = load_bundle(tmp_path / "m.json")
    assert mesh.n_nodes == 16


def test_missing_input_is_io_error(tmp_path):
    assert main(["voxelize", "--surface", str(tmp_path / "nope.obj"), "--h", "1", "--out",
                 str(tmp_path / "m.json")]) == 2
    assert main(["simulate", "--project", str(tmp_path), "--z", "0"]) == 2


def test_bad_cut_spec_is_config_error(tmp_path):
    cube = box_surface((0, 0, 0), (1, 1, 1))
    write_obj(tmp_path / "cube.obj", cube.vertices, cube.faces)
    (tmp_path / "cut.json").write_text("{}")
    assert main(["voxelize", "--surface", str(tmp_path / "cube.obj"), "--h", "1", "--out",
                 str(tmp_path / "m.json"), "--cut-spec", str(tmp_path / "cut.json")]) == 3


def test_simulate_identity_checkpoint_gives_rest_surface(demo, tmp_path):
    ckpt = identity_checkpoint(demo)
    out = tmp_path / "sim.obj"
    code = main(["simulate", "--project", str(demo), "--checkpoint", str(ckpt), "--z", "0,0,0,0",
                 "--out", str(out)])
    assert code == 0
    rest = read_obj(demo / "surface.obj").vertices
    np.testing.assert_allclose(read_obj(out).vertices, rest, atol=1e-12)
    report = json.loads(out.with_suffix(".report.json").read_text())
    assert report["converged"]


def test_simulate_against_target_writes_error_maps(demo, tmp_path):
    ckpt = identity_checkpoint(demo)
    target = sorted((demo / "targets").glob("*.obj"))[0]
    out = tmp_path / "sim.obj"
    assert main(["simulate", "--project", str(demo), "--checkpoint", str(ckpt), "--target", str(target),
                 "--resolution", "1", "--out", str(out)]) == 0
    assert out.with_suffix(".errors.csv").exists()
    assert out.with_suffix(".errors.obj").exists()


def test_simulate_bad_latent_is_config_error(demo):
    ckpt = identity_checkpoint(demo)
    assert main(["simulate", "--project", str(demo), "--checkpoint", str(ckpt), "--z", "0,0"]) == 3


def test_train_both_stages_then_interp_and_fit(demo, tmp_path, capsys):
    assert main(["train", "--project", str(demo), "--stage", "1"]) == 0
    assert (demo / "checkpoints" / "stage1" / "manifest.json").exists()
    assert main(["train", "--project", str(demo), "--stage", "2", "--stage2-epochs", "1"]) == 0
    lines = (demo / "checkpoints" / "metrics.csv").read_text().splitlines()
    assert lines[0].startswith("epoch,stage") and len(lines) == 4
    targets = sorted((demo / "targets").glob("*.obj"))
    capsys.readouterr()
    assert main(["interp", "--project", str(demo), "--from", str(targets[0]), "--to", str(targets[1]),
                 "--steps", "1", "--out", str(tmp_path / "interp")]) == 0
    assert json.loads(capsys.readouterr().out)["shapes"] == 2
    assert len(list((tmp_path / "interp").glob("*.obj"))) == 2
    assert main(["fit", "--project", str(demo), "--target", str(targets[0]), "--iters", "1",
                 "--out", str(tmp_path / "fit")]) == 0
    doc = json.loads((tmp_path / "fit.json").read_text())
    assert len(doc["z"]) == 4 and len(doc["losses"]) == 2


def test_config_mismatch_is_config_error(demo, tmp_path):
    cfg = FieldConfig(width=4, bbox_max=(6.0, 2.0, 2.0))
    save_checkpoint(tmp_path / "other", ActuationField.create(cfg))
    assert main(["simulate", "--project", str(demo), "--checkpoint", str(tmp_path / "other"),
                 "--z", "0,0,0,0"]) == 3


def test_unknown_training_option_is_config_error(demo):
    manifest = json.loads((demo / "project.json").read_text())
    bad = dict(manifest, train=dict(manifest["train"], bogus=1))
    (demo / "project.json").write_text(json.dumps(bad))
    try:
        assert main(["train", "--project", str(demo), "--stage", "1"]) == 3
    finally:
        (demo / "project.json").write_text(json.dumps(manifest))


def test_gradcheck_tiny_passes(tmp_path):
    out = tmp_path / "g.json"
    assert main(["gradcheck", "--scale", "tiny", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["passed"] and len(report["entries"]) == 12 + 6     # two samples x 6 params, 6 Dirichlet coords
    assert report["max_rel_error"] < 1e-3
