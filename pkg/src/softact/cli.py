"""Command-line entry point.

Exit codes: 0 success, 2 I/O error, 3 configuration error, 4 numerical failure.
The project directory defaults to ``$SOFTACT_PROJECT``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import synthetic
from .adjoint import AdjointError, backward
from .energy import ActuationError, SampleActuation
from .field import ActuationField, FieldConfig, StaleCacheError, load_checkpoint, save_checkpoint
from .geometry import (GeometryError, TAG_NAMES, duplicate_cut_vertices, embed_surface, build_samples,
                       load_bundle, read_obj, save_bundle, voxelize, write_obj, grid_mesh, box_surface, BONE)
from .solver import SolverError, solve_quasistatic
from .training import (Adam, Scene, ShapePCA, TargetPose, TrainConfig, TrainingError, append_metrics,
                       fit_new_pose, interpolate, latent_of, pretrain, simulate, stage1_init, surface_loss,
                       train_stage2)

log = logging.getLogger("softact")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3, 4
MANIFEST = "project.json"


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


# --------------------------------------------------------------------------- project

class Project:
    def __init__(self, root):
        self.root = Path(root)
        path = self.root / MANIFEST
        if not path.exists():
            raise FileNotFoundError(f"project manifest not found: {path}")
        try:
            self.manifest = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for key in ("surface", "mesh", "targets", "checkpoints", "field", "train"):
            if key not in self.manifest:
                raise ConfigError(f"{path}: missing '{key}'")
        for key in ("surface", "mesh", "targets"):
            if not self.path(key).exists():
                raise FileNotFoundError(f"project file not found: {self.path(key)}")
        self._scene = None

    def path(self, key) -> Path:
        return self.root / self.manifest[key]

    @property
    def seed(self) -> int:
        return int(self.manifest.get("seed", 0))

    def field_config(self) -> FieldConfig:
        try:
            return FieldConfig.from_dict(dict(self.manifest["field"]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad field config: {exc}") from exc

    def train_config(self, overrides=None) -> TrainConfig:
        d = dict(self.manifest["train"])
        d.update({k: v for k, v in (overrides or {}).items() if v is not None})
        try:
            return TrainConfig.from_dict(d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad training config: {exc}") from exc

    def scene(self) -> Scene:
        if self._scene is None:
            mesh, samples, embedding = load_bundle(self.path("mesh"))
            surface = read_obj(self.path("surface"))
            self._scene = Scene.build(mesh, surface, samples=samples or build_samples(mesh, 8),
                                      embedding=embedding)
        return self._scene

    def target_files(self) -> list[Path]:
        return sorted(self.path("targets").glob("*.obj"))

    def load_target(self, path, index=0) -> TargetPose:
        s = read_obj(path)
        faces = self.scene().surface.faces
        if len(s.vertices) != len(self.scene().surface.vertices):
            raise ConfigError(f"{path}: vertex count {len(s.vertices)} does not match the rest surface")
        return TargetPose(s.vertices, faces, index=index, name=Path(path).stem)

    def pca(self) -> ShapePCA:
        path = self.path("checkpoints") / "pca.json"
        if path.exists():
            return ShapePCA.from_dict(json.loads(path.read_text()))
        shapes = [read_obj(p).vertices for p in self.target_files()]
        if not shapes:
            raise ConfigError("no target shapes in the targets directory")
        cfg = self.field_config()
        pca = ShapePCA.fit(self.scene().surface.vertices, shapes, cfg.descriptor_dim)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(pca.to_dict()))
        return pca

    def targets(self) -> list[TargetPose]:
        files = self.target_files()
        if not files:
            raise ConfigError(f"no target OBJ files in {self.path('targets')}")
        targets = [self.load_target(p, i) for i, p in enumerate(files)]
        self.describe(targets)
        return targets

    def describe(self, targets) -> None:
        if self.field_config().latent_mode == "encoder":
            pca = self.pca()
            for t in targets:
                t.descriptor = pca.transform(t.vertices)

    def checkpoint_dir(self, stage) -> Path:
        return self.path("checkpoints") / f"stage{stage}"

    def load_field(self, path=None) -> tuple[ActuationField, dict | None, dict]:
        path = Path(path) if path else self.latest_checkpoint()
        if path is None:
            raise FileNotFoundError("no checkpoint found; run 'train' first")
        if not (path / "manifest.json").exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        field_, opt, meta = load_checkpoint(path)
        if field_.config != self.field_config():
            raise ConfigError(f"checkpoint {path} was written with a different field config")
        return field_, opt, meta

    def latest_checkpoint(self) -> Path | None:
        for stage in (2, 1):
            d = self.checkpoint_dir(stage)
            if (d / "manifest.json").exists():
                return d
        return None


def make_demo_project(root, kind: str = "bar", n_frames: int = 4, seed: int = 0) -> Path:
    """Write a small synthetic project (targets from a known actuation field)."""
    root = Path(root)
    (root / "targets").mkdir(parents=True, exist_ok=True)
    if kind == "bar":
        syn = synthetic.recovery_bar(n_frames, 8, seed)
        lo, hi = (0.0, 0.0, 0.0), (6.0, 2.0, 2.0)
        field_cfg = FieldConfig(width=32, latent_dim=8, mod_hidden=32, enc_hidden=32, bbox_min=lo, bbox_max=hi,
                                seed=seed)
    elif kind == "jaw":
        rng = np.random.default_rng(seed)
        syn = synthetic.jaw_block(rng.uniform(-0.05, 0.05, (n_frames, 5)))
        lo, hi = (0.0, 0.0, 0.0), (4.0, 2.0, 2.0)
        field_cfg = FieldConfig(width=32, latent_dim=8, mod_hidden=32, enc_hidden=32, jaw=True,
                                pivot=synthetic.JAW_PIVOT, bbox_min=lo, bbox_max=hi, seed=seed)
    else:
        raise ConfigError(f"unknown demo kind {kind!r}")
    samples = build_samples(syn.mesh, 8)
    save_bundle(root / "mesh.json", syn.mesh, samples, embed_surface(syn.mesh, syn.surface))
    write_obj(root / "surface.obj", syn.surface.vertices, syn.surface.faces)
    for t in syn.targets:
        write_obj(root / "targets" / f"{t.name}.obj", t.vertices, t.faces)
    train = TrainConfig(stage1_epochs=100, stage1_lr=1e-3, stage2_epochs=10, seed=seed)
    manifest = {"surface": "surface.obj", "mesh": "mesh.json", "targets": "targets",
                "checkpoints": "checkpoints", "field": field_cfg.to_dict(), "train": train.to_dict(),
                "seed": seed}
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2))
    return root


# --------------------------------------------------------------------------- commands

def cmd_voxelize(args) -> int:
    surface = read_obj(_existing(args.surface))
    mesh = voxelize(surface, args.h, occupancy=args.occupancy)
    for spec in args.tag_box or []:
        name, *coords = spec
        if name not in TAG_NAMES:
            raise ConfigError(f"unknown tag {name!r}; expected one of {TAG_NAMES}")
        lo, hi = np.array(coords[:3], dtype=float), np.array(coords[3:], dtype=float)
        inside = np.all((mesh.nodes >= lo - 1e-9) & (mesh.nodes <= hi + 1e-9), axis=1)
        mesh = mesh.tag_nodes(inside, TAG_NAMES.index(name))
    if args.cut_spec:
        mesh = duplicate_cut_vertices(mesh, _read_cut_spec(_existing(args.cut_spec), mesh))
    samples = build_samples(mesh, args.samples)
    embedding = embed_surface(mesh, surface)
    save_bundle(args.out, mesh, samples, embedding)
    print(json.dumps({"elements": mesh.n_elements, "nodes": mesh.n_nodes, "samples": len(samples),
                      "out": str(args.out)}))
    return EXIT_OK


def _read_cut_spec(path, mesh) -> list:
    try:
        spec = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    quads = [list(q) for q in spec.get("quads", [])]
    for q in spec.get("quads_xyz", []):
        idx = []
        for p in q:
            d = np.linalg.norm(mesh.nodes - np.asarray(p, dtype=float), axis=1)
            if d.min() > 1e-6 * mesh.h:
                raise ConfigError(f"cut corner {p} is not a mesh node")
            idx.append(int(np.argmin(d)))
        quads.append(idx)
    if not quads:
        raise ConfigError(f"{path}: cut spec has no 'quads' or 'quads_xyz'")
    return quads


def _overrides(args) -> dict:
    return {f.name: getattr(args, f.name, None) for f in fields(TrainConfig)}


def _on_epoch(project: Project, stage: int):
    ckpt = project.checkpoint_dir(stage)
    metrics = project.path("checkpoints") / "metrics.csv"

    def hook(row, field_, opt):
        save_checkpoint(ckpt, field_, opt.state_dict(), {"stage": stage, "epoch": row["epoch"]})
        append_metrics(metrics, row)
        log.info("stage %d epoch %d loss %.6g", stage, row["epoch"], row["loss"])

    return hook


def cmd_train(args) -> int:
    project = Project(args.project)
    config = project.train_config(_overrides(args))
    if args.seed is not None:
        config.seed = args.seed
    if args.workers is not None:
        config.workers = args.workers
    scene = project.scene()
    targets = project.targets()
    start, opt, field_ = 0, None, None
    if args.resume:
        ckpt = project.checkpoint_dir(args.stage)
        field_, opt_state, meta = project.load_field(ckpt)
        opt = Adam.from_state(opt_state) if opt_state else None
        start = int(meta.get("epoch", -1)) + 1
    elif args.stage == 2:
        prev = project.checkpoint_dir(1)
        if not (prev / "manifest.json").exists():
            raise ConfigError("stage 2 needs a stage-1 checkpoint; run 'train --stage 1' first")
        field_, _, _ = project.load_field(prev)
    else:
        cfg = project.field_config()
        if cfg.latent_mode == "autodecoder" and cfg.n_frames < len(targets):
            raise ConfigError(f"latent table holds {cfg.n_frames} codes but there are {len(targets)} targets")
        field_ = ActuationField.create(cfg)
    hook = _on_epoch(project, args.stage)
    try:
        if args.stage == 1:
            frames = [stage1_init(scene, t, tol=config.solver_tol, max_iters=config.max_iters) for t in targets]
            history = pretrain(field_, frames, config, optimizer=opt, start_epoch=start, on_epoch=hook)
        else:
            history = train_stage2(field_, scene, targets, config, optimizer=opt, start_epoch=start,
                                   on_epoch=hook)
    except TrainingError as exc:
        save_checkpoint(project.checkpoint_dir(args.stage) / "aborted", field_, None,
                        {"stage": args.stage, "aborted": str(exc)})
        raise NumericalFailure(str(exc), exc.report) from exc
    last = history[-1] if history else {}
    print(json.dumps({"stage": args.stage, "epochs": len(history), "loss": last.get("loss")}))
    return EXIT_OK


def _error_exports(out: Path, scene: Scene, vertices, target: TargetPose) -> None:
    err = np.linalg.norm(vertices - target.vertices, axis=1)
    with open(out.with_suffix(".errors.csv"), "w") as fh:
        fh.write("vertex,error\n")
        for i, e in enumerate(err):
            fh.write(f"{i},{e:.17g}\n")
    t = err / max(err.max(), 1e-300)
    colors = np.stack([t, np.zeros_like(t), 1.0 - t], axis=1)
    write_obj(out.with_suffix(".errors.obj"), vertices, scene.surface.faces, colors)


def _solve_or_fail(fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except (SolverError, ActuationError, FloatingPointError, AdjointError, TrainingError) as exc:
        report = getattr(exc, "report", None)
        report = report.to_dict() if hasattr(report, "to_dict") else report
        raise NumericalFailure(str(exc), report) from exc


def cmd_fit(args) -> int:
    project = Project(args.project)
    config = project.train_config()
    field_, _, _ = project.load_field(args.checkpoint)
    scene = project.scene()
    target = project.load_target(_existing(args.target))
    project.describe([target])
    if field_.config.latent_mode != "encoder":
        raise ConfigError("fitting a new pose needs an encoder to initialize the latent code")
    res = _solve_or_fail(fit_new_pose, field_, scene, target, config, args.iters)
    out = Path(args.out or project.root / f"fit_{target.name}")
    out.parent.mkdir(parents=True, exist_ok=True)
    doc = {"z": res.z.tolist(), "theta": None if res.theta is None else res.theta.tolist(),
           "losses": res.losses, "mean_vertex_error": res.loss.mean_error}
    out.with_suffix(".json").write_text(json.dumps(doc, indent=2))
    write_obj(out.with_suffix(".obj"), res.loss.vertices, scene.surface.faces)
    _error_exports(out, scene, res.loss.vertices, target)
    print(json.dumps({"loss": res.losses[-1], "mean_vertex_error": res.loss.mean_error}))
    return EXIT_OK


def _parse_z(text, dim) -> np.ndarray:
    p = Path(text)
    if p.exists():
        doc = json.loads(p.read_text())
        z = np.asarray(doc["z"] if isinstance(doc, dict) else doc, dtype=float)
    else:
        try:
            z = np.array([float(v) for v in text.split(",")])
        except ValueError as exc:
            raise ConfigError(f"--z must be a comma list or a JSON file: {text!r}") from exc
    if z.shape != (dim,):
        raise ConfigError(f"latent code has {z.size} entries, expected {dim}")
    return z


def _latent_for(project, field_, z_arg, target_arg):
    if z_arg is not None:
        return _parse_z(z_arg, field_.config.latent_dim), None
    target = project.load_target(_existing(target_arg))
    if field_.config.latent_mode == "encoder":
        project.describe([target])
        return latent_of(field_, target)[0], target
    names = [p.stem for p in project.target_files()]
    if target.name not in names:
        raise ConfigError(f"auto-decoder field has no latent code for {target.name!r}")
    target.index = names.index(target.name)
    return latent_of(field_, target)[0], target


def cmd_simulate(args) -> int:
    project = Project(args.project)
    config = project.train_config()
    field_, _, _ = project.load_field(args.checkpoint)
    scene = project.scene()
    if args.resolution is not None:
        scene = scene.with_samples(args.resolution)
    if (args.z is None) == (args.target is None):
        raise ConfigError("give exactly one of --z or --target")
    z, target = _latent_for(project, field_, args.z, args.target)
    frame = _solve_or_fail(simulate, field_, scene, z, tol=config.solver_tol, max_iters=config.max_iters)
    verts = scene.surface_vertices(frame.state.u_flat)
    out = Path(args.out or project.root / "simulated.obj")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_obj(out, verts, scene.surface.faces)
    out.with_suffix(".report.json").write_text(json.dumps(frame.report.to_dict(), indent=2))
    summary = {"out": str(out), "iterations": frame.report.iterations}
    if target is not None:
        _error_exports(out, scene, verts, target)
        summary["mean_vertex_error"] = float(np.mean(np.linalg.norm(verts - target.vertices, axis=1)))
    print(json.dumps(summary))
    return EXIT_OK


def cmd_interp(args) -> int:
    project = Project(args.project)
    config = project.train_config()
    field_, _, _ = project.load_field(args.checkpoint)
    scene = project.scene()
    z1, _ = _latent_for(project, field_, None, args.src)
    z2, _ = _latent_for(project, field_, None, args.dst)
    shapes = _solve_or_fail(interpolate, field_, scene, z1, z2, args.steps, tol=config.solver_tol,
                            max_iters=config.max_iters)
    out = Path(args.out or project.root / "interp")
    out.mkdir(parents=True, exist_ok=True)
    for i, v in enumerate(shapes):
        write_obj(out / f"step{i:03d}.obj", v, scene.surface.faces)
    print(json.dumps({"shapes": len(shapes), "out": str(out)}))
    return EXIT_OK


GRADCHECK_SCALES = {"tiny": ((2, 1, 1), 1), "small": ((3, 3, 3), 8)}


def gradient_check(scale: str = "tiny", seed: int = 0, n_params: int = 20, eps: float = 1e-5, *,
                   shape=None, n_per_element: int | None = None) -> dict:
    """Adjoint gradient of a surface loss against central differences through the solve.

    ``shape`` and ``n_per_element`` override the preset picked by ``scale``.
    """
    if scale not in GRADCHECK_SCALES:
        raise ConfigError(f"unknown gradcheck scale {scale!r}")
    shape0, n0 = GRADCHECK_SCALES[scale]
    shape = tuple(shape) if shape is not None else shape0
    n = n_per_element or n0
    rng = np.random.default_rng(seed)
    mesh = grid_mesh(shape, 1.0)
    mesh = mesh.tag_nodes(mesh.nodes[:, 0] <= 1e-9, BONE)
    surface = box_surface((0.0, 0.0, 0.0), shape, shape)
    scene = Scene.build(mesh, surface, n)
    b = 0.1 * rng.normal(size=(len(scene.samples), 6))
    u_d0 = scene.dirichlet_values() + 0.05 * rng.normal(size=len(scene.partition.dirichlet))
    goal = TargetPose(surface.vertices + 0.1 * rng.normal(size=surface.vertices.shape), surface.faces)

    def run(b_, u_d):
        state, _ = solve_quasistatic(scene.fact, SampleActuation.from_params(b_), u_d, tol=1e-10,
                                     max_iters=5000, newton_tol=1e-12)
        return state, surface_loss(state.u_flat, scene, goal, 0.0)

    state, loss = run(b, u_d0)
    ws = backward(state, scene.fact, loss.grad_u)
    entries = []
    flat_idx = rng.choice(b.size, size=min(n_params, b.size), replace=False)
    for k in flat_idx:
        d = np.zeros(b.size)
        d[k] = eps
        fd = (run(b + d.reshape(b.shape), u_d0)[1].loss - run(b - d.reshape(b.shape), u_d0)[1].loss) / (2 * eps)
        entries.append(_entry(f"b[{k // 6},{k % 6}]", fd, ws.dL_db.reshape(-1)[k]))
    for k in rng.choice(len(u_d0), size=min(6, len(u_d0)), replace=False):
        d = np.zeros(len(u_d0))
        d[k] = eps
        fd = (run(b, u_d0 + d)[1].loss - run(b, u_d0 - d)[1].loss) / (2 * eps)
        entries.append(_entry(f"u_d[{k}]", fd, ws.dL_dud[k]))
    worst = max(e["rel_error"] for e in entries)
    return {"scale": scale, "mesh": list(shape), "samples_per_element": n, "eps": eps,
            "entries": entries, "max_rel_error": worst, "passed": bool(worst < 1e-3)}


def _entry(name, fd, adj):
    fd, adj = float(fd), float(adj)
    return {"parameter": name, "fd": fd, "adjoint": adj,
            "rel_error": abs(fd - adj) / max(abs(fd), abs(adj), 1e-8)}


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else (Project(args.project).seed if args.project else 0)
    report = _solve_or_fail(gradient_check, args.scale, seed)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK if report["passed"] else EXIT_NUMERIC


def cmd_demo(args) -> int:
    root = make_demo_project(args.out, args.kind, args.frames, args.seed or 0)
    print(json.dumps({"project": str(root)}))
    return EXIT_OK


# --------------------------------------------------------------------------- parser

def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"file not found: {p}")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workers", type=int, default=None, help="cap on worker threads")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="softact", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    def project_arg(sp, required=True):
        default = os.environ.get("SOFTACT_PROJECT")
        sp.add_argument("--project", default=default, required=required and default is None)

    v = sub.add_parser("voxelize", parents=[common], help="surface OBJ -> hex mesh JSON")
    v.add_argument("--surface", required=True)
    v.add_argument("--h", type=float, required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--cut-spec")
    v.add_argument("--samples", type=int, default=8, help="samples per element (perfect cube)")
    v.add_argument("--occupancy", choices=("center_or_intersect", "center"), default="center_or_intersect")
    v.add_argument("--tag-box", nargs=7, action="append", metavar=("TAG", "X0", "Y0", "Z0", "X1", "Y1", "Z1"),
                   help="tag nodes inside a box as bone or jaw")
    v.set_defaults(func=cmd_voxelize)

    t = sub.add_parser("train", parents=[common], help="run training stage 1 or 2")
    project_arg(t)
    t.add_argument("--stage", type=int, choices=(1, 2), required=True)
    t.add_argument("--resume", action="store_true")
    for f in fields(TrainConfig):
        if f.name in ("seed", "workers"):
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool", bool):
            t.add_argument(flag, dest=f.name, type=lambda s: s.lower() in ("1", "true", "yes"), default=None)
        else:
            t.add_argument(flag, dest=f.name, type=float if f.type in ("float", float) else int, default=None)
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("fit", parents=[common], help="fit a latent code to a new target")
    project_arg(f)
    f.add_argument("--target", required=True)
    f.add_argument("--iters", type=int, default=10)
    f.add_argument("--checkpoint")
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", parents=[common], help="simulate one latent code")
    project_arg(s)
    s.add_argument("--checkpoint")
    s.add_argument("--z")
    s.add_argument("--target")
    s.add_argument("--resolution", type=int, help="samples per element")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    i = sub.add_parser("interp", parents=[common], help="interpolate between two targets' latent codes")
    project_arg(i)
    i.add_argument("--from", dest="src", required=True)
    i.add_argument("--to", dest="dst", required=True)
    i.add_argument("--steps", type=int, default=8)
    i.add_argument("--checkpoint")
    i.add_argument("--out")
    i.set_defaults(func=cmd_interp)

    g = sub.add_parser("gradcheck", parents=[common], help="adjoint vs finite-difference report")
    project_arg(g, required=False)
    g.add_argument("--scale", default="tiny", choices=tuple(GRADCHECK_SCALES))
    g.add_argument("--out")
    g.set_defaults(func=cmd_gradcheck)

    d = sub.add_parser("demo", parents=[common], help="write a synthetic demo project")
    d.add_argument("--out", required=True)
    d.add_argument("--kind", choices=("bar", "jaw"), default="bar")
    d.add_argument("--frames", type=int, default=4)
    d.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers is not None:
        os.environ.setdefault("OMP_NUM_THREADS", str(args.workers))
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, StaleCacheError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        if exc.report is not None:
            print(json.dumps(exc.report, default=str), file=sys.stderr)
        return EXIT_NUMERIC
    except GeometryError as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, ActuationError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        report = getattr(exc, "report", None)
        if report is not None:
            print(json.dumps(report.to_dict()), file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
