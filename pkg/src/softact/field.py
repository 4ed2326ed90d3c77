"""Coordinate networks for actuation and jaw kinematics, written in numpy.

* Actuation network: four modulated sine layers followed by a linear head
  mapping a material point to the six actuation parameters. Layer ``l``
  uses the effective weight ``W[i, j] = a_l[i] * W_hat[i, j]`` where the
  modulation ``a_l`` (indexed by input feature) is decoded from the latent
  code by a small MLP. The modulated weights are formed once per shape and
  shared by every point of the batch.
* Jaw network: MLP from the latent code to ``theta = (rx, ry, tx, ty, tz)``;
  the rigid transform rotates about a fixed pivot, ``rx`` first, then ``ry``,
  then translates.
* Encoder: MLP from a shape descriptor to the latent code (or a per-frame
  latent table in auto-decoder mode).
* Resolution branch: positional encoding of the normalized sample count and
  an MLP whose output is added to the latent code seen by the actuation
  network.

Gradients are exact reverse-mode derivatives computed by hand.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


class StaleCacheError(RuntimeError):
    pass


@dataclass
class FieldConfig:
    width: int = 256
    n_layers: int = 4
    omega0: float = 30.0
    latent_dim: int = 32
    mod_hidden: int = 64
    jaw_hidden: int = 32
    enc_hidden: int = 64
    descriptor_dim: int = 16
    leaky_slope: float = 0.01
    resolution_branch: bool = False
    res_hidden: int = 16
    pe_size: int = 4
    res_reference: float = 1.0
    latent_mode: str = "encoder"          # or "autodecoder"
    n_frames: int = 0                     # latent table size in auto-decoder mode
    jaw: bool = False
    pivot: tuple = (0.0, 0.0, 0.0)
    bbox_min: tuple = (-1.0, -1.0, -1.0)
    bbox_max: tuple = (1.0, 1.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        for name in ("width", "n_layers", "latent_dim", "mod_hidden", "jaw_hidden", "enc_hidden",
                     "descriptor_dim", "res_hidden", "pe_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.omega0 > 0:
            raise ValueError("omega0 must be positive")
        if self.pe_size % 2:
            raise ValueError("pe_size must be even")
        if self.latent_mode not in ("encoder", "autodecoder"):
            raise ValueError(f"unknown latent mode {self.latent_mode!r}")
        self.pivot = tuple(float(v) for v in self.pivot)
        self.bbox_min = tuple(float(v) for v in self.bbox_min)
        self.bbox_max = tuple(float(v) for v in self.bbox_max)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FieldConfig":
        return cls(**d)

    def layer_inputs(self) -> list[int]:
        return [3] + [self.width] * (self.n_layers - 1)


# --------------------------------------------------------------------------- dense MLP helpers

def _leaky(x, slope):
    return np.where(x > 0, x, slope * x)


def mlp_forward(params, prefix, x, n_layers, slope):
    """Fully connected layers with leaky ReLU between them (linear output)."""
    cache = [x]
    h = x
    for i in range(n_layers):
        pre = h @ params[f"{prefix}.W{i}"] + params[f"{prefix}.b{i}"]
        if i < n_layers - 1:
            cache.append(pre)
            h = _leaky(pre, slope)
            cache.append(h)
        else:
            h = pre
    return h, cache


def mlp_backward(params, prefix, cache, grad, n_layers, slope, grads):
    g = grad
    for i in reversed(range(n_layers)):
        h_in = cache[2 * i]
        grads[f"{prefix}.W{i}"] = grads.get(f"{prefix}.W{i}", 0.0) + h_in.T @ g
        grads[f"{prefix}.b{i}"] = grads.get(f"{prefix}.b{i}", 0.0) + g.sum(axis=0)
        g = g @ params[f"{prefix}.W{i}"].T
        if i > 0:
            pre = cache[2 * i - 1]
            g = g * np.where(pre > 0, 1.0, slope)
    return g


def _dense_init(rng, fan_in, fan_out, zero=False):
    if zero:
        return np.zeros((fan_in, fan_out)), np.zeros(fan_out)
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, (fan_in, fan_out)), rng.uniform(-bound, bound, fan_out)


def positional_encoding(r: float, size: int) -> np.ndarray:
    k = np.arange(size // 2)
    ang = np.pi * (2.0 ** k) * r
    return np.concatenate([np.sin(ang), np.cos(ang)])


# --------------------------------------------------------------------------- rigid jaw transform

def _rot_x(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _drot_x(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])


def _drot_y(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


def jaw_transform(theta, pivot) -> np.ndarray:
    """4x4 homogeneous transform ``x -> Ry Rx (x - p) + p + t``."""
    theta = np.asarray(theta, dtype=float)
    p = np.asarray(pivot, dtype=float)
    R = _rot_y(theta[1]) @ _rot_x(theta[0])
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = p - R @ p + theta[2:5]
    return T


def apply_jaw(T, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x @ T[:3, :3].T + T[:3, 3]


def apply_jaw_backward(theta, pivot, x, grad_out) -> np.ndarray:
    """Gradient with respect to ``theta`` of ``sum(grad_out * apply_jaw(T(theta), x))``."""
    theta = np.asarray(theta, dtype=float)
    d = np.asarray(x, dtype=float) - np.asarray(pivot, dtype=float)
    dRx = _rot_y(theta[1]) @ _drot_x(theta[0])
    dRy = _drot_y(theta[1]) @ _rot_x(theta[0])
    g = np.empty(5)
    g[0] = np.sum(grad_out * (d @ dRx.T))
    g[1] = np.sum(grad_out * (d @ dRy.T))
    g[2:5] = grad_out.sum(axis=0)
    return g


# --------------------------------------------------------------------------- the field

@dataclass
class ActuationCache:
    version: int
    x: np.ndarray
    hs: list
    pres: list
    w_eff: list
    mods: list
    mod_cache: list | None
    res_cache: list | None
    modulated: bool


@dataclass
class JawCache:
    version: int
    mlp_cache: list


@dataclass
class EncoderCache:
    version: int
    mlp_cache: list | None
    frames: np.ndarray | None = None


@dataclass
class ActuationField:
    config: FieldConfig
    params: dict = field(default_factory=dict)
    version: int = 0

    @classmethod
    def create(cls, config: FieldConfig) -> "ActuationField":
        f = cls(config)
        f.params = f._init_params()
        return f

    def _init_params(self) -> dict:
        c = self.config
        rng = np.random.default_rng(c.seed)
        p = {}
        ins = c.layer_inputs()
        for l, n_in in enumerate(ins):
            if l == 0:
                bound = 1.0 / n_in
            else:
                bound = np.sqrt(6.0 / n_in) / c.omega0
            p[f"siren.W{l}"] = rng.uniform(-bound, bound, (n_in, c.width))
            p[f"siren.b{l}"] = rng.uniform(-1.0 / np.sqrt(n_in), 1.0 / np.sqrt(n_in), c.width) / c.omega0
        p["siren.Wout"] = np.zeros((c.width, 6))
        p["siren.bout"] = np.zeros(6)
        p["mod.W0"], p["mod.b0"] = _dense_init(rng, c.latent_dim, c.mod_hidden)
        p["mod.W1"], p["mod.b1"] = _dense_init(rng, c.mod_hidden, sum(ins), zero=True)
        if c.jaw:
            p["jaw.W0"], p["jaw.b0"] = _dense_init(rng, c.latent_dim, c.jaw_hidden)
            p["jaw.W1"], p["jaw.b1"] = _dense_init(rng, c.jaw_hidden, c.jaw_hidden)
            p["jaw.W2"], p["jaw.b2"] = _dense_init(rng, c.jaw_hidden, 5, zero=True)
        if c.latent_mode == "encoder":
            p["enc.W0"], p["enc.b0"] = _dense_init(rng, c.descriptor_dim, c.enc_hidden)
            p["enc.W1"], p["enc.b1"] = _dense_init(rng, c.enc_hidden, c.enc_hidden)
            p["enc.W2"], p["enc.b2"] = _dense_init(rng, c.enc_hidden, c.latent_dim)
        else:
            p["latent.table"] = rng.normal(0.0, 0.01, (max(c.n_frames, 1), c.latent_dim))
        if c.resolution_branch:
            p["res.W0"], p["res.b0"] = _dense_init(rng, c.pe_size, c.res_hidden)
            p["res.W1"], p["res.b1"] = _dense_init(rng, c.res_hidden, c.res_hidden)
            p["res.W2"], p["res.b2"] = _dense_init(rng, c.res_hidden, c.latent_dim, zero=True)
        return p

    # ----------------------------------------------------------------- bookkeeping

    def touch(self) -> None:
        """Mark parameters as modified; forward caches taken before become stale."""
        self.version += 1

    def _check(self, cache) -> None:
        if cache.version != self.version:
            raise StaleCacheError("forward cache was computed with older parameters")
        for k, v in self.params.items():
            if not np.all(np.isfinite(v)):
                raise FloatingPointError(f"non-finite parameter {k}")

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def copy(self) -> "ActuationField":
        return ActuationField(self.config, {k: v.copy() for k, v in self.params.items()}, self.version)

    def groups(self) -> list[str]:
        return sorted({k.split(".")[0] for k in self.params})

    def normalize(self, x) -> np.ndarray:
        lo = np.asarray(self.config.bbox_min)
        hi = np.asarray(self.config.bbox_max)
        return 2.0 * (np.asarray(x, dtype=float) - lo) / (hi - lo) - 1.0

    # ----------------------------------------------------------------- latent codes

    def encode(self, descriptor) -> tuple[np.ndarray, EncoderCache]:
        """Latent code(s) (F, latent) from descriptor rows (F, D)."""
        c = self.config
        if c.latent_mode != "encoder":
            raise ValueError("encode() requires latent_mode='encoder'")
        d = np.atleast_2d(np.asarray(descriptor, dtype=float))
        if d.shape[1] != c.descriptor_dim:
            raise ValueError(f"descriptor has {d.shape[1]} entries, expected {c.descriptor_dim}")
        z, cache = mlp_forward(self.params, "enc", d, 3, c.leaky_slope)
        return z, EncoderCache(self.version, cache)

    def lookup(self, frames) -> tuple[np.ndarray, EncoderCache]:
        frames = np.atleast_1d(np.asarray(frames, dtype=np.int64))
        return self.params["latent.table"][frames].copy(), EncoderCache(self.version, None, frames)

    def latent_backward(self, cache: EncoderCache, grad_z) -> dict:
        self._check(cache)
        grads: dict = {}
        grad_z = np.atleast_2d(grad_z)
        if cache.frames is not None:
            g = np.zeros_like(self.params["latent.table"])
            np.add.at(g, cache.frames, grad_z)
            grads["latent.table"] = g
        else:
            mlp_backward(self.params, "enc", cache.mlp_cache, grad_z, 3, self.config.leaky_slope, grads)
        return grads

    # ----------------------------------------------------------------- actuation

    def modulations(self, z):
        """Per-layer modulation vectors ``a_l = 1 + MLP(z)``."""
        out, cache = mlp_forward(self.params, "mod", np.atleast_2d(z), 2, self.config.leaky_slope)
        splits = np.cumsum(self.config.layer_inputs())[:-1]
        return [1.0 + m for m in np.split(out[0], splits)], cache

    def eval_actuation(self, x, z, resolution=None, *, modulate=True) -> tuple[np.ndarray, ActuationCache]:
        """Actuation parameters (P, 6) at material points ``x`` for latent ``z``."""
        c = self.config
        z = np.asarray(z, dtype=float).reshape(1, c.latent_dim)
        res_cache = None
        if resolution is not None:
            if not c.resolution_branch:
                raise ValueError("field was built without a resolution branch")
            pe = positional_encoding(float(resolution) / c.res_reference, c.pe_size)[None]
            dz, res_cache = mlp_forward(self.params, "res", pe, 3, c.leaky_slope)
            z = z + dz
        mods = mod_cache = None
        if modulate:
            mods, mod_cache = self.modulations(z)
        h = self.normalize(np.atleast_2d(x))
        hs, pres, w_eff = [], [], []
        for l in range(c.n_layers):
            W = self.params[f"siren.W{l}"]
            if modulate:
                W = mods[l][:, None] * W
            pre = h @ W + self.params[f"siren.b{l}"]
            hs.append(h)
            pres.append(pre)
            w_eff.append(W)
            h = np.sin(c.omega0 * pre)
        hs.append(h)
        out = h @ self.params["siren.Wout"] + self.params["siren.bout"]
        for k, v in self.params.items():
            if not np.all(np.isfinite(v)):
                raise FloatingPointError(f"non-finite parameter {k}")
        return out, ActuationCache(self.version, x, hs, pres, w_eff, mods, mod_cache, res_cache, modulate)

    def actuation_backward(self, cache: ActuationCache, grad_b) -> tuple[dict, np.ndarray]:
        """Parameter gradients and the latent gradient (latent_dim,) from ``dL/db``."""
        self._check(cache)
        c = self.config
        grads: dict = {}
        g = np.asarray(grad_b, dtype=float)
        grads["siren.Wout"] = cache.hs[-1].T @ g
        grads["siren.bout"] = g.sum(axis=0)
        g = g @ self.params["siren.Wout"].T
        grad_mods = []
        for l in reversed(range(c.n_layers)):
            g = g * (c.omega0 * np.cos(c.omega0 * cache.pres[l]))
            gW = cache.hs[l].T @ g
            grads[f"siren.b{l}"] = g.sum(axis=0)
            if cache.modulated:
                grads[f"siren.W{l}"] = cache.mods[l][:, None] * gW
                grad_mods.append(np.sum(self.params[f"siren.W{l}"] * gW, axis=1))
            else:
                grads[f"siren.W{l}"] = gW
            if l > 0:
                g = g @ cache.w_eff[l].T
        grad_z = np.zeros(c.latent_dim)
        if cache.modulated:
            g_out = np.concatenate(grad_mods[::-1])[None]
            grad_z = mlp_backward(self.params, "mod", cache.mod_cache, g_out, 2, c.leaky_slope, grads)[0]
            if cache.res_cache is not None:
                mlp_backward(self.params, "res", cache.res_cache, grad_z[None], 3, c.leaky_slope, grads)
        return grads, grad_z

    # ----------------------------------------------------------------- jaw

    def eval_jaw(self, z) -> tuple[np.ndarray, np.ndarray, JawCache]:
        """``(theta, T, cache)`` for one latent code."""
        c = self.config
        if not c.jaw:
            raise ValueError("field was built without a jaw network")
        theta, cache = mlp_forward(self.params, "jaw", np.asarray(z, dtype=float).reshape(1, -1), 3,
                                   c.leaky_slope)
        theta = theta[0]
        return theta, jaw_transform(theta, c.pivot), JawCache(self.version, cache)

    def jaw_backward(self, cache: JawCache, grad_theta) -> tuple[dict, np.ndarray]:
        self._check(cache)
        grads: dict = {}
        gz = mlp_backward(self.params, "jaw", cache.mlp_cache, np.asarray(grad_theta, dtype=float)[None],
                          3, self.config.leaky_slope, grads)
        return grads, gz[0]

    # ----------------------------------------------------------------- combined

    def backward_field(self, act_cache: ActuationCache | None, grad_b, jaw_cache: JawCache | None = None,
                       grad_theta=None, latent_cache: EncoderCache | None = None) -> tuple[dict, np.ndarray]:
        """Chain simulator gradients into every parameter group.

        Returns ``(grads, grad_z)``; when ``latent_cache`` is given the latent
        gradient is pushed further into the encoder or latent table.
        """
        grads: dict = {}
        grad_z = np.zeros(self.config.latent_dim)
        if act_cache is not None:
            g, gz = self.actuation_backward(act_cache, grad_b)
            _merge(grads, g)
            grad_z = grad_z + gz
        if jaw_cache is not None and grad_theta is not None:
            g, gz = self.jaw_backward(jaw_cache, grad_theta)
            _merge(grads, g)
            grad_z = grad_z + gz
        if latent_cache is not None:
            _merge(grads, self.latent_backward(latent_cache, grad_z))
        return grads, grad_z

    def zero_grads(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


def _merge(into: dict, new: dict) -> None:
    for k, v in new.items():
        into[k] = into[k] + v if k in into else v


# --------------------------------------------------------------------------- checkpoints

def _safe_name(name: str) -> str:
    return name.replace("/", "_")


def save_checkpoint(path, field_: ActuationField, optimizer_state: dict | None = None,
                    meta: dict | None = None) -> None:
    """Directory with ``manifest.json`` and one little-endian float64 blob per tensor."""
    root = Path(path)
    (root / "tensors").mkdir(parents=True, exist_ok=True)
    tensors = {f"param/{k}": v for k, v in field_.params.items()}
    opt_meta = None
    if optimizer_state is not None:
        opt_meta = {k: v for k, v in optimizer_state.items() if not isinstance(v, dict)}
        for slot in ("m", "v"):
            for k, arr in optimizer_state.get(slot, {}).items():
                tensors[f"{slot}/{k}"] = arr
    entries = []
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        fname = f"tensors/{_safe_name(name)}.bin"
        (root / fname).write_bytes(np.ascontiguousarray(arr).tobytes())
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "<f8", "file": fname})
    manifest = {"format": "softact-checkpoint", "version": 1, "config": field_.config.to_dict(),
                "tensors": entries, "optimizer": opt_meta, "meta": meta or {}}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_checkpoint(path) -> tuple[ActuationField, dict | None, dict]:
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text())
    if manifest.get("format") != "softact-checkpoint":
        raise ValueError(f"{path} is not a checkpoint")
    params, slots = {}, {"m": {}, "v": {}}
    for e in manifest["tensors"]:
        arr = np.frombuffer((root / e["file"]).read_bytes(), dtype="<f8").reshape(e["shape"]).astype(float)
        kind, name = e["name"].split("/", 1)
        if kind == "param":
            params[name] = arr
        else:
            slots[kind][name] = arr
    cfg = manifest["config"]
    cfg["pivot"] = tuple(cfg["pivot"])
    field_ = ActuationField(FieldConfig.from_dict(cfg), params)
    opt = None
    if manifest.get("optimizer") is not None:
        opt = dict(manifest["optimizer"])
        opt.update(slots)
    return field_, opt, manifest.get("meta", {})
