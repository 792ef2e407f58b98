"""Depth-image autoencoder: dataset collection with a random policy,
L2 reconstruction training, and the frozen encoder used for observations."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from .nn import (Network, ParamStore, Tensor, backward, adam_step,
                 conv2d, deconv2d, dense, flatten, unflatten,
                 save_checkpoint, load_checkpoint)

DATASET_MAGIC = b"DPIMG001"
DATASET_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    latent_dim: int = 32
    channels: tuple = (8, 16, 32)
    kernel: int = 4
    stride: int = 2
    image_size: int = 64
    activation: str = "leaky_relu"

    @property
    def bottleneck_hw(self) -> int:
        hw = self.image_size
        for _ in self.channels:
            hw //= self.stride
        return hw


def _encoder_layers(cfg: EncoderConfig):
    pad = (cfg.kernel - cfg.stride) // 2
    layers = []
    prev = 1
    for ch in cfg.channels:
        layers.append(conv2d(prev, ch, cfg.kernel, cfg.stride, pad, cfg.activation))
        prev = ch
    hw = cfg.bottleneck_hw
    layers += [flatten(), dense(prev * hw * hw, cfg.latent_dim, cfg.activation)]
    return layers


def _decoder_layers(cfg: EncoderConfig):
    pad = (cfg.kernel - cfg.stride) // 2
    hw = cfg.bottleneck_hw
    top = cfg.channels[-1]
    layers = [dense(cfg.latent_dim, top * hw * hw, cfg.activation),
              unflatten((top, hw, hw))]
    chs = list(cfg.channels[::-1][1:]) + [1]
    prev = top
    for i, ch in enumerate(chs):
        act = "identity" if i == len(chs) - 1 else cfg.activation
        layers.append(deconv2d(prev, ch, cfg.kernel, cfg.stride, pad, act))
        prev = ch
    return layers


class Autoencoder:
    """Encoder and mirrored decoder over one joint parameter store."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator,
                 dtype=np.float64):
        self.cfg = cfg
        self.store = ParamStore()
        img = (1, cfg.image_size, cfg.image_size)
        self.encoder = Network(_encoder_layers(cfg), img, rng=rng,
                               store=self.store, prefix="enc", dtype=dtype)
        self.decoder = Network(_decoder_layers(cfg), (cfg.latent_dim,), rng=rng,
                               store=self.store, prefix="dec", dtype=dtype)

    def reconstruct(self, images: np.ndarray) -> np.ndarray:
        z = self.encoder.forward_np(images[:, None, :, :])
        return self.decoder.forward_np(z)[:, 0]

    def loss_on(self, images: np.ndarray) -> float:
        x = images[:, None, :, :]
        return float(((self.reconstruct(images) - images) ** 2).mean())

    def save(self, path, extra_meta: dict | None = None):
        meta = {"kind": "autoencoder", "config": asdict(self.cfg)}
        meta.update(extra_meta or {})
        save_checkpoint(path, self.store.state_arrays(), meta)

    @staticmethod
    def load(path) -> "Autoencoder":
        arrays, meta = load_checkpoint(path)
        cfg_d = dict(meta["config"])
        cfg_d["channels"] = tuple(cfg_d["channels"])
        ae = Autoencoder(EncoderConfig(**cfg_d), np.random.default_rng(0))
        ae.store.load_state_arrays(arrays)
        return ae


def error_image(original: np.ndarray, reconstruction: np.ndarray) -> np.ndarray:
    """Pixelwise absolute reconstruction error."""
    return np.abs(original - reconstruction)


@dataclass
class ImageDataset:
    images: np.ndarray  # (N, H, W) float32 in [0, 1]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.images.ndim != 3:
            raise ValueError("dataset images must be (N, H, W)")

    def __len__(self):
        return len(self.images)


def save_dataset(path, ds: ImageDataset):
    n, h, w = ds.images.shape
    arr = np.ascontiguousarray(ds.images, dtype="<f4")
    header = json.dumps({"version": DATASET_VERSION, "count": n, "height": h,
                         "width": w, "dtype": "<f4", "meta": ds.meta}).encode()
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(arr.tobytes())


def load_dataset(path) -> ImageDataset:
    with open(path, "rb") as f:
        if f.read(8) != DATASET_MAGIC:
            raise ValueError(f"{path}: not an image dataset")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode())
        if header["version"] != DATASET_VERSION:
            raise ValueError(f"unsupported dataset version {header['version']}")
        raw = f.read(header["count"] * header["height"] * header["width"] * 4)
    images = np.frombuffer(raw, dtype=np.dtype(header["dtype"])) \
        .reshape(header["count"], header["height"], header["width"]).copy()
    return ImageDataset(images=images, meta=header["meta"])


def collect_dataset(env_factory, n_images: int, rng: np.random.Generator) -> ImageDataset:
    """Run uniform-random reduced-action episodes, storing every step's
    filtered depth image (including the spawn view)."""
    if n_images < 1:
        raise ValueError("n_images must be >= 1")
    env = env_factory()
    images = []
    while len(images) < n_images:
        seed = int(rng.integers(0, 2 ** 63 - 1))
        obs = env.reset(seed)
        images.append(np.asarray(obs, dtype=np.float32))
        while len(images) < n_images:
            a = rng.uniform(-1.0, 1.0, size=3)
            tr = env.step(a)
            if tr.terminal:
                break
            images.append(np.asarray(tr.observation, dtype=np.float32))
    cam = env.config.camera
    meta = {"depth_min": cam.depth_min, "background": "episode_spawn_plane",
            "task": env.config.task}
    return ImageDataset(images=np.stack(images), meta=meta)


def train_autoencoder(ds: ImageDataset, epochs: int, lr: float = 2e-4,
                      batch: int = 128, rng: np.random.Generator | None = None,
                      cfg: EncoderConfig | None = None, holdout_frac: float = 0.1,
                      dtype=np.float64):
    """Adam on mean-squared reconstruction error with a seeded 90/10 split.

    Returns (autoencoder, history) where history has per-epoch train and
    holdout means plus the untrained holdout baseline at epoch index 0.
    """
    if len(ds) < 1:
        raise ValueError("empty dataset")
    rng = rng if rng is not None else np.random.default_rng(0)
    cfg = cfg if cfg is not None else EncoderConfig()
    ae = Autoencoder(cfg, rng, dtype=dtype)

    idx = rng.permutation(len(ds))
    n_hold = int(len(ds) * holdout_frac)
    hold_idx, train_idx = idx[:n_hold], idx[n_hold:]
    if len(train_idx) == 0:
        train_idx = idx
    train = ds.images[train_idx].astype(dtype)
    hold = ds.images[hold_idx].astype(dtype) if n_hold else train

    history = {"train": [], "holdout": [], "baseline": ae.loss_on(hold)}
    for _ in range(epochs):
        order = rng.permutation(len(train))
        losses = []
        for lo in range(0, len(train), batch):
            xb = train[order[lo:lo + batch]]
            x = Tensor(xb[:, None, :, :])
            z = ae.encoder.forward(x)
            xh = ae.decoder.forward(z)
            loss = (xh - x).square().mean()
            val = loss.item()
            if not np.isfinite(val):
                raise TrainingDiverged(f"non-finite reconstruction loss {val}")
            ae.store.zero_grad()
            backward(loss)
            adam_step(ae.store, lr)
            losses.append(val)
        history["train"].append(float(np.mean(losses)))
        history["holdout"].append(ae.loss_on(hold))
    return ae, history


class FrozenEncoder:
    """Read-only encoder snapshot used by every environment instance.

    Latents are standardized by fixed per-component statistics captured at
    freeze time, so downstream policies see unit-scale features."""

    def __init__(self, network: Network, cfg: EncoderConfig,
                 obs_mean: np.ndarray | None = None,
                 obs_std: np.ndarray | None = None):
        self.network = network
        self.cfg = cfg
        self.obs_mean = (np.zeros(cfg.latent_dim) if obs_mean is None
                         else np.asarray(obs_mean, dtype=np.float64))
        self.obs_std = (np.ones(cfg.latent_dim) if obs_std is None
                        else np.asarray(obs_std, dtype=np.float64))
        self._plan = None

    @property
    def latent_dim(self) -> int:
        return self.cfg.latent_dim

    def _build_plan(self):
        """Precompute gather indices and repacked weights for the hot
        single-image path (conv stack + dense head only)."""
        plan = []
        shape = self.network.input_shape
        for i, spec in enumerate(self.network.layers):
            g = spec.geometry
            names = self.network._param_names[i]
            if spec.kind == "conv2d":
                c, h, w = shape
                k, s, p = g["kernel"], g["stride"], g["padding"]
                oh = (h + 2 * p - k) // s + 1
                ow = (w + 2 * p - k) // s + 1
                hp, wp = h + 2 * p, w + 2 * p
                idx = np.empty((oh * ow, c * k * k), dtype=np.intp)
                col = 0
                for ci in range(c):
                    for ki in range(k):
                        for kj in range(k):
                            rows = (np.arange(oh) * s + ki)[:, None] * wp \
                                + (np.arange(ow) * s + kj)[None, :]
                            idx[:, col] = (ci * hp * wp + rows).ravel()
                            col += 1
                wmat_t = np.ascontiguousarray(
                    names["w"].data.reshape(g["out_ch"], -1).T)
                plan.append(("conv", idx, wmat_t, names["b"].data,
                             (c, h, w, p, hp, wp, oh, ow, g["out_ch"]),
                             spec.activation))
                shape = (g["out_ch"], oh, ow)
            elif spec.kind == "flatten":
                plan.append(("flatten", None, None, None, None, spec.activation))
                shape = (int(np.prod(shape)),)
            elif spec.kind == "dense":
                plan.append(("dense", None, names["w"].data, names["b"].data,
                             None, spec.activation))
                shape = (g["out"],)
            else:
                return None
        return plan

    def encode(self, image: np.ndarray) -> np.ndarray:
        img = np.asarray(image, dtype=self.network.dtype)
        size = self.cfg.image_size
        if img.shape != (size, size):
            raise ValueError(f"encoder expects ({size}, {size}) images, got {img.shape}")
        if self._plan is None:
            self._plan = self._build_plan() or False
        if self._plan is False:
            raw = self.network.forward_np(img[None, None, :, :])[0]
            return (raw - self.obs_mean) / self.obs_std
        a = img[None, :, :]
        for kind, idx, wmat, b, geom, act in self._plan:
            if kind == "conv":
                c, h, w, p, hp, wp, oh, ow, cout = geom
                if p:
                    buf = np.zeros((c, hp, wp), dtype=a.dtype)
                    buf[:, p:-p, p:-p] = a
                else:
                    buf = a
                cols = buf.reshape(-1).take(idx)
                a = (cols @ wmat + b).T.reshape(cout, oh, ow)
            elif kind == "flatten":
                a = a.reshape(-1)
            else:
                a = a @ wmat + b
            if act == "leaky_relu":
                a = np.where(a > 0, a, 0.01 * a)
            elif act == "relu":
                a = np.maximum(a, 0.0)
            elif act == "tanh":
                a = np.tanh(a)
        return (a - self.obs_mean) / self.obs_std

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, t in self.network.store.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        h.update(self.obs_mean.tobytes())
        h.update(self.obs_std.tobytes())
        return h.hexdigest()

    def save(self, path, extra_meta: dict | None = None):
        meta = {"kind": "encoder", "config": asdict(self.cfg),
                "arch": self.network.arch_dict()}
        meta.update(extra_meta or {})
        arrays = dict(self.network.store.state_arrays())
        arrays["obs_mean"] = self.obs_mean
        arrays["obs_std"] = self.obs_std
        save_checkpoint(path, arrays, meta)

    @staticmethod
    def load(path) -> "FrozenEncoder":
        arrays, meta = load_checkpoint(path)
        cfg_d = dict(meta["config"])
        cfg_d["channels"] = tuple(cfg_d["channels"])
        cfg = EncoderConfig(**cfg_d)
        net = Network.from_arch(meta["arch"], rng=np.random.default_rng(0))
        obs_mean = arrays.pop("obs_mean")
        obs_std = arrays.pop("obs_std")
        net.store.load_state_arrays(arrays)
        return FrozenEncoder(net, cfg, obs_mean, obs_std)

    @staticmethod
    def from_autoencoder(ae: Autoencoder,
                         standardize_on: np.ndarray | None = None) -> "FrozenEncoder":
        """Freeze the encoder half; when given a stack of images, capture
        per-component latent statistics for observation standardization."""
        arch = ae.encoder.arch_dict()
        net = Network.from_arch(arch, rng=np.random.default_rng(0))
        net.store.load_state_arrays(
            {n: a for n, a in ae.store.state_arrays().items() if n.startswith("enc.")})
        obs_mean = obs_std = None
        if standardize_on is not None:
            z = net.forward_np(np.asarray(standardize_on, dtype=np.float64)[:, None, :, :])
            obs_mean = z.mean(axis=0)
            obs_std = np.maximum(z.std(axis=0), 1e-3)
        return FrozenEncoder(net, cfg=ae.cfg, obs_mean=obs_mean, obs_std=obs_std)
