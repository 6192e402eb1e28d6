"""The visual forward model: a convolutional decoder from joint angles to an image.

Layer stack::

    FC -> ReLU -> FC -> ReLU -> reshape (h/8, w/8, C)
    -> [UpConv -> ReLU -> Conv -> ReLU] x2
    -> Dropout -> UpConv -> ReLU -> Conv -> Sigmoid

Three UpConv stages double the spatial size from (h/8, w/8) to (h, w); the
channel count rises and falls across stages. The decoder exposes the forward
prediction g(mu) and the Jacobian-transpose product dg(mu)^T v via one
backward pass; the full Jacobian is never materialized.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, DataError, DimensionError, FormatError

Array = np.ndarray

CHECKPOINT_MAGIC = b"PXAI"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class DecoderConfig:
    joint_count: int = 4
    image_width: int = 80
    image_height: int = 56
    fc1_width: int = 512
    base_channels: int = 16
    stage_channels: tuple[int, int, int] = (32, 16, 8)
    dropout_rate: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.joint_count < 1:
            raise ConfigError("joint_count must be positive")
        if self.image_width % 8 or self.image_height % 8:
            raise ConfigError(
                "image dimensions must be divisible by 8 "
                "(three 2x upsampling stages)")
        if len(self.stage_channels) != 3:
            raise ConfigError("stage_channels must list three UpConv stages")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")

    @property
    def seed_hw(self) -> tuple[int, int]:
        return self.image_height // 8, self.image_width // 8

    @property
    def fc2_width(self) -> int:
        h8, w8 = self.seed_hw
        return self.base_channels * h8 * w8

    def to_json(self) -> dict:
        return {
            "joint_count": self.joint_count,
            "image_width": self.image_width,
            "image_height": self.image_height,
            "fc1_width": self.fc1_width,
            "base_channels": self.base_channels,
            "stage_channels": list(self.stage_channels),
            "dropout_rate": self.dropout_rate,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, data: dict) -> "DecoderConfig":
        try:
            return cls(
                joint_count=data["joint_count"],
                image_width=data["image_width"],
                image_height=data["image_height"],
                fc1_width=data["fc1_width"],
                base_channels=data["base_channels"],
                stage_channels=tuple(data["stage_channels"]),
                dropout_rate=data["dropout_rate"],
                seed=data["seed"],
            )
        except KeyError as exc:
            raise FormatError(f"decoder config missing field {exc}") from exc

    def fingerprint(self) -> str:
        canon = json.dumps(self.to_json(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


class Decoder:
    """Built decoder: configuration, layer list, and trained weights."""

    def __init__(self, config: DecoderConfig, layers: list):
        self.config = config
        self.layers = layers
        self.fingerprint = config.fingerprint()

    # -- construction -------------------------------------------------------

    @classmethod
    def build(cls, config: DecoderConfig,
              rng: np.random.Generator | None = None) -> "Decoder":
        if rng is None:
            rng = np.random.default_rng(config.seed)
        h8, w8 = config.seed_hw
        c0 = config.base_channels
        c1, c2, c3 = config.stage_channels
        layers = [
            nn.FullyConnected(config.joint_count, config.fc1_width, rng=rng),
            nn.ReLU(),
            nn.FullyConnected(config.fc1_width, config.fc2_width, rng=rng),
            nn.ReLU(),
            nn.Reshape((h8, w8, c0)),
            nn.UpConv2d(c0, c1, rng=rng),
            nn.ReLU(),
            nn.Conv2d(c1, c1, rng=rng),
            nn.ReLU(),
            nn.UpConv2d(c1, c2, rng=rng),
            nn.ReLU(),
            nn.Conv2d(c2, c2, rng=rng),
            nn.ReLU(),
            nn.Dropout(config.dropout_rate),
            nn.UpConv2d(c2, c3, rng=rng),
            nn.ReLU(),
            nn.Conv2d(c3, 1, rng=rng, init="xavier"),
            nn.Sigmoid(),
        ]
        return cls(config, layers)

    # -- parameters ---------------------------------------------------------

    @property
    def params(self) -> list[Array]:
        out = []
        for layer in self.layers:
            out.extend(layer.params)
        return out

    def payload_hash(self) -> str:
        digest = hashlib.sha256()
        for p in self.params:
            digest.update(np.ascontiguousarray(p, dtype="<f4").tobytes())
        return digest.hexdigest()[:16]

    # -- forward / backward -------------------------------------------------

    def _check_mu(self, mus: Array):
        mus = np.asarray(mus, dtype=np.float32)
        single = mus.ndim == 1
        if single:
            mus = mus[None]
        if mus.ndim != 2 or mus.shape[1] != self.config.joint_count:
            raise DimensionError(
                f"expected ({self.config.joint_count},) joint vector(s), "
                f"got {mus.shape}")
        return mus, single

    def forward_with_ctx(self, mus: Array, *, train: bool = False,
                         rng: np.random.Generator | None = None):
        """Run the stack on (K, n) beliefs; returns (K, h, w) images and the
        per-layer caches needed for a backward pass."""
        x = mus
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x, train=train, rng=rng)
            caches.append(cache)
        return x[..., 0], caches

    def backward_from_ctx(self, caches, upstream: Array, *,
                          need_param_grads: bool):
        g = upstream[..., None]  # (K, h, w, 1)
        grads: list[Array] = []
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            g, pg = layer.backward(g, cache, need_param_grads=need_param_grads)
            if need_param_grads:
                grads[:0] = list(pg)
        return g, grads

    def forward(self, mu: Array) -> Array:
        """Predicted image g(mu) in eval mode; (h, w) for a single belief."""
        mus, single = self._check_mu(mu)
        imgs, _ = self.forward_with_ctx(mus)
        return imgs[0] if single else imgs

    def vjp(self, mu: Array, v: Array) -> Array:
        """Jacobian-transpose product dg(mu)^T v via one backward pass.

        ``v`` is an (h, w) image-shaped vector or its row-major flattening;
        batched inputs take (K, n) and (K, h, w).
        """
        mus, single = self._check_mu(mu)
        h, w = self.config.image_height, self.config.image_width
        v = np.asarray(v, dtype=np.float32)
        if single:
            if v.size != h * w:
                raise DimensionError(f"expected {h * w} elements in v, got {v.size}")
            v = v.reshape(1, h, w)
        elif v.shape != (mus.shape[0], h, w):
            raise DimensionError(
                f"expected batch image shape {(mus.shape[0], h, w)}, got {v.shape}")
        _, caches = self.forward_with_ctx(mus)
        g, _ = self.backward_from_ctx(caches, v, need_param_grads=False)
        return g[0] if single else g

    def vjp_from_ctx(self, caches, v: Array) -> Array:
        g, _ = self.backward_from_ctx(caches, v, need_param_grads=False)
        return g


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainHyper:
    lr: float = 1e-4
    decay: float = 0.95
    decay_interval: int = 5000
    batch_size: int = 200
    max_steps: int = 7000
    eval_interval: int = 250
    patience: int = 5
    train_fraction: float = 0.9
    seed: int = 0


@dataclass
class TrainResult:
    steps: int
    final_train_mse: float
    final_test_mse: float
    curves: list[tuple[int, float, float, float]] = field(default_factory=list)
    stopped_early: bool = False

    def curves_csv(self) -> str:
        lines = ["step,train_mse,test_mse,lr"]
        for step, train_mse, test_mse, lr in self.curves:
            lines.append(f"{step},{train_mse:.8f},{test_mse:.8f},{lr:.8e}")
        return "\n".join(lines) + "\n"


def _eval_mse(decoder: Decoder, qs: Array, imgs: Array, chunk: int = 256) -> float:
    total = 0.0
    for i in range(0, len(qs), chunk):
        pred = decoder.forward(qs[i:i + chunk])
        diff = pred.astype(np.float64) - imgs[i:i + chunk]
        total += float(np.sum(diff * diff))
    return total / imgs.size


def train(decoder: Decoder, qs: Array, images: Array,
          hyper: TrainHyper | None = None, *,
          start_step: int = 0, log=None) -> TrainResult:
    """Train in place on (q, image) pairs with Adam and early stopping.

    The dataset is split train/test by a seeded shuffle. Test MSE is
    evaluated every ``eval_interval`` steps; training stops early after
    ``patience`` consecutive evaluations without improvement.
    """
    if hyper is None:
        hyper = TrainHyper()
    qs = np.asarray(qs, dtype=np.float32)
    images = np.asarray(images, dtype=np.float32)
    if len(qs) == 0:
        raise DataError("empty dataset")
    if len(qs) != len(images):
        raise DataError(f"{len(qs)} joint rows but {len(images)} images")

    rng = np.random.default_rng(np.random.SeedSequence([hyper.seed, 0x7261]))
    drop_rng = np.random.default_rng(np.random.SeedSequence([hyper.seed, 0xd0]))

    perm = rng.permutation(len(qs))
    n_train = max(1, int(round(hyper.train_fraction * len(qs))))
    train_idx, test_idx = perm[:n_train], perm[n_train:]
    if len(test_idx) == 0:
        test_idx = train_idx  # degenerate datasets: evaluate on train
    q_tr, im_tr = qs[train_idx], images[train_idx]
    q_te, im_te = qs[test_idx], images[test_idx]

    params = decoder.params
    opt = nn.Adam(params, lr=hyper.lr, decay=hyper.decay,
                  decay_interval=hyper.decay_interval)
    opt.step_count = start_step

    best_test = np.inf
    evals_since_best = 0
    curves: list[tuple[int, float, float, float]] = []
    stopped_early = False
    last_train = np.inf

    step = start_step
    end_step = start_step + hyper.max_steps
    order = np.array([], dtype=np.int64)
    while step < end_step:
        if len(order) < hyper.batch_size:
            order = np.concatenate([order, rng.permutation(n_train)])
        batch, order = order[:hyper.batch_size], order[hyper.batch_size:]
        pred, caches = decoder.forward_with_ctx(q_tr[batch], train=True, rng=drop_rng)
        last_train, grad = nn.mse_loss(pred, im_tr[batch])
        _, grads = decoder.backward_from_ctx(caches, grad, need_param_grads=True)
        opt.step(params, grads)
        step += 1

        if step % hyper.eval_interval == 0 or step == end_step:
            test_mse = _eval_mse(decoder, q_te, im_te)
            curves.append((step, last_train, test_mse, opt.effective_lr(step)))
            if log is not None:
                log(step, last_train, test_mse)
            if test_mse < best_test - 1e-12:
                best_test = test_mse
                evals_since_best = 0
            else:
                evals_since_best += 1
                if evals_since_best >= hyper.patience:
                    stopped_early = True
                    break

    final_test = curves[-1][2] if curves else _eval_mse(decoder, q_te, im_te)
    return TrainResult(steps=step, final_train_mse=last_train,
                       final_test_mse=final_test, curves=curves,
                       stopped_early=stopped_early)


# ---------------------------------------------------------------------------
# checkpoint io
# ---------------------------------------------------------------------------
# Layout: magic "PXAI" | u32 version | u32 len + config json | 16-byte arch
# fingerprint | 16-byte payload hash | u64 payload bytes | little-endian f32
# weights in layer order | u32 len + metadata json.

def save_checkpoint(decoder: Decoder, path, metadata: dict | None = None) -> None:
    meta = dict(metadata or {})
    config_blob = json.dumps(decoder.config.to_json(), sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(p, dtype="<f4").tobytes()
                       for p in decoder.params)
    meta_blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        fh.write(decoder.fingerprint.encode())
        fh.write(hashlib.sha256(payload).hexdigest()[:16].encode())
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        fh.write(struct.pack("<I", len(meta_blob)))
        fh.write(meta_blob)


def load_checkpoint(path) -> tuple[Decoder, dict]:
    """Load and verify a checkpoint; raises FormatError naming the bad field."""
    with open(path, "rb") as fh:
        data = fh.read()

    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"{path}: truncated checkpoint while reading {what}")
        blob = data[pos:pos + n]
        pos += n
        return blob

    if take(4, "magic") != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic, not a decoder checkpoint")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<I", take(4, "config length"))
    config = DecoderConfig.from_json(json.loads(take(cfg_len, "config")))
    stored_fp = take(16, "fingerprint").decode()
    if stored_fp != config.fingerprint():
        raise FormatError(
            f"{path}: fingerprint mismatch: stored {stored_fp}, "
            f"config implies {config.fingerprint()}")
    stored_payload_hash = take(16, "payload hash").decode()
    (payload_len,) = struct.unpack("<Q", take(8, "payload length"))
    payload = take(payload_len, "weight payload")
    if hashlib.sha256(payload).hexdigest()[:16] != stored_payload_hash:
        raise FormatError(f"{path}: weight payload does not match its fingerprint")
    (meta_len,) = struct.unpack("<I", take(4, "metadata length"))
    metadata = json.loads(take(meta_len, "metadata"))

    decoder = Decoder.build(config)
    expected = sum(p.size for p in decoder.params) * 4
    if payload_len != expected:
        raise FormatError(
            f"{path}: payload holds {payload_len} bytes, architecture "
            f"needs {expected}")
    offset = 0
    for p in decoder.params:
        n = p.size * 4
        p[...] = np.frombuffer(payload[offset:offset + n],
                               dtype="<f4").reshape(p.shape)
        offset += n
    return decoder, metadata


def ci_config(joint_count: int = 4, seed: int = 0) -> DecoderConfig:
    """Smaller 40x24 decoder used by the fast test profile."""
    return DecoderConfig(joint_count=joint_count, image_width=40,
                         image_height=24, fc1_width=256, seed=seed)
