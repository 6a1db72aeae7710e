"""Miniature two-tap network standing in for a ResNet backbone.

Layout::

    input -> affine -> relu -> reshape (C, H, W)   [mid tap]
          -> affine -> relu                        [high tap]
          -> affine                                [logits]

Parameters live in a plain dict so that heads (the mid-level branch, the GCN
layers) can share the same SGD step and checkpoint format.
"""

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from fermech import NUM_CLASSES
from fermech.errors import ConfigError, DataError, ShapeError, TrainingError
from fermech.numerics import as_tensor

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class BackboneConfig:
    input_kind: str = "vector"
    input_shape: tuple = (32,)
    mid_channels: int = 8
    mid_spatial: tuple = (4, 4)
    high_dim: int = 32
    high_activation: str = "relu"
    num_classes: int = NUM_CLASSES
    seed: int = 0
    lr: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "mid_spatial", tuple(int(s) for s in self.mid_spatial))
        if self.input_kind not in ("vector", "image"):
            raise ConfigError(f"backbone.input_kind must be vector or image, got {self.input_kind!r}")
        want = 1 if self.input_kind == "vector" else 3
        if len(self.input_shape) != want:
            raise ConfigError(f"{self.input_kind} input needs {want} dims, got {self.input_shape}")
        dims = (*self.input_shape, self.mid_channels, *self.mid_spatial, self.high_dim)
        if len(self.mid_spatial) != 2 or any(d <= 0 for d in dims):
            raise ConfigError(f"backbone dimensions must be positive, got {dims}")
        if self.high_activation not in ("relu", "identity"):
            raise ConfigError(f"high_activation must be relu or identity, got {self.high_activation!r}")
        if self.num_classes != NUM_CLASSES:
            raise ConfigError(f"num_classes must be {NUM_CLASSES}")
        if not self.lr > 0:
            raise ConfigError(f"backbone.lr must be positive, got {self.lr}")

    @property
    def in_dim(self):
        return math.prod(self.input_shape)

    @property
    def mid_dim(self):
        return self.mid_channels * math.prod(self.mid_spatial)


@dataclass(frozen=True)
class BackboneState:
    params: dict
    step: int = 0


@dataclass
class ForwardTaps:
    mid: np.ndarray
    high: np.ndarray
    logits: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_backbone(cfg, rng=None):
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    params = {
        "w_in": _uniform(rng, cfg.in_dim, (cfg.in_dim, cfg.mid_dim)),
        "b_in": _uniform(rng, cfg.in_dim, (cfg.mid_dim,)),
        "w_mid": _uniform(rng, cfg.mid_dim, (cfg.mid_dim, cfg.high_dim)),
        "b_mid": _uniform(rng, cfg.mid_dim, (cfg.high_dim,)),
        "w_out": _uniform(rng, cfg.high_dim, (cfg.high_dim, cfg.num_classes)),
        "b_out": _uniform(rng, cfg.high_dim, (cfg.num_classes,)),
    }
    return BackboneState(params)


def forward(state, x, cfg):
    """Run the backbone on one sample (``cfg.input_shape``) or a batch."""
    x = as_tensor(x)
    single = x.shape == cfg.input_shape
    if single:
        x = x[None]
    if x.shape[1:] != cfg.input_shape:
        raise ShapeError(f"payload shape {x.shape[1:]} does not match input {cfg.input_shape}")
    p = state.params
    n = x.shape[0]
    xf = x.reshape(n, cfg.in_dim)
    a1 = xf @ p["w_in"] + p["b_in"]
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ p["w_mid"] + p["b_mid"]
    high = np.maximum(a2, 0.0) if cfg.high_activation == "relu" else a2
    logits = high @ p["w_out"] + p["b_out"]
    mid = h1.reshape(n, cfg.mid_channels, *cfg.mid_spatial)
    cache = {"x": xf, "a1": a1, "h1": h1, "a2": a2, "high": high}
    if single:
        return ForwardTaps(mid[0], high[0], logits[0], cache)
    return ForwardTaps(mid, high, logits, cache)


def backward(state, taps, cfg, d_logits=None, d_high=None, d_mid=None):
    """Parameter gradients given upstream gradients at any of the three taps."""
    p = state.params
    c = taps.cache
    n = c["x"].shape[0]
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    dh = np.zeros((n, cfg.high_dim))
    if d_logits is not None:
        dl = np.asarray(d_logits).reshape(n, cfg.num_classes)
        grads["w_out"] = c["high"].T @ dl
        grads["b_out"] = dl.sum(axis=0)
        dh = dh + dl @ p["w_out"].T
    if d_high is not None:
        dh = dh + np.asarray(d_high).reshape(n, cfg.high_dim)
    da2 = dh * (c["a2"] > 0) if cfg.high_activation == "relu" else dh
    grads["w_mid"] = c["h1"].T @ da2
    grads["b_mid"] = da2.sum(axis=0)
    dh1 = da2 @ p["w_mid"].T
    if d_mid is not None:
        dh1 = dh1 + np.asarray(d_mid).reshape(n, cfg.mid_dim)
    da1 = dh1 * (c["a1"] > 0)
    grads["w_in"] = c["x"].T @ da1
    grads["b_in"] = da1.sum(axis=0)
    return grads


def gap(mid):
    """Global average pooling over the two trailing spatial axes."""
    mid = as_tensor(mid)
    if mid.ndim < 3 or mid.shape[-1] * mid.shape[-2] < 1:
        raise ShapeError(f"gap needs a (..., C, H, W) map, got {mid.shape}")
    return mid.mean(axis=(-2, -1))


def gap_grad(d_pooled, spatial):
    h, w = spatial
    d = np.asarray(d_pooled)[..., None, None] / (h * w)
    return np.broadcast_to(d, d.shape[:-2] + (h, w)).copy()


def sgd_step(state, grads, lr):
    if not lr >= 0:
        raise TrainingError(f"learning rate must be non-negative, got {lr}")
    new = {}
    for name, w in state.params.items():
        g = grads.get(name)
        if g is None:
            new[name] = w
            continue
        g = np.asarray(g)
        if g.shape != w.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {w.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name}")
        new[name] = w - lr * g
    return replace(state, params=new, step=state.step + 1)


def _encode(obj):
    if isinstance(obj, tuple):
        return list(obj)
    return obj


def save_checkpoint(path, params, config, step=0):
    """Write config plus named flat parameter lists as JSON.

    Floats are written with ``repr`` which round-trips float64 exactly.
    """
    blob = {
        "version": CHECKPOINT_VERSION,
        "config": {k: _encode(v) for k, v in config.items()},
        "step": int(step),
        "params": {
            name: {"shape": list(np.shape(v)), "data": [float(a) for a in np.ravel(v)]}
            for name, v in sorted(params.items())
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path):
    try:
        with open(path, encoding="utf-8") as fh:
            blob = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read checkpoint ({exc})") from exc
    if blob.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {blob.get('version')!r}")
    params = {}
    for name, entry in blob["params"].items():
        arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        params[name] = arr
    return params, blob["config"], blob["step"]


def config_dict(cfg):
    return asdict(cfg)
