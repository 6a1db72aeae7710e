"""Cosine-similarity batch graph and symmetric-normalised GCN propagation.

The graph is rebuilt from whatever batch of pooled features the caller
passes in. It is treated as a constant during differentiation: gradients
flow through ``F`` and ``W`` in ``norm_adj @ F @ W`` but not through the
similarities that built ``norm_adj``.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from fermech import NUM_CLASSES
from fermech.errors import ConfigError, ShapeError
from fermech.numerics import as_tensor, cosine_similarity_matrix


@dataclass(frozen=True)
class Graph:
    adj: np.ndarray

    @property
    def n(self):
        return self.adj.shape[0]


@dataclass(frozen=True)
class GcnLayer:
    w: np.ndarray
    activation: str = "relu"


@dataclass(frozen=True)
class GusConfig:
    layers: tuple = (32, NUM_CLASSES)
    clamp_negative_sim: bool = True
    degrees_from: str = "a_tilde"
    lr: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(int(d) for d in self.layers))
        if not self.layers or any(d <= 0 for d in self.layers):
            raise ConfigError(f"gus.layers must be positive widths, got {self.layers}")
        if self.layers[-1] != NUM_CLASSES:
            raise ConfigError(f"last gus layer must output {NUM_CLASSES} logits")
        if self.degrees_from not in ("a_tilde", "a"):
            raise ConfigError(f"gus.degrees_from must be a_tilde or a, got {self.degrees_from!r}")
        if not self.lr > 0:
            raise ConfigError(f"gus.lr must be positive, got {self.lr}")


def build_affinity(features, clamp_negative=True):
    f = as_tensor(features)
    if f.ndim == 1:
        f = f[None]
    sim, degenerate = cosine_similarity_matrix(f)
    if degenerate.any():
        warnings.warn(
            f"{int(degenerate.sum())} zero-norm feature(s) left as isolated graph nodes",
            RuntimeWarning,
            stacklevel=2,
        )
    if clamp_negative:
        sim = np.maximum(sim, 0.0)
    np.fill_diagonal(sim, 0.0)
    sim = 0.5 * (sim + sim.T)
    return Graph(sim)


def normalize_adjacency(g, degrees_from="a_tilde"):
    """``D^-1/2 (A + I) D^-1/2`` with degrees taken from ``A + I`` by default."""
    a_tilde = g.adj + np.eye(g.n)
    src = a_tilde if degrees_from == "a_tilde" else g.adj
    deg = src.sum(axis=1)
    # sqrt of the outer product keeps the result exactly symmetric
    scale = np.sqrt(np.outer(deg, deg))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(scale > 0, a_tilde / scale, 0.0)
    return out


def _activate(z, activation):
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "identity":
        return z
    raise ConfigError(f"unknown GCN activation {activation!r}")


def gcn_forward(f, norm_adj, layer):
    """One propagation step; ``norm_adj`` is a Graph or a normalised matrix."""
    if isinstance(norm_adj, Graph):
        norm_adj = normalize_adjacency(norm_adj)
    f = as_tensor(f)
    w = as_tensor(layer.w)
    if f.ndim != 2 or f.shape[0] != norm_adj.shape[0] or f.shape[1] != w.shape[0]:
        raise ShapeError(f"gcn shapes: features {f.shape}, graph {norm_adj.shape}, weight {w.shape}")
    return _activate(norm_adj @ f @ w, layer.activation)


def gcn_backward(f, norm_adj, layer, d_out):
    """Gradients of one layer w.r.t. ``(f, w)`` for a fixed graph."""
    f = as_tensor(f)
    w = as_tensor(layer.w)
    af = norm_adj @ f
    z = af @ w
    dz = np.asarray(d_out) * (z > 0) if layer.activation == "relu" else np.asarray(d_out)
    dw = af.T @ dz
    df = norm_adj.T @ (dz @ w.T)
    return df, dw


def init_gus_layers(in_dim, cfg, rng=None):
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    params = {}
    d = in_dim
    for k, width in enumerate(cfg.layers):
        bound = 1.0 / np.sqrt(d)
        params[f"gcn{k}"] = rng.uniform(-bound, bound, size=(d, width))
        d = width
    return params


def layers_from_params(params, cfg):
    n = len(cfg.layers)
    return [
        GcnLayer(params[f"gcn{k}"], "identity" if k == n - 1 else "relu") for k in range(n)
    ]


def gus_head(features, layers, cfg=GusConfig()):
    """Per-node logits for a batch; returns ``(logits, cache)``."""
    f = as_tensor(features)
    if f.ndim == 1:
        f = f[None]
    g = build_affinity(f, cfg.clamp_negative_sim)
    a_hat = normalize_adjacency(g, cfg.degrees_from)
    acts = [f]
    for layer in layers:
        acts.append(gcn_forward(acts[-1], a_hat, layer))
    return acts[-1], {"a_hat": a_hat, "acts": acts}


def gus_head_backward(layers, cache, d_logits):
    """Gradients w.r.t. each layer weight and the input features."""
    a_hat = cache["a_hat"]
    acts = cache["acts"]
    d = np.asarray(d_logits)
    dws = [None] * len(layers)
    for k in range(len(layers) - 1, -1, -1):
        d, dws[k] = gcn_backward(acts[k], a_hat, layers[k], d)
    return dws, d
