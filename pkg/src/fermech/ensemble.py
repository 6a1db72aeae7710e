"""Weighted merging of post-softmax score sources and argmax decoding."""

from dataclasses import dataclass

import numpy as np

from fermech import NUM_CLASSES
from fermech.errors import ConfigError, ContractError

SCORE_TOL = 1e-9


@dataclass(frozen=True)
class EnsembleWeights:
    w_gus: float
    w_mre: float
    w_dmue: float

    def __post_init__(self):
        ws = self.as_tuple()
        if any(not np.isfinite(w) or w < 0 for w in ws) or not any(ws):
            raise ConfigError(f"ensemble weights must be >= 0 and not all zero, got {ws}")

    def as_tuple(self):
        return (self.w_gus, self.w_mre, self.w_dmue)

    def as_dict(self):
        return {"gus": self.w_gus, "mre": self.w_mre, "dmue": self.w_dmue}


SCHEMES = {
    "s1": EnsembleWeights(0.6, 0.2, 0.2),
    "s2": EnsembleWeights(0.4, 0.3, 0.3),
}


def parse_weights(text):
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != 3:
        raise ConfigError(f"weights need three comma-separated values g,m,d, got {text!r}")
    try:
        return EnsembleWeights(*(float(p) for p in parts))
    except ValueError as exc:
        raise ConfigError(f"weights {text!r}: {exc}") from exc


def check_scores(scores, source="scores", tol=SCORE_TOL):
    s = np.asarray(scores, dtype=np.float64)
    if s.shape[-1] != NUM_CLASSES:
        raise ContractError(f"{source}: expected {NUM_CLASSES} class scores, got shape {s.shape}")
    if not np.all(np.isfinite(s)) or np.any(s < 0):
        raise ContractError(f"{source}: scores must be finite and non-negative")
    if np.any(np.abs(s.sum(axis=-1) - 1.0) > tol):
        raise ContractError(f"{source}: scores do not sum to 1")
    return s


def merge_sources(sources, weights):
    """Weighted sum of named score arrays; names missing from ``sources`` are skipped."""
    out = None
    for name, w in weights.items():
        if name not in sources:
            continue
        term = w * check_scores(sources[name], name)
        out = term if out is None else out + term
    if out is None:
        raise ContractError(f"no score source among {sorted(weights)} was supplied")
    return out


def merge_scores(gus, mre, dmue, w):
    return merge_sources({"gus": gus, "mre": mre, "dmue": dmue}, w.as_dict())


def predict(merged):
    """Argmax over the last axis; ties go to the lowest class index."""
    return np.argmax(np.asarray(merged), axis=-1)
