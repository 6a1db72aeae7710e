"""Similarity grouping of test samples and majority-vote relabelling."""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from fermech.errors import ConfigError, DataError
from fermech.numerics import as_tensor, cosine_similarity_matrix

VOTE_EPS = 1e-12


@dataclass(frozen=True)
class CorrectionConfig:
    threshold: float = 0.93
    vote_fraction: float = 2 / 3
    min_subset: int = 3
    inclusive: bool = True

    def __post_init__(self):
        if not -1 < self.threshold <= 1:
            raise ConfigError(f"correction.threshold must lie in (-1, 1], got {self.threshold}")
        if not 0.5 < self.vote_fraction <= 1:
            raise ConfigError(f"correction.vote_fraction must lie in (0.5, 1], got {self.vote_fraction}")
        if self.min_subset < 2:
            raise ConfigError(f"correction.min_subset must be >= 2, got {self.min_subset}")


@dataclass(frozen=True)
class SubsetPartition:
    groups: tuple

    def __post_init__(self):
        seen = set()
        for g in self.groups:
            if not g:
                raise ValueError("empty group in partition")
            if seen & set(g):
                raise ValueError("groups overlap")
            seen |= set(g)

    def ids(self):
        return [i for g in self.groups for i in g]


def group_by_similarity(ids, features, cfg=CorrectionConfig()):
    """Connected components of the graph with an edge wherever cossim > threshold."""
    ids = list(ids)
    f = as_tensor(features)
    if f.ndim != 2 or f.shape[0] != len(ids):
        raise DataError(f"{len(ids)} ids for feature matrix of shape {f.shape}")
    if len(set(ids)) != len(ids):
        raise DataError("duplicate sample ids in feature set")
    if not ids:
        return SubsetPartition(())
    sim, degenerate = cosine_similarity_matrix(f)
    if degenerate.any():
        warnings.warn(
            f"{int(degenerate.sum())} zero-norm feature(s) kept as singleton groups",
            RuntimeWarning,
            stacklevel=2,
        )
    edges = sim > cfg.threshold
    edges[degenerate, :] = False
    edges[:, degenerate] = False
    np.fill_diagonal(edges, False)
    _, comp = connected_components(csr_matrix(edges), directed=False)
    buckets = {}
    for i, c in zip(ids, comp):
        buckets.setdefault(int(c), []).append(i)
    groups = sorted((tuple(sorted(g)) for g in buckets.values()), key=lambda g: g[0])
    return SubsetPartition(tuple(groups))


def _winner(labels, cfg):
    values, counts = np.unique(np.asarray(labels), return_counts=True)
    need = cfg.vote_fraction * len(labels)
    for v, c in zip(values, counts):
        ok = c >= need - VOTE_EPS if cfg.inclusive else c > need + VOTE_EPS
        if ok:
            return v.item()
    return None


def vote_correct(partition, preds, cfg=CorrectionConfig()):
    """Relabel each large-enough group to a label holding the required share."""
    out = dict(preds)
    for group in partition.groups:
        missing = [i for i in group if i not in preds]
        if missing:
            raise DataError(f"no prediction for grouped id(s) {missing[:5]}")
        if len(group) < cfg.min_subset:
            continue
        winner = _winner([preds[i] for i in group], cfg)
        if winner is not None:
            for i in group:
                out[i] = winner
    return out
