"""Mid-level representation mixing and the auxiliary pooled branch."""

import logging
from dataclasses import dataclass

import numpy as np

from fermech.backbone import gap, gap_grad
from fermech.errors import ContractError, DomainError, ShapeError
from fermech.losses import cross_entropy
from fermech.numerics import as_tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MixMask:
    positions: frozenset
    grid: tuple

    def __post_init__(self):
        h, w = self.grid
        for r, c in self.positions:
            if not (0 <= r < h and 0 <= c < w):
                raise DomainError(f"mask position {(r, c)} outside grid {self.grid}")

    def to_array(self):
        m = np.zeros(self.grid, dtype=bool)
        for r, c in self.positions:
            m[r, c] = True
        return m

    def complement(self):
        h, w = self.grid
        every = {(r, c) for r in range(h) for c in range(w)}
        return MixMask(frozenset(every - self.positions), self.grid)


@dataclass(frozen=True)
class MreConfig:
    lam: float = 1.0
    noise_ratio: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise DomainError(f"mre lambda must be finite and >= 0, got {self.lam}")
        if not 0 <= self.noise_ratio <= 1:
            raise DomainError(f"noise_ratio must be in [0, 1], got {self.noise_ratio}")


def sample_mix_mask(grid, noise_ratio, rng):
    h, w = grid
    if h <= 0 or w <= 0:
        raise DomainError(f"grid must be positive, got {grid}")
    if not 0 <= noise_ratio <= 1:
        raise DomainError(f"noise_ratio must be in [0, 1], got {noise_ratio}")
    k = int(round(noise_ratio * h * w))
    picks = rng.choice(h * w, size=k, replace=False)
    return MixMask(frozenset((int(i) // w, int(i) % w) for i in picks), (h, w))


def mix_representations(r_i, r_j, mask, label_i=None, label_j=None):
    """Replace every channel of ``r_i`` at masked positions with ``r_j``."""
    r_i = as_tensor(r_i)
    r_j = as_tensor(r_j)
    if r_i.shape != r_j.shape:
        raise ShapeError(f"mixing maps of shapes {r_i.shape} and {r_j.shape}")
    if r_i.shape[-2:] != tuple(mask.grid):
        raise ShapeError(f"mask grid {mask.grid} does not match map {r_i.shape}")
    if label_i is not None and label_j is not None and label_i == label_j:
        raise ContractError(f"mixing partner shares the expression label {label_i}")
    return np.where(mask.to_array(), r_j, r_i)


def choose_partners(labels, rng):
    """For each sample, a uniformly drawn batch index with a different label.

    ``-1`` marks samples without any such partner; they stay unmixed.
    """
    labels = np.asarray(labels)
    other = labels[:, None] != labels[None, :]
    counts = other.sum(axis=1)
    u = rng.random(labels.size)
    # pick the k-th eligible index, k uniform in [0, count)
    k = np.minimum((u * counts).astype(np.int64), np.maximum(counts - 1, 0))
    ranks = np.cumsum(other, axis=1) - 1
    hit = other & (ranks == k[:, None])
    partners = np.where(counts > 0, hit.argmax(axis=1), -1)
    lonely = int((counts == 0).sum())
    if lonely:
        log.info("%d sample(s) have no partner with a different label; left unmixed", lonely)
    return partners


def sample_batch_masks(n, grid, noise_ratio, rng):
    """``n`` independent masks as a boolean (n, H, W) array."""
    h, w = grid
    k = int(round(noise_ratio * h * w))
    # the first k entries of a uniform random ordering form a uniform k-subset
    order = np.argsort(rng.random((n, h * w)), axis=1, kind="stable")[:, :k]
    masks = np.zeros((n, h * w), dtype=bool)
    np.put_along_axis(masks, order, True, axis=1)
    return masks.reshape(n, h, w)


def mix_batch(mid, partners, masks):
    """Batched mixing of ``mid`` (N, C, H, W) with ``mid[partners]``."""
    mid = as_tensor(mid)
    active = partners >= 0
    take = masks & active[:, None, None]
    src = mid[np.where(active, partners, np.arange(len(partners)))]
    return np.where(take[:, None], src, mid)


def mix_batch_grad(d_mixed, partners, masks):
    """Route the gradient of a mixed batch back to the unmixed maps."""
    d_mixed = np.asarray(d_mixed)
    active = partners >= 0
    take = (masks & active[:, None, None])[:, None]
    d_mid = np.where(take, 0.0, d_mixed)
    to_partner = np.where(take, d_mixed, 0.0)
    np.add.at(d_mid, partners[active], to_partner[active])
    return d_mid


def init_branch(mid_channels, num_classes, rng):
    bound = 1.0 / np.sqrt(mid_channels)
    return {
        "w_branch": rng.uniform(-bound, bound, size=(mid_channels, num_classes)),
        "b_branch": rng.uniform(-bound, bound, size=(num_classes,)),
    }


def mre_branch(mixed, w, b=None):
    pooled = gap(mixed)
    w = as_tensor(w)
    if pooled.shape[-1] != w.shape[0]:
        raise ShapeError(f"branch weights {w.shape} do not fit {pooled.shape[-1]} channels")
    out = pooled @ w
    return out if b is None else out + b


def mre_branch_grad(mixed, w, d_logits):
    """Gradients of the branch w.r.t. ``(w, b, mixed)``."""
    mixed = as_tensor(mixed)
    pooled = gap(mixed)
    d_logits = np.asarray(d_logits)
    if pooled.ndim == 1:
        dw = np.outer(pooled, d_logits)
        db = d_logits.copy()
    else:
        dw = pooled.T @ d_logits
        db = d_logits.sum(axis=0)
    d_mixed = gap_grad(d_logits @ np.asarray(w).T, mixed.shape[-2:])
    return dw, db, d_mixed


def mre_loss(high_logits, branch_logits, label, cfg, base_loss=cross_entropy):
    return base_loss(high_logits, label) + cfg.lam * base_loss(branch_logits, label)
