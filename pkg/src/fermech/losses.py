"""Cross-entropy, focal and sparse-regularisation losses with gradients.

Every function takes logits of shape ``(6,)`` or ``(N, 6)``. Single samples
give a float; batches give one loss per row. Gradients are with respect to
the logits and have the logits' shape.
"""

from dataclasses import dataclass

import numpy as np

from fermech.errors import DomainError
from fermech.numerics import as_tensor, log_softmax, softmax


@dataclass(frozen=True)
class LossConfig:
    omega1: float = 1.0
    omega2: float = 0.5
    omega3: float = 0.1
    gamma: float = 2.0
    tau: float = 0.5

    def __post_init__(self):
        ws = (self.omega1, self.omega2, self.omega3)
        if any(w < 0 for w in ws) or not sum(ws) > 0:
            raise DomainError(f"loss weights must be >= 0 with positive sum, got {ws}")
        if self.gamma < 0:
            raise DomainError(f"focal gamma must be >= 0, got {self.gamma}")
        if not 0 < self.tau <= 1:
            raise DomainError(f"sparse tau must lie in (0, 1], got {self.tau}")


def _prepare(logits, label):
    z = as_tensor(logits)
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    y = np.atleast_1d(np.asarray(label))
    if y.shape != (z2.shape[0],):
        raise DomainError(f"{y.size} labels for {z2.shape[0]} logit rows")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise DomainError(f"labels must be integers, got {y}")
        y = y.astype(np.int64)
    k = z2.shape[1]
    if np.any(y < 0) or np.any(y >= k):
        raise DomainError(f"label outside 0..{k - 1}: {y}")
    return z2, y, single


def _finish(values, single):
    return float(values[0]) if single else values


def _one_hot(y, k):
    out = np.zeros((y.size, k))
    out[np.arange(y.size), y] = 1.0
    return out


def cross_entropy(logits, label):
    z, y, single = _prepare(logits, label)
    lp = log_softmax(z)
    return _finish(-lp[np.arange(y.size), y], single)


def cross_entropy_grad(logits, label):
    z, y, single = _prepare(logits, label)
    g = softmax(z) - _one_hot(y, z.shape[1])
    return g[0] if single else g


def focal_loss(logits, label, gamma=2.0):
    if gamma < 0:
        raise DomainError(f"focal gamma must be >= 0, got {gamma}")
    z, y, single = _prepare(logits, label)
    idx = np.arange(y.size)
    log_pt = log_softmax(z)[idx, y]
    pt = np.exp(log_pt)
    return _finish(-((1.0 - pt) ** gamma) * log_pt, single)


def focal_loss_grad(logits, label, gamma=2.0):
    z, y, single = _prepare(logits, label)
    idx = np.arange(y.size)
    p = softmax(z)
    log_pt = log_softmax(z)[idx, y]
    pt = p[idx, y]
    q = 1.0 - pt
    # dL/dpt * pt; the gamma*(1-pt)^(gamma-1) term is 0 once pt reaches 1
    with np.errstate(divide="ignore", invalid="ignore"):
        first = np.where(q > 0, gamma * q ** (gamma - 1.0) * pt * log_pt, 0.0)
    if gamma == 0:
        first = np.zeros_like(pt)
    coef = first - q**gamma
    g = coef[:, None] * (_one_hot(y, z.shape[1]) - p)
    return g[0] if single else g


def sparse_reg_loss(logits, tau=0.5):
    """Sum of ``p_k ** tau`` minus one; zero exactly on one-hot predictions."""
    if not 0 < tau <= 1:
        raise DomainError(f"sparse tau must lie in (0, 1], got {tau}")
    z = as_tensor(logits)
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    if tau == 1:
        return _finish(np.zeros(z2.shape[0]), single)
    pt = np.exp(tau * log_softmax(z2))
    return _finish(np.maximum(pt.sum(axis=1) - 1.0, 0.0), single)


def sparse_reg_loss_grad(logits, tau=0.5):
    z = as_tensor(logits)
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    if tau == 1:
        return np.zeros_like(z)
    p = softmax(z2)
    pt = np.exp(tau * log_softmax(z2))
    g = tau * (pt - p * pt.sum(axis=1, keepdims=True))
    return g[0] if single else g


def mixed_loss(logits, label, cfg=LossConfig()):
    total = cfg.omega1 * np.asarray(cross_entropy(logits, label))
    if cfg.omega2:
        total = total + cfg.omega2 * np.asarray(focal_loss(logits, label, cfg.gamma))
    if cfg.omega3:
        total = total + cfg.omega3 * np.asarray(sparse_reg_loss(logits, cfg.tau))
    return float(total) if total.ndim == 0 else total


def mixed_loss_grad(logits, label, cfg=LossConfig()):
    g = cfg.omega1 * cross_entropy_grad(logits, label)
    if cfg.omega2:
        g = g + cfg.omega2 * focal_loss_grad(logits, label, cfg.gamma)
    if cfg.omega3:
        g = g + cfg.omega3 * sparse_reg_loss_grad(logits, cfg.tau)
    return g


def mixed_loss_terms(logits, label, cfg=LossConfig()):
    """Batch sums of the three unweighted terms, for logging."""
    return {
        "ce": float(np.sum(cross_entropy(logits, label))),
        "focal": float(np.sum(focal_loss(logits, label, cfg.gamma))),
        "sparse": float(np.sum(sparse_reg_loss(logits, cfg.tau))),
    }
