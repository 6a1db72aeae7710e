"""Synthetic datasets, class oversampling and image augmentation."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from fermech import CLASS_NAMES, NUM_CLASSES
from fermech.errors import ConfigError, DomainError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledSample:
    id: str
    payload: np.ndarray
    label: int

    def __post_init__(self):
        if not 0 <= int(self.label) < NUM_CLASSES:
            raise DomainError(f"sample {self.id}: label {self.label} outside 0..{NUM_CLASSES - 1}")


@dataclass
class Dataset:
    ids: list
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, k):
        return LabeledSample(self.ids[k], self.x[k], int(self.y[k]))

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset([self.ids[i] for i in idx], self.x[idx], self.y[idx])


@dataclass(frozen=True)
class AugmentConfig:
    flip_p: float = 0.5
    crop_p: float = 0.5
    crop_ratio: float = 0.875
    blur_p: float = 0.3
    blur_sigma: tuple = (0.1, 2.0)
    resize: int = 224

    def __post_init__(self):
        for name in ("flip_p", "crop_p", "blur_p"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"augment.{name} must be a probability")
        if not 0 < self.crop_ratio <= 1:
            raise ConfigError("augment.crop_ratio must lie in (0, 1]")
        lo, hi = self.blur_sigma
        if not 0 <= lo <= hi:
            raise ConfigError("augment.blur_sigma must be an ordered pair of sigmas >= 0")


def class_means(dim, separation, sigma=1.0):
    """Six means on scaled coordinate axes, pairwise exactly ``separation * sigma`` apart."""
    if dim < NUM_CLASSES:
        raise DomainError(f"need dim >= {NUM_CLASSES} for axis-aligned class means")
    means = np.zeros((NUM_CLASSES, dim))
    means[np.arange(NUM_CLASSES), np.arange(NUM_CLASSES)] = separation * sigma / np.sqrt(2.0)
    return means


def gen_synthetic(means, covs, n_per_class, seed, prefix="s", shuffle=True):
    """Draw ``n_per_class`` Gaussian samples per class; ids are zero-padded."""
    means = np.asarray(means, dtype=np.float64)
    if means.shape[0] != NUM_CLASSES:
        raise DomainError(f"need {NUM_CLASSES} class means, got {means.shape[0]}")
    if n_per_class < 1:
        raise DomainError("n_per_class must be >= 1")
    d = means.shape[1]
    covs = np.asarray(covs, dtype=np.float64)
    if covs.ndim == 2:
        covs = np.broadcast_to(covs, (NUM_CLASSES, d, d))
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for k in range(NUM_CLASSES):
        c = covs[k]
        if c.shape != (d, d) or not np.allclose(c, c.T, atol=1e-12):
            raise DomainError(f"covariance for class {CLASS_NAMES[k]} is not a symmetric {d}x{d} matrix")
        evals, evecs = np.linalg.eigh(c)
        if evals.min() < -1e-10 * max(1.0, abs(evals).max()):
            raise DomainError(f"covariance for class {CLASS_NAMES[k]} is not positive semi-definite")
        root = evecs * np.sqrt(np.clip(evals, 0.0, None))
        z = rng.standard_normal((n_per_class, d))
        xs.append(means[k] + z @ root.T)
        ys.append(np.full(n_per_class, k, dtype=np.int64))
    # rows are shuffled so that consecutive blocks are not single-class
    perm = rng.permutation(NUM_CLASSES * n_per_class) if shuffle else slice(None)
    x = np.concatenate(xs)[perm]
    y = np.concatenate(ys)[perm]
    width = len(str(len(y) - 1))
    ids = [f"{prefix}{i:0{width}d}" for i in range(len(y))]
    return Dataset(ids, x, y)


def oversample(ds, rng):
    """Top every class up to the majority count by seeded resampling, then shuffle."""
    counts = np.bincount(ds.y, minlength=NUM_CLASSES)
    empty = [CLASS_NAMES[k] for k in range(NUM_CLASSES) if counts[k] == 0]
    if empty:
        raise ConfigError(f"cannot oversample: no samples for class(es) {', '.join(empty)}")
    target = counts.max()
    idx = [np.arange(len(ds))]
    for k in range(NUM_CLASSES):
        members = np.flatnonzero(ds.y == k)
        extra = target - members.size
        if extra:
            idx.append(rng.choice(members, size=extra, replace=True))
    idx = np.concatenate(idx)
    return ds.subset(idx[rng.permutation(idx.size)])


def hflip(img):
    return np.asarray(img)[:, ::-1].copy()


def crop_resize(img, ratio, rng):
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    ch, cw = max(1, int(round(h * ratio))), max(1, int(round(w * ratio)))
    top = int(rng.integers(h - ch + 1))
    left = int(rng.integers(w - cw + 1))
    patch = img[top:top + ch, left:left + cw]
    zoom = (h / ch, w / cw) + (1,) * (img.ndim - 2)
    out = ndimage.zoom(patch, zoom, order=1, mode="nearest", grid_mode=True)
    return out[:h, :w]


def gaussian_blur(img, sigma):
    img = np.asarray(img, dtype=np.float64)
    sig = (sigma, sigma) + (0,) * (img.ndim - 2)
    return ndimage.gaussian_filter(img, sig, mode="nearest")


_warned_vector = False


def augment(sample, rng, cfg=AugmentConfig()):
    """Random flip, crop-and-resize and Gaussian blur of an H x W (x C) image.

    Accepts a raw payload or a ``LabeledSample``; a sample comes back with
    its id and label untouched.
    """
    if isinstance(sample, LabeledSample):
        return LabeledSample(sample.id, augment(sample.payload, rng, cfg), sample.label)
    global _warned_vector
    payload = np.asarray(sample)
    if payload.ndim < 2:
        if not _warned_vector:
            log.info("augmentation skipped for vector payloads")
            _warned_vector = True
        return payload
    out = payload.astype(np.float64)
    if cfg.flip_p and rng.random() < cfg.flip_p:
        out = hflip(out)
    if cfg.crop_p and rng.random() < cfg.crop_p:
        out = crop_resize(out, cfg.crop_ratio, rng)
    if cfg.blur_p and rng.random() < cfg.blur_p:
        out = gaussian_blur(out, rng.uniform(*cfg.blur_sigma))
    return out
