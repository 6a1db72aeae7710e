"""Dense float64 helpers and the finite-difference gradient checker.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.
"""

import numpy as np

from fermech.errors import DegenerateVectorError, DomainError, OracleError, ShapeError

NORM_EPS = 1e-12


def as_tensor(x):
    return np.asarray(x, dtype=np.float64)


def matmul(a, b):
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def softmax(v, axis=-1):
    v = as_tensor(v)
    if v.size == 0 or v.shape[axis] == 0:
        raise DomainError("softmax of an empty vector")
    z = v - v.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(v, axis=-1):
    v = as_tensor(v)
    if v.size == 0 or v.shape[axis] == 0:
        raise DomainError("log_softmax of an empty vector")
    z = v - v.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def cosine_similarity(f_i, f_j):
    f_i = as_tensor(f_i).ravel()
    f_j = as_tensor(f_j).ravel()
    if f_i.shape != f_j.shape:
        raise ShapeError(f"cosine similarity of lengths {f_i.size} and {f_j.size}")
    ni = np.linalg.norm(f_i)
    nj = np.linalg.norm(f_j)
    if ni <= NORM_EPS or nj <= NORM_EPS:
        raise DegenerateVectorError("cosine similarity of a zero-norm vector")
    c = float(f_i @ f_j) / (ni * nj)
    return min(1.0, max(-1.0, c))


def cosine_similarity_matrix(features):
    """Pairwise cosine similarities of the rows of ``features``.

    Rows with norm below ``NORM_EPS`` get similarity 0 to everything
    (including themselves); the boolean mask of such rows is returned too.
    """
    f = as_tensor(features)
    if f.ndim != 2:
        raise ShapeError(f"expected a 2-d feature matrix, got shape {f.shape}")
    norms = np.linalg.norm(f, axis=1)
    degenerate = norms <= NORM_EPS
    safe = np.where(degenerate, 1.0, norms)
    unit = f / safe[:, None]
    unit[degenerate] = 0.0
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    return sim, degenerate


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` at ``x``."""
    if not h > 0:
        raise DomainError(f"step h must be positive, got {h}")
    x = as_tensor(x).copy()
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = float(f(x))
        flat[k] = orig - h
        fm = float(f(x))
        flat[k] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OracleError(f"non-finite function value near coordinate {k}")
        g[k] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_error(a, b, floor=1e-8):
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"comparing shapes {a.shape} and {b.shape}")
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
