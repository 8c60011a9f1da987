"""NumPy fallback for the distance kernels.

Single-pair results are computed through the batch path so that both forms
round identically within this backend. All accumulation happens in float64.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def l2_sq_batch(q: np.ndarray, xs: np.ndarray) -> np.ndarray:
    d = xs.astype(np.float64, copy=False) - q.astype(np.float64, copy=False)
    return np.einsum("ij,ij->i", d, d)


def ip_dist_batch(q: np.ndarray, xs: np.ndarray) -> np.ndarray:
    dots = np.einsum(
        "j,ij->i",
        q.astype(np.float64, copy=False),
        xs.astype(np.float64, copy=False),
    )
    return 1.0 - dots


def cosine_dist_batch(q: np.ndarray, xs: np.ndarray) -> np.ndarray:
    qf = q.astype(np.float64, copy=False)
    xf = xs.astype(np.float64, copy=False)
    qn = np.sqrt(np.einsum("j,j->", qf, qf))
    xn = np.sqrt(np.einsum("ij,ij->i", xf, xf))
    if qn == 0.0 or np.any(xn == 0.0):
        raise ValueError("cosine distance is undefined for zero vectors")
    return 1.0 - np.einsum("j,ij->i", qf, xf) / (qn * xn)


def l2_sq(a: np.ndarray, b: np.ndarray) -> float:
    return float(l2_sq_batch(a, b.reshape(1, -1))[0])


def ip_dist(a: np.ndarray, b: np.ndarray) -> float:
    return float(ip_dist_batch(a, b.reshape(1, -1))[0])


def cosine_dist(a: np.ndarray, b: np.ndarray) -> float:
    return float(cosine_dist_batch(a, b.reshape(1, -1))[0])
