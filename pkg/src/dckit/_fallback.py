"""Pure-numpy versions of the compiled kernels in ``_core.pyx``."""

import numpy as np


def greedy_unique(unit: np.ndarray, tau: float) -> np.ndarray:
    n, d = unit.shape
    kept = np.empty(n, dtype=np.int64)
    bank = np.empty((n, d), dtype=np.float64)
    n_kept = 0
    for i in range(n):
        if n_kept == 0 or np.max(bank[:n_kept] @ unit[i]) < tau:
            kept[n_kept] = i
            bank[n_kept] = unit[i]
            n_kept += 1
    return kept[:n_kept].copy()


def _pairwise_sq(a: np.ndarray, b: np.ndarray, block: int = 512) -> np.ndarray:
    # explicit differences rather than |a|^2 + |b|^2 - 2ab: zero distances stay exactly zero
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.float64)
    for s in range(0, a.shape[0], block):
        diff = a[s:s + block, None, :] - b[None, :, :]
        out[s:s + block] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def knn_sq_radii(points: np.ndarray, k: int) -> np.ndarray:
    sq = _pairwise_sq(points, points)
    np.fill_diagonal(sq, np.inf)
    return np.ascontiguousarray(np.partition(sq, k - 1, axis=1)[:, k - 1])


def covered_mask(real: np.ndarray, gen: np.ndarray, sq_radii: np.ndarray) -> np.ndarray:
    return np.any(_pairwise_sq(real, gen) <= sq_radii[None, :], axis=1)
