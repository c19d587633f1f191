"""Dataset-quality metrics for labeled synthetic face datasets.

Identity features live in a cosine space: two features *match* when their
cosine similarity is at least ``tau``. Style features live in a Euclidean space
and are compared through k-nearest-neighbor balls.

* uniqueness: greedy count of mutually non-matching features (or class centers)
* consistency (C_intra): mean per-class fraction of samples matching their center
* diversity (D_intra): mean per-class fraction of real styles covered by the
  union of k-NN balls around generated styles of the same class
* FID between two style sets
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from dckit import backend
from dckit.embedding_store import LabeledEmbeddingSet, StyleFeatureSet, label_indices
from dckit.errors import (
    DegenerateCenterError,
    InsufficientPointsError,
    InvalidVectorError,
    PreconditionError,
    ShapeMismatchError,
    UndefinedSimilarityError,
)

DEFAULT_TAU = 0.3
DEFAULT_KNN = 3
SIMILARITY = "similarity"
DISTANCE = "distance"


@dataclass(frozen=True)
class MetricParams:
    """Match threshold and neighborhood size.

    In ``similarity`` mode ``tau`` is a cosine-similarity threshold: features
    match iff similarity >= tau. In ``distance`` mode ``tau`` is a cosine
    distance radius r and features match iff 1 - similarity <= r.
    """

    tau: float = DEFAULT_TAU
    k_nn: int = DEFAULT_KNN
    mode: str = SIMILARITY

    def __post_init__(self):
        if self.mode not in (SIMILARITY, DISTANCE):
            raise PreconditionError(f"unknown threshold mode {self.mode!r}")
        lo, hi = (-1.0, 1.0) if self.mode == SIMILARITY else (0.0, 2.0)
        if not lo < self.tau < hi:
            raise PreconditionError(f"tau={self.tau} outside ({lo}, {hi}) for {self.mode} mode")
        if int(self.k_nn) != self.k_nn or self.k_nn < 1:
            raise PreconditionError(f"k_nn must be a positive integer, got {self.k_nn}")

    @property
    def similarity_threshold(self) -> float:
        return self.tau if self.mode == SIMILARITY else 1.0 - self.tau


def _as_matrix(features) -> np.ndarray:
    if isinstance(features, (LabeledEmbeddingSet, StyleFeatureSet)):
        features = features.vectors
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise InvalidVectorError(f"expected a 2-D feature matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidVectorError("features contain non-finite values")
    return x


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise UndefinedSimilarityError(f"feature {int(zero[0])} has zero norm")
    return np.ascontiguousarray(x / norms[:, None])


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeMismatchError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise UndefinedSimilarityError("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def class_centers(feature_set: LabeledEmbeddingSet) -> Dict[int, np.ndarray]:
    """Arithmetic mean per class, ascending label order, in float64. Not re-normalized."""
    x = feature_set.vectors.astype(np.float64)
    centers = {}
    for label, idx in label_indices(feature_set).items():
        members = x[idx]
        center = members.mean(axis=0)
        scale = np.linalg.norm(members, axis=1).max()
        if np.linalg.norm(center) <= 1e-12 * scale:
            raise DegenerateCenterError(label)
        centers[label] = center
    return centers


def uniqueness_unlabeled(features, tau: float = DEFAULT_TAU) -> Tuple[int, List[int]]:
    """Greedy scan in input order: keep a feature iff it matches no previously kept one.

    Returns ``(count, kept_indices)``.
    """
    x = _as_matrix(features)
    if x.shape[0] == 0:
        return 0, []
    kept = backend.greedy_unique(_unit_rows(x), float(tau))
    return int(kept.shape[0]), kept.tolist()


def u_class(feature_set: LabeledEmbeddingSet, tau: float = DEFAULT_TAU) -> float:
    if len(feature_set) == 0:
        raise PreconditionError("u_class needs a non-empty set")
    centers = class_centers(feature_set)
    count, _ = uniqueness_unlabeled(np.stack(list(centers.values())), tau)
    return count / len(centers)


def per_class_consistency(feature_set: LabeledEmbeddingSet, tau: float = DEFAULT_TAU) -> Dict[int, float]:
    x = feature_set.vectors.astype(np.float64)
    out = {}
    for label, center in class_centers(feature_set).items():
        members = _unit_rows(x[feature_set.labels == label])
        sims = members @ (center / np.linalg.norm(center))
        out[label] = float(np.mean(sims >= tau))
    return out


def c_intra(feature_set: LabeledEmbeddingSet, tau: float = DEFAULT_TAU) -> float:
    """Classes are weighted equally regardless of their size."""
    if len(feature_set) == 0:
        raise PreconditionError("c_intra needs a non-empty set")
    return float(np.mean(list(per_class_consistency(feature_set, tau).values())))


def knn_radius(points, query_index: int, k: int) -> float:
    """Euclidean distance from ``points[query_index]`` to its k-th nearest other point."""
    x = _as_matrix(points)
    if k < 1 or x.shape[0] < k + 1:
        raise InsufficientPointsError(f"need at least k+1={k + 1} points, got {x.shape[0]}")
    dist = np.sqrt(np.sum((x - x[query_index]) ** 2, axis=1))
    others = np.delete(np.arange(x.shape[0]), query_index)
    order = others[np.argsort(dist[others], kind="stable")]
    return float(dist[order[k - 1]])


def per_class_diversity(real: StyleFeatureSet, gen: StyleFeatureSet, k: int = DEFAULT_KNN) -> Dict[int, float]:
    if real.dim != gen.dim:
        raise ShapeMismatchError(f"style dimension mismatch: {real.dim} vs {gen.dim}")
    real_groups, gen_groups = label_indices(real), label_indices(gen)
    if set(real_groups) != set(gen_groups):
        only_real = sorted(set(real_groups) - set(gen_groups))
        only_gen = sorted(set(gen_groups) - set(real_groups))
        raise PreconditionError(
            f"real and generated label sets differ (real only: {only_real[:5]}, generated only: {only_gen[:5]})"
        )
    if k < 1:
        raise PreconditionError(f"k must be positive, got {k}")
    rx = real.vectors.astype(np.float64)
    gx = gen.vectors.astype(np.float64)
    out = {}
    for label in sorted(real_groups):
        g = np.ascontiguousarray(gx[gen_groups[label]])
        if g.shape[0] < k + 1:
            raise InsufficientPointsError(
                f"class {label} has {g.shape[0]} generated points; k={k} needs at least {k + 1}", label=label
            )
        r = np.ascontiguousarray(rx[real_groups[label]])
        sq_radii = backend.knn_sq_radii(g, int(k))
        out[label] = float(np.mean(backend.covered_mask(r, g, sq_radii)))
    return out


def d_intra(real: StyleFeatureSet, gen: StyleFeatureSet, k: int = DEFAULT_KNN) -> float:
    if len(real) == 0:
        raise PreconditionError("d_intra needs a non-empty real set")
    return float(np.mean(list(per_class_diversity(real, gen, k).values())))


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def _moments(x: np.ndarray, name: str) -> Tuple[np.ndarray, np.ndarray]:
    if x.shape[0] < 2:
        raise InsufficientPointsError(f"{name}: covariance needs at least 2 points, got {x.shape[0]}")
    return x.mean(axis=0), np.atleast_2d(np.cov(x, rowvar=False))


def frechet_distance(mu_a, cov_a, mu_b, cov_b) -> float:
    """Frechet distance between Gaussians; sqrt of the covariance product via eigendecomposition.

    Tr((A B)^{1/2}) is taken as the trace of the square root of the symmetric
    PSD matrix A^{1/2} B A^{1/2}, with negative eigenvalues clamped to zero.
    """
    sa = _psd_sqrt(cov_a)
    inner = sa @ cov_b @ sa
    eig = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_covmean = float(np.sum(np.sqrt(np.clip(eig, 0, None))))
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_covmean)
    return max(value, 0.0)


def fid(a, b) -> float:
    xa, xb = _as_matrix(a), _as_matrix(b)
    if xa.shape[1] != xb.shape[1]:
        raise ShapeMismatchError(f"dimension mismatch: {xa.shape[1]} vs {xb.shape[1]}")
    mu_a, cov_a = _moments(xa, "first set")
    mu_b, cov_b = _moments(xb, "second set")
    return frechet_distance(mu_a, cov_a, mu_b, cov_b)


def unique_count_curve(features, tau: float, checkpoints: Sequence[int]) -> List[Tuple[int, int]]:
    """Unique count of every prefix length in ``checkpoints``.

    The greedy scan is prefix-consistent, so one pass over the longest prefix
    answers every checkpoint.
    """
    x = _as_matrix(features)
    cps = [int(c) for c in checkpoints]
    if any(b < a for a, b in zip(cps, cps[1:])):
        raise PreconditionError("checkpoints must be ascending")
    if cps and (cps[0] < 0 or cps[-1] > x.shape[0]):
        raise PreconditionError(f"checkpoints must lie in [0, {x.shape[0]}]")
    if not cps:
        return []
    _, kept = uniqueness_unlabeled(x[: cps[-1]], tau) if cps[-1] else (0, [])
    kept = np.asarray(kept, dtype=np.int64)
    return [(n, int(np.searchsorted(kept, n))) for n in cps]


@dataclass
class MetricReport:
    u_class: float
    c_intra: float
    d_intra: Optional[float]
    fid: Optional[float]
    params: MetricParams
    class_count: int
    per_class_counts: Dict[int, int]
    input_digests: Dict[str, str] = field(default_factory=dict)
    greedy_order: str = "ascending_label"

    def to_dict(self) -> dict:
        return {
            "u_class": self.u_class,
            "c_intra": self.c_intra,
            "d_intra": self.d_intra,
            "fid": self.fid,
            "tau": self.params.tau,
            "k_nn": self.params.k_nn,
            "distance_mode": self.params.mode,
            "similarity_threshold": self.params.similarity_threshold,
            "class_count": self.class_count,
            "per_class_counts": {str(k): v for k, v in self.per_class_counts.items()},
            "input_digests": dict(self.input_digests),
            "greedy_order": self.greedy_order,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricReport":
        return cls(
            u_class=doc["u_class"],
            c_intra=doc["c_intra"],
            d_intra=doc["d_intra"],
            fid=doc["fid"],
            params=MetricParams(tau=doc["tau"], k_nn=doc["k_nn"], mode=doc.get("distance_mode", SIMILARITY)),
            class_count=doc["class_count"],
            per_class_counts={int(k): v for k, v in doc["per_class_counts"].items()},
            input_digests=dict(doc.get("input_digests", {})),
            greedy_order=doc.get("greedy_order", "ascending_label"),
        )


def metric_report(
    id_set: LabeledEmbeddingSet,
    real_styles: Optional[StyleFeatureSet] = None,
    gen_styles: Optional[StyleFeatureSet] = None,
    params: MetricParams = MetricParams(),
) -> MetricReport:
    """All metrics in one report; D_intra and FID are present iff both style sets are given."""
    tau = params.similarity_threshold
    digests = {"ids": id_set.digest()}
    d_value = fid_value = None
    if (real_styles is None) != (gen_styles is None):
        raise PreconditionError("pass both real and generated style sets, or neither")
    if real_styles is not None:
        d_value = d_intra(real_styles, gen_styles, params.k_nn)
        fid_value = fid(real_styles, gen_styles)
        digests["real_styles"] = real_styles.digest()
        digests["gen_styles"] = gen_styles.digest()
    groups = label_indices(id_set)
    return MetricReport(
        u_class=u_class(id_set, tau),
        c_intra=c_intra(id_set, tau),
        d_intra=d_value,
        fid=fid_value,
        params=params,
        class_count=len(groups),
        per_class_counts={label: int(idx.shape[0]) for label, idx in groups.items()},
        input_digests=digests,
    )
