"""Labeled feature containers and the ``DCEB`` binary file format.

File layout (all little-endian)::

    magic   b"DCEB"          4 bytes
    version u32 = 1
    dim     u32
    count   u64
    count x (label u32, dim x f32)

Human-readable names and attribute tags live in an optional JSON sidecar
``<stem>.manifest.json`` next to the binary file::

    {"labels": {"<id>": {"name": "...", "attribute": "..."}}}
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, Mapping, Optional

import numpy as np

from dckit._io import atomic_write_bytes, atomic_write_text
from dckit.errors import (
    CorruptionError,
    EmptySetError,
    FormatError,
    InvalidVectorError,
    PreconditionError,
)

MAGIC = b"DCEB"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


@dataclass(frozen=True)
class EmbeddingRecord:
    label: int
    vector: np.ndarray


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


class _LabeledVectors:
    """Ordered (label, vector) pairs stored as a uint32 label array and a float32 matrix.

    Instances are immutable: the arrays are private read-only copies.
    """

    _require_nonzero = False

    def __init__(
        self,
        labels,
        vectors,
        attributes: Optional[Mapping[int, str]] = None,
        names: Optional[Mapping[int, str]] = None,
    ):
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim == 1:
            vectors = vectors.reshape(-1, 1) if vectors.size else vectors.reshape(0, 0)
        if vectors.ndim != 2:
            raise InvalidVectorError(f"vectors must be 2-D, got shape {vectors.shape}")
        labels = np.asarray(labels)
        if labels.shape != (vectors.shape[0],):
            raise InvalidVectorError(
                f"{labels.shape[0] if labels.ndim else 0} labels for {vectors.shape[0]} vectors"
            )
        if labels.size and (labels.min() < 0 or labels.max() > np.iinfo(np.uint32).max):
            raise InvalidVectorError("labels must be non-negative 32-bit integers")
        if vectors.shape[0] and vectors.shape[1] == 0:
            raise EmptySetError("feature dimension must be positive")
        if not np.all(np.isfinite(vectors)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(vectors), axis=1))[0])
            raise InvalidVectorError(f"record {bad} (label {int(labels[bad])}) has non-finite values")
        if self._require_nonzero and vectors.shape[0]:
            norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
            zero = np.flatnonzero(norms == 0)
            if zero.size:
                i = int(zero[0])
                raise InvalidVectorError(
                    f"record {i} (label {int(labels[i])}) has zero norm; cosine similarity is undefined"
                )

        attributes = {int(k): str(v) for k, v in (attributes or {}).items()}
        names = {int(k): str(v) for k, v in (names or {}).items()}
        present = set(np.unique(labels).tolist())
        for what, mapping in (("attribute", attributes), ("name", names)):
            unknown = sorted(set(mapping) - present)
            if unknown:
                raise PreconditionError(f"{what} given for label {unknown[0]} which has no records")

        self._labels = _readonly(labels.astype(np.uint32))
        self._vectors = _readonly(vectors)
        self._attributes = attributes
        self._names = names

    @property
    def labels(self) -> np.ndarray:
        return self._labels

    @property
    def vectors(self) -> np.ndarray:
        return self._vectors

    @property
    def dim(self) -> int:
        return int(self._vectors.shape[1]) if self._vectors.ndim == 2 else 0

    @property
    def attributes(self) -> Dict[int, str]:
        return dict(self._attributes)

    @property
    def names(self) -> Dict[int, str]:
        return dict(self._names)

    @property
    def records(self) -> list:
        return list(iter(self))

    def __len__(self) -> int:
        return int(self._labels.shape[0])

    def __iter__(self) -> Iterator[EmbeddingRecord]:
        for label, vec in zip(self._labels, self._vectors):
            yield EmbeddingRecord(int(label), vec)

    def __eq__(self, other) -> bool:
        if type(other) is not type(self):
            return NotImplemented
        return (
            self._vectors.shape == other._vectors.shape
            and np.array_equal(self._labels, other._labels)
            # bit-level comparison so -0.0 / 0.0 differences are caught
            and np.array_equal(self._vectors.view(np.uint32), other._vectors.view(np.uint32))
            and self._attributes == other._attributes
            and self._names == other._names
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"{type(self).__name__}(count={len(self)}, dim={self.dim}, classes={len(self.class_labels())})"

    def class_labels(self) -> list:
        return sorted(set(self._labels.tolist()))

    def attribute_of(self, label: int) -> Optional[str]:
        return self._attributes.get(int(label))

    def subset(self, indices) -> "_LabeledVectors":
        """Records at ``indices`` (in the given order), keeping metadata for surviving labels."""
        idx = np.asarray(indices, dtype=np.int64)
        labels = self._labels[idx]
        keep = set(labels.tolist())
        return type(self)(
            labels,
            self._vectors[idx],
            attributes={k: v for k, v in self._attributes.items() if k in keep},
            names={k: v for k, v in self._names.items() if k in keep},
        )

    def to_bytes(self) -> bytes:
        dt = np.dtype([("label", "<u4"), ("vec", "<f4", (self.dim,))])
        payload = np.empty(len(self), dtype=dt)
        payload["label"] = self._labels
        payload["vec"] = self._vectors
        return _HEADER.pack(MAGIC, VERSION, self.dim, len(self)) + payload.tobytes()

    def digest(self) -> str:
        """SHA-256 hex digest of the serialized binary payload (header included)."""
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def manifest(self) -> Optional[dict]:
        if not self._attributes and not self._names:
            return None
        entries = {}
        for label in sorted(set(self._attributes) | set(self._names)):
            entry = {}
            if label in self._names:
                entry["name"] = self._names[label]
            if label in self._attributes:
                entry["attribute"] = self._attributes[label]
            entries[str(label)] = entry
        return {"labels": entries}


class LabeledEmbeddingSet(_LabeledVectors):
    """Identity-space features (cosine semantics); zero-norm vectors are rejected."""

    _require_nonzero = True


class StyleFeatureSet(_LabeledVectors):
    """Style-space features (Euclidean semantics)."""


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json") if path.suffix else path.with_name(path.name + ".manifest.json")


def _parse(data: bytes, path) -> tuple:
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < _HEADER.size:
        raise CorruptionError(f"{path}: truncated header ({len(data)} bytes)")
    _, version, dim, count = _HEADER.unpack_from(data)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dim == 0 or count == 0:
        raise EmptySetError(f"{path}: empty set (dim={dim}, count={count})")
    record_size = 4 + 4 * dim
    expected = _HEADER.size + count * record_size
    if len(data) != expected:
        have = (len(data) - _HEADER.size) / record_size
        raise CorruptionError(
            f"{path}: header declares {count} records of dim {dim} "
            f"({expected} bytes) but file has {len(data)} bytes (~{have:.2f} records)"
        )
    dt = np.dtype([("label", "<u4"), ("vec", "<f4", (dim,))])
    payload = np.frombuffer(data, dtype=dt, offset=_HEADER.size, count=count)
    return payload["label"], payload["vec"].reshape(count, dim)


def _read_manifest(path) -> tuple:
    mpath = manifest_path(path)
    if not mpath.exists():
        return {}, {}
    try:
        doc = json.loads(mpath.read_text(encoding="utf-8"))
        entries = doc["labels"]
        attributes = {int(k): v["attribute"] for k, v in entries.items() if "attribute" in v}
        names = {int(k): v["name"] for k, v in entries.items() if "name" in v}
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise FormatError(f"{mpath}: malformed manifest ({exc})") from exc
    return attributes, names


def _read(path, cls):
    path = Path(path)
    data = path.read_bytes()
    labels, vectors = _parse(data, path)
    attributes, names = _read_manifest(path)
    try:
        return cls(labels, vectors, attributes=attributes, names=names)
    except PreconditionError as exc:
        if isinstance(exc, InvalidVectorError):
            raise
        raise FormatError(f"{manifest_path(path)}: {exc}") from exc


def read_embedding_file(path) -> LabeledEmbeddingSet:
    """Load an identity-embedding file and its optional manifest sidecar."""
    return _read(path, LabeledEmbeddingSet)


def read_style_file(path) -> StyleFeatureSet:
    return _read(path, StyleFeatureSet)


def write_embedding_file(feature_set: _LabeledVectors, path) -> None:
    """Serialize ``feature_set`` to ``path``; write or remove the manifest sidecar to match."""
    path = Path(path)
    atomic_write_bytes(path, feature_set.to_bytes())
    mpath = manifest_path(path)
    manifest = feature_set.manifest()
    if manifest is None:
        if mpath.exists():
            mpath.unlink()
    else:
        atomic_write_text(mpath, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def group_by_label(feature_set: _LabeledVectors) -> Dict[int, list]:
    """Map each label (ascending) to its vectors in record order."""
    groups: Dict[int, list] = {}
    for label in feature_set.class_labels():
        groups[label] = []
    for rec in feature_set:
        groups[rec.label].append(rec.vector)
    return groups


def label_indices(feature_set: _LabeledVectors) -> Dict[int, np.ndarray]:
    """Map each label (ascending) to the record indices carrying it, in record order."""
    labels = feature_set.labels
    order = np.argsort(labels, kind="stable")
    uniq, starts = np.unique(labels[order], return_index=True)
    bounds = list(starts[1:]) + [len(order)]
    return {int(u): order[s:e] for u, s, e in zip(uniq, starts, bounds)}
