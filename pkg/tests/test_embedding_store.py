import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dckit.embedding_store import (
    LabeledEmbeddingSet,
    StyleFeatureSet,
    group_by_label,
    manifest_path,
    read_embedding_file,
    read_style_file,
    write_embedding_file,
)
from dckit.errors import CorruptionError, EmptySetError, FormatError, InvalidVectorError, PreconditionError


def test_round_trip_small(tmp_path):
    s = LabeledEmbeddingSet([0, 1], [[1, 0, 0], [0, 1, 0]])
    path = tmp_path / "ids.dceb"
    write_embedding_file(s, path)
    back = read_embedding_file(path)
    assert back == s
    assert len(back) == 2 and back.dim == 3
    assert [r.label for r in back.records] == [0, 1]


def test_no_manifest_without_metadata(tmp_path):
    path = tmp_path / "ids.dceb"
    write_embedding_file(LabeledEmbeddingSet([0], [[1.0]]), path)
    assert not manifest_path(path).exists()


def test_single_value_layout(tmp_path):
    path = tmp_path / "one.dceb"
    write_embedding_file(LabeledEmbeddingSet([7], [[0.5]]), path)
    data = path.read_bytes()
    assert data[:4] == b"DCEB"
    assert struct.unpack_from("<IIQ", data, 4) == (1, 1, 1)
    assert struct.unpack_from("<I", data, 20) == (7,)
    assert data[24:] == struct.pack("<f", 0.5)
    assert len(data) == 28


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.dceb"
    good = LabeledEmbeddingSet([0], [[1.0, 2.0]]).to_bytes()
    path.write_bytes(b"XXXX" + good[4:])
    with pytest.raises(FormatError, match="magic"):
        read_embedding_file(path)


def test_bad_version(tmp_path):
    path = tmp_path / "v2.dceb"
    good = LabeledEmbeddingSet([0], [[1.0]]).to_bytes()
    path.write_bytes(good[:4] + struct.pack("<I", 2) + good[8:])
    with pytest.raises(FormatError, match="version"):
        read_embedding_file(path)


def test_truncated_payload(tmp_path):
    rng = np.random.default_rng(0)
    s = LabeledEmbeddingSet(np.arange(10), rng.normal(size=(10, 4)))
    data = s.to_bytes()
    record = 4 + 4 * 4
    path = tmp_path / "trunc.dceb"
    path.write_bytes(data[:-record])
    with pytest.raises(CorruptionError, match="10 records"):
        read_embedding_file(path)
    path.write_bytes(data + b"\0")
    with pytest.raises(CorruptionError):
        read_embedding_file(path)
    path.write_bytes(data[:10])
    with pytest.raises(CorruptionError):
        read_embedding_file(path)


def test_empty_file_header(tmp_path):
    path = tmp_path / "empty.dceb"
    path.write_bytes(struct.pack("<4sIIQ", b"DCEB", 1, 3, 0))
    with pytest.raises(EmptySetError):
        read_embedding_file(path)
    path.write_bytes(struct.pack("<4sIIQ", b"DCEB", 1, 0, 2))
    with pytest.raises(EmptySetError):
        read_embedding_file(path)


def test_zero_norm_rejected_for_identity_only(tmp_path):
    with pytest.raises(InvalidVectorError, match="zero norm"):
        LabeledEmbeddingSet([0, 1], [[1.0, 0.0], [0.0, 0.0]])
    style = StyleFeatureSet([0, 1], [[1.0, 0.0], [0.0, 0.0]])
    path = tmp_path / "s.dceb"
    write_embedding_file(style, path)
    assert read_style_file(path) == style
    with pytest.raises(InvalidVectorError):
        read_embedding_file(path)


def test_non_finite_rejected():
    with pytest.raises(InvalidVectorError, match="non-finite"):
        StyleFeatureSet([0], [[np.nan]])


def test_manifest_round_trip(tmp_path):
    s = LabeledEmbeddingSet(
        [0, 1, 1], [[1, 0], [0, 1], [1, 1]], attributes={0: "asian", 1: "sunglasses"}, names={1: "bob"}
    )
    path = tmp_path / "tagged.dceb"
    write_embedding_file(s, path)
    doc = json.loads(manifest_path(path).read_text())
    assert doc == {"labels": {"0": {"attribute": "asian"}, "1": {"attribute": "sunglasses", "name": "bob"}}}
    assert read_embedding_file(path) == s
    write_embedding_file(LabeledEmbeddingSet([0], [[1.0, 0.0]]), path)
    assert not manifest_path(path).exists()


def test_attribute_for_unknown_label():
    with pytest.raises(PreconditionError):
        LabeledEmbeddingSet([0], [[1.0]], attributes={3: "x"})


def test_malformed_manifest(tmp_path):
    path = tmp_path / "m.dceb"
    write_embedding_file(LabeledEmbeddingSet([0], [[1.0]]), path)
    manifest_path(path).write_text("{not json")
    with pytest.raises(FormatError):
        read_embedding_file(path)


def test_immutable():
    s = LabeledEmbeddingSet([0], [[1.0, 2.0]])
    with pytest.raises(ValueError):
        s.vectors[0, 0] = 5.0


def test_round_trip_1000_random_records(tmp_path):
    rng = np.random.default_rng(2024)
    vectors = rng.normal(size=(1000, 16)).astype(np.float32)
    s = LabeledEmbeddingSet(rng.integers(0, 50, size=1000), vectors)
    path = tmp_path / "big.dceb"
    write_embedding_file(s, path)
    back = read_embedding_file(path)
    assert back.vectors.tobytes() == vectors.tobytes()
    assert np.array_equal(back.labels, s.labels)
    assert path.read_bytes() == s.to_bytes()
    assert back.digest() == s.digest()


@settings(max_examples=50, deadline=None)
@given(
    st.integers(1, 20).flatmap(
        lambda n: st.tuples(
            st.lists(st.integers(0, 2**32 - 1), min_size=n, max_size=n),
            st.lists(
                st.lists(st.floats(width=32, allow_nan=False, allow_infinity=False), min_size=3, max_size=3),
                min_size=n,
                max_size=n,
            ),
        )
    )
)
def test_round_trip_bit_exact_property(tmp_path_factory, data):
    labels, rows = data
    s = StyleFeatureSet(labels, rows)
    path = tmp_path_factory.mktemp("rt") / "p.dceb"
    write_embedding_file(s, path)
    back = read_style_file(path)
    assert back.vectors.view(np.uint32).tobytes() == s.vectors.view(np.uint32).tobytes()
    assert back == s


def test_group_by_label():
    s = LabeledEmbeddingSet([0, 1, 0], [[1, 0], [0, 1], [2, 0]])
    groups = group_by_label(s)
    assert list(groups) == [0, 1]
    assert len(groups[0]) == 2 and len(groups[1]) == 1
    np.testing.assert_array_equal(groups[0][1], [2, 0])
    assert group_by_label(LabeledEmbeddingSet([], np.zeros((0, 2)))) == {}


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=1, max_size=100))
def test_group_by_label_partitions(labels):
    vectors = np.arange(1, len(labels) * 2 + 1, dtype=np.float32).reshape(-1, 2)
    s = LabeledEmbeddingSet(labels, vectors)
    groups = group_by_label(s)
    assert sum(len(v) for v in groups.values()) == len(labels)
    for label, vecs in groups.items():
        expected = vectors[np.asarray(labels) == label]
        np.testing.assert_array_equal(np.stack(vecs), expected)
