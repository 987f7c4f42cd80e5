import json
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bevcv.data import (ManifestEntry, decode_embeddings, decode_weights, encode_embeddings, encode_weights,
                        parse_manifest, read_embeddings, read_weights, write_embeddings, write_manifest,
                        write_weights)
from bevcv.errors import DimensionMismatch, DuplicateId, DuplicateTensorName, MalformedFile, ParseError

GOLDEN = Path(__file__).parent / "golden"

GOLDEN_IDS = [1, 2 ** 64 - 1, 42]
GOLDEN_VECTORS = [[0.5, -1.25, 0.0, 2.0], [-0.0, 1.0, 0.125, -3.5], [1024.0, -0.75, 0.25, 6.0]]
GOLDEN_TENSORS = [("head.fc.weight", (2, 3), [1.0, -2.0, 0.5, 0.25, 8.0, -0.125]),
                  ("scale", (), [3.0]), ("bé.bias", (1,), [-1.5])]


def pack_bevc(ids, vectors, version=1, magic=b"BEVC"):
    """Hand-packed embedding file, field by field."""
    dim = len(vectors[0]) if vectors else 0
    flat = [x for v in vectors for x in v]
    return (magic + struct.pack("<H", version) + struct.pack("<I", dim) + struct.pack("<Q", len(ids))
            + struct.pack(f"<{len(ids)}Q", *ids) + struct.pack(f"<{len(flat)}f", *flat))


def pack_bvwt(tensors, version=1):
    out = b"BVWT" + struct.pack("<H", version) + struct.pack("<I", len(tensors))
    for name, dims, data in tensors:
        n = name.encode("utf-8")
        out += struct.pack("<H", len(n)) + n + struct.pack("<B", len(dims))
        out += struct.pack(f"<{len(dims)}I", *dims) + struct.pack(f"<{len(data)}f", *data)
    return out


def write_lines(tmp_path, lines, name="m.jsonl"):
    p = tmp_path / name
    p.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return p


class TestManifest:
    def test_empty_file(self, tmp_path):
        assert parse_manifest(write_lines(tmp_path, [])) == []

    def test_two_lines_round_trip(self, tmp_path):
        lines = [json.dumps({"id": 7, "pov": "p/7.ppm", "aerial": "a/7.png", "yaw_deg": 12.5}),
                 json.dumps({"id": 2 ** 64 - 1, "pov": "p/x.ppm", "aerial": "a/x.png", "yaw_deg": 0,
                             "lat": -33.5, "lon": 151.25})]
        entries = parse_manifest(write_lines(tmp_path, lines))
        assert entries == [ManifestEntry(7, "p/7.ppm", "a/7.png", 12.5),
                           ManifestEntry(2 ** 64 - 1, "p/x.ppm", "a/x.png", 0, -33.5, 151.25)]
        out = tmp_path / "copy.jsonl"
        write_manifest(out, entries)
        assert parse_manifest(out) == entries
        write_manifest(tmp_path / "again.jsonl", parse_manifest(out))
        assert (tmp_path / "again.jsonl").read_bytes() == out.read_bytes()

    def test_yaw_400_names_the_line(self, tmp_path):
        lines = [json.dumps({"id": 1, "pov": "a", "aerial": "b", "yaw_deg": 10}),
                 json.dumps({"id": 2, "pov": "a", "aerial": "b", "yaw_deg": 400})]
        with pytest.raises(ParseError) as exc:
            parse_manifest(write_lines(tmp_path, lines))
        assert exc.value.line == 2 and "line 2" in str(exc.value)

    @pytest.mark.parametrize("obj", [
        {"pov": "a", "aerial": "b", "yaw_deg": 0},
        {"id": -1, "pov": "a", "aerial": "b", "yaw_deg": 0},
        {"id": 2 ** 64, "pov": "a", "aerial": "b", "yaw_deg": 0},
        {"id": True, "pov": "a", "aerial": "b", "yaw_deg": 0},
        {"id": 1, "pov": 3, "aerial": "b", "yaw_deg": 0},
        {"id": 1, "pov": "a", "aerial": "b", "yaw_deg": 360},
        {"id": 1, "pov": "a", "aerial": "b", "yaw_deg": "north"},
        {"id": 1, "pov": "a", "aerial": "b", "yaw_deg": 0, "lat": 91},
        {"id": 1, "pov": "a", "aerial": "b", "yaw_deg": 0, "lon": -181},
        {"id": 1, "pov": "a", "aerial": "b", "yaw_deg": 0, "heading": 3},
        [1, 2],
    ])
    def test_invalid_entries(self, tmp_path, obj):
        with pytest.raises(ParseError) as exc:
            parse_manifest(write_lines(tmp_path, [json.dumps(obj)]))
        assert exc.value.line == 1

    def test_bad_json(self, tmp_path):
        with pytest.raises(ParseError) as exc:
            parse_manifest(write_lines(tmp_path, ["", "{not json"]))
        assert exc.value.line == 2

    def test_duplicate_id(self, tmp_path):
        line = json.dumps({"id": 5, "pov": "a", "aerial": "b", "yaw_deg": 0})
        with pytest.raises(DuplicateId):
            parse_manifest(write_lines(tmp_path, [line, line]))

    def test_blank_lines_skipped_order_preserved(self, tmp_path):
        lines = [json.dumps({"id": i, "pov": "a", "aerial": "b", "yaw_deg": i}) for i in (9, 3, 5)]
        entries = parse_manifest(write_lines(tmp_path, [lines[0], "", "  ", lines[1], lines[2]]))
        assert [e.id for e in entries] == [9, 3, 5]


class TestEmbeddings:
    def test_round_trip_512(self, tmp_path, rng):
        ids = rng.integers(0, 2 ** 63, 3, dtype=np.uint64)
        vec = rng.standard_normal((3, 512)).astype(np.float32)
        write_embeddings(tmp_path / "e.bevc", ids, vec)
        got_ids, got_vec = read_embeddings(tmp_path / "e.bevc")
        assert np.array_equal(got_ids, ids) and got_ids.dtype == np.uint64
        assert got_vec.tobytes() == vec.tobytes()

    @given(n=st.integers(0, 6), dim=st.integers(1, 9), seed=st.integers(0, 1000))
    def test_round_trip_property(self, n, dim, seed):
        rng = np.random.default_rng(seed)
        ids = rng.permutation(1000)[:n].astype(np.uint64)
        vec = rng.standard_normal((n, dim)).astype(np.float32)
        raw = encode_embeddings(ids, vec)
        assert len(raw) == 18 + 8 * n + 4 * n * dim
        got_ids, got_vec = decode_embeddings(raw)
        assert got_ids.tolist() == ids.tolist() and got_vec.tobytes() == vec.tobytes()
        assert encode_embeddings(got_ids, got_vec) == raw

    def test_zero_count(self):
        raw = encode_embeddings([], np.zeros((0, 8), np.float32))
        assert raw == b"BEVC" + struct.pack("<HIQ", 1, 8, 0)
        ids, vec = decode_embeddings(raw)
        assert ids.shape == (0,) and vec.shape == (0, 8)

    def test_bad_magic(self):
        with pytest.raises(MalformedFile):
            decode_embeddings(pack_bevc([1], [[1.0]], magic=b"BEVX"))

    def test_unknown_version(self):
        with pytest.raises(MalformedFile) as exc:
            decode_embeddings(pack_bevc([1], [[1.0]], version=2))
        assert "version 2" in str(exc.value)

    @pytest.mark.parametrize("cut", [1, 4, 17])
    def test_truncated(self, cut):
        raw = pack_bevc([1, 2], [[1.0, 2.0], [3.0, 4.0]])
        with pytest.raises(MalformedFile):
            decode_embeddings(raw[:-cut])

    def test_trailing_bytes(self):
        with pytest.raises(MalformedFile):
            decode_embeddings(pack_bevc([1], [[1.0]]) + b"\0")

    def test_count_mismatch(self):
        with pytest.raises(DimensionMismatch):
            encode_embeddings([1, 2], np.zeros((3, 4)))


class TestWeights:
    def test_two_tensor_round_trip(self, tmp_path, rng):
        w = {"a.weight": rng.standard_normal((3, 2, 1, 1)).astype(np.float32),
             "a.bias": rng.standard_normal(3).astype(np.float32)}
        write_weights(tmp_path / "w.bvwt", w)
        got = read_weights(tmp_path / "w.bvwt")
        assert list(got) == list(w)
        for k in w:
            assert got[k].shape == w[k].shape and got[k].tobytes() == w[k].tobytes()

    def test_duplicate_name_on_write(self):
        with pytest.raises(DuplicateTensorName):
            encode_weights([("x", np.ones(2)), ("x", np.zeros(2))])

    def test_duplicate_name_on_read(self):
        with pytest.raises(DuplicateTensorName):
            decode_weights(pack_bvwt([("x", (1,), [1.0]), ("x", (1,), [2.0])]))

    def test_unknown_version(self):
        with pytest.raises(MalformedFile) as exc:
            decode_weights(pack_bvwt([("x", (1,), [1.0])], version=9))
        assert "version 9" in str(exc.value)

    def test_bad_magic(self):
        with pytest.raises(MalformedFile):
            decode_weights(b"BVWX" + pack_bvwt([])[4:])

    @pytest.mark.parametrize("cut", [1, 3, 9])
    def test_truncated(self, cut):
        with pytest.raises(MalformedFile):
            decode_weights(pack_bvwt([("name", (2, 2), [1.0, 2.0, 3.0, 4.0])])[:-cut])

    def test_trailing_bytes(self):
        with pytest.raises(MalformedFile):
            decode_weights(pack_bvwt([]) + b"x")

    def test_empty_container(self):
        assert decode_weights(encode_weights({})) == {}


class TestGolden:
    def test_bevc_fixture_matches_hand_layout(self):
        assert (GOLDEN / "embeddings_v1.bevc").read_bytes() == pack_bevc(GOLDEN_IDS, GOLDEN_VECTORS)

    def test_bevc_decode(self):
        ids, vec = read_embeddings(GOLDEN / "embeddings_v1.bevc")
        assert ids.tolist() == GOLDEN_IDS
        assert vec.tolist() == GOLDEN_VECTORS
        assert np.signbit(vec[1, 0])  # negative zero survives

    def test_bevc_encode(self):
        vec = np.array(GOLDEN_VECTORS, np.float32)
        assert encode_embeddings(GOLDEN_IDS, vec) == (GOLDEN / "embeddings_v1.bevc").read_bytes()

    def test_bvwt_fixture_matches_hand_layout(self):
        assert (GOLDEN / "weights_v1.bvwt").read_bytes() == pack_bvwt(GOLDEN_TENSORS)

    def test_bvwt_decode(self):
        got = read_weights(GOLDEN / "weights_v1.bvwt")
        assert list(got) == [name for name, _, _ in GOLDEN_TENSORS]
        for name, dims, data in GOLDEN_TENSORS:
            assert got[name].shape == dims and got[name].ravel().tolist() == data

    def test_bvwt_encode(self):
        w = {name: np.array(data, np.float32).reshape(dims) for name, dims, data in GOLDEN_TENSORS}
        assert encode_weights(w) == (GOLDEN / "weights_v1.bvwt").read_bytes()
