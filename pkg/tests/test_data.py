import itertools
import struct

import numpy as np
import pytest

from rankaware.data import (
    CLOSURE,
    PairAnnotation,
    SplitSpec,
    VideoRecord,
    augment_noise,
    encode_features,
    format_pairs,
    load_dataset,
    load_features,
    make_kfold,
    make_split,
    parse_pairs,
    read_manifest,
    read_pairs,
    reversed_pairs,
    transitive_closure,
    validate_pairs,
    write_features,
    write_manifest,
    write_pairs,
)
from rankaware.exceptions import (
    CorruptHeaderError,
    CorruptPayloadError,
    CycleError,
    DataError,
    DimensionMismatchError,
    EmptySplitError,
    MissingFileError,
    NonFiniteFeatureError,
)


def P(a, b):
    return PairAnnotation(a, b)


def total_order(ids):
    return [P(a, b) for a, b in itertools.combinations(ids, 2)]


class TestFeatures:
    def test_round_trip(self, rng, tmp_path):
        feats = rng.normal(size=(4, 8))
        path = write_features(VideoRecord("a", "t", feats), tmp_path / "a.rskf")
        rec = load_features(path)
        assert rec.id == "a" and rec.features.shape == (4, 8)
        assert np.array_equal(rec.features, feats)

    def test_layout(self):
        blob = encode_features(np.arange(6.0).reshape(2, 3))
        assert blob[:4] == b"RSKF"
        assert struct.unpack("<III", blob[4:16]) == (1, 2, 3)
        assert np.frombuffer(blob[16:], "<f8").tolist() == [0, 1, 2, 3, 4, 5]

    def test_missing(self, tmp_path):
        with pytest.raises(MissingFileError):
            load_features(tmp_path / "nope.rskf")

    def test_truncated_payload(self, rng, tmp_path):
        path = tmp_path / "a.rskf"
        path.write_bytes(encode_features(rng.normal(size=(4, 8)))[:-3])
        with pytest.raises(CorruptPayloadError):
            load_features(path)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "a.rskf"
        path.write_bytes(b"JUNK" + bytes(20))
        with pytest.raises(CorruptHeaderError):
            load_features(path)
        path.write_bytes(b"RS")
        with pytest.raises(CorruptHeaderError):
            load_features(path)

    def test_non_finite(self, tmp_path):
        path = tmp_path / "a.rskf"
        path.write_bytes(encode_features(np.array([[1.0, np.inf]])))
        with pytest.raises(NonFiniteFeatureError):
            load_features(path)

    def test_expected_dim(self, rng, tmp_path):
        path = write_features(rng.normal(size=(2, 3)), tmp_path / "a.rskf")
        with pytest.raises(DimensionMismatchError):
            load_features(path, expected_dim=4)

    def test_manifest_dataset(self, rng, tmp_path):
        for vid in "ab":
            write_features(rng.normal(size=(3, 2)), tmp_path / "f" / f"{vid}.rskf")
        write_manifest([("a", "knot", "f/a.rskf"), ("b", "knot", "f/b.rskf")], tmp_path / "m.txt")
        data = load_dataset(tmp_path / "m.txt")
        assert sorted(data) == ["a", "b"] and data["a"].task == "knot"

    def test_manifest_errors(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("# comment\na,t,x.rskf\na,u,y.rskf\n")
        with pytest.raises(DataError, match="duplicate"):
            read_manifest(path)
        path.write_text("a,t\n")
        with pytest.raises(DataError):
            read_manifest(path)
        with pytest.raises(MissingFileError):
            read_manifest(tmp_path / "other.txt")


class TestNoise:
    def test_zero_sigma_is_identity(self, rng):
        x = rng.normal(size=(3, 4))
        assert np.array_equal(augment_noise(x, 0.0, rng), x)

    def test_large_sample_statistics(self):
        noise = augment_noise(np.zeros((1000, 1000)), 0.01, np.random.default_rng(0))
        assert abs(noise.mean()) < 1e-4
        assert abs(noise.std() - 0.01) < 0.05 * 0.01

    def test_seeded(self):
        x = np.ones((2, 2))
        a = augment_noise(x, 0.1, np.random.default_rng(5))
        b = augment_noise(x, 0.1, np.random.default_rng(5))
        assert np.array_equal(a, b)

    def test_negative_sigma(self, rng):
        with pytest.raises(ValueError):
            augment_noise(np.zeros((1, 1)), -1.0, rng)


class TestPairs:
    def test_csv_round_trip(self, tmp_path):
        pairs = [P("a", "b"), PairAnnotation("a", "c", CLOSURE)]
        write_pairs(pairs, tmp_path / "p.csv", with_origin=True)
        assert read_pairs(tmp_path / "p.csv") == pairs
        assert format_pairs(pairs).splitlines() == ["better,worse", "a,b", "a,c"]

    def test_header_required(self):
        with pytest.raises(DataError):
            parse_pairs("a,b\n")

    def test_self_pair(self):
        with pytest.raises(DataError):
            P("a", "a")

    def test_validate(self):
        issues = validate_pairs([P("a", "b"), P("a", "b"), P("b", "a"), P("c", "z")], video_ids="abc")
        assert any("duplicate" in s for s in issues)
        assert any("contradictory" in s for s in issues)
        assert any("unknown video id z" in s for s in issues)
        assert validate_pairs([P("a", "b")], "ab") == []

    def test_reversed(self):
        assert reversed_pairs([P("a", "b")]) == [P("b", "a")]


class TestClosure:
    def test_minimal_chain(self):
        out = transitive_closure([P("a", "b"), P("b", "c")])
        assert len(out) == 3
        assert out[-1] == PairAnnotation("a", "c", CLOSURE)

    def test_contradiction(self):
        with pytest.raises(CycleError) as info:
            transitive_closure([P("a", "b"), P("b", "a")])
        assert info.value.cycle[0] == info.value.cycle[-1]
        assert set(info.value.cycle) == {"a", "b"}

    def test_chain_of_four(self):
        assert len(transitive_closure([P("a", "b"), P("b", "c"), P("c", "d")])) == 4 * 3 // 2

    def test_long_cycle_listing(self):
        with pytest.raises(CycleError) as info:
            transitive_closure([P("a", "b"), P("b", "c"), P("c", "d"), P("d", "b")])
        assert set(info.value.cycle) == {"b", "c", "d"}

    def test_idempotent(self):
        once = transitive_closure([P("a", "b"), P("b", "c"), P("d", "c")])
        assert transitive_closure(once) == once


class TestSplit:
    def test_four_videos_total_order(self):
        ids = ["a", "b", "c", "d"]
        pairs = total_order(ids)
        for seed in range(5):
            s = make_split(ids, pairs, 0.5, seed)
            assert len(s.train_pairs) == 1 and len(s.test_pairs) == 1 and s.dropped_pairs == 4
            # enumerate the partition directly
            train = set(s.train_videos)
            assert s.train_pairs == [p for p in pairs if {p.better, p.worse} <= train]

    def test_disjoint_and_complete(self):
        ids = [f"v{i}" for i in range(12)]
        pairs = total_order(ids)
        s = make_split(ids, pairs, 0.25, 3)
        assert not set(s.train_videos) & set(s.test_videos)
        assert len(s.test_videos) == 3
        assert len(s.train_pairs) + len(s.test_pairs) + s.dropped_pairs == len(pairs)

    def test_empty_side(self):
        with pytest.raises(EmptySplitError):
            make_split(["a", "b", "c"], total_order("abc"), 0.1, 0)

    def test_fraction_range(self):
        with pytest.raises(ValueError):
            make_split(["a", "b"], [P("a", "b")], 1.0, 0)

    def test_deterministic_and_json(self):
        ids = [f"v{i}" for i in range(8)]
        a = make_split(ids, total_order(ids), 0.25, 9)
        assert a == make_split(ids, total_order(ids), 0.25, 9)
        assert SplitSpec.from_json(a.to_json()) == a

    def test_kfold_partitions(self):
        ids = [f"v{i}" for i in range(10)]
        folds = make_kfold(ids, total_order(ids), 4, 0)
        tests = [v for f in folds for v in f.test_videos]
        assert sorted(tests) == sorted(ids)
        assert [f.fold for f in folds] == [0, 1, 2, 3]

    def test_bad_json(self):
        with pytest.raises(DataError):
            SplitSpec.from_json("{}")
