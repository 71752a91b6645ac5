import json

import numpy as np
import pytest

from sellpoint.data import (BAG, CATEGORICAL, FeatureField, FeatureGroup,
                            FeatureSchema, Query, UserRepr, build_user_repr,
                            build_vocabulary, encode_feature_groups,
                            encode_multi_hot, load_ad_instances, load_schema,
                            load_sf_instances, load_vocabulary, save_ad_instances,
                            save_schema, save_sf_instances, save_vocabulary)
from sellpoint.numeric import substream


class TestVocabulary:
    def test_first_appearance_order(self):
        vocab = build_vocabulary([["a", "b"], ["b", "c"]])
        assert vocab.index == {"a": 0, "b": 1, "c": 2}

    def test_deterministic(self):
        v1 = build_vocabulary([["a"], ["x", "a"]])
        v2 = build_vocabulary([["a"], ["x", "a"]])
        assert v1.terms == v2.terms and v1.index == v2.index

    def test_empty_stream_rejected(self):
        with pytest.raises(ValueError, match="empty corpus"):
            build_vocabulary([])
        with pytest.raises(ValueError, match="empty corpus"):
            build_vocabulary([[], []])

    def test_bijective(self):
        vocab = build_vocabulary([["q", "w", "e", "r"]])
        for i in range(len(vocab)):
            assert vocab.lookup(vocab.term_of(i)) == i

    def test_roundtrip(self, tmp_path):
        vocab = build_vocabulary([["alpha", "beta"], ["gamma"]])
        path = tmp_path / "vocab.jsonl"
        save_vocabulary(vocab, path)
        loaded = load_vocabulary(path)
        assert loaded.terms == vocab.terms
        assert loaded.sha256() == vocab.sha256()


class TestEncodeMultiHot:
    @pytest.fixture
    def vocab(self):
        return build_vocabulary([["a", "b", "c"]])

    def test_order_free_set(self, vocab):
        assert encode_multi_hot(["b", "a"], vocab) == {0, 1}
        assert encode_multi_hot(["a", "b"], vocab) == {0, 1}

    def test_duplicates_collapse(self, vocab):
        assert encode_multi_hot(["a", "a"], vocab) == {0}

    def test_oov_dropped_silently(self, vocab):
        assert encode_multi_hot(["a", "zzz"], vocab) == {0}

    def test_all_oov_rejected(self, vocab):
        with pytest.raises(ValueError, match="no encodable keywords"):
            encode_multi_hot(["zzz"], vocab)

    def test_idempotent(self, vocab):
        ids = encode_multi_hot(["c", "a"], vocab)
        again = encode_multi_hot([vocab.term_of(i) for i in ids], vocab)
        assert again == ids


class TestBuildUserRepr:
    def test_top_ten_cutoff(self):
        # 12 keywords with frequencies 12..1 inside the month window
        history = []
        t = 0.0
        for k in range(12):
            for _ in range(12 - k):
                history.append((10.0 + t, [k]))
                t += 0.001
        repr_ = build_user_repr(history, now=30.0)
        assert repr_.long_term == tuple(range(10))

    def test_single_click_within_week(self):
        repr_ = build_user_repr([(29.0, [5])], now=30.0)
        assert repr_.long_term == (5,)
        assert repr_.short_term == (5,)

    def test_window_separation(self):
        # keyword 1 clicked 3 weeks ago, keyword 2 yesterday
        repr_ = build_user_repr([(9.0, [1]), (29.0, [2])], now=30.0)
        assert set(repr_.long_term) == {1, 2}
        assert repr_.short_term == (2,)

    def test_frequency_tie_first_occurrence_wins(self):
        history = [(1.0, [7]), (2.0, [3]), (3.0, [3]), (4.0, [7]), (5.0, [3, 7])]
        repr_ = build_user_repr(history, now=6.0)
        assert repr_.long_term == (7, 3)

    def test_old_clicks_excluded(self):
        repr_ = build_user_repr([(-5.0, [1]), (40.0, [2])], now=30.0)
        assert repr_.long_term == ()
        assert repr_.short_term == ()

    def test_empty_history(self):
        repr_ = build_user_repr([], now=30.0)
        assert repr_.long_term == () and repr_.short_term == ()

    def test_lists_capped_at_ten(self):
        history = [(15.0, list(range(25)))]
        repr_ = build_user_repr(history, now=30.0)
        assert len(repr_.long_term) == 10


def small_schema():
    return FeatureSchema((
        FeatureGroup("g0", "user", (
            FeatureField("gender", 2, CATEGORICAL),
            FeatureField("occupation", 140, CATEGORICAL),
        )),
        FeatureGroup("g1", "user", (
            FeatureField("brands", 50, BAG),
        )),
    ))


class TestEncodeFeatureGroups:
    def test_offsets_within_group(self):
        # gender=male (id 0) and occupation=doctor (id k) share one group:
        # active ids are {0, 2 + k}
        k = 17
        groups = encode_feature_groups({"gender": 0, "occupation": k}, small_schema())
        assert groups.get("g0") == {0, 2 + k}
        assert groups.get("g1") == frozenset()

    def test_empty_features(self):
        groups = encode_feature_groups({}, small_schema())
        assert groups.get("g0") == frozenset() and groups.get("g1") == frozenset()

    def test_bag_of_words_two_active(self):
        # preferred brands {Nike, Adidas} -> two active ids in the group
        groups = encode_feature_groups({"brands": [3, 11]}, small_schema())
        assert groups.get("g1") == {3, 11}

    def test_unknown_feature_name(self):
        with pytest.raises(ValueError, match="unknown feature"):
            encode_feature_groups({"nope": 1}, small_schema())

    def test_out_of_range_value(self):
        with pytest.raises(ValueError, match="out of range"):
            encode_feature_groups({"gender": 2}, small_schema())

    def test_max_active_below_group_cardinality(self):
        rng = substream(3, "tests/schema")
        for trial in range(25):
            fields = []
            for j in range(int(rng.integers(1, 4))):
                card = int(rng.integers(1, 9))
                kind = CATEGORICAL if rng.random() < 0.5 else BAG
                fields.append(FeatureField(f"f{trial}_{j}", card, kind))
            schema = FeatureSchema((FeatureGroup("g", "user", tuple(fields)),))
            values = {}
            for f in fields:
                if f.kind == CATEGORICAL:
                    values[f.name] = int(rng.integers(f.cardinality))
                else:
                    values[f.name] = [int(rng.integers(f.cardinality))
                                      for _ in range(int(rng.integers(1, 4)))]
            active = encode_feature_groups(values, schema).get("g")
            total = schema.groups[0].cardinality
            assert active and max(active) < total


class TestSchemaIO:
    def test_roundtrip(self, tmp_path):
        schema = small_schema()
        save_schema(schema, tmp_path / "schema.json")
        assert load_schema(tmp_path / "schema.json") == schema

    def test_restrict(self):
        schema = small_schema()
        sub = schema.restrict(["g1"])
        assert [g.name for g in sub.groups] == ["g1"]
        with pytest.raises(ValueError, match="unknown feature group"):
            schema.restrict(["missing"])


class TestInstanceIO:
    def test_sf_roundtrip(self, tmp_path, tiny_world, tiny_datasets):
        sf = tiny_datasets["sf"][:200]
        path = tmp_path / "sf.jsonl"
        save_sf_instances(sf, path)
        loaded = load_sf_instances(path, tiny_world.schema)
        assert len(loaded) == len(sf)
        for a, b in zip(sf, loaded):
            assert a.sf == b.sf and a.label == b.label
            assert a.user.user_id == b.user.user_id
            assert a.user.long_term == b.user.long_term
            assert a.user.feature_groups.active == b.user.feature_groups.active
            assert a.query.keywords == b.query.keywords
            assert a.query.category_ids == b.query.category_ids

    def test_ad_roundtrip(self, tmp_path, tiny_world, tiny_datasets):
        ad = tiny_datasets["ad"][:200]
        path = tmp_path / "ad.jsonl"
        save_ad_instances(ad, path)
        loaded = load_ad_instances(path, tiny_world.schema)
        assert len(loaded) == len(ad)
        for a, b in zip(ad, loaded):
            assert a.ad.ad_id == b.ad.ad_id
            assert a.ad.title_keywords == b.ad.title_keywords
            assert set(a.ad.sp_candidates) == set(b.ad.sp_candidates)
            assert a.label == b.label

    def test_sf_line_format(self, tmp_path, tiny_datasets):
        path = tmp_path / "sf.jsonl"
        save_sf_instances(tiny_datasets["sf"][:1], path)
        rec = json.loads(path.read_text().splitlines()[0])
        assert set(rec) == {"user", "query", "sf", "label"}
        assert {"id", "long", "short"} <= set(rec["user"])
        assert rec["label"] in (0, 1)


class TestInvariants:
    def test_query_requires_keywords(self):
        with pytest.raises(ValueError):
            Query(keywords=frozenset())

    def test_user_repr_caps(self):
        with pytest.raises(ValueError):
            UserRepr(user_id=0, long_term=tuple(range(11)))
