import numpy as np
import pytest

from sellpoint.data import Ad, Query, SfInstance, UserRepr
from sellpoint.gradcheck import TOY_DIMS, TOY_VOCAB, random_toy_instances
from sellpoint.network import (AUX, BASIC, MAIN, MULTITASK, ModelVariant,
                               init_network_params)
from sellpoint.numeric import derive_seed, substream
from sellpoint.training import (TrainingConfig, count_user_clicks,
                                sample_negatives_ad, sample_negatives_sf,
                                split_train_test, train_alternate, train_basic,
                                train_pretrain)
from sellpoint.world import AdSession, SfImpression


def _user(uid=0):
    return UserRepr(user_id=uid, long_term=(1, 2), short_term=(3,))


def _query():
    return Query(keywords=frozenset({4}))


def make_sf_impression(n_clicked, n_unclicked, uid=0):
    shown = [frozenset({10 + i}) for i in range(n_clicked + n_unclicked)]
    clicked = [True] * n_clicked + [False] * n_unclicked
    return SfImpression(user=_user(uid), query=_query(),
                        shown=tuple(shown), clicked=tuple(clicked))


def make_session(flags):
    items = tuple(
        (Ad(ad_id=i, title_keywords=(5, 6), sp_candidates=(frozenset({7}),)), bool(c))
        for i, c in enumerate(flags))
    return AdSession(user=_user(), query=_query(), items=items)


class TestSampleNegativesSf:
    def test_ratio_two(self):
        imp = make_sf_impression(3, 10)
        out = sample_negatives_sf([imp], 2, substream(0, "n"))
        assert sum(i.label for i in out) == 3
        assert sum(1 - i.label for i in out) == 6

    def test_pool_exhaustion(self, caplog):
        imp = make_sf_impression(1, 1)
        with caplog.at_level("WARNING", logger="sellpoint.training"):
            out = sample_negatives_sf([imp], 2, substream(0, "n"))
        assert sum(1 - i.label for i in out) == 1
        assert any("fewer un-clicked" in r.message for r in caplog.records)

    def test_deterministic(self):
        imps = [make_sf_impression(2, 8), make_sf_impression(1, 5)]
        a = sample_negatives_sf(imps, 2, substream(3, "n"))
        b = sample_negatives_sf(imps, 2, substream(3, "n"))
        assert a == b

    def test_negatives_disjoint_from_positives_per_impression(self):
        rng = substream(4, "n")
        for trial in range(30):
            imp = make_sf_impression(int(rng.integers(1, 4)), int(rng.integers(0, 9)),
                                     uid=trial)
            out = sample_negatives_sf([imp], 2, rng)
            pos = {i.sf for i in out if i.label == 1}
            neg = {i.sf for i in out if i.label == 0}
            assert not pos & neg

    def test_no_click_impression_contributes_nothing(self):
        out = sample_negatives_sf([make_sf_impression(0, 10)], 2, substream(0, "n"))
        assert out == []

    def test_ratio_below_one_rejected(self):
        with pytest.raises(ValueError):
            sample_negatives_sf([], 0, substream(0, "n"))


class TestSampleNegativesAd:
    def test_only_before_last_click_eligible(self):
        # [miss, CLICK, miss, miss]: only position 0 is an eligible negative
        sess = make_session([False, True, False, False])
        out = sample_negatives_ad([sess], 6, substream(0, "n"))
        assert sum(i.label for i in out) == 1
        negs = [i for i in out if i.label == 0]
        assert len(negs) == 1 and negs[0].ad.ad_id == 0

    def test_single_click_session(self):
        out = sample_negatives_ad([make_session([True])], 6, substream(0, "n"))
        assert len(out) == 1 and out[0].label == 1

    def test_ratio_arithmetic(self):
        # 2 positives at the end, 20 eligible misses before the last click
        flags = [False] * 20 + [True, True]
        out = sample_negatives_ad([make_session(flags)], 6, substream(0, "n"))
        assert sum(i.label for i in out) == 2
        assert sum(1 - i.label for i in out) == 12

    def test_no_click_session_skipped(self):
        out = sample_negatives_ad([make_session([False, False])], 6, substream(0, "n"))
        assert out == []


class TestSplit:
    def test_nine_to_one(self):
        items = list(range(10))
        train, test = split_train_test(items, 0.9, substream(0, "s"))
        assert len(train) == 9 and len(test) == 1

    def test_deterministic(self):
        items = list(range(100))
        a = split_train_test(items, 0.9, substream(1, "s"))
        b = split_train_test(items, 0.9, substream(1, "s"))
        assert a == b

    def test_disjoint_exhaustive(self):
        items = list(range(57))
        train, test = split_train_test(items, 0.8, substream(2, "s"))
        assert sorted(train + test) == items
        assert not set(train) & set(test)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            split_train_test([], 0.9, substream(0, "s"))


class TestCountUserClicks:
    def test_counts_positives_only(self):
        insts = [SfInstance(user=_user(1), query=_query(), sf=frozenset({9}), label=1),
                 SfInstance(user=_user(1), query=_query(), sf=frozenset({8}), label=0),
                 SfInstance(user=_user(2), query=_query(), sf=frozenset({9}), label=0)]
        assert count_user_clicks(insts) == {1: 1, 2: 0}


def toy_sf(rng, n):
    return random_toy_instances(rng, MAIN, False, n)


def toy_ad(rng, n):
    return random_toy_instances(rng, AUX, False, n)


class TestTrainBasic:
    def test_overfits_separable_toy_set(self):
        insts = [
            SfInstance(user=_user(), query=_query(), sf=frozenset({0}), label=1),
            SfInstance(user=_user(), query=_query(), sf=frozenset({1}), label=0),
        ]
        params = init_network_params(ModelVariant(BASIC), TOY_VOCAB, TOY_DIMS, seed=0)
        cfg = TrainingConfig(seed=0, batch_size=2, max_epochs_main=200, learning_rate=0.5)
        result = train_basic(params, insts, cfg)
        assert result.history[-1].mean_loss <= 0.01

    def test_zero_learning_rate_leaves_params(self):
        rng = substream(5, "toy")
        insts = toy_sf(rng, 12)
        params = init_network_params(ModelVariant(BASIC), TOY_VOCAB, TOY_DIMS, seed=0)
        before = {n: a.copy() for n, a in params.tensors()}
        cfg = TrainingConfig(seed=0, batch_size=4, max_epochs_main=2, learning_rate=0.0)
        train_basic(params, insts, cfg)
        for name, arr in params.tensors():
            assert np.array_equal(arr, before[name]), name

    def test_requires_sf_capable_variant(self):
        params = init_network_params(ModelVariant(MULTITASK), TOY_VOCAB, TOY_DIMS, seed=0)
        with pytest.raises(ValueError, match="basic or augmented"):
            train_basic(params, toy_sf(substream(0, "t"), 4), TrainingConfig())

    def test_empty_training_set_rejected(self):
        params = init_network_params(ModelVariant(BASIC), TOY_VOCAB, TOY_DIMS, seed=0)
        with pytest.raises(ValueError, match="empty"):
            train_basic(params, [], TrainingConfig())

    def test_bitwise_reproducible(self):
        rng = substream(6, "toy")
        insts = toy_sf(rng, 30)
        cfg = TrainingConfig(seed=9, batch_size=8, max_epochs_main=3)
        outs = []
        for _ in range(2):
            params = init_network_params(ModelVariant(BASIC), TOY_VOCAB, TOY_DIMS, seed=9)
            train_basic(params, list(insts), cfg)
            outs.append({n: a.copy() for n, a in params.tensors()})
        for name in outs[0]:
            assert np.array_equal(outs[0][name], outs[1][name]), name


class TestTrainAlternate:
    def test_requires_aux_variant(self):
        params = init_network_params(ModelVariant(BASIC), TOY_VOCAB, TOY_DIMS, seed=0)
        with pytest.raises(ValueError, match="auxiliary"):
            train_alternate(params, toy_sf(substream(0, "t"), 4),
                            toy_ad(substream(0, "t2"), 4), TrainingConfig())

    def test_aux_cap_stops_run(self):
        rng = substream(7, "toy")
        sf = toy_sf(rng, 64)          # large main stream
        ad = toy_ad(rng, 4)           # one batch per aux epoch
        params = init_network_params(ModelVariant(MULTITASK), TOY_VOCAB, TOY_DIMS, seed=1)
        cfg = TrainingConfig(seed=1, batch_size=4, max_epochs_aux=6, max_epochs_main=15)
        result = train_alternate(params, sf, ad, cfg)
        assert result.epochs(AUX) == 6
        assert result.epochs(MAIN) < 15

    def test_main_cap_stops_run(self):
        rng = substream(8, "toy")
        sf = toy_sf(rng, 4)
        ad = toy_ad(rng, 64)
        params = init_network_params(ModelVariant(MULTITASK), TOY_VOCAB, TOY_DIMS, seed=1)
        cfg = TrainingConfig(seed=1, batch_size=4, max_epochs_aux=50, max_epochs_main=15)
        result = train_alternate(params, sf, ad, cfg)
        assert result.epochs(MAIN) == 15
        assert result.epochs(AUX) < 50

    def test_balanced_streams_finish_within_one_epoch(self):
        # |S^C| = k * |S^SF| means both datasets complete about equally often
        rng = substream(9, "toy")
        sf = toy_sf(rng, 16)
        ad = toy_ad(rng, 64)
        params = init_network_params(ModelVariant(MULTITASK), TOY_VOCAB, TOY_DIMS, seed=2)
        cfg = TrainingConfig(seed=2, batch_size=4, k=4, max_epochs_aux=6, max_epochs_main=15)
        result = train_alternate(params, sf, ad, cfg)
        assert abs(result.epochs(AUX) - result.epochs(MAIN)) <= 1

    def test_hygiene_on_every_step(self):
        rng = substream(10, "toy")
        sf = toy_sf(rng, 16)
        ad = toy_ad(rng, 32)
        params = init_network_params(ModelVariant(MULTITASK), TOY_VOCAB, TOY_DIMS, seed=3)
        snapshots = {}

        def callback(iteration, task, p):
            if snapshots:
                if task == MAIN:
                    for name in ("att_wu", "att_wq", "att_wa", "att_z",
                                 "head_aux_w", "head_aux_b"):
                        assert np.array_equal(p.get(name), snapshots[name]), name
                else:
                    assert np.array_equal(p.head_main_w, snapshots["head_main_w"])
                    assert np.array_equal(p.head_main_b, snapshots["head_main_b"])
            for name, arr in p.tensors():
                snapshots[name] = arr.copy()

        cfg = TrainingConfig(seed=3, batch_size=8, max_epochs_aux=3, max_epochs_main=6)
        train_alternate(params, sf, ad, cfg, step_callback=callback)

    def test_task_selection_fraction(self):
        rng = substream(11, "toy")
        sf = toy_sf(rng, 40)
        ad = toy_ad(rng, 40)
        params = init_network_params(ModelVariant(MULTITASK), TOY_VOCAB, TOY_DIMS, seed=4)
        tasks = []
        cfg = TrainingConfig(seed=4, batch_size=8, k=4,
                             max_epochs_aux=400, max_epochs_main=2000)
        train_alternate(params, sf, ad, cfg,
                        step_callback=lambda i, task, p: tasks.append(task))
        frac = sum(1 for t in tasks[:2000] if t == AUX) / 2000
        assert 0.75 < frac < 0.85

    def test_zero_epoch_cap_is_noop(self):
        rng = substream(12, "toy")
        params = init_network_params(ModelVariant(MULTITASK), TOY_VOCAB, TOY_DIMS, seed=5)
        before = {n: a.copy() for n, a in params.tensors()}
        cfg = TrainingConfig(seed=5, max_epochs_aux=0)
        train_alternate(params, toy_sf(rng, 4), toy_ad(rng, 4), cfg)
        for name, arr in params.tensors():
            assert np.array_equal(arr, before[name])


class TestTrainPretrain:
    def _data(self):
        rng = substream(13, "toy")
        return toy_sf(rng, 16), toy_ad(rng, 32)

    def test_transfer_copies_shared_tensors(self):
        sf, ad = self._data()
        params = init_network_params(ModelVariant(MULTITASK), TOY_VOCAB, TOY_DIMS, seed=6)
        cfg = TrainingConfig(seed=6, batch_size=8, max_epochs_aux=2, max_epochs_main=0)
        result = train_pretrain(params, sf, ad, cfg)
        # phase-1 trained tensors carried over verbatim (main epochs = 0)
        assert np.array_equal(result.params.keyword_emb, params.keyword_emb)
        assert np.array_equal(result.params.fc1_w, params.fc1_w)
        assert np.array_equal(result.params.fc2_b, params.fc2_b)

    def test_main_head_freshly_initialized(self):
        sf, ad = self._data()
        params = init_network_params(ModelVariant(MULTITASK), TOY_VOCAB, TOY_DIMS, seed=6)
        cfg = TrainingConfig(seed=6, batch_size=8, max_epochs_aux=2, max_epochs_main=0)
        result = train_pretrain(params, sf, ad, cfg)
        fresh = init_network_params(ModelVariant(MULTITASK), TOY_VOCAB, TOY_DIMS,
                                    seed=derive_seed(6, "pretrain-phase2"))
        assert np.array_equal(result.params.head_main_w, fresh.head_main_w)
        assert not np.array_equal(result.params.head_main_w, params.head_main_w)

    def test_attention_not_transferred(self):
        sf, ad = self._data()
        params = init_network_params(ModelVariant(MULTITASK), TOY_VOCAB, TOY_DIMS, seed=6)
        cfg = TrainingConfig(seed=6, batch_size=8, max_epochs_aux=2, max_epochs_main=0)
        result = train_pretrain(params, sf, ad, cfg)
        # phase-1 attention was trained away from its fresh values and must not carry over
        assert not np.array_equal(result.params.att_wu, params.att_wu)

    def test_history_has_both_phases(self):
        sf, ad = self._data()
        params = init_network_params(ModelVariant(MULTITASK), TOY_VOCAB, TOY_DIMS, seed=7)
        cfg = TrainingConfig(seed=7, batch_size=8, max_epochs_aux=2, max_epochs_main=3)
        result = train_pretrain(params, sf, ad, cfg)
        assert result.epochs(AUX) == 2
        assert result.epochs(MAIN) == 3
