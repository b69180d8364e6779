from dataclasses import replace

import numpy as np
import pytest

from nlogic import autodiff as ad
from nlogic.autodiff import Tape, Value
from nlogic.logic_ast import GenConfig, LabeledExpr, generate_dataset, parse, split_dataset
from nlogic.nln_model import NlnConfig, build_batch, init_model, predict
from nlogic.rec_pipeline import Interaction, prepare
from nlogic.regularizers import RegWeights, total_loss
from nlogic.training import (
    ConfigError, Session, TrainConfig, aggregate, config_hash, cross_entropy, pairwise_loss,
    rank_cases, train_pairwise, train_pointwise,
)

LN2 = np.log(2.0)


def _v(x):
    return Value(np.atleast_1d(np.asarray(x, dtype=np.float64)))


class TestLosses:
    def test_cross_entropy_examples(self):
        assert cross_entropy(_v(0.5), [1]).data == pytest.approx(LN2)
        assert cross_entropy(_v(0.9999546), [1]).data == pytest.approx(4.54e-5, rel=1e-3)
        assert cross_entropy(_v(0.0), [1]).data == pytest.approx(np.log(1e7), rel=1e-6)

    def test_cross_entropy_is_mean(self):
        p = _v([0.5, 0.25])
        assert cross_entropy(p, [1, 1]).data == pytest.approx((LN2 + np.log(4)) / 2)

    def test_pairwise_examples(self):
        assert pairwise_loss(_v(0.3), _v(0.3)).data == pytest.approx(LN2)
        assert pairwise_loss(_v(10.0), _v(0.0)).data == pytest.approx(4.54e-5, rel=1e-3)

    def test_pairwise_symmetry_bound(self):
        rng = np.random.default_rng(0)
        for a, b in rng.normal(scale=5, size=(200, 2)):
            total = pairwise_loss(_v(a), _v(b)).data + pairwise_loss(_v(b), _v(a)).data
            assert total >= 2 * LN2 - 1e-12


class TestAggregate:
    def test_constant(self):
        out = aggregate([{"acc": 0.9}] * 5)
        assert out["acc"][0] == pytest.approx(0.9) and out["acc"][1] == pytest.approx(0.0, abs=1e-15)

    def test_two_points(self):
        mean, se = aggregate([{"acc": 0.8}, {"acc": 1.0}])["acc"]
        assert mean == pytest.approx(0.9) and se == pytest.approx(0.1)

    def test_order_invariant(self):
        rows = [{"m": v} for v in (0.1, 0.5, 0.3, 0.9)]
        a, b = aggregate(rows)["m"], aggregate(rows[::-1])["m"]
        np.testing.assert_allclose(a, b, rtol=1e-15)

    def test_needs_two(self):
        with pytest.raises(ConfigError):
            aggregate([{"m": 1.0}])


class TestConfig:
    def test_invalid(self):
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=0)
        with pytest.raises(ConfigError):
            TrainConfig(patience=0)
        with pytest.raises(ConfigError):
            TrainConfig(eval_metric="f1")

    def test_dict_round_trip_and_hash(self):
        cfg = TrainConfig(lr=2e-3, reg_weights=RegWeights(0.0, 1e-4, 1e-6), seeds=(3, 4))
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg
        assert config_hash(cfg) == config_hash(TrainConfig.from_dict(cfg.to_dict()))
        assert config_hash(cfg) != config_hash(replace(cfg, lr=1e-3))

    def test_empty_split(self):
        m = init_model(NlnConfig(d=8), 5, ad.make_rng(0, "init"))
        item = [LabeledExpr(parse("v1"), True)]
        with pytest.raises(ConfigError):
            train_pointwise([], item, item, m, TrainConfig(max_epochs=1), 0)


def tiny_sim(n=5, m=10, seed=0):
    _, data = generate_dataset(GenConfig(n=n, m=m, clauses=(1, 3), literals=(1, 3), seed=seed))
    return data


def small_sim(seed=0):
    _, data = generate_dataset(GenConfig(n=50, m=600, clauses=(1, 3), literals=(1, 3), seed=seed))
    return split_dataset(data, seed=seed)


class TestPointwise:
    def test_overfit_ten_expressions(self):
        data = tiny_sim()
        m = init_model(NlnConfig(d=16), 5, ad.make_rng(0, "init"), 0)
        cfg = TrainConfig(lr=1e-2, batch_size=10, max_epochs=100, patience=100, dropout=0.0,
                          reg_weights=RegWeights(1e-2, 1e-4, 1e-5))
        hit = []
        train_pointwise(data, data, data, m, cfg, 0,
                              on_epoch=lambda st: hit.append(st.metric["train"]))
        assert max(hit) == 1.0

    def test_determinism(self):
        tr, va, te = small_sim()

        def run():
            m = init_model(NlnConfig(d=16), 50, ad.make_rng(1, "init"), 1)
            res = train_pointwise(tr, va, te, m, TrainConfig(max_epochs=5, patience=5), 1)
            return res

        a, b = run(), run()
        assert [s.loss for s in a.stats] == [s.loss for s in b.stats]
        assert [s.metric for s in a.stats] == [s.metric for s in b.stats]
        for x, y in zip(a.stats, b.stats):
            np.testing.assert_array_equal(x.report.r, y.report.r)
        np.testing.assert_array_equal(a.model.embeddings.data, b.model.embeddings.data)

    def test_gradient_flow_one_batch(self):
        tr, _, _ = small_sim()
        m = init_model(NlnConfig(d=16), 50, ad.make_rng(0, "init"), 0)
        rng = np.random.default_rng(0)
        batch = tr[:64]
        with Tape() as tape:
            g = build_batch([x.expr for x in batch], m, True, rng)
            p = m.sim(g.roots, ad.repeat_row(m.anchor, len(batch)))
            loss, _ = total_loss(cross_entropy(p, [x.label for x in batch]), g.w, m, RegWeights(), True, rng)
        ad.backward(loss, tape)
        for mod in ("and", "or", "not"):
            assert any(np.any(m.params[f"{mod}_{k}"].grad != 0) for k in ("h1", "h2", "b"))
        assert np.any(m.embeddings.grad != 0)
        # the anchor sits in the graph but is frozen
        assert all(p is not m.anchor for p in m.trainable())


@pytest.fixture(scope="module")
def trained_small():
    tr, va, te = small_sim(seed=2)
    m = init_model(NlnConfig(d=32), 50, ad.make_rng(2, "init"), 2)
    cfg = TrainConfig(max_epochs=40, patience=40, lr=3e-3)
    res = train_pointwise(tr, va, te, m, cfg, 2)
    return tr, res


class TestTrainedModel:
    def test_best_epoch_is_returned(self, trained_small):
        tr, res = trained_small
        vals = [s.metric["valid"] for s in res.stats]
        best = res.stats[int(np.argmax(vals))]
        assert res.best_epoch == best.epoch
        _, va, _ = small_sim(seed=2)
        p = predict([x.expr for x in va], res.model)
        assert np.mean((p >= 0.5) == np.array([x.label for x in va])) == pytest.approx(max(vals))

    def test_logic_terms_decrease(self, trained_small):
        _, res = trained_small
        sums = [s.report.r.sum() for s in res.stats[1:11]]
        assert sums[-1] <= sums[0]

    def test_false_below_half(self, trained_small):
        _, res = trained_small
        m = res.model
        assert m.sim(m.false_vec(), m.anchor).data < 0.5

    def test_true_train_predictions_high(self, trained_small):
        tr, res = trained_small
        p = predict([x.expr for x in tr if x.label], res.model)
        assert p.mean() > 0.9


class TestResume:
    def test_resume_matches_uninterrupted(self, tmp_path):
        tr, va, te = small_sim(seed=3)
        cfg = TrainConfig(max_epochs=6, patience=6)
        snaps = {}

        def grab(tag):
            def cb(st):
                snaps[(tag, st.epoch)] = model_ref[tag].embeddings.data.copy()
            return cb

        model_ref = {"full": init_model(NlnConfig(d=16), 50, ad.make_rng(3, "init"), 3)}
        train_pointwise(tr, va, te, model_ref["full"], cfg, 3, checkpoint_dir=tmp_path, on_epoch=grab("full"))
        ckpts = sorted(tmp_path.glob("ckpt-*.npz"), key=lambda p: int(p.stem.split("-")[1]))
        assert ckpts[0].name == "ckpt-0.npz"
        assert len(ckpts) > 1, "no improvement checkpoint written"
        start = ckpts[1]
        k = int(start.stem.split("-")[1])
        assert k < 6
        model_ref["resumed"] = init_model(NlnConfig(d=16), 50, ad.make_rng(99, "init"), 3)
        train_pointwise(tr, va, te, model_ref["resumed"], cfg, 3, on_epoch=grab("resumed"), resume=start)
        np.testing.assert_array_equal(snaps[("resumed", 6)], snaps[("full", 6)])


def toy_ratings(n_users=30, n_items=400, per_user=14, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for u in range(n_users):
        items = rng.choice(n_items, size=per_user, replace=False)
        for t, i in enumerate(items):
            rows.append(Interaction(u, int(i), 5 if (i + u) % 3 else 2, t))
    return prepare(rows)


class TestPairwise:
    def test_runs_and_resamples(self):
        data = toy_ratings()
        rng = ad.make_rng(0, "eval")
        valid, test = rank_cases(data.valid, data, rng), rank_cases(data.test, data, rng)
        assert valid and test and all(len(c.items) == 101 for c in test)
        m = init_model(NlnConfig(d=16), data.n_items, ad.make_rng(0, "init"), 0)
        pos = [r for r in data.train if r.label]
        cfg = TrainConfig(max_epochs=2, patience=2, eval_metric="ndcg@10")
        res = train_pairwise(pos, valid, test, m, cfg, 0, data)
        assert len(res.stats) == 3 and np.isfinite(res.stats[-1].metric["test"])

        # fresh negatives each epoch: same positive, two sampler draws
        sess = Session([], 0)
        draws = {data.sampler.sample(pos[0].user, sess.rng_neg) for _ in range(5)}
        assert len(draws) > 1

    def test_rejects_negative_targets(self):
        data = toy_ratings()
        m = init_model(NlnConfig(d=8), data.n_items, ad.make_rng(0, "init"), 0)
        rng = ad.make_rng(0, "eval")
        cases = rank_cases(data.test, data, rng)
        with pytest.raises(ConfigError):
            train_pairwise(data.train, cases, cases, m, TrainConfig(max_epochs=1), 0, data)

    def test_user_without_negatives_is_skipped(self):
        rows = [Interaction(0, i, 5, i) for i in range(8)] + [Interaction(1, i, 5 if i < 4 else 1, i) for i in range(8)]
        data = prepare(rows)
        pos = [r for r in data.train if r.label]
        m = init_model(NlnConfig(d=8), data.n_items, ad.make_rng(0, "init"), 0)
        skipped = []
        # user 0 likes every item, so no negatives exist for it
        from nlogic.training import RankCase
        case = [RankCase(parse("~v1"), np.array([0, 1, 2]), 1)]
        train_pairwise(pos, case, case, m, TrainConfig(max_epochs=1, eval_metric="ndcg@10"), 0, data,
                       on_epoch=lambda st: skipped.append(st.skipped))
        assert skipped[-1] == sum(r.user == 0 for r in pos)
