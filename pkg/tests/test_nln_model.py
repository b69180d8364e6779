import numpy as np
import pytest

from nlogic import autodiff as ad
from nlogic.autodiff import Value
from nlogic.logic_ast import And, Not, Or, Var, VariableRangeError, parse
from nlogic.nln_model import (
    NLN, NlnConfig, build_batch, build_graph, init_model, load_checkpoint, param_shapes, predict,
    save_checkpoint, score_with_targets,
)

SIG10 = 1.0 / (1.0 + np.exp(-10.0))


def small_model(d=8, vocab=6, seed=0, dropout=0.0):
    return init_model(NlnConfig(d=d, dropout=dropout), vocab, ad.make_rng(seed, "init"), seed)


def zero_model(d=4, vocab=3):
    params = {k: Value(np.zeros(s)) for k, s in param_shapes(d).items()}
    return NLN(NlnConfig(d=d), params, Value(np.ones((vocab, d))), Value(np.ones(d)))


class TestModules:
    def test_output_lengths(self):
        m = small_model()
        x, y = Value(np.ones(8)), Value(np.arange(8.0))
        for out in (m.and_mod(x, y), m.or_mod(x, y), m.not_mod(x)):
            assert out.data.shape == (8,)

    def test_zero_params_give_zero(self):
        m = zero_model()
        x = Value(np.ones(4))
        for out in (m.and_mod(x, x), m.or_mod(x, x), m.not_mod(x)):
            np.testing.assert_array_equal(out.data, 0.0)

    def test_zero_not_makes_false_degenerate(self):
        m = zero_model()
        np.testing.assert_array_equal(m.false_vec().data, 0.0)
        with pytest.raises(ad.DegenerateVectorError):
            m.sim(m.false_vec(), m.anchor)

    def test_or_bias_does_not_touch_and(self):
        m = small_model()
        x, y = Value(np.ones(8)), Value(np.linspace(-1, 1, 8))
        before = m.and_mod(x, y).data.copy()
        m.params["or_b"].data += 5.0
        np.testing.assert_array_equal(m.and_mod(x, y).data, before)

    def test_and_h1_gradient(self):
        m = small_model()
        rng = np.random.default_rng(0)
        x, y = Value(rng.normal(size=8)), Value(rng.normal(size=8))
        f = lambda: ad.total(ad.mul(m.and_mod(x, y), np.linspace(-1, 1, 8)))
        assert ad.gradient_check(f, [m.params["and_h1"]]) < 1e-4

    def test_not_gradient(self):
        m = small_model()
        x = Value(np.random.default_rng(1).normal(size=8))
        f = lambda: ad.l2_norm_sq(m.not_mod(x))
        assert ad.gradient_check(f, [m.params["not_h1"], m.params["not_h2"], m.params["not_b"], x]) < 1e-4

    def test_not_rejects_wrong_length(self):
        with pytest.raises(ad.DimensionError):
            small_model().not_mod(Value(np.ones(5)))


class TestSim:
    def test_values(self):
        m = small_model()
        w = Value(np.random.default_rng(2).normal(size=8))
        assert m.sim(w, w).data == pytest.approx(0.9999546, abs=1e-7)
        assert m.sim(w, -w).data == pytest.approx(4.5398e-5, rel=1e-4)
        a, b = Value(np.eye(8)[0]), Value(np.eye(8)[1])
        assert m.sim(a, b).data == pytest.approx(0.5)

    def test_sim_rows_guards_zero_rows(self):
        m = small_model()
        rng = np.random.default_rng(5)
        a = rng.normal(size=(3, 8))
        a[1] = 0.0
        t = ad.repeat_row(m.anchor, 3)
        out, bad = m.sim_rows(Value(a), t)
        assert bad == 1 and out.data[1] == 0.5
        for i in (0, 2):
            assert out.data[i] == pytest.approx(float(m.sim(Value(a[i]), m.anchor).data))
        full, bad = m.sim_rows(Value(a[[0, 2]]), ad.repeat_row(m.anchor, 2))
        assert bad == 0 and np.allclose(full.data, out.data[[0, 2]])

    def test_prediction_of_anchor(self):
        m = small_model()
        assert m.sim(m.anchor, m.anchor).data == pytest.approx(SIG10)


class TestInit:
    def test_shapes_and_determinism(self):
        a, b = small_model(seed=3), small_model(seed=3)
        for k, s in param_shapes(8).items():
            assert a.params[k].data.shape == s
            np.testing.assert_array_equal(a.params[k].data, b.params[k].data)
        np.testing.assert_array_equal(a.embeddings.data, b.embeddings.data)

    def test_anchor_norm(self):
        norms = [np.linalg.norm(init_model(NlnConfig(), 1, ad.make_rng(s, "init")).anchor.data)
                 for s in range(1000)]
        assert 0.5 <= min(norms) and max(norms) <= 2.0

    def test_anchor_not_trainable(self):
        m = small_model()
        assert all(p is not m.anchor for p in m.trainable())


class TestBuildGraph:
    def test_or_and_not_shape_example(self):
        m = small_model()
        e = Or((And((Var(0), Var(1))), Not(Var(2))))
        calls = []
        for name in ("and_mod", "or_mod", "not_mod"):
            orig = getattr(m, name)
            setattr(m, name, lambda *a, _o=orig, _n=name, **k: calls.append(_n) or _o(*a, **k))
        g = build_graph(e, m)
        assert len(calls) == 3
        assert len(g.w_set) == 6

    def test_single_variable(self):
        m = small_model()
        g = build_graph(Var(5), m)
        np.testing.assert_array_equal(g.root.data, m.embeddings.data[5])
        assert len(g.w_set) == 1

    def test_eval_deterministic(self):
        m = small_model()
        e = parse("(v1 & ~v2 & v3) | v4 | (~v0 & v5)")
        np.testing.assert_array_equal(build_graph(e, m).root.data, build_graph(e, m).root.data)

    def test_w_set_cardinality(self):
        m = small_model()
        e = parse("(v1 & ~v2 & v3) | v1 | ~(v0 & v5)")
        # leaves {0,1,2,3,5}; modules: 2 NOT + (2 + 1) AND + 2 OR
        assert len(build_graph(e, m).w_set) == 5 + 2 + 3 + 2

    def test_unknown_variable(self):
        with pytest.raises(VariableRangeError):
            build_graph(Var(99), small_model())


class TestBuildBatch:
    def test_matches_single_builder(self):
        m = small_model(vocab=20)
        exprs = [parse(s) for s in ["v1", "~v3", "(v1 & v2) | ~v3", "v4 & v5 & ~v6 & v7",
                                    "(~v8 & v9) | (v10 & v11 & v12) | v13 | ~v14"]]
        g = build_batch(exprs, m)
        for i, e in enumerate(exprs):
            single = build_graph(e, m)
            np.testing.assert_allclose(g.roots.data[i], single.root.data, rtol=1e-12, atol=1e-14)
            assert g.sizes[i] == len(single.w_set)
        assert g.w.data.shape[0] == sum(g.sizes)
        p = predict(exprs, m)
        assert p.shape == (5,) and predict(exprs[2], m) == pytest.approx(p[2])

    def test_score_with_targets_matches_predict(self):
        m = small_model(vocab=20)
        prefixes = [parse("~(v1 & ~v2)"), parse("~v5")]
        targets = [np.array([3, 4, 7]), np.array([9])]
        scores = score_with_targets(prefixes, targets, m)
        for pre, ts, s in zip(prefixes, targets, scores):
            expected = predict([Or((pre, Var(int(t)))) for t in ts], m)
            np.testing.assert_allclose(s, expected, rtol=1e-12)

    @pytest.mark.parametrize("builder", ["graph", "batch"])
    def test_full_forward_gradients(self, builder):
        # d large enough that several hidden units are active; with a single live unit
        # the cosine is scale invariant and every upstream gradient vanishes exactly
        m = small_model(d=16)
        e = Or((And((Var(0), Var(1))), Not(Var(2))))

        def f():
            if builder == "graph":
                return m.sim(build_graph(e, m).root, m.anchor)
            g = build_batch([e], m)
            return ad.total(m.sim(g.roots, ad.repeat_row(m.anchor, 1)))

        assert ad.gradient_check(f, m.trainable()) < 1e-4
        for p in m.module_params:
            assert np.abs(p.grad).max() > 1e-6

    def test_training_mode_randomises_and_is_seeded(self):
        m = small_model(vocab=20, dropout=0.2)
        exprs = [parse("(v1 & v2 & v3) | v4 | ~v5")] * 4
        a = build_batch(exprs, m, True, np.random.default_rng(0)).roots.data
        b = build_batch(exprs, m, True, np.random.default_rng(0)).roots.data
        c = build_batch(exprs, m, True, np.random.default_rng(1)).roots.data
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        m = small_model()
        save_checkpoint(tmp_path / "m.npz", m, note=np.arange(3))
        m2, extra = load_checkpoint(tmp_path / "m.npz")
        assert m2.cfg == m.cfg and m2.seed == m.seed
        for k in m.params:
            np.testing.assert_array_equal(m2.params[k].data, m.params[k].data)
        np.testing.assert_array_equal(m2.embeddings.data, m.embeddings.data)
        np.testing.assert_array_equal(m2.anchor.data, m.anchor.data)
        np.testing.assert_array_equal(extra["note"], np.arange(3))
