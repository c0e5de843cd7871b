"""Tests for the windowed model: forward pass, rollout, loss, objective."""

import numpy as np
import pytest

from netlasso import tape
from netlasso.attention import EdgeSet
from netlasso.config import ModelConfig
from netlasso.model import (
    GnlModel,
    PARAM_NAMES,
    WindowSample,
    forward_window,
    load_checkpoint,
    mse_loss,
    objective,
    predict_horizon,
    save_checkpoint,
)
from netlasso.tape import ConfigError, ShapeError, Tape, Tensor, backward, grad_check

from _reference import forward_ref


def _toy_config(**over):
    base = dict(d_x=1, d_h=3, d_a=2, window=2, horizon=1, beta=0.0,
                slope=0.5, lr=0.001, epochs=1, optimizer="adam_pw",
                aggregator="attention", score_norm="per_source_out", seed=0)
    base.update(over)
    return ModelConfig(**base)


def _zero_params(model):
    model.set_parameters({k: np.zeros_like(v)
                          for k, v in model.parameters().items()})


class TestConstruction:
    def test_parameter_names_and_shapes(self):
        m = GnlModel(_toy_config(), n_nodes=4)
        params = m.parameters()
        assert tuple(params) == PARAM_NAMES
        assert params["gdu.forget"].shape == (2, 6)
        assert params["gdu.candidate"].shape == (3, 6)
        assert params["att.project"].shape == (2, 3)
        assert params["att.score"].shape == (4,)
        assert params["fc.weight"].shape == (1, 3)
        assert params["fc.bias"].shape == (1,)
        assert m.h0.shape == (4, 3)

    def test_same_seed_same_model(self):
        a = GnlModel(_toy_config(), n_nodes=3)
        b = GnlModel(_toy_config(), n_nodes=3)
        for k, v in a.parameters().items():
            assert v.tobytes() == b.parameters()[k].tobytes()
        assert a.h0.tobytes() == b.h0.tobytes()

    def test_default_edges_complete(self):
        m = GnlModel(_toy_config(), n_nodes=3)
        assert m.edges.n_edges == 6

    def test_edge_node_count_must_match(self):
        with pytest.raises(ConfigError):
            GnlModel(_toy_config(), n_nodes=3, edges=EdgeSet.complete(4))

    def test_set_parameters_rejects_bad_shape(self):
        m = GnlModel(_toy_config(), n_nodes=3)
        params = m.parameters()
        params["fc.bias"] = np.zeros(2)
        with pytest.raises(ShapeError):
            m.set_parameters(params)

    def test_set_parameters_rejects_missing_key(self):
        m = GnlModel(_toy_config(), n_nodes=3)
        params = m.parameters()
        del params["fc.bias"]
        with pytest.raises(ConfigError):
            m.set_parameters(params)


class TestForwardWindow:
    def test_zero_parameters_predict_bias(self):
        """All-zero weights cascade to zero hidden states; the prediction
        is exactly the head bias."""
        m = GnlModel(_toy_config(window=1), n_nodes=3)
        _zero_params(m)
        bias = np.array([0.37])
        params = m.parameters()
        params["fc.bias"] = bias
        m.set_parameters(params)
        rng = np.random.default_rng(0)
        fw = forward_window(m, rng.normal(size=(1, 3, 1)))
        np.testing.assert_array_equal(fw.hidden.values, np.zeros((3, 3)))
        np.testing.assert_array_equal(fw.predictions.values,
                                      np.tile(bias, (3, 1)))

    def test_single_node_ignores_attention_parameters(self):
        """With one node there are no edges: the aggregated input is the
        empty-sum convention sigmoid(0), so attention weights are inert."""
        m = GnlModel(_toy_config(), n_nodes=1)
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 1, 1))
        base = forward_window(m, x)
        params = m.parameters()
        params["att.project"] = params["att.project"] + 5.0
        params["att.score"] = params["att.score"] - 3.0
        m.set_parameters(params)
        again = forward_window(m, x)
        assert base.predictions.values.tobytes() == again.predictions.values.tobytes()
        g = backward(mse_loss(base.predictions, np.zeros((1, 1))))
        np.testing.assert_array_equal(g[base.leaves["att.project"]],
                                      np.zeros((2, 3)))
        assert [a.values.shape for a in base.alphas] == [(1, 1)] * 3
        for a in base.alphas:
            np.testing.assert_array_equal(a.values, np.zeros((1, 1)))

    @pytest.mark.parametrize("variant,norm", [
        ("attention", "per_source_out"),
        ("attention", "per_target_in"),
        ("fixed_mean", "per_source_out"),
        ("none", "per_source_out"),
    ])
    def test_matches_straight_line_reference(self, variant, norm):
        """The vectorized forward agrees with an independently written
        per-node loop implementation to 1e-12."""
        d_a = 3 if variant == "none" else 2
        cfg = _toy_config(aggregator=variant, score_norm=norm, d_a=d_a)
        m = GnlModel(cfg, n_nodes=3)
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 3, 1))
        fw = forward_window(m, x)
        ref_h, ref_pred, ref_alphas = forward_ref(
            m.parameters(), m.h0, x, m.edges.pairs(), cfg.slope, norm, variant)
        np.testing.assert_allclose(fw.hidden.values, ref_h, rtol=0, atol=1e-12)
        np.testing.assert_allclose(fw.predictions.values, ref_pred,
                                   rtol=0, atol=1e-12)
        if variant == "attention":
            assert len(fw.alphas) == 3
            for got, want in zip(fw.alphas, ref_alphas):
                np.testing.assert_allclose(got.values, want, rtol=0, atol=1e-12)
        else:
            assert fw.alphas == []

    def test_alpha_history_length_is_window_plus_one(self):
        m = GnlModel(_toy_config(window=4), n_nodes=3)
        fw = forward_window(m, np.zeros((4, 3, 1)))
        assert len(fw.alphas) == 5

    def test_alpha_rows_sum_to_one(self):
        m = GnlModel(_toy_config(), n_nodes=4)
        rng = np.random.default_rng(3)
        fw = forward_window(m, rng.normal(size=(2, 4, 1)))
        for a in fw.alphas:
            sums = a.values.sum(axis=1)
            np.testing.assert_allclose(sums, np.ones(4), atol=1e-9)

    def test_window_length_mismatch(self):
        m = GnlModel(_toy_config(window=2), n_nodes=3)
        with pytest.raises(ShapeError, match="window"):
            forward_window(m, np.zeros((3, 3, 1)))

    def test_node_count_mismatch(self):
        m = GnlModel(_toy_config(), n_nodes=3)
        with pytest.raises(ShapeError):
            forward_window(m, np.zeros((2, 4, 1)))

    def test_deterministic_forward(self):
        m = GnlModel(_toy_config(), n_nodes=3)
        x = np.random.default_rng(4).normal(size=(2, 3, 1))
        a = forward_window(m, x)
        b = forward_window(m, x)
        assert a.predictions.values.tobytes() == b.predictions.values.tobytes()
        for ma, mb in zip(a.alphas, b.alphas):
            assert ma.values.tobytes() == mb.values.tobytes()


class TestPredictHorizon:
    def test_horizon_one_equals_forward(self):
        m = GnlModel(_toy_config(), n_nodes=3)
        x = np.random.default_rng(5).normal(size=(2, 3, 1))
        got = predict_horizon(m, x, 1)
        want = forward_window(m, x).predictions.values
        np.testing.assert_array_equal(got[0], want)

    def test_zero_parameters_fixed_point(self):
        """With all-zero weights every rollout step predicts the bias."""
        m = GnlModel(_toy_config(), n_nodes=3)
        _zero_params(m)
        params = m.parameters()
        params["fc.bias"] = np.array([1.25])
        m.set_parameters(params)
        got = predict_horizon(m, np.zeros((2, 3, 1)), 4)
        np.testing.assert_array_equal(got, np.full((4, 3, 1), 1.25))

    def test_matches_manual_shift_iteration(self):
        """Three rollout steps equal three manual predict-and-shift rounds."""
        m = GnlModel(_toy_config(), n_nodes=3)
        x = np.random.default_rng(6).normal(size=(2, 3, 1))
        got = predict_horizon(m, x, 3)
        cur = np.array(x)
        for step in range(3):
            pred = forward_window(m, cur).predictions.values
            np.testing.assert_array_equal(got[step], pred)
            cur = np.concatenate([cur[1:], pred[None]], axis=0)

    def test_bad_horizon_rejected(self):
        m = GnlModel(_toy_config(), n_nodes=3)
        with pytest.raises(ValueError):
            predict_horizon(m, np.zeros((2, 3, 1)), 0)


class TestMseLoss:
    def test_perfect_prediction_is_zero(self):
        x = np.random.default_rng(7).normal(size=(4, 2))
        assert mse_loss(x, np.array(x)).values == 0.0

    def test_hand_case(self):
        """Two nodes, errors 1 and -1: (1 + 1) / 2 = 1."""
        pred = np.array([[1.0], [-1.0]])
        assert mse_loss(pred, np.zeros((2, 1))).values == 1.0

    def test_quadratic_homogeneity(self):
        rng = np.random.default_rng(8)
        pred, tgt = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
        base = float(mse_loss(pred, tgt).values)
        scaled = float(mse_loss(tgt + 2.5 * (pred - tgt), tgt).values)
        np.testing.assert_allclose(scaled, 2.5 ** 2 * base, rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse_loss(np.zeros((2, 1)), np.zeros((3, 1)))

    def test_node_reordering_invariance(self):
        rng = np.random.default_rng(9)
        pred, tgt = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
        perm = rng.permutation(5)
        a = float(mse_loss(pred, tgt).values)
        b = float(mse_loss(pred[perm], tgt[perm]).values)
        np.testing.assert_allclose(a, b, rtol=1e-12)


class TestObjective:
    def test_zero_beta_returns_loss_untouched(self):
        t = Tape()
        x = t.leaf(np.array([3.0, -4.0]))
        loss = tape.sumsq(x)
        assert objective(loss, {"x": x}, 0.0, "l1") is loss

    def test_reg_none_returns_loss_untouched(self):
        t = Tape()
        x = t.leaf(np.array([3.0, -4.0]))
        loss = tape.sumsq(x)
        assert objective(loss, {"x": x}, 0.5, "none") is loss

    def test_hand_values(self):
        """Single (3, -4) parameter with zero loss and beta 1."""
        t = Tape()
        x = t.leaf(np.array([[3.0], [-4.0]]))
        zero = Tensor(np.asarray(0.0))
        assert objective(zero, {"x": x}, 1.0, "l1").values == 7.0
        assert objective(zero, {"x": x}, 1.0, "fro").values == 5.0

    def test_l1_sign_flip_invariance(self):
        rng = np.random.default_rng(10)
        v = rng.normal(size=(3, 2))
        t = Tape()
        a = objective(Tensor(np.asarray(0.0)), {"x": t.leaf(v)}, 0.7, "l1")
        b = objective(Tensor(np.asarray(0.0)), {"x": t.leaf(-v)}, 0.7, "l1")
        assert a.values == b.values

    def test_negative_beta_rejected(self):
        t = Tape()
        x = t.leaf(np.ones(2))
        with pytest.raises(ValueError):
            objective(tape.sumsq(x), {"x": x}, -0.1, "l1")

    def test_unknown_reg_rejected(self):
        t = Tape()
        x = t.leaf(np.ones(2))
        with pytest.raises(ValueError):
            objective(tape.sumsq(x), {"x": x}, 0.1, "elastic")


class TestFullObjectiveGradients:
    @pytest.mark.parametrize("reg", ["none", "fro"])
    def test_grad_check_small_instance(self, reg):
        """One-window objective gradients match finite differences."""
        cfg = _toy_config()
        m = GnlModel(cfg, n_nodes=3)
        rng = np.random.default_rng(11)
        x = rng.normal(size=(2, 3, 1))
        tgt = rng.normal(size=(3, 1))

        def run(params):
            m.set_parameters(params)
            fw = forward_window(m, x)
            loss = objective(mse_loss(fw.predictions, tgt), fw.leaves,
                             0.01, reg)
            g = backward(loss)
            return loss, {k: g[v] for k, v in fw.leaves.items()}

        assert grad_check(run, m.parameters()) < 1e-5


class TestWindowSample:
    def test_shapes_validated(self):
        with pytest.raises(ShapeError):
            WindowSample(np.zeros((2, 3)), np.zeros((1, 3, 1)))

    def test_node_count_consistency(self):
        with pytest.raises(ShapeError):
            WindowSample(np.zeros((2, 3, 1)), np.zeros((1, 4, 1)))

    def test_missing_values_rejected(self):
        bad = np.zeros((2, 3, 1))
        bad[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            WindowSample(bad, np.zeros((1, 3, 1)))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        m = GnlModel(_toy_config(), n_nodes=3)
        rng = np.random.default_rng(12)
        params = {k: rng.normal(size=v.shape) for k, v in m.parameters().items()}
        m.set_parameters(params)
        p = tmp_path / "model.json"
        save_checkpoint(m, p, node_ids=["a", "b", "c"],
                        stats=(np.array([1.0, 2.0, 3.0]), np.array([1.0, 1.5, 2.0])))
        loaded, node_ids, stats = load_checkpoint(p)
        assert node_ids == ["a", "b", "c"]
        np.testing.assert_array_equal(stats[0], [1.0, 2.0, 3.0])
        for k, v in m.parameters().items():
            assert v.tobytes() == loaded.parameters()[k].tobytes()
        assert m.h0.tobytes() == loaded.h0.tobytes()
        assert loaded.config == m.config

    def test_byte_identical_rewrite(self, tmp_path):
        m = GnlModel(_toy_config(), n_nodes=3)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_checkpoint(m, a)
        save_checkpoint(m, b)
        assert a.read_bytes() == b.read_bytes()

    def test_prior_edges_survive(self, tmp_path):
        edges = EdgeSet.from_pairs(3, [(0, 1), (1, 2)])
        m = GnlModel(_toy_config(), n_nodes=3, edges=edges)
        p = tmp_path / "m.json"
        save_checkpoint(m, p)
        loaded, _, _ = load_checkpoint(p)
        assert loaded.edges.pairs() == [(0, 1), (1, 2)]

    def test_rejects_foreign_file(self, tmp_path):
        p = tmp_path / "junk.json"
        p.write_text('{"hello": 1}')
        with pytest.raises(ValueError, match="checkpoint"):
            load_checkpoint(p)
