"""Training loop, metrics, and influence export."""

import numpy as np
import pytest

from netlasso.attention import EdgeSet
from netlasso.config import ModelConfig
from netlasso.data import inverse_zscore
from netlasso.model import (
    GnlModel,
    WindowSample,
    forward_window,
    predict_horizon,
    save_checkpoint,
)
from netlasso.synth import shock_relay
from netlasso.training import (
    HISTORY_HEADER,
    TrainingError,
    evaluate,
    export_attention,
    format_history,
    format_metrics,
    mean_window_mse,
    metrics_from_arrays,
    penalty_value,
    prepare,
    train,
)


def small_dataset(seed=0, n_rows=60):
    return shock_relay(n_nodes=4, n_rows=n_rows, seed=seed,
                          driver_pole=0.5, follower_pole=0.6)


def small_config(**over):
    base = dict(d_x=1, d_h=5, d_a=3, window=4, horizon=1, epochs=2,
                lr=0.01, beta=1e-4, seed=0)
    base.update(over)
    return ModelConfig(**base)


class TestPrepare:
    def test_part_sizes_cover_all_windows(self):
        """Train, val, and test windows partition the sample list."""
        ds = small_dataset()
        parts, split, _ = prepare(small_config(), ds)
        total = sum(len(v) for v in parts.values())
        n_windows = 60 - 4 - 1 + 1
        dropped = (split.val[0] - split.train[1]) + (split.test[0] - split.val[1])
        assert total == n_windows - dropped
        assert split.test[1] == n_windows

    def test_stats_ignore_test_rows(self):
        """Normalization stats cannot depend on rows only test windows see."""
        ds = small_dataset()
        _, _, stats = prepare(small_config(), ds)
        tampered = small_dataset()
        tampered.values[-10:] *= 3.0
        _, _, stats2 = prepare(small_config(), tampered)
        assert stats[0].tobytes() == stats2[0].tobytes()
        assert stats[1].tobytes() == stats2[1].tobytes()


class TestTrain:
    def test_zero_epochs_returns_initialized_model(self):
        """With 0 epochs the parameters equal a fresh model's, untouched."""
        ds = small_dataset()
        cfg = small_config(epochs=0)
        result = train(cfg, ds, edges=EdgeSet.complete(4))
        fresh = GnlModel(cfg, 4, EdgeSet.complete(4))
        for name, arr in fresh.parameters().items():
            assert result.model.parameters()[name].tobytes() == arr.tobytes()
        assert result.history == []

    def test_repeat_run_bitwise_identical(self):
        """Same config and data give byte-identical history and checkpoint."""
        ds = small_dataset()
        outs = []
        for _ in range(2):
            result = train(small_config(epochs=3), ds)
            outs.append((format_history(result.history),
                         {k: v.tobytes()
                          for k, v in result.model.parameters().items()}))
        assert outs[0] == outs[1]

    def test_checkpoint_files_identical(self, tmp_path):
        """Two runs saved to disk agree byte for byte."""
        ds = small_dataset()
        raw = []
        for tag in ("a", "b"):
            result = train(small_config(epochs=2), ds)
            path = tmp_path / f"{tag}.json"
            save_checkpoint(result.model, path, node_ids=ds.node_ids,
                            stats=result.stats)
            raw.append(path.read_bytes())
        assert raw[0] == raw[1]

    def test_training_reduces_loss(self):
        """A short run on strongly coupled data lowers the training error."""
        ds = shock_relay(n_nodes=4, n_rows=120, seed=3, driver_pole=0.5,
                         follower_pole=0.6)
        result = train(small_config(epochs=12, lr=0.02), ds)
        assert result.history[-1].train_mse < result.history[0].train_mse

    def test_returned_model_matches_best_validation_epoch(self):
        """The run hands back the parameters of the lowest val_mse epoch."""
        ds = small_dataset(n_rows=80)
        cfg = small_config(epochs=6)
        result = train(cfg, ds)
        best = min(row.val_mse for row in result.history)
        got = mean_window_mse(result.model, result.samples["val"])
        assert got == pytest.approx(best, rel=0, abs=0)

    def test_dataset_edges_used_when_not_overridden(self):
        """With no explicit edge set the dataset's prior graph is adopted."""
        ds = small_dataset()
        result = train(small_config(epochs=0), ds)
        assert result.model.edges.pairs() == ds.edges.pairs()
        override = train(small_config(epochs=0), ds, edges=EdgeSet.complete(4))
        assert override.model.edges.pairs() == EdgeSet.complete(4).pairs()

    def test_forward_hook_sees_every_pass(self):
        """One epoch produces a hook call per train window plus per val
        window, each carrying a full influence history."""
        ds = small_dataset()
        cfg = small_config(epochs=1)
        passes = []
        result = train(cfg, ds, forward_hook=passes.append)
        expected = len(result.samples["train"]) + len(result.samples["val"])
        assert len(passes) == expected
        assert all(len(fp.alphas) == cfg.window + 1 for fp in passes)

    def test_diverging_run_raises_with_location(self):
        """A blown-up loss aborts the run naming the epoch and window."""
        ds = small_dataset(n_rows=40)
        cfg = small_config(epochs=30, optimizer="pg", lr=1e8, beta=0.0)
        with np.errstate(all="ignore"), \
                pytest.raises(TrainingError, match=r"non-finite loss at epoch"):
            train(cfg, ds)

    @pytest.mark.parametrize("optimizer", ["adam_pw", "adam_f", "pg", "apg"])
    def test_all_schemes_run_and_record(self, optimizer):
        """Each update scheme completes two epochs with finite history."""
        ds = small_dataset()
        lr = 0.01 if optimizer.startswith("adam") else 0.05
        cfg = small_config(epochs=2, optimizer=optimizer, lr=lr)
        result = train(cfg, ds)
        assert len(result.history) == 2
        for row in result.history:
            assert np.isfinite(row.train_objective)
            assert np.isfinite(row.train_mse)
            assert np.isfinite(row.val_mse)

    @pytest.mark.parametrize("aggregator", ["attention", "none", "fixed_mean"])
    @pytest.mark.parametrize("beta", [1e-4, 0.0])
    def test_ablation_matrix_completes(self, aggregator, beta):
        """Every aggregator crossed with penalized and plain objectives
        finishes an epoch with finite losses."""
        ds = small_dataset()
        d_a = 5 if aggregator == "none" else 3
        cfg = small_config(epochs=1, aggregator=aggregator, beta=beta, d_a=d_a)
        result = train(cfg, ds)
        assert np.isfinite(result.history[0].train_objective)

    def test_objective_includes_penalty(self):
        """With beta > 0 the objective rows sit above the bare error rows
        by exactly beta times a parameter penalty (both are averages of
        the same windows)."""
        ds = small_dataset()
        cfg = small_config(epochs=1, beta=0.1)
        result = train(cfg, ds)
        row = result.history[0]
        assert row.train_objective > row.train_mse
        zero = train(small_config(epochs=1, beta=0.0), ds).history[0]
        assert zero.train_objective == zero.train_mse


class TestHistoryFormat:
    def test_header_and_roundtrip(self):
        """Formatted rows parse back to the exact recorded floats."""
        ds = small_dataset()
        result = train(small_config(epochs=2), ds)
        text = format_history(result.history)
        lines = text.strip().split("\n")
        assert lines[0] == HISTORY_HEADER
        fields = lines[1].split("\t")
        assert int(fields[0]) == 1
        assert float(fields[1]) == result.history[0].train_objective
        assert float(fields[2]) == result.history[0].train_mse
        assert float(fields[3]) == result.history[0].val_mse

    def test_missing_validation_written_as_nan(self):
        from netlasso.training import EpochRecord
        text = format_history([EpochRecord(1, 0.5, 0.25, None)])
        assert text.strip().split("\n")[1].endswith("\tnan")


class TestPenaltyValue:
    def test_hand_values(self):
        """A 3-4-5 vector has absolute sum 7 and Frobenius norm 5."""
        params = {"w": np.array([3.0, -4.0])}
        assert penalty_value(params, "l1") == 7.0
        assert penalty_value(params, "fro") == 5.0
        with pytest.raises(ValueError):
            penalty_value(params, "huber")


class TestMetrics:
    def test_hand_example(self):
        """Truth (1,3) against predictions (1,2): MAE one half, RMSE the
        square root of one half, and half the variance explained."""
        m = metrics_from_arrays([1.0, 2.0], [1.0, 3.0])
        assert m["mae"] == 0.5
        assert m["rmse"] == pytest.approx(0.7071067811865476, rel=0, abs=1e-16)
        assert m["r2"] == pytest.approx(0.5, rel=0, abs=1e-15)

    def test_perfect_predictions(self):
        m = metrics_from_arrays([1.0, 3.0, -2.0], [1.0, 3.0, -2.0])
        assert m == {"mae": 0.0, "rmse": 0.0, "r2": 1.0}

    def test_constant_truth_has_no_r2(self):
        m = metrics_from_arrays([1.0, 2.0], [5.0, 5.0])
        assert m["r2"] is None
        assert "undefined" in format_metrics(m)

    def test_evaluate_matches_manual_rollout(self):
        """evaluate equals metrics computed from hand-rolled predictions."""
        ds = small_dataset()
        result = train(small_config(epochs=1), ds)
        samples = result.samples["test"]
        preds = np.concatenate([
            predict_horizon(result.model, s.inputs, 1).reshape(1, -1)
            for s in samples])
        truth = np.concatenate([s.targets.reshape(1, -1) for s in samples])
        want = metrics_from_arrays(preds, truth)
        got = evaluate(result.model, samples)
        assert got == want

    def test_denormalized_equals_inverse_mapped(self):
        """Metrics in original units match metrics of the inverse-mapped
        normalized arrays."""
        ds = small_dataset()
        result = train(small_config(epochs=1), ds)
        samples = result.samples["test"]
        got = evaluate(result.model, samples, result.stats)
        preds = np.concatenate([
            predict_horizon(result.model, s.inputs, 1).reshape(1, -1)
            for s in samples])
        truth = np.concatenate([s.targets.reshape(1, -1) for s in samples])
        want = metrics_from_arrays(inverse_zscore(preds, result.stats),
                                   inverse_zscore(truth, result.stats))
        assert got["mae"] == pytest.approx(want["mae"], rel=1e-9)
        assert got["rmse"] == pytest.approx(want["rmse"], rel=1e-9)
        assert got["r2"] == pytest.approx(want["r2"], rel=1e-9)

    def test_multi_step_rollout_pooled(self):
        """A zero-parameter model predicts its bias at every rollout step,
        so the pooled error is the mean deviation of targets from it."""
        cfg = small_config(horizon=2)
        model = GnlModel(cfg, 2)
        zeros = {k: np.zeros_like(v) for k, v in model.parameters().items()}
        model.set_parameters(zeros)
        rng = np.random.default_rng(5)
        samples = [WindowSample(inputs=rng.normal(size=(4, 2, 1)),
                                targets=rng.normal(size=(2, 2, 1)))
                   for _ in range(3)]
        got = evaluate(model, samples)
        pooled = np.concatenate([s.targets.reshape(-1) for s in samples])
        assert got["mae"] == pytest.approx(np.abs(pooled).mean(), rel=1e-12)

    def test_empty_samples_rejected(self):
        model = GnlModel(small_config(), 4)
        with pytest.raises(ValueError, match="empty"):
            evaluate(model, [])


class TestExportAttention:
    def _trained(self, tmp_path):
        ds = small_dataset()
        result = train(small_config(epochs=1), ds, edges=EdgeSet.complete(4))
        sample = result.samples["test"][0]
        out = tmp_path / "alphas"
        paths = export_attention(result.model, sample.inputs, out,
                                 node_ids=ds.node_ids)
        return result, sample, out, paths

    def test_file_names_and_count(self, tmp_path):
        """One file per unrolled step plus the final matrix."""
        _, _, out, paths = self._trained(tmp_path)
        names = [p.split("/")[-1] for p in paths]
        assert names == ["alpha_step1.tsv", "alpha_step2.tsv",
                         "alpha_step3.tsv", "alpha_step4.tsv",
                         "alpha_final.tsv"]

    def test_rows_sum_to_one_after_roundtrip(self, tmp_path):
        """Parsed rows sum to 1 over each source's out-neighborhood and
        the diagonal stays exactly zero."""
        _, _, _, paths = self._trained(tmp_path)
        for path in paths:
            lines = open(path).read().strip().split("\n")
            assert lines[0].split("\t") == ["source", "n0", "n1", "n2", "n3"]
            for j, line in enumerate(lines[1:]):
                vals = [float(v) for v in line.split("\t")[1:]]
                assert vals[j] == 0.0
                assert abs(sum(vals) - 1.0) <= 1e-6

    def test_reexport_byte_identical(self, tmp_path):
        result, sample, _, paths = self._trained(tmp_path)
        first = [open(p, "rb").read() for p in paths]
        again = export_attention(result.model, sample.inputs,
                                 tmp_path / "alphas2")
        second = [open(p, "rb").read() for p in again]
        assert first == second

    def test_single_node_zero_matrix(self, tmp_path):
        """One node means no edges: every matrix is the 1x1 zero matrix."""
        cfg = small_config()
        model = GnlModel(cfg, 1)
        rng = np.random.default_rng(0)
        paths = export_attention(model, rng.normal(size=(4, 1, 1)),
                                 tmp_path / "solo")
        for path in paths:
            lines = open(path).read().strip().split("\n")
            assert lines[1] == "n0\t0.0"

    def test_non_attention_aggregator_rejected(self, tmp_path):
        cfg = small_config(aggregator="fixed_mean")
        model = GnlModel(cfg, 4)
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError, match="fixed_mean"):
            export_attention(model, rng.normal(size=(4, 4, 1)), tmp_path / "x")
