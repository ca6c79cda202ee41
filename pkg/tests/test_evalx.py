import json
from dataclasses import replace

import numpy as np
import pytest

from labelclean import nnet
from labelclean.data import make_synthetic, write_csv
from labelclean.errors import ConfigurationError
from labelclean.evalx import (
    MetricsRow,
    PrecisionRow,
    aggregate_metrics,
    aggregate_precision,
    config_from_dict,
    f1_macro,
    f1_macro_from_labels,
    load_config,
    prepare_run,
    read_metrics_csv,
    report,
    run_q1,
    run_q2,
    run_strategies,
    write_metrics_csv,
)
from labelclean.nnet import ArchitectureSpec, TrainConfig, init_params


def write_moons_dataset(tmp_path, n=160, name="moons"):
    ds = make_synthetic("moons", n, 0.15, seed=0)
    csv_path = tmp_path / f"{name}.csv"
    write_csv(ds, csv_path)
    manifest = {
        "name": name,
        "path": f"{name}.csv",
        "label_column": "label",
        "class_names": ["class1", "class2"],
    }
    manifest_path = tmp_path / f"{name}.json"
    manifest_path.write_text(json.dumps(manifest))
    return manifest_path


def small_config(tmp_path, **overrides):
    manifest_path = write_moons_dataset(tmp_path)
    raw = {
        "dataset": str(manifest_path),
        "model": {"kind": "mlp", "hidden_dims": [8], "dropout_rate": 0.0},
        "train": {"epochs": 40},
        "corruption": {"rate": 0.2},
        "bootstrap_size": 40,
        "stream_length": 20,
        "seeds": [0, 1],
        "tau": 0.2,
        "output_dir": str(tmp_path / "out"),
    }
    raw.update(overrides)
    return config_from_dict(raw, base_dir=tmp_path)


class TestF1Macro:
    def test_perfect_predictions(self):
        ds = make_synthetic("two-gaussians", 60, 0.2, seed=0)
        arch = ArchitectureSpec(kind="linear-softmax", input_dim=2, num_classes=2, seed=0)
        params = nnet.fit(ds, arch, TrainConfig(epochs=500, learning_rate=0.05,
                                                early_stop_train_accuracy=1.0, seed=0))
        assert f1_macro(params, ds) == 1.0

    def test_constant_predictor_closed_form(self):
        # balanced binary set, everything predicted class 1:
        # class 1 F1 = 2*0.5/1.5 = 2/3, class 2 F1 = 0 -> macro = 1/3
        y_true = np.array([1] * 50 + [2] * 50)
        y_pred = np.ones(100, dtype=np.int64)
        assert f1_macro_from_labels(y_true, y_pred, 2) == pytest.approx(1.0 / 3.0)

    def test_matches_confusion_matrix_oracle(self):
        rng = np.random.default_rng(0)
        y_true = rng.integers(1, 4, size=200)
        y_pred = rng.integers(1, 4, size=200)

        def oracle(y_true, y_pred, c):
            confusion = np.zeros((c, c), dtype=int)
            for t, p in zip(y_true, y_pred):
                confusion[t - 1, p - 1] += 1
            f1s = []
            for k in range(c):
                tp = confusion[k, k]
                precision = tp / confusion[:, k].sum() if confusion[:, k].sum() else 0.0
                recall = tp / confusion[k, :].sum() if confusion[k, :].sum() else 0.0
                f1s.append(0.0 if precision + recall == 0
                           else 2 * precision * recall / (precision + recall))
            return float(np.mean(f1s))

        assert f1_macro_from_labels(y_true, y_pred, 3) == pytest.approx(
            oracle(y_true, y_pred, 3), abs=1e-12)

    def test_absent_class_scores_zero(self):
        y_true = np.array([1, 1, 2, 2])
        y_pred = np.array([1, 1, 2, 2])
        # class 3 absent from both -> contributes 0, macro = 2/3
        assert f1_macro_from_labels(y_true, y_pred, 3) == pytest.approx(2.0 / 3.0)


class TestConfig:
    def test_load_config_missing_file(self):
        with pytest.raises(ConfigurationError):
            load_config("/nonexistent/config.json")

    def test_config_from_dict_requires_dataset(self, tmp_path):
        with pytest.raises(ConfigurationError):
            config_from_dict({"model": {"kind": "mlp"}}, base_dir=tmp_path)

    def test_invalid_budget_detected(self, tmp_path):
        cfg = small_config(tmp_path, bootstrap_size=100, stream_length=100)
        with pytest.raises(ConfigurationError):
            prepare_run(cfg, 0)

    def test_prepare_run_disjoint_and_sized(self, tmp_path):
        cfg = small_config(tmp_path)
        bootstrap, stream, test = prepare_run(cfg, 0)
        assert len(bootstrap) == 40 and len(stream) == 20
        ids = [ex.id for ex in bootstrap] + [ex.id for ex in stream] + [ex.id for ex in test]
        assert len(ids) == len(set(ids))
        # test set never corrupted
        assert all(not ex.corrupted for ex in test)


class TestHarness:
    def test_identical_stream_across_strategies(self, tmp_path):
        cfg = small_config(tmp_path, seeds=[3])
        b1, s1, _ = prepare_run(cfg, 3)
        b2, s2, _ = prepare_run(cfg, 3)
        assert [ex.id for ex in s1] == [ex.id for ex in s2]
        assert [(ex.id, ex.observed_label) for ex in b1] == \
               [(ex.id, ex.observed_label) for ex in b2]

    def test_run_q1_row_shape(self, tmp_path):
        cfg = small_config(tmp_path, seeds=[0], stream_length=8)
        rows = run_q1(cfg)
        strategies = {r.strategy for r in rows}
        assert strategies == {"cincer+top-fisher", "drop-ce", "no-ce"}
        for strategy in strategies:
            iters = [r.iteration for r in rows if r.strategy == strategy]
            assert iters == list(range(1, 9))
        for row in rows:
            assert row.cleaned_total == row.cleaned_suspicious + row.cleaned_counterexamples
            assert 0.0 <= row.f1 <= 1.0

    def test_counters_monotone(self, tmp_path):
        cfg = small_config(tmp_path, seeds=[0], stream_length=12)
        rows = run_q1(cfg)
        for strategy in {"cincer+top-fisher", "drop-ce", "no-ce"}:
            series = [r for r in rows if r.strategy == strategy]
            for a, b in zip(series, series[1:]):
                assert b.cleaned_total >= a.cleaned_total
                assert b.queries >= a.queries
                assert b.useless_queries >= a.useless_queries

    def test_run_q2_backends_and_ranges(self, tmp_path):
        cfg = small_config(tmp_path, seeds=[0], stream_length=15)
        rows = run_q2(cfg, k_values=(5, 10), num_queries=15)
        backends = {r.backend for r in rows}
        assert backends == {"lissa-hessian", "full-fisher", "diagonal-fisher",
                            "identity", "top-fisher"}
        for row in rows:
            if row.precision is not None:
                assert 0.0 <= row.precision <= 1.0

    def test_run_q2_noiseless_emits_null_with_reason(self, tmp_path):
        cfg = small_config(tmp_path, seeds=[0], corruption={"rate": 0.0})
        cfg = replace(cfg, corruption_rate=0.0)
        rows = run_q2(cfg, k_values=(5,), num_queries=5)
        assert rows
        for row in rows:
            assert row.precision is None
            assert "no corrupted" in row.note

    def test_run_q2_param_cap_skips_full_fisher(self, tmp_path):
        # 128x128 hidden layers push the model over the 5000-parameter cap:
        # the full-fisher backend must be skipped with a notice while the
        # scoped backends still report numbers.
        cfg = small_config(tmp_path, seeds=[0], stream_length=5,
                           model={"kind": "mlp", "hidden_dims": [128, 128]})
        rows = run_q2(cfg, k_values=(5,), num_queries=3)
        full = [r for r in rows if r.backend == "full-fisher"]
        top = [r for r in rows if r.backend == "top-fisher"]
        assert full and all(r.precision is None and "skipped" in r.note for r in full)
        assert top and all(r.precision is not None for r in top)


class TestSerialization:
    def _rows(self):
        return [
            MetricsRow(iteration=1, strategy="cincer+top-fisher", seed=0, f1=0.91,
                       cleaned_suspicious=2, cleaned_counterexamples=1,
                       queries=3, useless_queries=0),
            MetricsRow(iteration=1, strategy="cincer+top-fisher", seed=1, f1=0.88,
                       cleaned_suspicious=1, cleaned_counterexamples=0,
                       queries=2, useless_queries=1),
            MetricsRow(iteration=1, strategy="no-ce", seed=0, f1=0.85,
                       cleaned_suspicious=2, cleaned_counterexamples=0,
                       queries=3, useless_queries=1),
        ]

    def test_csv_roundtrip(self, tmp_path):
        rows = self._rows()
        path = tmp_path / "m.csv"
        write_metrics_csv(rows, path)
        header = path.read_text().splitlines()[0]
        assert header == "iter,strategy,seed,f1,cleaned,cleaned_ce,queries,useless_queries"
        back = read_metrics_csv(path)
        assert back == rows

    def test_report_aggregate_roundtrip(self, tmp_path):
        rows = self._rows()
        paths = report(rows, tmp_path, "test")
        parsed = json.loads(paths["json"].read_text())
        assert parsed == aggregate_metrics(rows)
        assert parsed["schema_version"] == 1
        agg = parsed["strategies"]["cincer+top-fisher"][0]
        assert agg["f1"]["mean"] == pytest.approx((0.91 + 0.88) / 2)
        # stderr over two seeds: sample std / sqrt(2)
        expected = np.std([0.91, 0.88], ddof=1) / np.sqrt(2)
        assert agg["f1"]["stderr"] == pytest.approx(expected)

    def test_precision_aggregate_handles_nulls(self, tmp_path):
        rows = [
            PrecisionRow(backend="identity", k=5, seed=0, precision=0.4, queries_scored=10),
            PrecisionRow(backend="identity", k=5, seed=1, precision=None,
                         queries_scored=0, note="skipped: cap"),
        ]
        agg = aggregate_precision(rows)
        entry = agg["backends"]["identity"]["5"]
        assert entry["mean"] == pytest.approx(0.4)
        assert entry["seeds"] == 1
        assert entry["notes"] == ["skipped: cap"]

    def test_csv_deterministic_bytes(self, tmp_path):
        cfg = small_config(tmp_path, seeds=[0], stream_length=6)
        rows1 = run_q1(cfg)
        rows2 = run_q1(cfg)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_metrics_csv(rows1, p1)
        write_metrics_csv(rows2, p2)
        assert p1.read_bytes() == p2.read_bytes()
