import numpy as np
import pytest

from labelclean import nnet
from labelclean.cleaning import (
    AnnotatorDecision,
    CleaningEngine,
    LoopTrace,
    Strategy,
    margin,
    oracle_annotator,
    replay_annotator,
    run_loop,
)
from labelclean.data import (
    CorruptionSpec,
    Example,
    ExampleSet,
    corrupt,
    make_synthetic,
    split,
    standardize,
)
from labelclean.errors import ConfigurationError, PendingDecisionError, StaleQueryError
from labelclean.influence import CandidateFilter, CurvatureBackend
from labelclean.nnet import ArchitectureSpec, TrainConfig, init_params


ARCH = ArchitectureSpec(kind="mlp", input_dim=2, num_classes=2, hidden_dims=(8,), seed=0)
CFG = TrainConfig(epochs=60, learning_rate=0.01, seed=0)


def moons_setup(seed=0, n=120, rate=0.2, bootstrap=40, stream=30):
    ds = make_synthetic("moons", n, 0.15, seed=seed)
    train, test = split(ds, 0.8, seed)
    train, test = standardize(train, test)
    train = corrupt(train, CorruptionSpec(rate=rate, seed=seed))
    return train.take(0, bootstrap), list(train.take(bootstrap, bootstrap + stream)), test


class TestMargin:
    def _uniform_params(self):
        arch = ArchitectureSpec(kind="linear-softmax", input_dim=2, num_classes=2, seed=0)
        return init_params(arch).with_values(np.zeros(arch.num_params))

    def test_agreeing_annotation_zero_margin(self):
        arch = ArchitectureSpec(kind="linear-softmax", input_dim=1, num_classes=2, seed=0)
        params = init_params(arch).with_values(np.array([2.0, -2.0, 0.0, 0.0]))
        ex = Example(id=0, x=np.array([1.0]), observed_label=1, true_label=1)
        report = margin(params, ex, threshold=0.2)
        assert report.margin == 0.0
        assert not report.suspicious
        assert report.predicted == 1

    def test_margin_arithmetic(self):
        # probs (0.9, 0.1), annotation class 2 -> margin 0.8
        arch = ArchitectureSpec(kind="linear-softmax", input_dim=1, num_classes=2, seed=0)
        logit = np.log(9.0)  # softmax -> (0.9, 0.1)
        params = init_params(arch).with_values(np.array([logit, 0.0, 0.0, 0.0]))
        ex = Example(id=0, x=np.array([1.0]), observed_label=2, true_label=2)
        report = margin(params, ex, threshold=0.2)
        assert report.margin == pytest.approx(0.8, abs=1e-12)
        assert report.suspicious

    def test_uniform_predictor_never_suspicious(self):
        params = self._uniform_params()
        ex = Example(id=0, x=np.array([3.0, -1.0]), observed_label=2, true_label=2)
        report = margin(params, ex, threshold=0.2)
        assert report.margin == pytest.approx(0.0, abs=1e-12)
        assert not report.suspicious

    def test_boundary_margin_counts_as_suspicious(self):
        arch = ArchitectureSpec(kind="linear-softmax", input_dim=1, num_classes=2, seed=0)
        params = init_params(arch).with_values(np.array([np.log(3.0), 0.0, 0.0, 0.0]))
        # probs (0.75, 0.25): margin for annotation 2 is exactly 0.5
        ex = Example(id=0, x=np.array([1.0]), observed_label=2, true_label=2)
        report = margin(params, ex, threshold=0.5)
        assert report.margin == pytest.approx(0.5, abs=1e-12)
        assert report.suspicious


class TestEngine:
    def test_compatible_appends_and_refits(self):
        bootstrap, stream, _ = moons_setup(rate=0.0)
        engine = CleaningEngine(bootstrap, ARCH, CFG, Strategy(kind="no-ce"))
        truth = {ex.id: ex.true_label for ex in bootstrap}
        truth.update({ex.id: ex.true_label for ex in stream})
        annotator = oracle_annotator(truth)
        size_before = len(engine.dataset)
        engine.step(stream[0], annotator)
        rec = engine.trace.records[-1]
        assert len(engine.dataset) == size_before + 1
        if not rec.suspicious:
            assert not rec.query_issued
            assert rec.incoming_label_after == stream[0].observed_label

    def test_advance_while_pending_rejected(self):
        bootstrap, stream, _ = moons_setup(rate=0.3)
        engine = CleaningEngine(bootstrap, ARCH, CFG,
                                Strategy(kind="cincer",
                                         backend=CurvatureBackend(kind="top-fisher")))
        # find a suspicious example
        pending = None
        for ex in stream:
            outcome = engine.advance(ex)
            if outcome.status == "query":
                pending = outcome.query
                break
        assert pending is not None
        with pytest.raises(PendingDecisionError):
            engine.advance(stream[0])
        # resolving clears the block
        engine.resolve(AnnotatorDecision(
            suspicious_label=pending.suspicious.observed_label,
            counterexample_label=pending.counterexample.observed_label,
        ))
        assert engine.pending is None

    def test_resolve_without_pending_rejected(self):
        bootstrap, _, _ = moons_setup()
        engine = CleaningEngine(bootstrap, ARCH, CFG, Strategy(kind="no-ce"))
        with pytest.raises(StaleQueryError):
            engine.resolve(AnnotatorDecision(suspicious_label=1))

    def test_label_out_of_range_rejected(self):
        bootstrap, stream, _ = moons_setup(rate=0.4)
        engine = CleaningEngine(bootstrap, ARCH, CFG, Strategy(kind="no-ce"))
        for ex in stream:
            outcome = engine.advance(ex)
            if outcome.status == "query":
                with pytest.raises(ConfigurationError):
                    engine.resolve(AnnotatorDecision(suspicious_label=7))
                return
        pytest.skip("no suspicious example in this stream")

    def test_dataset_size_invariant(self):
        bootstrap, stream, _ = moons_setup(rate=0.25, stream=25)
        truth = {ex.id: ex.true_label for ex in bootstrap}
        truth.update({ex.id: ex.true_label for ex in stream})
        for kind in ("cincer", "no-ce", "nn"):
            engine = CleaningEngine(bootstrap, ARCH, CFG, Strategy(kind=kind))
            annotator = oracle_annotator(truth)
            for ex in stream:
                before = len(engine.dataset)
                engine.step(ex, annotator)
                assert len(engine.dataset) == before + 1

    def test_drop_ce_removes_on_confirmation(self):
        bootstrap, stream, _ = moons_setup(rate=0.3, stream=40)
        truth = {ex.id: ex.true_label for ex in bootstrap}
        truth.update({ex.id: ex.true_label for ex in stream})
        engine = CleaningEngine(bootstrap, ARCH, CFG, Strategy(kind="drop-ce"))
        annotator = oracle_annotator(truth)
        saw_drop = False
        for ex in stream:
            before = len(engine.dataset)
            outcome = engine.advance(ex)
            if outcome.status == "compatible":
                assert len(engine.dataset) == before + 1
                continue
            query = outcome.query
            decision = annotator(query)
            engine.resolve(decision)
            if decision.suspicious_label == query.suspicious.observed_label:
                # confirmed incoming: the counter-example is gone for good
                assert len(engine.dataset) == before
                with pytest.raises(KeyError):
                    engine.dataset.by_id(query.counterexample.id)
                saw_drop = True
            else:
                assert len(engine.dataset) == before + 1
        assert saw_drop

    def test_cleaned_counts_are_label_changes(self):
        bootstrap, stream, _ = moons_setup(rate=0.3, stream=30)
        truth = {ex.id: ex.true_label for ex in bootstrap}
        truth.update({ex.id: ex.true_label for ex in stream})
        engine = CleaningEngine(bootstrap, ARCH, CFG,
                                Strategy(kind="cincer",
                                         backend=CurvatureBackend(kind="top-fisher")))
        annotator = oracle_annotator(truth)
        for ex in stream:
            engine.step(ex, annotator)
        changes_susp = sum(
            1 for rec in engine.trace
            if rec.query_issued and rec.incoming_label_after != rec.incoming_label_before
        )
        changes_ce = sum(
            1 for rec in engine.trace
            if rec.query_issued and rec.ce_id is not None
            and rec.ce_label_after != rec.ce_label_before
        )
        assert engine.cleaned_suspicious == changes_susp
        assert engine.cleaned_counterexamples == changes_ce
        # oracle only changes labels that differed from truth
        for rec in engine.trace:
            if rec.query_issued:
                assert rec.incoming_label_after == truth[rec.incoming_id]


class TestOracleAnnotator:
    def test_returns_truth_for_both(self):
        bootstrap, stream, _ = moons_setup(rate=0.4, stream=40)
        truth = {ex.id: ex.true_label for ex in bootstrap}
        truth.update({ex.id: ex.true_label for ex in stream})
        engine = CleaningEngine(bootstrap, ARCH, CFG,
                                Strategy(kind="cincer",
                                         backend=CurvatureBackend(kind="identity")))
        annotator = oracle_annotator(truth)
        for ex in stream:
            outcome = engine.advance(ex)
            if outcome.status == "query":
                decision = annotator(outcome.query)
                assert decision.suspicious_label == truth[outcome.query.suspicious.id]
                assert decision.counterexample_label == truth[outcome.query.counterexample.id]
                engine.resolve(decision)

    def test_clean_pair_is_unchanged_but_counted(self):
        # a query on two clean items leaves labels alone and still costs one query
        bootstrap, stream, _ = moons_setup(rate=0.0, stream=30)
        truth = {ex.id: ex.true_label for ex in bootstrap}
        truth.update({ex.id: ex.true_label for ex in stream})
        engine = CleaningEngine(bootstrap, ARCH, CFG,
                                Strategy(kind="cincer",
                                         backend=CurvatureBackend(kind="top-fisher"),
                                         margin_threshold=0.05))
        annotator = oracle_annotator(truth)
        for ex in stream:
            engine.step(ex, annotator)
        assert engine.cleaned_suspicious == 0
        assert engine.cleaned_counterexamples == 0
        for rec in engine.trace:
            if rec.query_issued:
                assert rec.incoming_label_after == rec.incoming_label_before


class TestRunLoop:
    def test_empty_stream(self):
        bootstrap, _, _ = moons_setup()
        engine, trace = run_loop(bootstrap, [], Strategy(kind="no-ce"),
                                 oracle_annotator({}), ARCH, CFG)
        assert len(trace) == 0
        fresh = nnet.fit(bootstrap, ARCH, CFG)
        assert np.array_equal(engine.params.values, fresh.values)

    def test_noiseless_run_cleans_nothing(self):
        bootstrap, stream, _ = moons_setup(rate=0.0, stream=25)
        truth = {ex.id: ex.true_label for ex in bootstrap}
        truth.update({ex.id: ex.true_label for ex in stream})
        engine, trace = run_loop(bootstrap, stream, Strategy(kind="cincer"),
                                 oracle_annotator(truth), ARCH, CFG)
        last = trace.records[-1]
        assert last.cleaned_suspicious == 0
        assert last.cleaned_counterexamples == 0

    def test_first_iteration_margin_is_strategy_independent(self):
        bootstrap, stream, _ = moons_setup(rate=0.25, stream=5)
        truth = {ex.id: ex.true_label for ex in bootstrap}
        truth.update({ex.id: ex.true_label for ex in stream})
        flags = []
        queries = []
        for kind in ("cincer", "drop-ce", "nn"):
            engine, trace = run_loop(bootstrap, stream[:1], Strategy(kind=kind),
                                     oracle_annotator(truth), ARCH, CFG)
            flags.append(trace.records[0].suspicious)
            queries.append(trace.records[0].queries)
        assert len(set(flags)) == 1
        assert len(set(queries)) == 1

    def test_trace_replay_reproduces_final_dataset(self):
        bootstrap, stream, _ = moons_setup(rate=0.3, stream=25)
        truth = {ex.id: ex.true_label for ex in bootstrap}
        truth.update({ex.id: ex.true_label for ex in stream})
        strategy = Strategy(kind="cincer", backend=CurvatureBackend(kind="top-fisher"))
        engine, trace = run_loop(bootstrap, stream, strategy,
                                 oracle_annotator(truth), ARCH, CFG)
        engine2, trace2 = run_loop(bootstrap, stream, strategy,
                                   replay_annotator(trace), ARCH, CFG)
        assert [(ex.id, ex.observed_label) for ex in engine.dataset] == \
               [(ex.id, ex.observed_label) for ex in engine2.dataset]
        assert trace.to_jsonl() == trace2.to_jsonl()

    def test_trace_jsonl_roundtrip(self):
        bootstrap, stream, _ = moons_setup(rate=0.3, stream=15)
        truth = {ex.id: ex.true_label for ex in bootstrap}
        truth.update({ex.id: ex.true_label for ex in stream})
        _, trace = run_loop(bootstrap, stream, Strategy(kind="no-ce"),
                            oracle_annotator(truth), ARCH, CFG)
        back = LoopTrace.from_jsonl(trace.to_jsonl())
        assert back.records == trace.records

    def test_nn_strategy_picks_nearest_pertinent(self):
        bootstrap, stream, _ = moons_setup(rate=0.3, stream=30)
        truth = {ex.id: ex.true_label for ex in bootstrap}
        truth.update({ex.id: ex.true_label for ex in stream})
        engine = CleaningEngine(bootstrap, ARCH, CFG, Strategy(kind="nn"))
        for ex in stream:
            outcome = engine.advance(ex)
            if outcome.status != "query":
                continue
            query = outcome.query
            report = margin(engine.params, ex, 0.2)
            pertinent = [c for c in engine.dataset
                         if c.observed_label == report.predicted]
            pool = pertinent or list(engine.dataset)
            dists = [(float(np.linalg.norm(c.x - ex.x)), c.id) for c in pool]
            assert query.counterexample.id == min(dists)[1]
            engine.resolve(AnnotatorDecision(
                suspicious_label=truth[ex.id],
                counterexample_label=truth[query.counterexample.id]))

    def test_strategy_validation(self):
        with pytest.raises(ConfigurationError):
            Strategy(kind="unknown")
        with pytest.raises(ConfigurationError):
            Strategy(kind="cincer", margin_threshold=1.5)
        # cincer defaults to the top-layer fisher backend
        assert Strategy(kind="cincer").backend.kind == "top-fisher"
