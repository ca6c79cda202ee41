"""Sequential label-cleaning loop with an annotator in it.

Each incoming example is gated by the prediction margin: compatible examples
join the training set untouched, suspicious ones trigger a relabeling query.
The full strategy pairs the query with the training counter-example that most
supports the suspicion, so the annotator can fix whichever side is wrong;
baselines ask without evidence (``no-ce``), discard refuted counter-examples
(``drop-ce``), or pick the nearest neighbor (``nn``).  The engine is
two-phase (emit query / apply decision) so the same core drives both the
simulated oracle and a human behind an HTTP session.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import influence, nnet
from .data import Example, ExampleSet
from .errors import ConfigurationError, PendingDecisionError, StaleQueryError
from .influence import CandidateFilter, CurvatureBackend, CurvatureOperator
from .nnet import ArchitectureSpec, ParameterVector, TrainConfig

STRATEGY_KINDS = ("cincer", "no-ce", "drop-ce", "nn")


@dataclass(frozen=True)
class Strategy:
    kind: str = "cincer"
    backend: CurvatureBackend | None = None
    candidate_filter: CandidateFilter = field(default_factory=CandidateFilter)
    margin_threshold: float = 0.2

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ConfigurationError(f"unknown strategy kind {self.kind!r}")
        if not (0.0 <= self.margin_threshold <= 1.0):
            raise ConfigurationError("margin_threshold must be in [0, 1]")
        if self.kind in ("cincer", "drop-ce") and self.backend is None:
            object.__setattr__(self, "backend", CurvatureBackend(kind="top-fisher"))


@dataclass(frozen=True)
class MarginReport:
    predicted: int
    annotated: int
    margin: float
    suspicious: bool


@dataclass(frozen=True)
class AnnotatorDecision:
    suspicious_label: int
    counterexample_label: int | None = None


@dataclass(frozen=True)
class CounterExampleQuery:
    """Payload shown to the annotator for one suspicious example."""

    query_id: int
    iteration: int
    suspicious: Example
    report: MarginReport
    counterexample: Example | None
    ce_score: float | None
    num_classes: int


@dataclass(frozen=True)
class TraceRecord:
    """One loop iteration.  Counter fields are cumulative."""

    iteration: int
    incoming_id: int
    suspicious: bool
    query_issued: bool
    ce_id: int | None
    incoming_label_before: int
    incoming_label_after: int
    ce_label_before: int | None
    ce_label_after: int | None
    cleaned_suspicious: int
    cleaned_counterexamples: int
    queries: int
    dataset_size: int

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class LoopTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, record: TraceRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def to_jsonl(self) -> str:
        return "".join(rec.to_json() + "\n" for rec in self.records)

    @staticmethod
    def from_jsonl(text: str) -> "LoopTrace":
        records = [TraceRecord(**json.loads(line)) for line in text.splitlines() if line.strip()]
        return LoopTrace(records=records)


Annotator = Callable[[CounterExampleQuery], AnnotatorDecision]


def oracle_annotator(truth: dict[int, int]) -> Annotator:
    """Perfect simulated supervisor: answers with ground-truth labels for
    both shown items.  ``truth`` maps example id to true label and is the
    only place the hidden channel crosses into the loop."""

    def annotate(query: CounterExampleQuery) -> AnnotatorDecision:
        ce_label = None
        if query.counterexample is not None:
            ce_label = truth[query.counterexample.id]
        return AnnotatorDecision(
            suspicious_label=truth[query.suspicious.id],
            counterexample_label=ce_label,
        )

    return annotate


def replay_annotator(trace: LoopTrace) -> Annotator:
    """Replays the decisions recorded in an earlier trace, keyed by iteration."""
    by_iteration = {rec.iteration: rec for rec in trace if rec.query_issued}

    def annotate(query: CounterExampleQuery) -> AnnotatorDecision:
        rec = by_iteration[query.iteration]
        ce_label = rec.ce_label_after if query.counterexample is not None else None
        return AnnotatorDecision(
            suspicious_label=rec.incoming_label_after,
            counterexample_label=ce_label,
        )

    return annotate


def margin(params: ParameterVector, example: Example, threshold: float) -> MarginReport:
    """Gap between the model's probability for its own prediction and for the
    annotation.  Zero when they agree; the example is suspicious when the
    gap reaches the threshold."""
    dist = nnet.predict_proba(params, example.x)
    predicted = dist.predicted_label
    annotated = example.observed_label
    mu = dist.prob_of(predicted) - dist.prob_of(annotated)
    return MarginReport(
        predicted=predicted,
        annotated=annotated,
        margin=float(mu),
        suspicious=bool(mu >= threshold),
    )


@dataclass(frozen=True)
class StepOutcome:
    status: str  # "compatible" | "query"
    query: CounterExampleQuery | None = None


class CleaningEngine:
    """Two-phase driver of the cleaning loop.

    ``advance`` consumes one incoming example: compatible examples are
    appended and the model refit immediately; suspicious ones produce a
    pending query.  ``resolve`` applies an annotator decision to the pending
    query, updates the dataset, and refits.  A fresh fit from scratch runs
    after every dataset change so influence scores never depend on stale
    optimizer state.
    """

    def __init__(self, bootstrap: ExampleSet, arch: ArchitectureSpec,
                 train_cfg: TrainConfig, strategy: Strategy):
        if len(bootstrap) == 0:
            raise ConfigurationError("bootstrap set must be non-empty")
        self.arch = arch
        self.train_cfg = train_cfg
        self.strategy = strategy
        self.dataset = bootstrap
        self.params = nnet.fit(bootstrap, arch, train_cfg)
        self.trace = LoopTrace()
        self.iteration = 0
        self.queries = 0
        self.cleaned_suspicious = 0
        self.cleaned_counterexamples = 0
        self._pending: CounterExampleQuery | None = None
        self._next_query_id = 1

    @property
    def pending(self) -> CounterExampleQuery | None:
        return self._pending

    def advance(self, incoming: Example) -> StepOutcome:
        if self._pending is not None:
            raise PendingDecisionError("a decision is pending; resolve it before advancing")
        self.iteration += 1
        report = margin(self.params, incoming, self.strategy.margin_threshold)
        if not report.suspicious:
            self.dataset = self.dataset.append(incoming)
            self.params = nnet.fit(self.dataset, self.arch, self.train_cfg)
            self.trace.append(self._record(incoming, report, query_issued=False,
                                           ce=None, decision=None, ce_score=None))
            return StepOutcome(status="compatible")

        ce, ce_score = self._select_counterexample(incoming, report)
        query = CounterExampleQuery(
            query_id=self._next_query_id,
            iteration=self.iteration,
            suspicious=incoming,
            report=report,
            counterexample=ce,
            ce_score=ce_score,
            num_classes=self.dataset.num_classes,
        )
        self._next_query_id += 1
        self._pending = query
        return StepOutcome(status="query", query=query)

    def resolve(self, decision: AnnotatorDecision) -> TraceRecord:
        if self._pending is None:
            raise StaleQueryError("no decision is pending")
        query = self._pending
        for label in (decision.suspicious_label, decision.counterexample_label):
            if label is not None and not (1 <= label <= self.dataset.num_classes):
                raise ConfigurationError(
                    f"label {label} outside [1, {self.dataset.num_classes}]"
                )
        if query.counterexample is not None and decision.counterexample_label is None:
            raise ConfigurationError("decision must label the shown counter-example")

        incoming = query.suspicious
        ce = query.counterexample
        self.queries += 1
        if decision.suspicious_label != incoming.observed_label:
            self.cleaned_suspicious += 1
        if ce is not None:
            confirmed_incoming = decision.suspicious_label == incoming.observed_label
            if self.strategy.kind == "drop-ce" and confirmed_incoming:
                self.dataset = self.dataset.without_id(ce.id)
            elif decision.counterexample_label != ce.observed_label:
                self.cleaned_counterexamples += 1
                self.dataset = self.dataset.with_observed_label(
                    ce.id, decision.counterexample_label
                )
        self.dataset = self.dataset.append(
            incoming.with_observed_label(decision.suspicious_label)
        )
        self.params = nnet.fit(self.dataset, self.arch, self.train_cfg)
        record = self._record(incoming, query.report, query_issued=True, ce=ce,
                              decision=decision, ce_score=query.ce_score)
        self.trace.append(record)
        self._pending = None
        return record

    def step(self, incoming: Example, annotator: Annotator) -> TraceRecord:
        """One-phase convenience: advance, and answer any query immediately."""
        outcome = self.advance(incoming)
        if outcome.status == "query":
            return self.resolve(annotator(outcome.query))
        return self.trace.records[-1]

    def _select_counterexample(
        self, incoming: Example, report: MarginReport
    ) -> tuple[Example | None, float | None]:
        strategy = self.strategy
        if strategy.kind == "no-ce" or len(self.dataset) == 0:
            return None, None
        candidates = influence.filter_candidates(
            self.dataset, incoming, report.predicted, strategy.candidate_filter
        )
        if not candidates:
            # Pertinence can exhaust the pool; fall back to the whole set so
            # the query budget is still spent on a real pair.
            candidates = list(self.dataset)
        if not candidates:
            return None, None
        if strategy.kind == "nn":
            best = min(
                range(len(candidates)),
                key=lambda i: (float(np.linalg.norm(candidates[i].x - incoming.x)),
                               candidates[i].id),
            )
            return candidates[best], None
        operator = CurvatureOperator(strategy.backend, self.params, self.dataset)
        ranked = influence.score_counterexamples(
            self.params, incoming, candidates, strategy.backend, operator=operator
        )
        best = ranked[0]
        return self.dataset.by_id(best.candidate_id), best.score

    def _record(self, incoming: Example, report: MarginReport, query_issued: bool,
                ce: Example | None, decision: AnnotatorDecision | None,
                ce_score: float | None) -> TraceRecord:
        ce_after = None
        if ce is not None and decision is not None:
            ce_after = decision.counterexample_label
        return TraceRecord(
            iteration=self.iteration,
            incoming_id=incoming.id,
            suspicious=report.suspicious,
            query_issued=query_issued,
            ce_id=ce.id if ce is not None else None,
            incoming_label_before=incoming.observed_label,
            incoming_label_after=(decision.suspicious_label if decision is not None
                                  else incoming.observed_label),
            ce_label_before=ce.observed_label if ce is not None else None,
            ce_label_after=ce_after,
            cleaned_suspicious=self.cleaned_suspicious,
            cleaned_counterexamples=self.cleaned_counterexamples,
            queries=self.queries,
            dataset_size=len(self.dataset),
        )


def run_loop(
    bootstrap: ExampleSet,
    stream: Iterable[Example],
    strategy: Strategy,
    annotator: Annotator,
    arch: ArchitectureSpec,
    train_cfg: TrainConfig,
    on_iteration: Callable[[int, ParameterVector], None] | None = None,
) -> tuple[CleaningEngine, LoopTrace]:
    """Fit on the bootstrap set, then feed the stream through the engine.

    ``on_iteration`` receives the refit parameters after every iteration
    (the metrics harness hooks per-iteration test scores through it).
    """
    engine = CleaningEngine(bootstrap, arch, train_cfg, strategy)
    for incoming in stream:
        engine.step(incoming, annotator)
        if on_iteration is not None:
            on_iteration(engine.iteration, engine.params)
    return engine, engine.trace
