"""Metrics, experiment harness, and result serialization.

Experiments are driven by a JSON config (dataset manifest, model, strategy
list, corruption spec, seeds, margin threshold).  Three canned comparisons:

* ``q1`` - does showing counter-examples clean more data?  Full strategy vs
  drop-ce vs no-ce.
* ``q2`` - which curvature backend surfaces the most corrupted
  counter-examples?  Precision@k over a fixed noisy bootstrap model.
* ``q3`` - influence vs curvature ablation: top-layer Fisher vs identity
  curvature vs nearest neighbor.

Every strategy within a run consumes the same examples in the same order,
and all randomness flows from the config seeds, so reruns are byte-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import data as data_mod
from . import nnet
from .cleaning import LoopTrace, Strategy, oracle_annotator, run_loop
from .data import CorruptionSpec, DatasetManifest, ExampleSet
from .errors import ConfigurationError, SizeCapError
from .influence import CandidateFilter, CurvatureBackend, CurvatureOperator
from .influence import filter_candidates, score_counterexamples
from .nnet import ArchitectureSpec, ParameterVector, TrainConfig

SCHEMA_VERSION = 1
CSV_COLUMNS = ("iter", "strategy", "seed", "f1", "cleaned", "cleaned_ce",
               "queries", "useless_queries")


# ---------------------------------------------------------------------------
# metrics


def f1_macro(params: ParameterVector, test: ExampleSet) -> float:
    """Unweighted mean of per-class F1 on the test set's observed labels.

    Classes absent from both predictions and truth score 0, which makes the
    metric harsh under class imbalance on purpose.
    """
    if len(test) == 0:
        raise ConfigurationError("f1_macro needs a non-empty test set")
    X, y_true = test.model_view()
    y_pred = nnet.predict_labels(params, X)
    return f1_macro_from_labels(y_true, y_pred, test.num_classes)


def f1_macro_from_labels(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int) -> float:
    total = 0.0
    for label in range(1, num_classes + 1):
        tp = int(np.sum((y_pred == label) & (y_true == label)))
        fp = int(np.sum((y_pred == label) & (y_true != label)))
        fn = int(np.sum((y_pred != label) & (y_true == label)))
        denom = 2 * tp + fp + fn
        total += (2 * tp / denom) if denom > 0 else 0.0
    return total / num_classes


@dataclass(frozen=True)
class MetricsRow:
    iteration: int
    strategy: str
    seed: int
    f1: float
    cleaned_suspicious: int
    cleaned_counterexamples: int
    queries: int
    useless_queries: int

    @property
    def cleaned_total(self) -> int:
        return self.cleaned_suspicious + self.cleaned_counterexamples


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    manifest: DatasetManifest
    dataset: ExampleSet
    arch_kind: str
    hidden_dims: tuple[int, ...]
    dropout_rate: float
    train: TrainConfig
    strategies: tuple[tuple[str, Strategy], ...]
    corruption_rate: float
    bootstrap_size: int
    stream_length: int
    seeds: tuple[int, ...]
    tau: float
    question: str | None
    output_dir: str
    k_values: tuple[int, ...]
    train_fraction: float = 0.8

    def architecture(self, seed: int) -> ArchitectureSpec:
        return ArchitectureSpec(
            kind=self.arch_kind,
            input_dim=self.dataset.feature_dim,
            num_classes=self.dataset.num_classes,
            hidden_dims=self.hidden_dims if self.arch_kind == "mlp" else (),
            dropout_rate=self.dropout_rate,
            seed=seed,
        )

    def train_config(self, seed: int) -> TrainConfig:
        from dataclasses import replace
        return replace(self.train, seed=seed)


def backend_from_dict(raw: dict) -> CurvatureBackend:
    known = {"kind", "damping", "scope", "lissa_iterations", "lissa_samples",
             "lissa_batch_size", "lissa_seed", "param_cap"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(f"unknown backend keys: {sorted(unknown)}")
    return CurvatureBackend(**raw)


def filter_from_dict(raw: dict) -> CandidateFilter:
    return CandidateFilter(
        pertinence_enabled=raw.get("pertinence_enabled", True),
        perceptual_k=raw.get("perceptual_k"),
    )


def strategy_from_dict(raw: dict, tau: float) -> tuple[str, Strategy]:
    kind = raw.get("kind")
    if kind is None:
        raise ConfigurationError("strategy entry needs a 'kind'")
    backend = backend_from_dict(raw["backend"]) if raw.get("backend") else None
    cand_filter = filter_from_dict(raw.get("filter", {}))
    strategy = Strategy(kind=kind, backend=backend, candidate_filter=cand_filter,
                        margin_threshold=tau)
    name = raw.get("name") or default_strategy_name(strategy)
    return name, strategy


def default_strategy_name(strategy: Strategy) -> str:
    if strategy.kind == "cincer":
        return f"cincer+{strategy.backend.kind}"
    return strategy.kind


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}")
    return config_from_dict(raw, base_dir=path.parent)


def config_from_dict(raw: dict, base_dir: Path | None = None,
                     preloaded: tuple[DatasetManifest, ExampleSet] | None = None,
                     ) -> ExperimentConfig:
    base_dir = base_dir or Path.cwd()
    if "dataset" not in raw and preloaded is None:
        raise ConfigurationError("config missing key 'dataset'")
    if "model" not in raw:
        raise ConfigurationError("config missing key 'model'")

    dataset_field = raw.get("dataset")
    if preloaded is not None:
        manifest, dataset = preloaded
    elif isinstance(dataset_field, str):
        manifest_path = Path(dataset_field)
        if not manifest_path.is_absolute():
            manifest_path = base_dir / manifest_path
        manifest, dataset = data_mod.load_manifest(manifest_path)
    elif isinstance(dataset_field, dict):
        tmp = dict(dataset_field)
        csv_path = Path(tmp["path"])
        if not csv_path.is_absolute():
            tmp["path"] = str(base_dir / csv_path)
        manifest = DatasetManifest(
            name=tmp["name"], path=tmp["path"], label_column=tmp["label_column"],
            class_names=tuple(tmp["class_names"]), render=tmp.get("render"),
        )
        dataset = data_mod.load_csv(manifest.path,
                                    data_mod.CsvSchema(label_column=manifest.label_column))
        from dataclasses import replace
        dataset = replace(dataset, name=manifest.name)
    else:
        raise ConfigurationError("config 'dataset' must be a manifest path or inline manifest")

    model = raw["model"]
    arch_kind = model.get("kind", "mlp")
    hidden = tuple(model.get("hidden_dims", (16, 16) if arch_kind == "mlp" else ()))
    dropout = float(model.get("dropout_rate", 0.0))

    train_raw = raw.get("train", {})
    train = TrainConfig(
        epochs=int(train_raw.get("epochs", 100)),
        batch_size=int(train_raw.get("batch_size", 1024)),
        early_stop_train_accuracy=train_raw.get("early_stop_train_accuracy"),
        early_stop=bool(train_raw.get("early_stop", True)),
        learning_rate=float(train_raw.get("learning_rate", 1e-3)),
    )

    tau = float(raw.get("tau", 0.2))
    strategies = tuple(
        strategy_from_dict(entry, tau) for entry in raw.get("strategies", [])
    )
    corruption = raw.get("corruption", {})
    seeds = tuple(int(s) for s in raw.get("seeds", (0, 1, 2, 3, 4)))
    if not seeds:
        raise ConfigurationError("config needs at least one seed")

    return ExperimentConfig(
        manifest=manifest,
        dataset=dataset,
        arch_kind=arch_kind,
        hidden_dims=hidden,
        dropout_rate=dropout,
        train=train,
        strategies=strategies,
        corruption_rate=float(corruption.get("rate", 0.2)),
        bootstrap_size=int(raw.get("bootstrap_size", 100)),
        stream_length=int(raw.get("stream_length", 300)),
        seeds=seeds,
        tau=tau,
        question=raw.get("question"),
        output_dir=str(raw.get("output_dir", "results")),
        k_values=tuple(int(k) for k in raw.get("k_values", (5, 10))),
        train_fraction=float(raw.get("train_fraction", 0.8)),
    )


# ---------------------------------------------------------------------------
# run plumbing


def prepare_run(cfg: ExperimentConfig, seed: int) -> tuple[ExampleSet, ExampleSet, ExampleSet]:
    """Split, standardize on the training side, corrupt the training pool,
    and carve out bootstrap and stream.  The test set is never corrupted."""
    train, test = data_mod.split(cfg.dataset, cfg.train_fraction, seed)
    train, test = data_mod.standardize(train, test)
    if cfg.bootstrap_size + cfg.stream_length > len(train):
        raise ConfigurationError(
            f"bootstrap_size + stream_length = {cfg.bootstrap_size + cfg.stream_length} "
            f"exceeds the train split of {len(train)}"
        )
    train = data_mod.corrupt(train, CorruptionSpec(rate=cfg.corruption_rate, seed=seed))
    bootstrap = train.take(0, cfg.bootstrap_size)
    stream = train.take(cfg.bootstrap_size, cfg.bootstrap_size + cfg.stream_length)
    return bootstrap, stream, test


def useless_query_count(trace: LoopTrace, truth: dict[int, int]) -> list[int]:
    """Cumulative count of queries where neither shown item was corrupted at
    query time (labels compared against the hidden truth channel)."""
    counts = []
    total = 0
    for rec in trace:
        if rec.query_issued:
            incoming_bad = rec.incoming_label_before != truth[rec.incoming_id]
            ce_bad = rec.ce_id is not None and rec.ce_label_before != truth[rec.ce_id]
            if not (incoming_bad or ce_bad):
                total += 1
        counts.append(total)
    return counts


def run_one(cfg: ExperimentConfig, name: str, strategy: Strategy, seed: int,
            bootstrap: ExampleSet, stream: ExampleSet, test: ExampleSet,
            ) -> tuple[list[MetricsRow], LoopTrace]:
    truth = {**bootstrap.true_labels(), **stream.true_labels()}
    f1_series: list[float] = []

    def on_iteration(_: int, params: ParameterVector) -> None:
        f1_series.append(f1_macro(params, test))

    engine, trace = run_loop(
        bootstrap=bootstrap,
        stream=list(stream),
        strategy=strategy,
        annotator=oracle_annotator(truth),
        arch=cfg.architecture(seed),
        train_cfg=cfg.train_config(seed),
        on_iteration=on_iteration,
    )
    useless = useless_query_count(trace, truth)
    rows = [
        MetricsRow(
            iteration=rec.iteration,
            strategy=name,
            seed=seed,
            f1=f1_series[i],
            cleaned_suspicious=rec.cleaned_suspicious,
            cleaned_counterexamples=rec.cleaned_counterexamples,
            queries=rec.queries,
            useless_queries=useless[i],
        )
        for i, rec in enumerate(trace)
    ]
    return rows, trace


def run_strategies(cfg: ExperimentConfig,
                   strategies: Sequence[tuple[str, Strategy]]) -> list[MetricsRow]:
    rows: list[MetricsRow] = []
    for seed in cfg.seeds:
        bootstrap, stream, test = prepare_run(cfg, seed)
        for name, strategy in strategies:
            strat_rows, _ = run_one(cfg, name, strategy, seed, bootstrap, stream, test)
            rows.extend(strat_rows)
    return rows


def _q_strategies(cfg: ExperimentConfig, question: str) -> list[tuple[str, Strategy]]:
    tau = cfg.tau
    top = CurvatureBackend(kind="top-fisher")
    identity = CurvatureBackend(kind="identity")
    if question == "q1":
        return [
            ("cincer+top-fisher", Strategy(kind="cincer", backend=top, margin_threshold=tau)),
            ("drop-ce", Strategy(kind="drop-ce", backend=top, margin_threshold=tau)),
            ("no-ce", Strategy(kind="no-ce", margin_threshold=tau)),
        ]
    if question == "q3":
        return [
            ("cincer+top-fisher", Strategy(kind="cincer", backend=top, margin_threshold=tau)),
            ("cincer+identity", Strategy(kind="cincer", backend=identity, margin_threshold=tau)),
            ("nn", Strategy(kind="nn", margin_threshold=tau)),
        ]
    raise ConfigurationError(f"unknown question {question!r}")


def run_q1(cfg: ExperimentConfig) -> list[MetricsRow]:
    """Counter-example cleaning vs drop-ce vs no-ce on identical streams."""
    return run_strategies(cfg, _q_strategies(cfg, "q1"))


def run_q3(cfg: ExperimentConfig) -> list[MetricsRow]:
    """Top-layer Fisher vs identity curvature vs nearest-neighbor selection."""
    return run_strategies(cfg, _q_strategies(cfg, "q3"))


Q2_BACKENDS = ("lissa-hessian", "full-fisher", "diagonal-fisher", "identity", "top-fisher")


@dataclass(frozen=True)
class PrecisionRow:
    backend: str
    k: int
    seed: int
    precision: float | None
    queries_scored: int
    note: str = ""


def run_q2(cfg: ExperimentConfig, k_values: Sequence[int] | None = None,
           num_queries: int = 100) -> list[PrecisionRow]:
    """Precision@k of each backend at surfacing corrupted counter-examples.

    A model is fit once per seed on the noisy bootstrap; the next
    ``num_queries`` stream examples are each scored against the pertinent
    bootstrap candidates, and we record the fraction of truly corrupted
    candidates among the top k.
    """
    k_values = tuple(k_values) if k_values is not None else cfg.k_values
    rows: list[PrecisionRow] = []
    for seed in cfg.seeds:
        bootstrap, stream, _ = prepare_run(cfg, seed)
        incoming = list(stream)[:num_queries]
        params = nnet.fit(bootstrap, cfg.architecture(seed), cfg.train_config(seed))
        any_corrupted = any(ex.corrupted for ex in bootstrap)
        for backend_kind in Q2_BACKENDS:
            backend = CurvatureBackend(kind=backend_kind)
            note = ""
            operator = None
            if not any_corrupted:
                note = "undefined: no corrupted candidates"
            else:
                try:
                    operator = CurvatureOperator(backend, params, bootstrap)
                except SizeCapError as exc:
                    note = f"skipped: {exc}"
            if note:
                for k in k_values:
                    rows.append(PrecisionRow(backend=backend_kind, k=k, seed=seed,
                                             precision=None, queries_scored=0, note=note))
                continue
            hits: dict[int, list[float]] = {k: [] for k in k_values}
            for ex in incoming:
                prediction = nnet.predict_proba(params, ex.x).predicted_label
                candidates = filter_candidates(bootstrap, ex, prediction,
                                               CandidateFilter(pertinence_enabled=True))
                if not candidates:
                    continue
                ranked = score_counterexamples(params, ex, candidates, backend,
                                               operator=operator)
                for k in k_values:
                    top = ranked[:k]
                    corrupted = [bootstrap.by_id(s.candidate_id).corrupted for s in top]
                    hits[k].append(float(np.mean(corrupted)))
            for k in k_values:
                scored = len(hits[k])
                precision = float(np.mean(hits[k])) if scored else None
                rows.append(PrecisionRow(backend=backend_kind, k=k, seed=seed,
                                         precision=precision, queries_scored=scored,
                                         note="" if scored else "no pertinent candidates"))
    return rows


# ---------------------------------------------------------------------------
# serialization


def write_metrics_csv(rows: Sequence[MetricsRow], path: str | Path) -> None:
    path = Path(path)
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        lines.append(
            f"{row.iteration},{row.strategy},{row.seed},{row.f1!r},"
            f"{row.cleaned_total},{row.cleaned_counterexamples},"
            f"{row.queries},{row.useless_queries}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_metrics_csv(path: str | Path) -> list[MetricsRow]:
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if lines[0] != ",".join(CSV_COLUMNS):
        raise ConfigurationError(f"unexpected CSV header in {path}")
    rows = []
    for line in lines[1:]:
        it, strategy, seed, f1, cleaned, cleaned_ce, queries, useless = line.split(",")
        rows.append(MetricsRow(
            iteration=int(it), strategy=strategy, seed=int(seed), f1=float(f1),
            cleaned_suspicious=int(cleaned) - int(cleaned_ce),
            cleaned_counterexamples=int(cleaned_ce),
            queries=int(queries), useless_queries=int(useless),
        ))
    return rows


def _stderr(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))


def aggregate_metrics(rows: Sequence[MetricsRow]) -> dict:
    """Means and standard errors over seeds, keyed by strategy and iteration."""
    strategies = sorted({r.strategy for r in rows})
    out: dict = {"schema_version": SCHEMA_VERSION, "strategies": {}}
    for strategy in strategies:
        per_iter: dict[int, list[MetricsRow]] = {}
        for row in rows:
            if row.strategy == strategy:
                per_iter.setdefault(row.iteration, []).append(row)
        series = []
        for iteration in sorted(per_iter):
            group = per_iter[iteration]
            entry = {"iter": iteration}
            for metric, getter in (
                ("f1", lambda r: r.f1),
                ("cleaned", lambda r: float(r.cleaned_total)),
                ("cleaned_ce", lambda r: float(r.cleaned_counterexamples)),
                ("queries", lambda r: float(r.queries)),
                ("useless_queries", lambda r: float(r.useless_queries)),
            ):
                values = [getter(r) for r in group]
                entry[metric] = {"mean": float(np.mean(values)), "stderr": _stderr(values)}
            series.append(entry)
        out["strategies"][strategy] = series
    return out


def write_precision_csv(rows: Sequence[PrecisionRow], path: str | Path) -> None:
    path = Path(path)
    lines = ["backend,k,seed,precision,queries_scored,note"]
    for row in rows:
        precision = "" if row.precision is None else repr(row.precision)
        lines.append(f"{row.backend},{row.k},{row.seed},{precision},"
                     f"{row.queries_scored},{row.note}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def aggregate_precision(rows: Sequence[PrecisionRow]) -> dict:
    out: dict = {"schema_version": SCHEMA_VERSION, "backends": {}}
    for backend in sorted({r.backend for r in rows}):
        per_k = {}
        for k in sorted({r.k for r in rows if r.backend == backend}):
            values = [r.precision for r in rows
                      if r.backend == backend and r.k == k and r.precision is not None]
            notes = sorted({r.note for r in rows
                            if r.backend == backend and r.k == k and r.note})
            per_k[str(k)] = {
                "mean": float(np.mean(values)) if values else None,
                "stderr": _stderr(values) if values else None,
                "seeds": len(values),
                "notes": notes,
            }
        out["backends"][backend] = per_k
    return out


def report(rows: Sequence[MetricsRow], out_dir: str | Path, name: str) -> dict[str, Path]:
    """Write the long-format CSV and the aggregate JSON; returns file paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    json_path = out_dir / f"{name}.json"
    write_metrics_csv(rows, csv_path)
    json_path.write_text(json.dumps(aggregate_metrics(rows), indent=2, sort_keys=True) + "\n",
                         encoding="utf-8")
    return {"csv": csv_path, "json": json_path}


def report_precision(rows: Sequence[PrecisionRow], out_dir: str | Path,
                     name: str) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    json_path = out_dir / f"{name}.json"
    write_precision_csv(rows, csv_path)
    json_path.write_text(json.dumps(aggregate_precision(rows), indent=2, sort_keys=True) + "\n",
                         encoding="utf-8")
    return {"csv": csv_path, "json": json_path}


def run_experiment(cfg: ExperimentConfig) -> dict[str, Path]:
    """Dispatch on the config's question; write reports to the output dir."""
    question = cfg.question or "q1"
    if question == "q1":
        return report(run_q1(cfg), cfg.output_dir, "q1_metrics")
    if question == "q2":
        return report_precision(run_q2(cfg), cfg.output_dir, "q2_precision")
    if question == "q3":
        return report(run_q3(cfg), cfg.output_dir, "q3_metrics")
    if question == "custom":
        if not cfg.strategies:
            raise ConfigurationError("custom experiment needs a strategies list")
        return report(run_strategies(cfg, cfg.strategies), cfg.output_dir, "custom_metrics")
    raise ConfigurationError(f"unknown question {question!r}")
