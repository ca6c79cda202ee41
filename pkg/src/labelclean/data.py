"""Dataset ingestion, normalization, splitting, and seeded label corruption.

Class labels are 1-based integers in ``{1, ..., c}`` everywhere in the public
API; probability vectors are 0-indexed arrays where entry ``k`` belongs to
label ``k + 1``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigurationError, ParseError


@dataclass(frozen=True, eq=False)
class Example:
    """One labeled point.

    ``observed_label`` is what the model trains on.  ``true_label`` is a
    hidden channel read only by the simulated annotator and the evaluation
    harness; model-facing code must go through ``ExampleSet.model_view``.
    """

    id: int
    x: np.ndarray
    observed_label: int
    true_label: int

    @property
    def corrupted(self) -> bool:
        return self.observed_label != self.true_label

    def with_observed_label(self, label: int) -> "Example":
        return replace(self, observed_label=label)


@dataclass(frozen=True, eq=False)
class ExampleSet:
    """Ordered, immutable collection of examples with shared class/feature space."""

    examples: tuple[Example, ...]
    num_classes: int
    feature_dim: int
    name: str = ""
    feature_names: tuple[str, ...] = ()
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigurationError(f"need at least 2 classes, got {self.num_classes}")
        ids = set()
        for ex in self.examples:
            if ex.x.shape != (self.feature_dim,):
                raise ConfigurationError(
                    f"example {ex.id} has {ex.x.shape[0]} features, expected {self.feature_dim}"
                )
            for label in (ex.observed_label, ex.true_label):
                if not (1 <= label <= self.num_classes):
                    raise ConfigurationError(
                        f"example {ex.id} label {label} outside [1, {self.num_classes}]"
                    )
            if ex.id in ids:
                raise ConfigurationError(f"duplicate example id {ex.id}")
            ids.add(ex.id)
        if self.class_names and len(self.class_names) != self.num_classes:
            raise ConfigurationError("class_names length must equal num_classes")

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[Example]:
        return iter(self.examples)

    def __getitem__(self, position: int) -> Example:
        return self.examples[position]

    def by_id(self, example_id: int) -> Example:
        for ex in self.examples:
            if ex.id == example_id:
                return ex
        raise KeyError(f"no example with id {example_id}")

    def model_view(self) -> tuple[np.ndarray, np.ndarray]:
        """Feature matrix and observed labels - the only channel models may see."""
        if not self.examples:
            return np.zeros((0, self.feature_dim)), np.zeros(0, dtype=np.int64)
        X = np.stack([ex.x for ex in self.examples]).astype(np.float64)
        y = np.array([ex.observed_label for ex in self.examples], dtype=np.int64)
        return X, y

    def subset(self, positions: Sequence[int]) -> "ExampleSet":
        return replace(self, examples=tuple(self.examples[p] for p in positions))

    def take(self, start: int, stop: int) -> "ExampleSet":
        return replace(self, examples=self.examples[start:stop])

    def append(self, example: Example) -> "ExampleSet":
        return replace(self, examples=self.examples + (example,))

    def without_id(self, example_id: int) -> "ExampleSet":
        kept = tuple(ex for ex in self.examples if ex.id != example_id)
        if len(kept) == len(self.examples):
            raise KeyError(f"no example with id {example_id}")
        return replace(self, examples=kept)

    def with_observed_label(self, example_id: int, label: int) -> "ExampleSet":
        """Functional relabel; position of the example in the set is preserved."""
        if not (1 <= label <= self.num_classes):
            raise ConfigurationError(f"label {label} outside [1, {self.num_classes}]")
        found = False
        out = []
        for ex in self.examples:
            if ex.id == example_id:
                out.append(ex.with_observed_label(label))
                found = True
            else:
                out.append(ex)
        if not found:
            raise KeyError(f"no example with id {example_id}")
        return replace(self, examples=tuple(out))

    def true_labels(self) -> dict[int, int]:
        """Hidden-channel lookup used by the oracle annotator and the harness."""
        return {ex.id: ex.true_label for ex in self.examples}


@dataclass(frozen=True)
class CorruptionSpec:
    rate: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.rate < 1.0):
            raise ConfigurationError(f"corruption rate must be in [0, 1), got {self.rate}")


@dataclass(frozen=True)
class CsvSchema:
    label_column: str = "label"
    feature_columns: tuple[str, ...] | None = None  # None: every other column, header order


@dataclass(frozen=True)
class DatasetManifest:
    """Pointer to a CSV dataset plus presentation metadata.

    ``render`` is an optional hint for annotation UIs: None for tabular data,
    or ``{"kind": "image", "height": h, "width": w}`` for row-major grayscale
    feature vectors.
    """

    name: str
    path: str
    label_column: str
    class_names: tuple[str, ...]
    render: dict | None = None


def load_manifest(path: str | Path) -> tuple[DatasetManifest, ExampleSet]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"manifest not found: {path}")
    except json.JSONDecodeError as exc:
        raise ParseError(f"manifest {path} is not valid JSON: {exc}")
    for key in ("name", "path", "label_column", "class_names"):
        if key not in raw:
            raise ConfigurationError(f"manifest {path} missing key {key!r}")
    manifest = DatasetManifest(
        name=raw["name"],
        path=raw["path"],
        label_column=raw["label_column"],
        class_names=tuple(raw["class_names"]),
        render=raw.get("render"),
    )
    csv_path = Path(manifest.path)
    if not csv_path.is_absolute():
        csv_path = path.parent / csv_path
    dataset = load_csv(csv_path, CsvSchema(label_column=manifest.label_column))
    dataset = replace(dataset, name=manifest.name)
    if dataset.class_names != manifest.class_names:
        raise ConfigurationError(
            f"manifest class_names {manifest.class_names} do not match data {dataset.class_names}"
        )
    return manifest, dataset


def load_csv(path: str | Path, schema: CsvSchema = CsvSchema()) -> ExampleSet:
    """Parse a UTF-8 CSV with a header row into an ExampleSet.

    Label strings map to ``1..c`` by sorted order.  Features are parsed as
    finite floats; any NaN/inf or non-numeric cell is a parse error naming
    the row and column.  No scaling is applied here - standardize after
    splitting so the statistics come from the training side only.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"dataset file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path} is empty")
        if schema.label_column not in header:
            raise ParseError(f"missing label column {schema.label_column!r} in {path}")
        if schema.feature_columns is None:
            feature_names = tuple(h for h in header if h != schema.label_column)
        else:
            for col in schema.feature_columns:
                if col not in header:
                    raise ParseError(f"missing feature column {col!r} in {path}")
            feature_names = tuple(schema.feature_columns)
        label_idx = header.index(schema.label_column)
        feature_idx = [header.index(c) for c in feature_names]

        rows: list[tuple[list[float], str]] = []
        for row_num, row in enumerate(reader, start=2):  # header is row 1
            if len(row) != len(header):
                raise ParseError(f"wrong number of cells in {path}", row=row_num)
            feats = []
            for col, idx in zip(feature_names, feature_idx):
                try:
                    value = float(row[idx])
                except ValueError:
                    raise ParseError(f"non-numeric cell {row[idx]!r}", row=row_num, column=col)
                if not math.isfinite(value):
                    raise ParseError(f"non-finite cell {row[idx]!r}", row=row_num, column=col)
                feats.append(value)
            rows.append((feats, row[label_idx]))

    if not rows:
        raise ParseError(f"{path} has no data rows")
    class_names = tuple(sorted({label for _, label in rows}))
    if len(class_names) < 2:
        raise ParseError(f"{path} contains fewer than 2 distinct labels")
    label_of = {name: i + 1 for i, name in enumerate(class_names)}
    examples = tuple(
        Example(id=i, x=np.asarray(feats, dtype=np.float64), observed_label=label_of[lab],
                true_label=label_of[lab])
        for i, (feats, lab) in enumerate(rows)
    )
    return ExampleSet(
        examples=examples,
        num_classes=len(class_names),
        feature_dim=len(feature_names),
        name=path.stem,
        feature_names=feature_names,
        class_names=class_names,
    )


def write_csv(dataset: ExampleSet, path: str | Path) -> None:
    """Inverse of load_csv: observed labels written as class-name strings."""
    path = Path(path)
    names = dataset.feature_names or tuple(f"f{i}" for i in range(dataset.feature_dim))
    class_names = dataset.class_names or tuple(str(i + 1) for i in range(dataset.num_classes))
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(names) + ["label"])
        for ex in dataset:
            writer.writerow([repr(float(v)) for v in ex.x]
                            + [class_names[ex.observed_label - 1]])


def split(dataset: ExampleSet, train_fraction: float, seed: int) -> tuple[ExampleSet, ExampleSet]:
    """Seeded shuffle then partition; ids are preserved on both sides."""
    if not (0.0 < train_fraction < 1.0):
        raise ConfigurationError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(dataset)
    n_train = int(math.floor(n * train_fraction))
    if n_train < 1 or n - n_train < 1:
        raise ConfigurationError(f"split of {n} examples at {train_fraction} leaves an empty side")
    order = np.random.default_rng(seed).permutation(n)
    return dataset.subset(order[:n_train].tolist()), dataset.subset(order[n_train:].tolist())


def standardize(train: ExampleSet, *others: ExampleSet) -> tuple[ExampleSet, ...]:
    """Z-score all sets using the training set's feature statistics.

    Constant columns are centered but left unscaled.  Test sets must be
    passed through ``others`` so they never influence the statistics.
    """
    X, _ = train.model_view()
    if X.shape[0] == 0:
        raise ConfigurationError("cannot standardize an empty training set")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    scale = np.where(std < 1e-12, 1.0, std)

    def apply(dataset: ExampleSet) -> ExampleSet:
        examples = tuple(
            replace(ex, x=(ex.x - mean) / scale) for ex in dataset.examples
        )
        return replace(dataset, examples=examples)

    return tuple(apply(ds) for ds in (train, *others))


def corrupt(dataset: ExampleSet, spec: CorruptionSpec) -> ExampleSet:
    """Flip the observed labels of exactly ``floor(rate * n)`` examples.

    Each victim gets a label drawn uniformly from the other ``c - 1``
    classes, so the corrupted flag is guaranteed to be set.  The hidden
    true_label channel is untouched.
    """
    n = len(dataset)
    n_corrupt = int(math.floor(spec.rate * n))
    if n_corrupt == 0:
        return dataset
    rng = np.random.default_rng(spec.seed)
    victims = set(rng.choice(n, size=n_corrupt, replace=False).tolist())
    c = dataset.num_classes
    out = []
    for pos, ex in enumerate(dataset.examples):
        if pos in victims:
            draw = int(rng.integers(1, c))  # 1..c-1
            new_label = draw if draw < ex.true_label else draw + 1
            out.append(replace(ex, observed_label=new_label))
        else:
            out.append(ex)
    return replace(dataset, examples=tuple(out))


def make_synthetic(kind: str, n: int, noise: float, seed: int) -> ExampleSet:
    """Deterministic 2-D two-class sets for fast tests and demos.

    ``two-gaussians``: isotropic blobs with means 6*noise apart (near
    separable).  ``moons``: interleaving half circles with Gaussian jitter.
    """
    if n < 4:
        raise ConfigurationError(f"synthetic sets need n >= 4, got {n}")
    rng = np.random.default_rng(seed)
    n0 = n // 2
    n1 = n - n0
    if kind == "two-gaussians":
        sigma = noise if noise > 0 else 1.0
        center = np.array([3.0 * sigma, 0.0])
        x0 = rng.normal(size=(n0, 2)) * sigma - center
        x1 = rng.normal(size=(n1, 2)) * sigma + center
    elif kind == "moons":
        t0 = np.linspace(0.0, np.pi, n0)
        t1 = np.linspace(0.0, np.pi, n1)
        x0 = np.stack([np.cos(t0), np.sin(t0)], axis=1)
        x1 = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
        x0 = x0 + rng.normal(size=(n0, 2)) * noise
        x1 = x1 + rng.normal(size=(n1, 2)) * noise
    else:
        raise ConfigurationError(f"unknown synthetic kind {kind!r}")
    xs = np.concatenate([x0, x1])
    labels = [1] * n0 + [2] * n1
    order = rng.permutation(n)
    examples = tuple(
        Example(id=i, x=xs[p], observed_label=labels[p], true_label=labels[p])
        for i, p in enumerate(order)
    )
    return ExampleSet(
        examples=examples,
        num_classes=2,
        feature_dim=2,
        name=kind,
        feature_names=("x0", "x1"),
        class_names=("class1", "class2"),
    )
