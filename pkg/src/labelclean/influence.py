"""Counter-example scoring via influence estimates.

The selection rule is: score each training candidate by how much removing it
would raise the model's probability of the suspicious annotation, estimated
without retraining as ``-grad_loss(suspicious)^T (C + damping I)^{-1}
grad_loss(candidate)`` for a curvature matrix C.  Backends supply C: the
exact mean-loss Hessian, the Fisher information matrix (full, diagonal, or
restricted to the final layer), the identity, or a stochastic truncated
inverse-Hessian recursion.  A brute-force leave-one-out retrainer serves as
the ground-truth oracle for tiny problems.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nnet
from .data import Example, ExampleSet
from .errors import (
    ConfigurationError,
    DimensionMismatchError,
    LissaDivergenceError,
    NoCandidatesError,
    SizeCapError,
)
from .nnet import ArchitectureSpec, ParameterVector, TrainConfig

BACKEND_KINDS = (
    "identity",
    "diagonal-fisher",
    "full-fisher",
    "top-fisher",
    "lissa-hessian",
    "exact-hessian",
)

SCORE_FORMS = ("loss-gradient", "prob-gradient")


@dataclass(frozen=True)
class CurvatureBackend:
    kind: str
    damping: float = 0.01
    scope: str = "all-parameters"  # "all-parameters" | "top-layer"
    lissa_iterations: int = 10
    lissa_samples: int = 1
    lissa_batch_size: int = 1024
    lissa_seed: int = 0
    param_cap: int = 5000

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ConfigurationError(f"unknown backend kind {self.kind!r}")
        if self.kind == "top-fisher":
            object.__setattr__(self, "scope", "top-layer")
        if self.scope not in ("all-parameters", "top-layer"):
            raise ConfigurationError(f"unknown scope {self.scope!r}")
        if self.kind != "identity" and self.damping <= 0.0:
            raise ConfigurationError("damping must be > 0 when a matrix is inverted")
        if self.damping < 0.0:
            raise ConfigurationError("damping must be nonnegative")
        if self.lissa_iterations < 1 or self.lissa_samples < 1 or self.lissa_batch_size < 1:
            raise ConfigurationError("lissa settings must be >= 1")


@dataclass(frozen=True)
class CEScore:
    candidate_id: int
    score: float
    backend: str


@dataclass(frozen=True)
class CandidateFilter:
    pertinence_enabled: bool = True
    perceptual_k: int | None = None

    def __post_init__(self):
        if self.perceptual_k is not None and self.perceptual_k < 1:
            raise ConfigurationError("perceptual_k must be >= 1 when set")


def _scope_indices(backend: CurvatureBackend, params: ParameterVector) -> np.ndarray | None:
    if backend.scope == "top-layer":
        return params.top_layer_indices()
    return None


def fisher_matrix(params: ParameterVector, dataset: ExampleSet, scope: str = "all-parameters",
                  param_cap: int = 5000) -> np.ndarray:
    """Fisher information of the predictive model over the dataset's inputs.

    The expectation over the label is taken exactly: for each example the
    per-class log-probability gradients are weighted by the model's own
    class probabilities and accumulated as outer products.  Symmetric PSD
    by construction.
    """
    if len(dataset) == 0:
        raise ConfigurationError("fisher_matrix needs a non-empty dataset")
    if scope == "all-parameters" and params.size > param_cap:
        raise SizeCapError(
            f"full curvature for {params.size} parameters exceeds the cap of {param_cap}"
        )
    X, _ = dataset.model_view()
    idx = params.top_layer_indices() if scope == "top-layer" else None
    probs = nnet.predict_proba_matrix(params, X)
    n = X.shape[0]
    dim = len(idx) if idx is not None else params.size
    fim = np.zeros((dim, dim))
    for label in range(1, params.arch.num_classes + 1):
        G = nnet.per_example_class_gradients(params, X, label)
        if idx is not None:
            G = G[:, idx]
        w = probs[:, label - 1]
        fim += (G * w[:, None]).T @ G
    fim /= n
    return (fim + fim.T) / 2.0


def _fisher_diagonal(params: ParameterVector, dataset: ExampleSet,
                     idx: np.ndarray | None) -> np.ndarray:
    X, _ = dataset.model_view()
    probs = nnet.predict_proba_matrix(params, X)
    n = X.shape[0]
    dim = len(idx) if idx is not None else params.size
    diag = np.zeros(dim)
    for label in range(1, params.arch.num_classes + 1):
        G = nnet.per_example_class_gradients(params, X, label)
        if idx is not None:
            G = G[:, idx]
        diag += (probs[:, label - 1][:, None] * G * G).sum(axis=0)
    return diag / n


def exact_hessian(params: ParameterVector, dataset: ExampleSet,
                  param_cap: int = 5000) -> np.ndarray:
    """Dense mean-loss Hessian: closed form for linear-softmax, column probes
    through ``hvp`` for the MLP."""
    if params.size > param_cap:
        raise SizeCapError(
            f"dense Hessian for {params.size} parameters exceeds the cap of {param_cap}"
        )
    X, y = dataset.model_view()
    if params.arch.kind == "linear-softmax":
        c = params.arch.num_classes
        d = params.arch.input_dim
        probs = nnet.predict_proba_matrix(params, X)
        A = np.einsum("ka,kb->kab", probs, -probs)
        A[:, np.arange(c), np.arange(c)] += probs
        Xt = np.concatenate([X, np.ones((X.shape[0], 1))], axis=1)
        T = np.einsum("kac,kb,kd->abcd", A, Xt, Xt) / X.shape[0]
        H_tilde = T.reshape(c * (d + 1), c * (d + 1))
        perm = np.empty(params.size, dtype=np.int64)
        for i in range(c):
            for j in range(d):
                perm[i * d + j] = i * (d + 1) + j
            perm[c * d + i] = i * (d + 1) + d
        return H_tilde[np.ix_(perm, perm)]
    cols = [nnet.hvp(params, X, y, e) for e in np.eye(params.size)]
    H = np.stack(cols, axis=1)
    return (H + H.T) / 2.0


class CurvatureOperator:
    """Caches one backend's curvature state and solves (C + damping I) q = v.

    Construction does all the expensive work (matrix assembly and inversion);
    ``solve`` is then a matrix-vector product, except for the stochastic
    Hessian recursion which iterates per call.  ``solve_calls`` counts solves
    so callers can assert the one-solve-per-query caching contract.
    """

    def __init__(self, backend: CurvatureBackend, params: ParameterVector,
                 dataset: ExampleSet):
        self.backend = backend
        self.params = params
        self.scope_idx = _scope_indices(backend, params)
        self.dim = len(self.scope_idx) if self.scope_idx is not None else params.size
        self.solve_calls = 0
        self._inverse: np.ndarray | None = None
        self._diag: np.ndarray | None = None
        self._X: np.ndarray | None = None
        self._y: np.ndarray | None = None

        kind = backend.kind
        if kind == "identity":
            pass
        elif kind == "diagonal-fisher":
            self._diag = _fisher_diagonal(params, dataset, self.scope_idx) + backend.damping
        elif kind in ("full-fisher", "top-fisher"):
            scope = "top-layer" if self.scope_idx is not None else "all-parameters"
            C = fisher_matrix(params, dataset, scope, param_cap=backend.param_cap)
            self._inverse = np.linalg.inv(C + backend.damping * np.eye(self.dim))
        elif kind == "exact-hessian":
            if self.scope_idx is not None:
                raise ConfigurationError("exact-hessian supports all-parameters scope only")
            H = exact_hessian(params, dataset, param_cap=backend.param_cap)
            self._inverse = np.linalg.inv(H + backend.damping * np.eye(self.dim))
        elif kind == "lissa-hessian":
            if self.scope_idx is not None:
                raise ConfigurationError("lissa-hessian supports all-parameters scope only")
            self._X, self._y = dataset.model_view()
            if self._X.shape[0] == 0:
                raise ConfigurationError("lissa-hessian needs a non-empty dataset")
        else:  # pragma: no cover - guarded by CurvatureBackend
            raise ConfigurationError(f"unknown backend kind {kind!r}")

    def solve(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise DimensionMismatchError(
                f"vector has shape {v.shape}, backend scope expects ({self.dim},)"
            )
        self.solve_calls += 1
        kind = self.backend.kind
        if kind == "identity":
            return np.array(v)
        if kind == "diagonal-fisher":
            return v / self._diag
        if kind == "lissa-hessian":
            return self._lissa_solve(v)
        return self._inverse @ v

    def _lissa_solve(self, v: np.ndarray) -> np.ndarray:
        """Truncated stochastic recursion for (H + damping I)^{-1} v.

        Each iteration applies ``est <- est + step * (v - (H_batch + damping I) est)``
        with the Hessian estimated on a seeded mini-batch.  If the estimate
        goes non-finite, the whole solve retries once with the step halved.
        """
        backend = self.backend
        n = self._X.shape[0]
        batch = min(backend.lissa_batch_size, n)
        last_error: LissaDivergenceError | None = None
        for step in (1.0, 0.5):
            rng = np.random.default_rng(backend.lissa_seed)
            chains = []
            failed_at: int | None = None
            for _ in range(backend.lissa_samples):
                est = np.array(v)
                for j in range(backend.lissa_iterations):
                    idx = rng.choice(n, size=batch, replace=False)
                    hv = nnet.hvp(self.params, self._X[idx], self._y[idx], est)
                    est = est + step * (v - hv - backend.damping * est)
                    if not np.all(np.isfinite(est)):
                        failed_at = j
                        break
                if failed_at is not None:
                    break
                chains.append(est)
            if failed_at is None:
                return np.mean(chains, axis=0)
            last_error = LissaDivergenceError(
                "stochastic inverse-curvature recursion diverged", index=failed_at
            )
        raise last_error


def inverse_curvature_vector_product(backend: CurvatureBackend, params: ParameterVector,
                                     dataset: ExampleSet, v: np.ndarray) -> np.ndarray:
    """One-shot (C + damping I)^{-1} v.  Builds the backend state, solves, discards.

    Use ``CurvatureOperator`` directly when several solves share one model.
    """
    return CurvatureOperator(backend, params, dataset).solve(v)


def _candidate_gradients(params: ParameterVector, candidates: Sequence[Example],
                         idx: np.ndarray | None) -> np.ndarray:
    X = np.stack([ex.x for ex in candidates]).astype(np.float64)
    y = np.array([ex.observed_label for ex in candidates], dtype=np.int64)
    G = nnet.per_example_loss_gradients(params, X, y)
    return G[:, idx] if idx is not None else G


def rank_scores(ids: Sequence[int], scores: np.ndarray, backend_kind: str) -> list[CEScore]:
    """Total descending order; exact ties broken by ascending candidate id."""
    if not np.all(np.isfinite(scores)):
        raise ConfigurationError("counter-example scores must be finite")
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return [CEScore(candidate_id=ids[i], score=float(scores[i]), backend=backend_kind)
            for i in order]


def score_counterexamples(
    params: ParameterVector,
    suspicious: Example,
    candidates: Sequence[Example],
    backend: CurvatureBackend,
    curvature_data: ExampleSet | None = None,
    operator: CurvatureOperator | None = None,
    form: str = "loss-gradient",
) -> list[CEScore]:
    """Rank candidates by estimated support for the suspicion, descending.

    The suspicious-side inverse-curvature product is computed once and reused
    for every candidate.  ``curvature_data`` is the set the curvature matrix
    is estimated on (normally the whole training set); it defaults to the
    candidate list itself.  ``form`` selects between the loss-gradient rule
    (the default, used by the cleaning loop) and the probability-gradient
    rule; the two give identical rankings whenever the model assigns the
    suspicious annotation nonzero probability, with scores proportional by
    exactly that probability.
    """
    if not candidates:
        raise NoCandidatesError("cannot score an empty candidate list")
    if form not in SCORE_FORMS:
        raise ConfigurationError(f"unknown score form {form!r}")
    if operator is None:
        source = curvature_data if curvature_data is not None else None
        if source is None:
            raise ConfigurationError("score_counterexamples needs curvature_data or operator")
        operator = CurvatureOperator(backend, params, source)
    idx = operator.scope_idx

    if form == "loss-gradient":
        _, g_s = nnet.loss_and_gradient(params, suspicious.x, suspicious.observed_label)
        sign = -1.0
    else:
        g_s = nnet.prob_gradient(params, suspicious.x, suspicious.observed_label)
        sign = 1.0
    if idx is not None:
        g_s = g_s[idx]
    q = operator.solve(g_s)

    G = _candidate_gradients(params, candidates, idx)
    scores = sign * (G @ q)
    return rank_scores([ex.id for ex in candidates], scores, backend.kind)


def brute_force_contrastive(
    dataset: ExampleSet,
    suspicious: Example,
    arch: ArchitectureSpec,
    cfg: TrainConfig,
    cap: int = 200,
) -> list[tuple[int, float]]:
    """Leave-one-out retraining oracle: for every training example, refit
    without it and record the change in probability of the suspicious
    annotation.  Descending by delta, ties by ascending id.  Test oracle
    only - refuses datasets above ``cap``.
    """
    if len(dataset) > cap:
        raise SizeCapError(f"brute force retraining capped at {cap} examples")
    base = nnet.fit(dataset, arch, cfg)
    p_base = nnet.predict_proba(base, suspicious.x).prob_of(suspicious.observed_label)
    deltas = []
    for ex in dataset:
        retrained = nnet.fit(dataset.without_id(ex.id), arch, cfg)
        p_without = nnet.predict_proba(retrained, suspicious.x).prob_of(
            suspicious.observed_label
        )
        deltas.append((ex.id, p_without - p_base))
    deltas.sort(key=lambda item: (-item[1], item[0]))
    return deltas


def filter_candidates(
    dataset: ExampleSet,
    suspicious: Example,
    prediction: int,
    candidate_filter: CandidateFilter,
) -> list[Example]:
    """Pertinence filter (candidate's current label equals the prediction for
    the suspicious example), then an optional nearest-neighbor cut in feature
    space.  Dataset order is preserved among survivors; an empty result is
    valid output.
    """
    survivors = [
        ex for ex in dataset
        if not candidate_filter.pertinence_enabled or ex.observed_label == prediction
    ]
    k = candidate_filter.perceptual_k
    if k is not None and len(survivors) > k:
        dists = np.array([np.linalg.norm(ex.x - suspicious.x) for ex in survivors])
        keep = np.sort(np.argsort(dists, kind="stable")[:k])
        survivors = [survivors[i] for i in keep]
    return survivors
