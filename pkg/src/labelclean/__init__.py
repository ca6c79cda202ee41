"""Interactive label cleaning for sequential learning under label noise."""

from .cleaning import (
    AnnotatorDecision,
    CleaningEngine,
    CounterExampleQuery,
    LoopTrace,
    MarginReport,
    Strategy,
    margin,
    oracle_annotator,
    run_loop,
)
from .data import (
    CorruptionSpec,
    CsvSchema,
    DatasetManifest,
    Example,
    ExampleSet,
    corrupt,
    load_csv,
    load_manifest,
    make_synthetic,
    split,
    standardize,
    write_csv,
)
from .influence import (
    CandidateFilter,
    CEScore,
    CurvatureBackend,
    CurvatureOperator,
    brute_force_contrastive,
    filter_candidates,
    fisher_matrix,
    inverse_curvature_vector_product,
    score_counterexamples,
)
from .nnet import (
    ArchitectureSpec,
    ParameterVector,
    PredictiveDistribution,
    TrainConfig,
    fit,
    hvp,
    loss_and_gradient,
    predict_proba,
    prob_gradient,
)

__version__ = "0.1.0"
