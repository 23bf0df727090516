"""milspect: learn discriminative target/background spectral concepts from
bag-labeled data and run signature-based sub-pixel detection.

The library side is organized as: domain types (:mod:`milspect.model`),
sparse coding (:mod:`milspect.sparse`), the training objective and gradients
(:mod:`milspect.objective`), the alternating trainer
(:mod:`milspect.trainer`), test-time detectors (:mod:`milspect.detectors`),
a synthetic scene generator (:mod:`milspect.simgen`), and ROC evaluation
plus the sweep harness (:mod:`milspect.evaluation`).  The ``milspect``
command wires these together over CSV/JSON files.
"""

from .model import (
    ArmijoParams,
    Bag,
    BagDataset,
    ConceptDictionary,
    HyperParams,
    SparseCodes,
    spectral_angle,
    validate_dataset,
)
from .sparse import IstaConfig, ista_step_length, soft_threshold, solve_lasso, solve_lasso_batch
from .objective import (
    CodeSet,
    DegenerateBackgroundError,
    ObjectiveBreakdown,
    evaluate_objective,
    generalized_mean,
    grad_background_atom,
    grad_target_atom,
    hybrid_statistic,
)
from .trainer import (
    TrainingError,
    TrainReport,
    armijo_update_atom,
    init_backgrounds_vca,
    init_targets,
    solve_codes,
    train,
)
from .detectors import (
    BackgroundStats,
    ace_score,
    detect,
    fit_background,
    hsd_score,
    smf_score,
)
from .simgen import (
    GroundTruth,
    SimConfig,
    SpectralLibrary,
    add_noise_to_snr,
    demo_library,
    generate_dataset,
    sample_proportions,
    synthetic_library,
)
from .evaluation import (
    ExperimentConfig,
    ScoreSet,
    SweepSpec,
    auc,
    nauc,
    roc_curve,
    run_experiment,
    run_sweep,
)

__version__ = "0.1.0"

__all__ = [
    "ArmijoParams", "Bag", "BagDataset", "BackgroundStats", "CodeSet",
    "ConceptDictionary", "DegenerateBackgroundError", "ExperimentConfig",
    "GroundTruth", "HyperParams", "IstaConfig", "ObjectiveBreakdown",
    "ScoreSet", "SimConfig", "SparseCodes", "SpectralLibrary", "SweepSpec",
    "TrainReport", "TrainingError", "ace_score", "add_noise_to_snr",
    "armijo_update_atom", "auc", "demo_library", "detect",
    "evaluate_objective", "fit_background", "generalized_mean",
    "generate_dataset", "grad_background_atom", "grad_target_atom",
    "hsd_score", "hybrid_statistic", "init_backgrounds_vca", "init_targets",
    "ista_step_length", "nauc", "roc_curve", "run_experiment", "run_sweep",
    "sample_proportions", "smf_score", "soft_threshold", "solve_codes",
    "solve_lasso", "solve_lasso_batch", "spectral_angle", "synthetic_library",
    "train", "validate_dataset",
]
