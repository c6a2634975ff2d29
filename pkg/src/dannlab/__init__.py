"""Adversarial domain-adaptation lab for attribute regression.

A from-scratch dense network engine with a gradient reversal gate, the
balanced two-domain training loop, agreement metrics, a synthetic
covariate-shift benchmark, and a config-driven experiment harness exposed
over HTTP and a thin CLI.
"""

from .config import ExperimentConfig, build_config, load_config_file, parse_flat_text
from .data import (
    FeatureMatrix,
    LabeledDataset,
    NormalizationStats,
    SyntheticShiftSpec,
    apply_normalization,
    fit_normalization,
    generate_shift_task,
    load_csv,
    save_csv,
    split,
)
from .errors import (
    BatchError,
    ConfigError,
    DannlabError,
    DataError,
    InputError,
    LabelError,
    NumericError,
    ShapeError,
    SpecError,
    StateError,
)
from .experiments import (
    ComparisonTable,
    PreparedData,
    domain_confusion_probe,
    dump_representations,
    nearest_centroid_separability,
    pca_2d,
    prepare_data,
    run_compare,
    run_sweep,
    run_visualize,
    train_domain_probe,
)
from .grl import ReversalGate
from .metrics import (
    MetricTriple,
    ccc,
    domain_accuracy,
    evaluate,
    one_tailed_ttest,
    pearson,
    rmse,
    student_t_sf,
)
from .model import DannModel, NetworkSpec, RegressionNet, load_model, save_model
from .nn import Adam, BatchNorm, Dense, Dropout, Relu, Stack, crossentropy_loss, mse_loss, softmax
from .runner import run_experiment
from .train import (
    LambdaSchedule,
    TrainConfig,
    TrialReport,
    lambda_at,
    run_trials,
    sample_unlabeled,
    train_baseline,
    train_dann,
)

__version__ = "0.1.0"
