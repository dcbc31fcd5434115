"""Equality-of-opportunity auditing and correlation-penalty mitigation for binary classifiers."""

__version__ = "0.1.0"

from .estimator import FairClassifier  # noqa: E402
from .fairness import FairnessReport, audit  # noqa: E402
from .harness import ExperimentConfig, run_cell, sweep  # noqa: E402
from .mitigation import MitigationConfig  # noqa: E402
from .models import ModelSpec, TrainConfig  # noqa: E402
from .survey import load_survey_sample  # noqa: E402
from .synthgen import SyntheticConfig, generate_dataset  # noqa: E402
from .tabular import Dataset, load_csv, write_csv  # noqa: E402

__all__ = [
    "FairClassifier",
    "FairnessReport",
    "audit",
    "MitigationConfig",
    "ModelSpec",
    "TrainConfig",
    "ExperimentConfig",
    "run_cell",
    "sweep",
    "load_survey_sample",
    "SyntheticConfig",
    "generate_dataset",
    "Dataset",
    "load_csv",
    "write_csv",
    "__version__",
]
