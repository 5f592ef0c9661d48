"""Lifelong representation learning with a working/memory model pair.

The package trains a plastic working model and a slowly refreshed memory
model on a stream of domain-shifted identity tasks, consolidates the two
in parameter space between tasks, fuses their features at retrieval time,
and measures forgetting and transfer on held-out identities.
"""

from .baselines import (
    SEQUENTIAL_STRATEGIES,
    STRATEGY_NAMES,
    run_joint,
    run_strategy,
    strategy_from_name,
)
from .data import (
    ExemplarMemory,
    StreamConfig,
    TaskDataset,
    generate_stream,
    select_exemplars,
)
from .evaluation import (
    average_incremental_accuracy,
    backward_transfer,
    extract_features,
    forward_transfer,
    fused_features,
    retrieve_and_score,
)
from .models import (
    ModelPair,
    build_model,
    consolidate_model_space,
    fingerprint,
)
from .trainer import (
    SequenceResult,
    StrategyFlags,
    TrainConfig,
    learning_rates,
    reference_scores,
    run_sequence,
)

__version__ = "0.1.0"

__all__ = [
    "ExemplarMemory",
    "ModelPair",
    "SEQUENTIAL_STRATEGIES",
    "STRATEGY_NAMES",
    "SequenceResult",
    "StrategyFlags",
    "StreamConfig",
    "TaskDataset",
    "TrainConfig",
    "average_incremental_accuracy",
    "backward_transfer",
    "build_model",
    "consolidate_model_space",
    "extract_features",
    "fingerprint",
    "forward_transfer",
    "fused_features",
    "generate_stream",
    "learning_rates",
    "reference_scores",
    "retrieve_and_score",
    "run_joint",
    "run_sequence",
    "run_strategy",
    "select_exemplars",
    "strategy_from_name",
    "__version__",
]
