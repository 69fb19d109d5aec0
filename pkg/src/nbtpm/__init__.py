"""Tree Parity Machine key agreement with non-binary input vectors."""

from .analysis import (
    EntropyReport,
    KeyMaterial,
    ValidationError,
    WeightHistogram,
    distill_key,
    effective_key_length,
    entropy,
    estimate_weight_entropy,
    recover_weights,
    weight_histogram,
)
from .attacker import AttackResult, AttackSession, Eavesdropper, eavesdrop_session, s_score
from .experiments import ExperimentPlan, GridCellReport, RunStatistics, export_report, run_batch, summarize
from .protocol import (
    InputMode,
    IterationRecord,
    SessionConfig,
    SessionSeeds,
    SessionTranscript,
    is_synchronized,
    run_key_agreement,
    step_pair,
)
from .tpm import (
    DimensionError,
    Evaluation,
    LearningRule,
    Role,
    TpmParams,
    TreeParityMachine,
    WeakParametersWarning,
    apply_learning_rule,
    evaluate,
    local_field,
    random_input_vector,
    random_weights,
    sigma,
    theta,
    weights_equal,
)

__version__ = "0.1.0"
