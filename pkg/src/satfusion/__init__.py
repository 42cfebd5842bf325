"""Per-turn user satisfaction estimation for conversational-agent traffic.

Fuses explicit user feedback with two trained neural predictors through a
waterfall policy, and evaluates the approaches on composite ground truth with
micro/macro metrics across feedback collection rates.
"""

from .dialog import (
    FeedbackCategory,
    Segment,
    Session,
    Turn,
    TurnFlag,
    read_sessions,
    segment_of,
    sessionize,
    strip_elicitation,
    write_sessions,
)
from .fusion import FusionConfig, Verdict, VerdictSource, assess, tune_threshold
from .ground_truth import (
    GroundTruthSet,
    SegmentPools,
    compose_ground_truth,
    estimate_rates,
    mark_given_feedback,
)
from .metrics import ConfusionCounts, MetricsReport, agreement_and_kappa, pr_auc, prf
from .model import ModelConfig, ModelKind, Prediction, SatisfactionModel, train
from .synth import CorpusManifest, GeneratorConfig, annotate_oracle, generate

__version__ = "0.1.0"

__all__ = [
    "CorpusManifest",
    "ConfusionCounts",
    "FeedbackCategory",
    "FusionConfig",
    "GeneratorConfig",
    "GroundTruthSet",
    "MetricsReport",
    "ModelConfig",
    "ModelKind",
    "Prediction",
    "SatisfactionModel",
    "Segment",
    "SegmentPools",
    "Session",
    "Turn",
    "TurnFlag",
    "Verdict",
    "VerdictSource",
    "agreement_and_kappa",
    "annotate_oracle",
    "assess",
    "compose_ground_truth",
    "estimate_rates",
    "generate",
    "mark_given_feedback",
    "pr_auc",
    "prf",
    "read_sessions",
    "segment_of",
    "sessionize",
    "strip_elicitation",
    "train",
    "tune_threshold",
    "write_sessions",
]
