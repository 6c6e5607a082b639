"""Connecting actions and their effects in video.

Builds and evaluates multiple-choice action selection over (initial state,
final state, candidate action) triplets, plus self-supervised pretext tasks,
retrieval, attention visualization, and a quiz service for human baselines.
"""

from .corpus import (
    Corpus,
    DetectionTrack,
    ManifestEntry,
    StateActionTriplet,
    VideoClip,
    filter_by_detections,
    load_clip,
    load_manifest,
    register_clip_reader,
    temporal_split,
)
from .encoders import (
    Backbone,
    BackboneConfig,
    Embedding,
    build_backbone,
    cosine_similarity,
    encode_action,
    encode_state,
    read_feature_dir,
    write_feature_dir,
)
from .errors import CateError, ConfigError, DataError
from .evalharness import (
    AnswerRecord,
    RetrievalIndex,
    accuracy,
    classwise_report,
    evaluate_selector,
    retrieval_topk_accuracy,
    spearman,
)
from .models import ABSTAIN, load_checkpoint, save_checkpoint, select_answer
from .questions import (
    AugmentationWhitelist,
    Question,
    QuestionSetReader,
    apply_counterfactual,
    build_question_set,
    make_question,
    write_question_set,
)
from .selectors import (
    AatSelector,
    AnalogicalSelector,
    LinsaesSelector,
    MorisaSelector,
    NaiveSelector,
    SwappingSelector,
    load_selector,
    make_selector,
)
from .training import (
    ContrastiveBatch,
    ProxyLabelSequence,
    contrastive_loss,
    eaa_make_sample,
    train_eaa,
    train_ssl_action_encoder,
)

__version__ = "0.1.0"

__all__ = [
    "ABSTAIN",
    "AatSelector",
    "AnalogicalSelector",
    "AnswerRecord",
    "AugmentationWhitelist",
    "Backbone",
    "BackboneConfig",
    "CateError",
    "ConfigError",
    "ContrastiveBatch",
    "Corpus",
    "DataError",
    "DetectionTrack",
    "Embedding",
    "LinsaesSelector",
    "ManifestEntry",
    "MorisaSelector",
    "NaiveSelector",
    "ProxyLabelSequence",
    "Question",
    "QuestionSetReader",
    "RetrievalIndex",
    "StateActionTriplet",
    "SwappingSelector",
    "VideoClip",
    "accuracy",
    "apply_counterfactual",
    "build_backbone",
    "build_question_set",
    "classwise_report",
    "contrastive_loss",
    "cosine_similarity",
    "eaa_make_sample",
    "encode_action",
    "encode_state",
    "evaluate_selector",
    "filter_by_detections",
    "load_checkpoint",
    "load_clip",
    "load_manifest",
    "load_selector",
    "make_question",
    "make_selector",
    "read_feature_dir",
    "register_clip_reader",
    "retrieval_topk_accuracy",
    "save_checkpoint",
    "select_answer",
    "spearman",
    "temporal_split",
    "train_eaa",
    "train_ssl_action_encoder",
    "write_feature_dir",
    "write_question_set",
]
