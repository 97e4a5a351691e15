"""Sequence labeling from crowd annotations.

Learns a linear-chain tagger jointly with per-annotator reliability
tables from redundant, noisy label sequences.  Candidate ground truths
are enumerated per instance from inter-annotator consistency and pruned
by the label scheme's transition constraints; an alternating estimation
loop then weighs each candidate by how well the current tagger and the
annotator tables explain it.
"""

from .annotators import (
    AnnotatorParams,
    annotation_loglik,
    bos_context,
    factor_matrix,
    load_annotators,
    mle_update,
    params_from_counts,
    resolve_mentions,
    sample_init_params,
    save_annotators,
)
from .baselines import DsModel, aggregate_labels, ds_decode, ds_fit, mv_token, wrapper_train
from .crf import (
    DEFAULT_TEMPLATES,
    CrfModel,
    FeatureTemplate,
    SequencePotentials,
    TrainOptions,
    TrainResult,
    build_model,
    extract_features,
    load_model,
    log_partition,
    marginals,
    optimize,
    save_model,
    sequence_score,
    viterbi,
    weighted_nll_and_gradient,
)
from .em import (
    EmConfig,
    EmState,
    FitResult,
    confusion_counts,
    e_step,
    fit,
    initialize,
    m_step,
    observed_loglik,
    posterior_modes,
)
from .formats import (
    DataError,
    load_config,
    load_conll,
    load_crowd,
    load_tokens,
    parse_config,
    read_tag_file,
    save_config,
    save_conll,
    save_crowd,
    serialize_config,
)
from .lattice import (
    PositionConsistency,
    ValidLattice,
    candidate_labels,
    candidate_sets,
    consistency_profile,
    count_valid,
    enumerate_valid,
    label_consistency,
)
from .scoring import (
    EntitySpan,
    PrfReport,
    entity_prf,
    entity_prf_by_type,
    extract_entities,
    token_accuracy,
)
from .simulate import (
    CorruptionMix,
    GoldStats,
    SimConfig,
    annotator_precision,
    calibrate_q,
    corpus_stats,
    effective_mix,
    expected_precision,
    simulate,
)
from .types import (
    CrowdDataset,
    CrowdInstance,
    LabelScheme,
    bio_transition_allowed,
    validate_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotatorParams",
    "CorruptionMix",
    "CrfModel",
    "CrowdDataset",
    "CrowdInstance",
    "DEFAULT_TEMPLATES",
    "DataError",
    "DsModel",
    "EmConfig",
    "EmState",
    "EntitySpan",
    "FeatureTemplate",
    "FitResult",
    "GoldStats",
    "LabelScheme",
    "PositionConsistency",
    "PrfReport",
    "SequencePotentials",
    "SimConfig",
    "TrainOptions",
    "TrainResult",
    "ValidLattice",
    "aggregate_labels",
    "annotation_loglik",
    "annotator_precision",
    "bio_transition_allowed",
    "bos_context",
    "build_model",
    "calibrate_q",
    "candidate_labels",
    "candidate_sets",
    "confusion_counts",
    "consistency_profile",
    "corpus_stats",
    "count_valid",
    "ds_decode",
    "ds_fit",
    "e_step",
    "effective_mix",
    "entity_prf",
    "entity_prf_by_type",
    "enumerate_valid",
    "expected_precision",
    "extract_entities",
    "extract_features",
    "factor_matrix",
    "fit",
    "initialize",
    "label_consistency",
    "load_annotators",
    "load_config",
    "load_conll",
    "load_crowd",
    "load_model",
    "load_tokens",
    "log_partition",
    "m_step",
    "marginals",
    "mle_update",
    "mv_token",
    "observed_loglik",
    "optimize",
    "params_from_counts",
    "parse_config",
    "posterior_modes",
    "read_tag_file",
    "resolve_mentions",
    "sample_init_params",
    "save_annotators",
    "save_config",
    "save_conll",
    "save_crowd",
    "save_model",
    "sequence_score",
    "serialize_config",
    "simulate",
    "token_accuracy",
    "validate_dataset",
    "viterbi",
    "weighted_nll_and_gradient",
    "wrapper_train",
]
