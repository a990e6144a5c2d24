"""Shrink a deep text encoder one layer at a time: each stage distills an
(n+1)-layer teacher into an n-layer student supervised by the averages of
adjacent teacher layers, and the student becomes the next teacher."""

from .checkpoint import CheckpointBundle, load_checkpoint, save_checkpoint
from .config import RunConfig, default_config, parse_config, write_config
from .corpus import (
    Batch,
    CorpusSpec,
    LanguageSpec,
    LanguageTable,
    TokenizerVocab,
    batch_stream,
    encode,
    encode_batch,
    exponentiate_distribution,
    generate_labeled_task,
    generate_synthetic_corpus,
    read_corpus,
    read_labeled,
    shuffle_lines,
    size_distribution,
    solve_smoothing_exponent,
    write_corpus,
    write_labeled,
)
from .distill import (
    CascadePlan,
    CascadeResult,
    DistillStagePlan,
    LayerMapSpec,
    StageResult,
    attention_layer_loss,
    build_cascade_plan,
    hidden_layer_loss,
    run_cascade,
    run_stage,
    top_layer_init,
    total_distill_loss,
)
from .encoder import (
    ClassifierHead,
    EncoderModel,
    ForwardTrace,
    ModelConfig,
    classify,
    init_random,
)
from .errors import CascadeKDError, NumericError, ValidationError
from .reporting import MetricsWriter, emit_report, read_metrics
from .tensor import Tensor, backward, cross_entropy, mse, no_grad
from .training import (
    Adam,
    AdamState,
    EvalResult,
    FineTuneConfig,
    OptimizerConfig,
    ScheduleConfig,
    accumulate_and_step,
    accuracy,
    adam_step,
    fine_tune,
    lr_at,
    predict,
    zero_shot_eval,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "AdamState",
    "Batch",
    "CascadeKDError",
    "CascadePlan",
    "CascadeResult",
    "CheckpointBundle",
    "ClassifierHead",
    "CorpusSpec",
    "DistillStagePlan",
    "EncoderModel",
    "EvalResult",
    "FineTuneConfig",
    "ForwardTrace",
    "LanguageSpec",
    "LanguageTable",
    "LayerMapSpec",
    "MetricsWriter",
    "ModelConfig",
    "NumericError",
    "OptimizerConfig",
    "RunConfig",
    "ScheduleConfig",
    "StageResult",
    "Tensor",
    "TokenizerVocab",
    "ValidationError",
    "accumulate_and_step",
    "accuracy",
    "adam_step",
    "attention_layer_loss",
    "backward",
    "batch_stream",
    "build_cascade_plan",
    "classify",
    "cross_entropy",
    "default_config",
    "emit_report",
    "encode",
    "encode_batch",
    "exponentiate_distribution",
    "fine_tune",
    "generate_labeled_task",
    "generate_synthetic_corpus",
    "hidden_layer_loss",
    "init_random",
    "load_checkpoint",
    "lr_at",
    "mse",
    "no_grad",
    "parse_config",
    "predict",
    "read_corpus",
    "read_labeled",
    "read_metrics",
    "run_cascade",
    "run_stage",
    "save_checkpoint",
    "shuffle_lines",
    "size_distribution",
    "solve_smoothing_exponent",
    "top_layer_init",
    "total_distill_loss",
    "write_config",
    "write_corpus",
    "write_labeled",
    "zero_shot_eval",
]
