"""kdkit: a CPU-only knowledge-distillation workbench.

Train small students (BiLSTM with self-attention, residual depthwise-
separable CNN, pruned transformers) against a fine-tuned transformer
teacher, augment with teacher-labeled unlabeled text, transfer embeddings,
freeze models to a compact binary format, and benchmark quality against
parameters, file size, and CPU latency.
"""

from .augment import (
    LengthStats,
    PoolStats,
    PseudoLabeledSet,
    UnlabeledPool,
    balance_pool,
    filter_by_length,
    length_stats,
    load_pool,
    merge_pools,
    pool_stats,
    pseudo_label,
    save_pool,
)
from .bench import CostReport, LatencyStats, bench_latency, bench_latency_live, emit_cost_table
from .config import ExperimentConfig, config_hash, parse_config, validate_config
from .data import (
    CLASSIFICATION,
    SEQUENCE_LABELING,
    Dataset,
    Example,
    dataset_content_hash,
    encode_batch,
    load_classification_csv,
    load_conll,
    save_classification_csv,
    save_conll,
    synth_classification,
    synth_sequence_labeling,
)
from .distill import (
    STAGES,
    DistillConfig,
    LrSearchResult,
    SoftTarget,
    StageResult,
    TrainHistory,
    convergence_steps,
    evaluate_f1,
    fine_tune_teacher,
    lr_grid_search,
    lr_random_search,
    predict,
    run_pipeline,
    teacher_logits,
    train_student,
    train_vanilla,
)
from .embeddings import (
    EmbeddingTable,
    InitReport,
    extract_teacher_embeddings,
    initialize_student_embedding,
    load_word_vectors,
    save_word_vectors,
)
from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    FormatError,
    KdkitError,
    NumericError,
    ParameterError,
)
from .frozen import FrozenModel, export_frozen, freeze, infer_frozen, load_frozen
from .losses import cross_entropy, distill_loss, hard_labels_from_logits, kl_divergence
from .metrics import extract_entities, macro_f1_classification, seqlab_f1
from .models import (
    BILSTM,
    CNN,
    TRANSFORMER,
    BiLstmSpec,
    CnnSpec,
    Model,
    TransformerSpec,
    build_model,
    count_parameters,
    desk_spec,
    forward,
    param_shapes,
    spec_param_count,
    table_spec,
)
from .optim import OptimizerState, optimizer_step
from .runner import cmd_bench, cmd_report, cmd_run
from .tensor import Tape, Tensor, backward, grad_check
from .text import PAD_ID, SPECIAL_TOKENS, UNK_ID, Vocab, tokenize

__version__ = "0.1.0"
