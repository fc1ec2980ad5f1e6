"""Class-specific salient-frame selection over precomputed per-frame
feature sequences: dual visual/textual query branches, cross-modality
interaction training, fusion-based frame selection, baseline samplers,
metrics, and a FLOPs accounting model."""

from .data import (
    Dataset,
    FeatureSequence,
    ObjectScoreSequence,
    SelectionBudget,
    SynthConfig,
    SyntheticDataset,
    TsqEmbeddingSet,
    VideoRecord,
    WordEmbeddingTable,
    generate_synthetic_dataset,
    presample_and_pad,
    read_manifest,
    split_dataset,
    write_manifest,
)
from .exceptions import (
    ConfigError,
    DimensionError,
    FormatError,
    InitializationError,
    NumericError,
    TsqError,
)
from .interaction import BranchOutputs, LossWeights, network_loss, swap_responses, total_loss
from .layers import (
    FfnParams,
    TsqLayerParams,
    class_agnostic_classify,
    class_specific_classify,
    ffn_forward,
    softmax,
    tsq_attention,
)
from .metrics import (
    EvalReport,
    FlopsComponent,
    FlopsConfig,
    compare_policies,
    flops_total,
    mean_average_precision,
    planted_recall,
    top1_accuracy,
)
from .model import ModelConfig, branch_forward, init_params
from .sampling import (
    SelectionResult,
    aggregate_saliency,
    baseline_dense,
    baseline_maxconf,
    baseline_random,
    baseline_uniform,
    fuse_and_select,
)
from .tqm import textual_embedding_init, textual_frame_features, tqm_forward
from .training import TrainConfig, gradcheck, lr_at, sgd_step, train
from .vqm import prototype_init, vqm_forward

__version__ = "0.1.0"
