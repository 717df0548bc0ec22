"""grouprobe: group-robustness toolkit over frozen embeddings.

Pseudo-annotates spurious attributes by zero-shot cosine classification
against attribute prompts, and trains debiased classifier heads with dynamic
group re-weighting, alongside ERM / group-balanced / GDRO baselines,
worst-group metrics, and a synthetic-data oracle.
"""

from .annotators import (
    AnnotationQualityReport,
    ClusteringResult,
    PCAResult,
    annotation_quality,
    erm_confidence_annotate,
    kmeans_cluster,
    map_clusters_to_attributes,
    pca_reduce,
)
from .errors import (
    CorruptFileError,
    DegenerateInputError,
    FileFormatError,
    GrouprobeError,
    IncompleteAnnotationError,
    SchemaError,
    ValidationError,
)
from .metrics import EvalReport, eval_report, per_group_accuracy, report_from_predictions
from .synth import OracleReport, SynthConfig, bayes_oracle, gen_spurious_dataset
from .tensor_io import (
    DatasetBundle,
    EmbeddingMatrix,
    PromptBank,
    PromptEntry,
    SampleTable,
    l2_normalize,
    load_bundle,
    read_embeddings,
    read_prompt_bank,
    read_sample_table,
    save_bundle,
    validate_bundle,
    write_embeddings,
    write_prompt_bank,
    write_sample_table,
)
from .trainer import (
    ClassifierHead,
    GroupWeightState,
    TrainConfig,
    TrainReport,
    batch_group_stats,
    class_normalize,
    cosine_lr,
    ema_update,
    forward_probs,
    group_balanced_weights,
    init_head,
    load_head,
    loss_gradient,
    raw_group_weights,
    save_head,
    train,
    weighted_loss,
)
from .zeroshot import (
    GroupAssignment,
    LogitMatrix,
    annotate_attributes,
    average_prompt_rows,
    cosine_logits,
    form_groups,
    softmax_probs,
    zs_classify,
)

__version__ = "0.1.0"
