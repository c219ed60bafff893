"""Open-set 3D object retrieval over precomputed multi-view embeddings.

The pipeline: a chunked view adapter turns per-object view-embedding
sequences into single descriptors; a synthesizer manufactures virtual
unseen-class training features from an aligned text/visual space; metric
training ties them together; and retrieval evaluation ranks query objects
against a target set with exact mAP / NDCG / ANMRR.
"""

from .adapter import (
    AdapterConfig,
    AdapterParams,
    adapter_backward,
    adapter_forward,
    init_adapter_params,
    mean_pool_descriptor,
)
from .checkpoint import load_params, save_params
from .pipeline import (
    evaluate_head,
    evaluate_zero_shot,
    head_descriptors,
    zero_shot_descriptors,
)
from .retrieval import (
    MetricsReport,
    RankedList,
    anmrr,
    average_precision,
    evaluate_retrieval,
    ndcg,
    rank_targets,
    render_report,
)
from .store import (
    Dataset,
    DatasetManifest,
    SyntheticSpec,
    TextEmbeddingTable,
    fnv1a64,
    generate_synthetic_dataset,
    load_dataset,
    save_dataset,
    validate_manifest,
)
from .synthesis import (
    BoundReport,
    EnrichedLabelSpace,
    SynthParams,
    bound_report,
    build_virtual_batch,
    enrich_label_space,
    fuse_virtual_features,
    select_concepts,
    synthesize_virtual_views,
)
from .training import (
    FitResult,
    MsLossParams,
    SynthConfig,
    TrainConfig,
    fit,
    lr_at_epoch,
    mlp_baseline_fit,
    multi_similarity_loss,
    pk_sample_batch,
    sgd_momentum_step,
)

__version__ = "0.1.0"
