"""alignlite: lightweight multimodal embedding alignment with
neighborhood-geometry regularization, layer selection, and evaluation tooling."""

from .store import (
    EmbeddingMatrix,
    LayerBank,
    PairedDataset,
    SplitSpec,
    compose_paired,
    load_embeddings,
    load_embeddings_with_ids,
    load_layer_bank,
    mix,
    save_embeddings,
    save_layer_bank,
    subsample,
)
from .structure import (
    SimilarityDistribution,
    StructureRegConfig,
    js_divergence,
    matrix_power,
    normalize_center,
    reg_structure,
    row_softmax,
    similarity_logits,
    sum_sq_distance_variants,
)
from .layers import (
    SelectionResult,
    SimilarityGrid,
    build_grid,
    cka,
    mutual_knn,
    rice_k,
    select,
    selection_consistency,
    unbiased_cka,
)
from .train import (
    AlignmentModel,
    TrainConfig,
    TrainHistory,
    apply_model,
    combined_loss,
    contrastive_loss,
    init_model,
    load_checkpoint,
    lr_range_test,
    save_checkpoint,
    train,
)
from .autodiff import GradReport, backward, check_gradients
from .evalmetrics import (
    BoundReport,
    ClassPrototypes,
    RetrievalReport,
    UtilityResult,
    continuity,
    empirical_sensitivity,
    mcdiarmid_bound,
    modality_gap,
    retrieval,
    sensitivity_bound,
    trustworthiness,
    utility,
    zero_shot_classify,
)

__version__ = "0.1.0"
