"""Compressed embeddings for large discrete vocabularies.

An embedding matrix ``E`` over a vocabulary of |V| objects is factored
as ``E = T @ A``: a small dense anchor matrix ``A`` (K x d) and a
row-sparse non-negative transform ``T`` (|V| x K), trained end to end
with proximal gradient descent so that ``T`` develops exact zeros.  A
nonparametric controller can grow and shrink K automatically during
training.
"""

from .anchors import (
    AnchorPlan,
    CooccurrenceMatrix,
    RelationGraph,
    Vocabulary,
    build_cooccurrence,
    build_domain_mask,
    build_vocab,
    init_anchor_matrix,
    load_relations,
    select_anchors,
)
from .losses import LossKind, bregman_grad, bregman_loss
from .model import (
    AntModel,
    MixtureModel,
    Regularizer,
    count_params,
    embed,
    identity_transform,
    mixture_embed,
    seed_transform,
)
from .nbant import (
    IbpSample,
    NbAntController,
    SvaObjective,
    adapt,
    log_ibp_prior,
    online_train,
    sva_limit_check,
    sva_objective,
    trend,
)
from .optim import (
    DecaySchedule,
    ProxConfig,
    YogiState,
    negative_pair_penalty,
    orthogonality_penalty,
    prox_step,
    soft_threshold,
    yogi_step,
)
from .persist import export_embeddings, load_model, save_model
from .sparse import SparseRowMatrix, lookup_rows, nnz, spmm
from .tasks import (
    RatingsDataset,
    TextDataset,
    evaluate,
    load_movielens,
    load_text_dataset,
    mf_predict,
    split,
    textclf_predict,
)
from .train import AnchoredTable, DenseTable, MfTask, TextClfTask, TrainError, train_epoch

__version__ = "0.1.0"
