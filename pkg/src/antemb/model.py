"""The anchored embedding model: ``E = T @ A``.

``A`` is a small dense matrix of anchor embeddings (K x d) and ``T`` a
row-sparse non-negative transform (|V| x K).  Object embeddings are
sparse mixtures of anchors; an object whose transform row is empty gets
the zero embedding.  Storage cost is ``K * d + nnz(T)`` instead of
``|V| * d``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sparse import SparseRowMatrix, batch_embed, check_dense, lookup_rows

__all__ = [
    "Regularizer",
    "AntModel",
    "MixtureModel",
    "seed_transform",
    "identity_transform",
    "embed",
    "mixture_embed",
    "count_params",
]

# Rows start with at most this many stored entries; the L1 prox prunes
# from there.
MAX_SEED_ENTRIES = 16
SEED_VALUE_STD = 0.1


@dataclass
class Regularizer:
    """Penalty configuration attached to a model."""

    lambda2: float = 0.0
    nonneg: bool = True
    ortho_weight: float = 0.0
    neg_pair_weight: float = 0.0
    mask_complement: SparseRowMatrix | None = None
    negative_pairs: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        if self.lambda2 < 0 or self.ortho_weight < 0 or self.neg_pair_weight < 0:
            raise ValueError("penalty weights must be >= 0")


@dataclass
class AntModel:
    """Anchor matrix, sparse transform, and regularizer configuration."""

    anchors: np.ndarray  # (K, d)
    transform: SparseRowMatrix  # (|V|, K)
    reg: Regularizer = field(default_factory=Regularizer)
    anchor_ids: list[int] | None = None

    def __post_init__(self):
        self.anchors = check_dense(self.anchors)
        self.validate()

    @property
    def n_objects(self) -> int:
        return self.transform.rows

    @property
    def n_anchors(self) -> int:
        return self.anchors.shape[0]

    @property
    def dim(self) -> int:
        return self.anchors.shape[1]

    def validate(self) -> None:
        if self.transform.cols != self.anchors.shape[0]:
            raise ValueError(
                f"transform has {self.transform.cols} columns but there are "
                f"{self.anchors.shape[0]} anchors"
            )
        if self.reg.nonneg and not self.transform.nonneg:
            raise ValueError("regularizer requires a non-negative transform")

    def copy(self) -> "AntModel":
        return AntModel(
            anchors=self.anchors.copy(),
            transform=self.transform.copy(),
            reg=self.reg,
            anchor_ids=list(self.anchor_ids) if self.anchor_ids is not None else None,
        )

    # -- anchor-count mutation (used by the nonparametric controller) --

    def append_anchors(self, rows: np.ndarray) -> None:
        """Add anchor rows and matching empty transform columns."""
        rows = check_dense(rows, cols=self.dim)
        self.anchors = np.concatenate([self.anchors, rows])
        self.transform.append_columns(rows.shape[0])

    def restore_anchor(self, row: np.ndarray, column: list[tuple[int, float]]) -> None:
        """Re-attach a previously removed anchor with its column entries."""
        row = np.asarray(row, dtype=np.float64).reshape(1, -1)
        self.anchors = np.concatenate([self.anchors, check_dense(row, cols=self.dim)])
        self.transform.restore_column(column)

    def pop_anchor(self) -> tuple[np.ndarray, list[tuple[int, float]]]:
        """Detach the last anchor row and its transform column."""
        if self.n_anchors <= 1:
            raise ValueError("cannot remove the last anchor")
        row = self.anchors[-1].copy()
        self.anchors = self.anchors[:-1].copy()
        column = self.transform.pop_column()
        return row, column


def seed_transform(
    n_objects: int,
    n_anchors: int,
    rng: np.random.Generator,
    nonneg: bool = True,
    entries_per_row: int | None = None,
) -> SparseRowMatrix:
    """Initial transform: each row gets ``min(K, 16)`` random columns.

    Values are |N(0, 0.1)| when non-negative, N(0, 0.1) otherwise.  The
    training loop may later create or destroy entries; this only sets
    the starting point.
    """
    per_row = entries_per_row if entries_per_row is not None else min(n_anchors, MAX_SEED_ENTRIES)
    if per_row > n_anchors:
        raise ValueError("entries_per_row cannot exceed the number of anchors")
    t = SparseRowMatrix(n_objects, n_anchors, nonneg=nonneg)
    for i in range(n_objects):
        cols = np.sort(rng.choice(n_anchors, size=per_row, replace=False))
        vals = rng.normal(0.0, SEED_VALUE_STD, size=per_row)
        if nonneg:
            vals = np.abs(vals)
        keep = vals != 0.0  # a draw of exactly 0.0 cannot be stored
        t.set_row(i, cols[keep].astype(np.int64), vals[keep])
    return t


def identity_transform(
    n_objects: int,
    anchor_ids,
    nonneg: bool = True,
) -> SparseRowMatrix:
    """Transform with a single unit entry per anchor object.

    Row ``anchor_ids[j]`` holds 1 at column ``j``; all other rows are
    empty, so non-anchor objects get the zero embedding.  Freezing this
    transform reduces the model to training only the selected objects'
    embeddings.
    """
    ids = [int(a) for a in anchor_ids]
    entries = ((a, j, 1.0) for j, a in enumerate(ids))
    return SparseRowMatrix.from_entries(n_objects, len(ids), entries, nonneg=nonneg)


def embed(model: AntModel, indices) -> np.ndarray:
    """Embedding rows for the requested objects (empty row -> zeros)."""
    return lookup_rows(indices, model.transform, model.anchors)


def embed_fast(model: AntModel, indices) -> np.ndarray:
    """Vectorised embed used on training hot paths."""
    return batch_embed(indices, model.transform, model.anchors)


@dataclass
class MixtureModel:
    """Several (anchors, transform) members combined non-linearly.

    Each member contributes ``softmax(row) @ anchors`` where the softmax
    runs over the row's stored entries only: a dense softmax would make
    every entry nonzero and defeat sparse storage, so absent entries are
    excluded rather than treated as zeros.
    """

    members: list[tuple[np.ndarray, SparseRowMatrix]]

    def __post_init__(self):
        if not self.members:
            raise ValueError("mixture needs at least one member")
        dims = {a.shape[1] for a, _ in self.members}
        rows = {t.rows for _, t in self.members}
        if len(dims) != 1 or len(rows) != 1:
            raise ValueError("mixture members must agree on |V| and d")
        for a, t in self.members:
            if t.cols != a.shape[0]:
                raise ValueError("member transform/anchor shapes disagree")

    @property
    def n_objects(self) -> int:
        return self.members[0][1].rows

    @property
    def dim(self) -> int:
        return self.members[0][0].shape[1]


def mixture_embed(
    mix: MixtureModel,
    indices,
    return_empty_mask: bool = False,
):
    """Sum of per-member softmax-weighted anchor mixtures.

    Rows empty in every member yield the zero vector; the optional mask
    flags them for the caller.
    """
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros((indices.size, mix.dim))
    empty = np.ones(indices.size, dtype=bool)
    for anchors, transform in mix.members:
        anchors = check_dense(anchors)
        for j, i in enumerate(indices):
            cols, vals = transform.row(int(i))
            if cols.size == 0:
                continue
            empty[j] = False
            shifted = vals - vals.max()
            w = np.exp(shifted)
            w /= w.sum()
            out[j] += w @ anchors[cols]
    if return_empty_mask:
        return out, empty
    return out


def count_params(model: AntModel) -> dict[str, int]:
    """Storage accounting: anchors, transform nonzeros, and zero rows."""
    anchor = model.n_anchors * model.dim
    transform_nnz = model.transform.nnz()
    return {
        "anchor": anchor,
        "transform_nnz": transform_nnz,
        "total": anchor + transform_nnz,
        "zero_rows": model.transform.zero_rows(),
    }
