"""Task data: ratings ingestion, text ingestion, splits, and metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .losses import softmax

__all__ = [
    "RatingsDataset",
    "TextDataset",
    "load_movielens",
    "load_text_dataset",
    "split",
    "mf_predict",
    "textclf_predict",
    "evaluate",
]

RATING_MIN = 0.5
RATING_MAX = 5.0


@dataclass
class RatingsDataset:
    """(user, item, rating) triples with dense ids.

    ``user_ids``/``item_ids`` map raw file ids to dense indices; the
    inverse arrays recover raw ids for export.  ``global_mean`` is the
    mean rating of the training split (set by :func:`split`; until then
    it is the mean over all loaded ratings).
    """

    triples: np.ndarray  # (n, 3) float64: user index, item index, rating
    n_users: int
    n_items: int
    global_mean: float
    user_ids: dict[int, int] = field(default_factory=dict)
    item_ids: dict[int, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.triples.shape[0]

    def raw_user_ids(self) -> list[int]:
        inv = sorted(self.user_ids, key=self.user_ids.get)
        return inv

    def raw_item_ids(self) -> list[int]:
        return sorted(self.item_ids, key=self.item_ids.get)


def _parse_rating_line(line: str, lineno: int, sep: str, path) -> tuple[int, int, float]:
    parts = line.rstrip("\n").split(sep)
    if len(parts) < 3:
        raise ValueError(f"{path}:{lineno}: expected user{sep}item{sep}rating[...], got {line!r}")
    try:
        user = int(parts[0])
        item = int(parts[1])
        rating = float(parts[2])
    except ValueError:
        raise ValueError(f"{path}:{lineno}: malformed field in {line!r}") from None
    if not (RATING_MIN <= rating <= RATING_MAX):
        raise ValueError(
            f"{path}:{lineno}: rating {rating} outside [{RATING_MIN}, {RATING_MAX}]"
        )
    return user, item, rating


def load_movielens(path, format: str = "csv_header") -> RatingsDataset:
    """Load a ratings file in either distribution format.

    ``csv_header`` expects a ``userId,movieId,rating,timestamp`` header
    followed by comma-separated rows; ``legacy_double_colon`` expects
    ``user::movie::rating::timestamp`` rows with no header.  Raw ids are
    remapped to dense indices in order of first appearance.
    """
    if format not in ("csv_header", "legacy_double_colon"):
        raise ValueError(f"unknown format {format!r}")
    sep = "," if format == "csv_header" else "::"
    users: dict[int, int] = {}
    items: dict[int, int] = {}
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        start = 1
        if format == "csv_header":
            header = fh.readline()
            if not header.lower().startswith("userid"):
                raise ValueError(f"{path}:1: expected a userId,movieId,... header")
            start = 2
        for lineno, line in enumerate(fh, start=start):
            if not line.strip():
                continue
            user, item, rating = _parse_rating_line(line, lineno, sep, path)
            u = users.setdefault(user, len(users))
            i = items.setdefault(item, len(items))
            rows.append((u, i, rating))
    if not rows:
        raise ValueError(f"{path}: no ratings found")
    triples = np.array(rows, dtype=np.float64)
    return RatingsDataset(
        triples=triples,
        n_users=len(users),
        n_items=len(items),
        global_mean=float(triples[:, 2].mean()),
        user_ids=users,
        item_ids=items,
    )


@dataclass
class TextDataset:
    """Labelled token-id sequences."""

    examples: list[tuple[list[int], int]]
    n_classes: int
    vocab_size: int
    label_names: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.examples)


def load_text_dataset(path, vocab) -> TextDataset:
    """Parse ``<label>\\t<space-separated tokens>`` lines.

    Label names map to class indices in sorted order.  Tokens must be in
    the vocabulary.
    """
    raw: list[tuple[str, list[str]]] = []
    labels: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{lineno}: expected '<label>\\t<tokens>'")
            label, text = line.split("\t", 1)
            toks = text.split()
            if not toks:
                raise ValueError(f"{path}:{lineno}: empty token list")
            labels.add(label)
            raw.append((label, toks))
    if not raw:
        raise ValueError(f"{path}: no examples")
    names = sorted(labels)
    index = {name: i for i, name in enumerate(names)}
    examples = [(vocab.encode(toks), index[label]) for label, toks in raw]
    return TextDataset(
        examples=examples,
        n_classes=len(names),
        vocab_size=len(vocab),
        label_names=names,
    )


def split(
    dataset: RatingsDataset,
    fractions: tuple[float, float, float],
    seed: int,
) -> tuple[RatingsDataset, RatingsDataset, RatingsDataset]:
    """Disjoint random train/val/test split, reproducible by seed.

    Validation and test examples whose user or item never occurs in the
    training portion are moved into train, so held-out scoring never
    meets a cold id.  All three datasets share the training split's mean
    rating.  Raises if a nonzero fraction ends up with no examples.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    if any(f < 0 for f in fractions):
        raise ValueError("fractions must be non-negative")
    n = len(dataset)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    train_idx = list(order[:n_train])
    val_idx = list(order[n_train : n_train + n_val])
    test_idx = list(order[n_train + n_val :])

    triples = dataset.triples
    seen_users = set(triples[train_idx, 0].astype(np.int64).tolist())
    seen_items = set(triples[train_idx, 1].astype(np.int64).tolist())

    def _filter(indices: list[int]) -> list[int]:
        kept = []
        for i in indices:
            u = int(triples[i, 0])
            it = int(triples[i, 1])
            if u in seen_users and it in seen_items:
                kept.append(i)
            else:
                train_idx.append(i)
                seen_users.add(u)
                seen_items.add(it)
        return kept

    val_idx = _filter(val_idx)
    test_idx = _filter(test_idx)

    mean = float(triples[train_idx, 2].mean()) if train_idx else 0.0

    def _make(indices: list[int], frac: float, name: str) -> RatingsDataset:
        if frac > 0 and not indices:
            raise ValueError(f"{name} split is empty")
        return RatingsDataset(
            triples=triples[indices].copy(),
            n_users=dataset.n_users,
            n_items=dataset.n_items,
            global_mean=mean,
            user_ids=dataset.user_ids,
            item_ids=dataset.item_ids,
        )

    return (
        _make(train_idx, fractions[0], "train"),
        _make(val_idx, fractions[1], "val"),
        _make(test_idx, fractions[2], "test"),
    )


def mf_predict(user_emb: np.ndarray, item_emb: np.ndarray, global_mean: float) -> float:
    """Predicted rating: global mean plus the embedding dot product."""
    user_emb = np.asarray(user_emb, dtype=np.float64)
    item_emb = np.asarray(item_emb, dtype=np.float64)
    if user_emb.shape != item_emb.shape:
        raise ValueError("embedding dimensions disagree")
    return float(global_mean + user_emb @ item_emb)


def textclf_predict(w: np.ndarray, b: np.ndarray, mean_embedding: np.ndarray) -> np.ndarray:
    """Class probabilities of a linear softmax classifier.

    Ties at the argmax resolve to the lowest class index.
    """
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    e = np.asarray(mean_embedding, dtype=np.float64)
    if w.shape[1] != e.shape[-1]:
        raise ValueError("classifier and embedding dimensions disagree")
    return softmax(w @ e + b)


def evaluate(predictions, targets, metric: str) -> float:
    """Mean squared error or classification accuracy.

    The squared error carries no 1/2 factor: it is the reporting
    convention, twice the per-example Gaussian divergence.
    """
    predictions = np.asarray(predictions)
    targets = np.asarray(targets)
    if predictions.shape != targets.shape:
        raise ValueError("predictions and targets must have equal length")
    if predictions.size == 0:
        raise ValueError("empty input")
    if metric == "mse":
        diff = predictions.astype(np.float64) - targets.astype(np.float64)
        return float((diff * diff).mean())
    if metric == "accuracy":
        return float((predictions == targets).mean())
    raise ValueError(f"unknown metric {metric!r}")
