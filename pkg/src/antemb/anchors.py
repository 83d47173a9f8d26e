"""Vocabulary construction, anchor selection, and domain-knowledge masks.

Anchors are the handful of objects (or free basis vectors) whose
embeddings everything else is composed from.  Selection strategies:

* ``frequency`` — most frequent objects first.
* ``tfidf``     — objects with the highest TF-IDF score over a document
                  collection (tf = raw in-document count, idf = ln(N/df),
                  score = max over documents).
* ``kmeanspp``  — k-means++ seeding over a feature space: the first
                  center uniform, subsequent centers sampled with
                  probability proportional to squared distance from the
                  nearest chosen center.  Seeding only; no Lloyd steps.
* ``random``    — no objects selected; the anchor matrix is a set of
                  freely trained basis vectors.

Relationship graphs (positive/negative object pairs) turn into a sparse
mask that exempts transform entries between related objects from the L1
penalty; the mask is stored as its complement (1 = exempt) because
related pairs are rare.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .sparse import SparseRowMatrix

__all__ = [
    "Vocabulary",
    "build_vocab",
    "CooccurrenceMatrix",
    "build_cooccurrence",
    "RelationGraph",
    "load_relations",
    "AnchorPlan",
    "select_anchors",
    "init_anchor_matrix",
    "build_domain_mask",
    "read_corpus",
]

logger = logging.getLogger(__name__)

STRATEGIES = ("frequency", "tfidf", "kmeanspp", "random")


@dataclass
class Vocabulary:
    """Token inventory with ids assigned by descending frequency.

    Ties are broken by first occurrence in the stream, so ids are stable
    for a fixed corpus.
    """

    tokens: list[str]
    ids: dict[str, int]
    freq: np.ndarray  # per-id counts, aligned with tokens

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.ids

    def encode(self, tokens: Iterable[str]) -> list[int]:
        try:
            return [self.ids[t] for t in tokens]
        except KeyError as exc:
            raise KeyError(f"token {exc.args[0]!r} not in vocabulary") from None


def build_vocab(corpus: Iterable[Sequence[str]]) -> Vocabulary:
    """Count tokens over a stream of token sequences and assign ids.

    Raises ``ValueError`` on an empty corpus (no tokens at all).
    """
    counts: dict[str, int] = {}
    first_seen: dict[str, int] = {}
    pos = 0
    for seq in corpus:
        for tok in seq:
            if tok not in counts:
                counts[tok] = 0
                first_seen[tok] = pos
            counts[tok] += 1
            pos += 1
    if not counts:
        raise ValueError("empty corpus")
    ordered = sorted(counts, key=lambda t: (-counts[t], first_seen[t]))
    ids = {t: i for i, t in enumerate(ordered)}
    freq = np.array([counts[t] for t in ordered], dtype=np.int64)
    return Vocabulary(tokens=ordered, ids=ids, freq=freq)


@dataclass
class CooccurrenceMatrix:
    """Symmetric within-window co-occurrence counts, diagonal excluded."""

    dim: int
    counts: dict[tuple[int, int], int]
    window: int

    def get(self, i: int, j: int) -> int:
        if i == j:
            return 0
        return self.counts.get((min(i, j), max(i, j)), 0)

    def features(self) -> np.ndarray:
        """Dense |V| x |V| count matrix, usable as a clustering feature space."""
        out = np.zeros((self.dim, self.dim))
        for (i, j), c in self.counts.items():
            out[i, j] = c
            out[j, i] = c
        return out


def build_cooccurrence(
    corpus: Iterable[Sequence[str]],
    vocab: Vocabulary,
    window: int,
) -> CooccurrenceMatrix:
    """Count token pairs occurring within ``window`` positions.

    Windows do not cross document boundaries.  Pairs of equal tokens are
    ignored (no diagonal).  Unknown tokens raise ``KeyError``.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    counts: dict[tuple[int, int], int] = {}
    for seq in corpus:
        ids = vocab.encode(seq)
        n = len(ids)
        for p in range(n):
            for q in range(p + 1, min(p + window + 1, n)):
                a, b = ids[p], ids[q]
                if a == b:
                    continue
                key = (a, b) if a < b else (b, a)
                counts[key] = counts.get(key, 0) + 1
    return CooccurrenceMatrix(dim=len(vocab), counts=counts, window=window)


@dataclass
class RelationGraph:
    """Positive (related) and negative (unrelated) object pairs.

    Pairs are stored unordered as (min, max); self-pairs are rejected and
    a pair cannot be both positive and negative.
    """

    positive: set[tuple[int, int]] = field(default_factory=set)
    negative: set[tuple[int, int]] = field(default_factory=set)

    def add(self, kind: str, u: int, v: int) -> None:
        if u == v:
            raise ValueError(f"self-pair ({u}, {v}) not allowed")
        pair = (min(u, v), max(u, v))
        target = self.positive if kind == "P" else self.negative
        other = self.negative if kind == "P" else self.positive
        if pair in other:
            raise ValueError(f"pair {pair} listed as both positive and negative")
        target.add(pair)

    def validate(self) -> None:
        if self.positive & self.negative:
            raise ValueError("positive and negative pair sets overlap")
        for u, v in self.positive | self.negative:
            if u == v:
                raise ValueError(f"self-pair ({u}, {v})")


def load_relations(path, vocab: Vocabulary) -> RelationGraph:
    """Parse a relation file with lines ``P <u> <v>`` or ``N <u> <v>``.

    Tokens are resolved through the vocabulary; unknown tokens or
    malformed lines raise with the offending line number.
    """
    graph = RelationGraph()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3 or parts[0] not in ("P", "N"):
                raise ValueError(f"{path}:{lineno}: expected 'P|N <u> <v>', got {line!r}")
            kind, tu, tv = parts
            if tu not in vocab or tv not in vocab:
                missing = tu if tu not in vocab else tv
                raise ValueError(f"{path}:{lineno}: token {missing!r} not in vocabulary")
            graph.add(kind, vocab.ids[tu], vocab.ids[tv])
    graph.validate()
    return graph


@dataclass
class AnchorPlan:
    """How many anchors to pick, by what strategy, and with what seed."""

    strategy: str
    k: int
    seed: int = 0
    anchor_ids: list[int] | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.k < 1:
            raise ValueError("k must be >= 1")


def _kmeanspp_indices(
    features: np.ndarray,
    k: int,
    rng: np.random.Generator,
    exclude: frozenset[int],
) -> list[int]:
    n = features.shape[0]
    candidates = np.array([i for i in range(n) if i not in exclude], dtype=np.int64)
    if candidates.size < k:
        raise ValueError(f"cannot pick {k} anchors from {candidates.size} candidates")
    pts = features[candidates]
    chosen: list[int] = []
    first = int(rng.integers(candidates.size))
    chosen.append(first)
    d2 = ((pts - pts[first]) ** 2).sum(axis=1)
    for _ in range(1, k):
        d2[chosen] = 0.0
        total = d2.sum()
        if total > 0:
            probs = d2 / total
            nxt = int(rng.choice(candidates.size, p=probs))
        else:
            # all remaining points coincide with a chosen center
            remaining = np.setdiff1d(np.arange(candidates.size), np.array(chosen))
            nxt = int(rng.choice(remaining))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((pts - pts[nxt]) ** 2).sum(axis=1))
    return [int(candidates[i]) for i in chosen]


def _tfidf_scores(vocab: Vocabulary, docs: Sequence[Sequence[str]]) -> np.ndarray:
    n_docs = len(docs)
    if n_docs == 0:
        raise ValueError("tfidf selection requires documents")
    df = np.zeros(len(vocab), dtype=np.int64)
    per_doc_counts = []
    for doc in docs:
        ids = vocab.encode(doc)
        counts: dict[int, int] = {}
        for i in ids:
            counts[i] = counts.get(i, 0) + 1
        per_doc_counts.append(counts)
        for i in counts:
            df[i] += 1
    idf = np.zeros(len(vocab))
    nonzero = df > 0
    idf[nonzero] = np.log(n_docs / df[nonzero])
    scores = np.zeros(len(vocab))
    for counts in per_doc_counts:
        for i, tf in counts.items():
            scores[i] = max(scores[i], tf * idf[i])
    return scores


def select_anchors(
    plan: AnchorPlan,
    vocab: Vocabulary,
    features: np.ndarray | None = None,
    docs: Sequence[Sequence[str]] | None = None,
    exclude: Iterable[int] = (),
) -> list[int]:
    """Pick ``plan.k`` distinct object ids per the plan's strategy.

    The ``random`` strategy selects no objects (empty list): the anchor
    matrix is then trained freely.  ``exclude`` removes already-selected
    ids from consideration, which is how a frequency pass is combined
    with a clustering pass for the remainder.
    """
    if plan.anchor_ids is not None:
        ids = [int(i) for i in plan.anchor_ids]
        if len(set(ids)) != plan.k or any(i < 0 or i >= len(vocab) for i in ids):
            raise ValueError("anchor_ids must hold k distinct ids within the vocabulary")
        return ids
    if plan.strategy == "random":
        return []
    if plan.k > len(vocab):
        raise ValueError(f"k={plan.k} exceeds vocabulary size {len(vocab)}")
    excluded = frozenset(int(i) for i in exclude)
    if plan.strategy == "frequency":
        order = sorted(
            (i for i in range(len(vocab)) if i not in excluded),
            key=lambda i: (-int(vocab.freq[i]), i),
        )
        return order[: plan.k]
    if plan.strategy == "tfidf":
        if docs is None:
            raise ValueError("tfidf strategy requires docs")
        scores = _tfidf_scores(vocab, docs)
        order = sorted(
            (i for i in range(len(vocab)) if i not in excluded),
            key=lambda i: (-scores[i], i),
        )
        return order[: plan.k]
    if plan.strategy == "kmeanspp":
        if features is None:
            raise ValueError("kmeanspp strategy requires features")
        features = np.asarray(features, dtype=np.float64)
        if features.shape[0] != len(vocab):
            raise ValueError("features must have one row per vocabulary entry")
        rng = np.random.default_rng(plan.seed)
        return _kmeanspp_indices(features, plan.k, rng, excluded)
    raise AssertionError(f"unhandled strategy {plan.strategy}")


def init_anchor_matrix(
    plan: AnchorPlan,
    d: int,
    pretrained: np.ndarray | Mapping[int, np.ndarray] | None = None,
    anchor_ids: Sequence[int] | None = None,
) -> np.ndarray:
    """Build the initial K x d anchor matrix.

    Random-basis anchors draw i.i.d. Gaussian entries with standard
    deviation ``d**-0.5`` so rows start near unit norm.  Object-based
    strategies copy rows from ``pretrained`` when given (raising if an
    anchor id is missing) and otherwise fall back to the same Gaussian.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = np.random.default_rng(plan.seed)
    scale = 1.0 / np.sqrt(d)
    if plan.strategy == "random" or pretrained is None:
        return rng.normal(0.0, scale, size=(plan.k, d))
    ids = list(anchor_ids if anchor_ids is not None else (plan.anchor_ids or []))
    if len(ids) != plan.k:
        raise ValueError("anchor ids are required to initialise from a pretrained source")
    out = np.empty((plan.k, d))
    for row, i in enumerate(ids):
        if isinstance(pretrained, Mapping):
            if i not in pretrained:
                raise KeyError(f"anchor id {i} missing from pretrained source")
            vec = np.asarray(pretrained[i], dtype=np.float64)
        else:
            arr = np.asarray(pretrained, dtype=np.float64)
            if i < 0 or i >= arr.shape[0]:
                raise KeyError(f"anchor id {i} missing from pretrained source")
            vec = arr[i]
        if vec.shape != (d,):
            raise ValueError(f"pretrained vector for id {i} has wrong length")
        out[row] = vec
    return out


def build_domain_mask(
    relations: RelationGraph,
    vocab_size: int,
    k: int,
    anchor_ids: Sequence[int],
) -> SparseRowMatrix:
    """Complement of the penalty mask: 1 where the L1 penalty is waived.

    An entry (u, column-of-a) is exempt exactly when (u, a) is a positive
    pair and ``a`` is an anchor.  Positive pairs with no anchor endpoint
    cannot be expressed in the transform's columns and are skipped with a
    warning count.  Requires an object-based anchor selection.
    """
    if not anchor_ids:
        raise ValueError("domain masks require object-based anchors (anchor_ids nonempty)")
    col_of = {int(a): j for j, a in enumerate(anchor_ids)}
    if len(col_of) != len(anchor_ids):
        raise ValueError("anchor_ids contains duplicates")
    entries: set[tuple[int, int]] = set()
    skipped = 0
    for u, v in sorted(relations.positive):
        hit = False
        if v in col_of:
            entries.add((u, col_of[v]))
            hit = True
        if u in col_of:
            entries.add((v, col_of[u]))
            hit = True
        if not hit:
            skipped += 1
    if skipped:
        warnings.warn(
            f"{skipped} positive pair(s) had no anchor endpoint and were skipped",
            RuntimeWarning,
            stacklevel=2,
        )
        logger.info("domain mask: skipped %d positive pairs without anchor endpoints", skipped)
    return SparseRowMatrix.from_entries(
        vocab_size, k, ((r, c, 1.0) for r, c in entries), nonneg=True
    )


def read_corpus(path) -> list[list[str]]:
    """UTF-8 text, one whitespace-tokenised document per line."""
    docs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            toks = line.split()
            if toks:
                docs.append(toks)
    return docs
