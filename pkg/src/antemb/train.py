"""Training loop: embedding tables, task harnesses, and the epoch driver.

Each batch follows the same sequence: forward through the embeddings,
compute the divergence plus any anchor/transform penalties, take an
adaptive gradient step on the anchors, the touched transform rows, and
the task parameters, then apply the sparsifying proximal step to the
touched rows.  Transform gradients are dense over the columns of a
touched row, so entries pruned to zero can reappear if the data pulls
them back; rows never touched by a batch are never updated.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .losses import softmax
from .model import AntModel, count_params
from .optim import (
    YogiState,
    negative_pair_penalty,
    orthogonality_penalty,
    prox_values,
    yogi_step,
    yogi_update_inplace,
)
from .sparse import batch_embed

__all__ = [
    "TrainError",
    "DenseTable",
    "AnchoredTable",
    "MfTask",
    "TextClfTask",
    "EpochReport",
    "train_epoch",
]


class TrainError(RuntimeError):
    """Raised when a batch produces a non-finite loss; nothing was mutated."""


@dataclass
class EpochReport:
    train_loss: float  # mean divergence per example
    nnz: int
    k: int
    examples: int


class DenseTable:
    """Uncompressed |V| x d embedding table (the baseline)."""

    def __init__(
        self,
        emb: np.ndarray,
        lr: float,
        decay=None,
        trainable_rows: np.ndarray | None = None,
    ):
        self.emb = np.asarray(emb, dtype=np.float64)
        kwargs = {"decay": decay} if decay is not None else {}
        self.opt = YogiState.zeros(self.emb.shape, lr, **kwargs)
        # optional row mask for runs that train only a subset of objects
        self.trainable_rows = trainable_rows

    @property
    def n_objects(self) -> int:
        return self.emb.shape[0]

    @property
    def k(self) -> int:
        return 0

    def embed_rows(self, ids) -> np.ndarray:
        return self.emb[np.asarray(ids, dtype=np.int64)]

    def apply_batch(self, ids, grad_rows) -> None:
        ids = np.asarray(ids, dtype=np.int64)
        uids, inverse = np.unique(ids, return_inverse=True)
        grads = np.zeros((uids.size, self.emb.shape[1]))
        np.add.at(grads, inverse, grad_rows)
        if self.trainable_rows is not None:
            keep = self.trainable_rows[uids]
            uids, grads = uids[keep], grads[keep]
        t = self.opt.step + 1
        if uids.size:
            rows = self.emb[uids]
            m = self.opt.m[uids]
            v = self.opt.v[uids]
            yogi_update_inplace(
                rows, grads, m, v, t,
                self.opt.effective_lr(t), self.opt.beta1, self.opt.beta2,
                self.opt.epsilon,
            )
            self.emb[uids] = rows
            self.opt.m[uids] = m
            self.opt.v[uids] = v
        self.opt.step = t

    def param_count(self) -> int:
        return int(self.emb.size)

    def stored_nnz(self) -> int:
        return int(self.emb.size)


class AnchoredTable:
    """Anchored model plus optimizer state and the fused update+prox step."""

    def __init__(
        self,
        model: AntModel,
        lr: float,
        decay=None,
        freeze_transform: bool = False,
    ):
        self.model = model
        kwargs = {"decay": decay} if decay is not None else {}
        self.opt_a = YogiState.zeros(model.anchors.shape, lr, **kwargs)
        self.t_lr = lr
        self.t_decay = self.opt_a.decay
        self.t_step = 0
        # transform moments are dense per row, allocated on first touch
        self.t_m: list[np.ndarray | None] = [None] * model.n_objects
        self.t_v: list[np.ndarray | None] = [None] * model.n_objects
        self.freeze_transform = freeze_transform

    @property
    def n_objects(self) -> int:
        return self.model.n_objects

    @property
    def k(self) -> int:
        return self.model.n_anchors

    def embed_rows(self, ids) -> np.ndarray:
        return batch_embed(ids, self.model.transform, self.model.anchors)

    def _moments(self, rows: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        m = np.zeros((rows.size, k))
        v = np.zeros((rows.size, k))
        for j, r in enumerate(rows):
            if self.t_m[r] is not None:
                m[j] = self.t_m[r]
                v[j] = self.t_v[r]
        return m, v

    def apply_batch(self, ids, grad_rows) -> None:
        """One optimizer step from embedding-space gradients.

        All gradients are evaluated at the pre-update parameters; then
        the touched transform rows take a joint update-and-prox step and
        the anchors take their update.
        """
        model = self.model
        reg = model.reg
        t_sparse = model.transform

        ids = np.asarray(ids, dtype=np.int64)
        uids, inverse = np.unique(ids, return_inverse=True)
        g_emb = np.zeros((uids.size, model.dim))
        np.add.at(g_emb, inverse, grad_rows)

        # anchor gradient: sum over touched rows of (stored values) x g_row
        lengths, cols, vals = t_sparse.packed_rows(uids)
        grad_a = np.zeros_like(model.anchors)
        if cols.size:
            seg = np.repeat(np.arange(uids.size), lengths)
            np.add.at(grad_a, cols, vals[:, None] * g_emb[seg])
        if reg.ortho_weight > 0:
            _, g_ortho = orthogonality_penalty(model.anchors)
            grad_a += reg.ortho_weight * g_ortho

        if not self.freeze_transform:
            self._update_transform_rows(uids, g_emb)

        # anchors update last so the transform gradients used old values
        t = self.opt_a.step + 1
        yogi_update_inplace(
            model.anchors, grad_a, self.opt_a.m, self.opt_a.v, t,
            self.opt_a.effective_lr(t), self.opt_a.beta1, self.opt_a.beta2,
            self.opt_a.epsilon,
        )
        self.opt_a.step = t

    def _update_transform_rows(self, uids: np.ndarray, g_emb: np.ndarray) -> None:
        model = self.model
        reg = model.reg
        t_sparse = model.transform
        k = model.n_anchors

        # row gradients are dense over columns: d(emb)/d(row) = anchors
        grad_t = g_emb @ model.anchors.T  # (U, K)
        pen_rows: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        if reg.neg_pair_weight > 0 and reg.negative_pairs:
            _, pen_rows = negative_pair_penalty(t_sparse, reg.negative_pairs)
            extra = np.array(sorted(set(pen_rows) - set(uids.tolist())), dtype=np.int64)
            if extra.size:
                uids = np.concatenate([uids, extra])
                grad_t = np.concatenate([grad_t, np.zeros((extra.size, k))])

        dense_rows = np.zeros((uids.size, k))
        for j, r in enumerate(uids):
            rc, rv = t_sparse.row(int(r))
            dense_rows[j, rc] = rv
            if int(r) in pen_rows:
                pc, pg = pen_rows[int(r)]
                grad_t[j, pc] += reg.neg_pair_weight * pg

        m, v = self._moments(uids, k)
        step = self.t_step + 1
        eta = self.t_decay.at(step, self.t_lr)
        yogi_update_inplace(
            dense_rows, grad_t, m, v, step,
            eta, self.opt_a.beta1, self.opt_a.beta2, self.opt_a.epsilon,
        )
        self.t_step = step

        # proximal step fused with write-back: survivors become the new rows
        threshold = eta * reg.lambda2
        mask = reg.mask_complement
        for j, r in enumerate(uids):
            r = int(r)
            self.t_m[r] = m[j]
            self.t_v[r] = v[j]
            penalized = np.ones(k, dtype=bool)
            if mask is not None:
                exempt_cols, _ = mask.row(r)
                penalized[exempt_cols] = False
            new_row = prox_values(dense_rows[j], penalized, threshold, reg.nonneg)
            nz = np.nonzero(new_row)[0].astype(np.int64)
            t_sparse.set_row(r, nz, new_row[nz])

    def sync_after_adapt(self) -> None:
        """Re-align optimizer state after the anchor count changed."""
        k = self.model.n_anchors
        self.opt_a.resize_rows(k)
        for i in range(self.model.n_objects):
            m = self.t_m[i]
            if m is None:
                continue
            if m.size > k:
                self.t_m[i] = m[:k].copy()
                self.t_v[i] = self.t_v[i][:k].copy()
            elif m.size < k:
                pad = np.zeros(k - m.size)
                self.t_m[i] = np.concatenate([m, pad])
                self.t_v[i] = np.concatenate([self.t_v[i], pad])

    def param_count(self) -> int:
        return count_params(self.model)["total"]

    def stored_nnz(self) -> int:
        return self.model.transform.nnz()


def _chunks(n: int, parts: int) -> list[np.ndarray]:
    return [c for c in np.array_split(np.arange(n), parts) if c.size]


class MfTask:
    """Rating regression: prediction = global mean + <user emb, item emb>."""

    def __init__(self, user_table, item_table, global_mean: float,
                 threads: int = 1, deterministic: bool = True):
        self.user = user_table
        self.item = item_table
        self.mean = float(global_mean)
        self.threads = max(1, int(threads))
        self.deterministic = deterministic
        self._pool = ThreadPoolExecutor(max_workers=self.threads) if self.threads > 1 else None

    def _forward(self, users, items, ratings):
        eu = self.user.embed_rows(users)
        ev = self.item.embed_rows(items)
        pred = self.mean + np.einsum("ij,ij->i", eu, ev)
        return eu, ev, pred - ratings

    def _forward_batch(self, users, items, ratings):
        if self._pool is None or users.size < 2 * self.threads:
            return self._forward(users, items, ratings)
        parts = _chunks(users.size, self.threads)
        futures = [
            self._pool.submit(self._forward, users[p], items[p], ratings[p])
            for p in parts
        ]
        # chunks are contiguous and reassembled in submission order, so the
        # downstream reduction is deterministic regardless of scheduling
        results = [f.result() for f in futures]
        eu = np.concatenate([r[0] for r in results])
        ev = np.concatenate([r[1] for r in results])
        residual = np.concatenate([r[2] for r in results])
        return eu, ev, residual

    def step(self, batch: np.ndarray) -> float:
        """One gradient + prox step on a batch of (user, item, rating) rows."""
        users = batch[:, 0].astype(np.int64)
        items = batch[:, 1].astype(np.int64)
        ratings = batch[:, 2]
        eu, ev, residual = self._forward_batch(users, items, ratings)
        loss = 0.5 * float(residual @ residual)
        if not np.isfinite(loss):
            raise TrainError("non-finite loss; batch skipped before any update")
        self.user.apply_batch(users, residual[:, None] * ev)
        self.item.apply_batch(items, residual[:, None] * eu)
        return loss

    def batch_iter(self, triples: np.ndarray, batch_size: int, rng) -> Iterable[np.ndarray]:
        order = rng.permutation(triples.shape[0])
        for start in range(0, order.size, batch_size):
            yield triples[order[start : start + batch_size]]

    def predict(self, users, items) -> np.ndarray:
        eu = self.user.embed_rows(np.asarray(users, dtype=np.int64))
        ev = self.item.embed_rows(np.asarray(items, dtype=np.int64))
        return self.mean + np.einsum("ij,ij->i", eu, ev)

    def divergence_sum(self, triples: np.ndarray) -> float:
        pred = self.predict(triples[:, 0], triples[:, 1])
        diff = pred - triples[:, 2]
        return 0.5 * float(diff @ diff)

    def mse(self, triples: np.ndarray) -> float:
        pred = self.predict(triples[:, 0], triples[:, 1])
        diff = pred - triples[:, 2]
        return float(diff @ diff) / max(diff.size, 1)

    def tables(self):
        return [self.user, self.item]


class TextClfTask:
    """Bag-of-embeddings classifier: softmax(W @ mean(emb) + b).

    Examples are (token id list, label) pairs; the embedding gradient of
    an example is spread evenly over its tokens.
    """

    def __init__(self, table, n_classes: int, dim: int, lr: float,
                 rng: np.random.Generator, threads: int = 1,
                 deterministic: bool = True):
        self.table = table
        self.W = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(n_classes, dim))
        self.b = np.zeros(n_classes)
        self.opt_w = YogiState.zeros(self.W.shape, lr)
        self.opt_b = YogiState.zeros(self.b.shape, lr)
        self.threads = max(1, int(threads))
        self.deterministic = deterministic

    def _mean_embed(self, examples: Sequence[tuple[list[int], int]]):
        ids = np.concatenate(
            [np.asarray(toks, dtype=np.int64) for toks, _ in examples]
        )
        lengths = np.array([len(toks) for toks, _ in examples], dtype=np.int64)
        rows = self.table.embed_rows(ids)
        means = np.zeros((len(examples), rows.shape[1]))
        seg = np.repeat(np.arange(len(examples)), lengths)
        np.add.at(means, seg, rows)
        means /= lengths[:, None]
        return ids, lengths, means

    def step(self, examples: Sequence[tuple[list[int], int]]) -> float:
        labels = np.array([y for _, y in examples], dtype=np.int64)
        ids, lengths, means = self._mean_embed(examples)
        logits = means @ self.W.T + self.b
        probs = softmax(logits)
        picked = np.maximum(probs[np.arange(len(examples)), labels], 1e-12)
        loss = float(-np.log(picked).sum())
        if not np.isfinite(loss):
            raise TrainError("non-finite loss; batch skipped before any update")
        g_logits = probs
        g_logits[np.arange(len(examples)), labels] -= 1.0
        grad_w = g_logits.T @ means
        grad_b = g_logits.sum(axis=0)
        g_means = g_logits @ self.W
        token_grads = np.repeat(g_means / lengths[:, None], lengths, axis=0)
        self.table.apply_batch(ids, token_grads)
        yogi_step(self.W, grad_w, self.opt_w)
        yogi_step(self.b, grad_b, self.opt_b)
        return loss

    def batch_iter(self, examples, batch_size: int, rng):
        order = rng.permutation(len(examples))
        for start in range(0, order.size, batch_size):
            yield [examples[i] for i in order[start : start + batch_size]]

    def predict(self, examples) -> np.ndarray:
        _, _, means = self._mean_embed(examples)
        return (means @ self.W.T + self.b).argmax(axis=1)

    def accuracy(self, examples) -> float:
        labels = np.array([y for _, y in examples], dtype=np.int64)
        return float((self.predict(examples) == labels).mean())

    def divergence_sum(self, examples) -> float:
        labels = np.array([y for _, y in examples], dtype=np.int64)
        _, _, means = self._mean_embed(examples)
        probs = softmax(means @ self.W.T + self.b)
        picked = np.maximum(probs[np.arange(len(examples)), labels], 1e-12)
        return float(-np.log(picked).sum())

    def tables(self):
        return [self.table]


def train_epoch(task, data, batch_size: int, rng) -> EpochReport:
    """Run one pass over ``data`` in shuffled minibatches.

    Returns the mean per-example divergence along with current storage
    counts.  A non-finite batch loss raises ``TrainError`` with the model
    left exactly as it was before that batch.
    """
    total = 0.0
    n = 0
    for batch in task.batch_iter(data, batch_size, rng):
        total += task.step(batch)
        n += len(batch)
    tables = task.tables()
    nnz = sum(t.stored_nnz() for t in tables)
    ks = [t.k for t in tables if isinstance(t, AnchoredTable)]
    return EpochReport(
        train_loss=total / max(n, 1),
        nnz=nnz,
        k=ks[0] if ks else 0,
        examples=n,
    )
