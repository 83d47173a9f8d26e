"""Automatic anchor-count selection and its probabilistic underpinnings.

The anchor count is scored by a penalized objective

    prediction_loss + lambda2 * nnz(T) + (lambda1 - lambda2) * K,

the deterministic limit of a model whose anchor-selection matrix carries
a two-parameter Indian Buffet Process prior.  Once per epoch the
controller evaluates this objective on held-out data and grows the model
by ``delta_k`` anchors while it trends down, shrinks while it trends up,
and otherwise leaves the model alone.  Removed anchors are parked in a
stack, so a shrink followed by a grow restores the exact parameters.

``log_ibp_prior`` and ``sva_limit_check`` evaluate the prior's closed
form and its scaled large-deviation limit; they exist so the penalty can
be validated numerically against the distribution it came from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import AntModel

__all__ = [
    "SvaObjective",
    "sva_objective",
    "trend",
    "NbAntController",
    "AdaptAction",
    "adapt",
    "online_train",
    "OnlineReport",
    "IbpSample",
    "log_ibp_prior",
    "sva_limit_check",
]

TREND_TOL = 1e-4
ANCHOR_INIT_STD_SCALE = 1.0  # fresh anchors use d**-0.5, same as random init


@dataclass
class SvaObjective:
    """Penalty weights.

    ``lambda1 == lambda2`` makes the anchor-count term vanish (the
    fixed-K objective); an active anchor-count penalty, as used by the
    adaptive controller, needs ``lambda1 > lambda2 > 0``.
    """

    lambda1: float
    lambda2: float

    def __post_init__(self):
        if not (self.lambda1 >= self.lambda2 > 0):
            raise ValueError("need lambda1 >= lambda2 > 0")


def sva_objective(pred_loss: float, nnz_t: int, k: int, obj: SvaObjective) -> float:
    """Penalized score of a model state: loss + lambda2*nnz + (lambda1-lambda2)*K."""
    if pred_loss < 0 or nnz_t < 0 or k < 0:
        raise ValueError("inputs must be non-negative")
    return pred_loss + obj.lambda2 * nnz_t + (obj.lambda1 - obj.lambda2) * k


def trend(history: Sequence[float], tol: float = TREND_TOL) -> str:
    """Direction of the objective: compare the last value to the previous.

    Returns ``"decreasing"`` if last < previous*(1-tol), ``"increasing"``
    if last > previous*(1+tol), else ``"flat"``.  Fewer than two entries
    is flat.
    """
    if len(history) < 2:
        return "flat"
    prev, last = history[-2], history[-1]
    if last < prev * (1.0 - tol):
        return "decreasing"
    if last > prev * (1.0 + tol):
        return "increasing"
    return "flat"


@dataclass
class AdaptAction:
    """What one adaptation step did."""

    trend: str
    delta: int  # signed anchor-count change actually applied
    k: int  # anchor count after the step
    restored: int  # how many anchors came back from the buffer


@dataclass
class NbAntController:
    """Grows and shrinks the anchor count from the objective trend.

    When recommendation models compress users and items together the
    controller is shared: both models grow and shrink by the same amount
    at the same time, so ``adapt`` accepts one model or a list.
    """

    k: int
    delta_k: int = 1
    tol: float = TREND_TOL
    seed: int = 0
    history: list[float] = field(default_factory=list)
    buffer: list[list[tuple[np.ndarray, list[tuple[int, float]]]]] = field(default_factory=list)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.delta_k < 1:
            raise ValueError("delta_k must be >= 1")
        self._rng = np.random.default_rng(self.seed)

    def fresh_anchor(self, dim: int) -> np.ndarray:
        return self._rng.normal(0.0, ANCHOR_INIT_STD_SCALE / math.sqrt(dim), size=(1, dim))


def _as_model_list(model) -> list[AntModel]:
    if isinstance(model, AntModel):
        return [model]
    return list(model)


def adapt(model, controller: NbAntController, val_objective: float) -> AdaptAction:
    """Record the epoch's objective and resize the model(s) accordingly.

    Growth pops the most recently removed anchors from the buffer, values
    intact, before initializing fresh ones; shrinkage pushes the trailing
    anchors (rows and transform columns) onto the buffer.  The anchor
    count never drops below 1.
    """
    models = _as_model_list(model)
    for m in models:
        if m.n_anchors != controller.k:
            raise ValueError(
                f"model has {m.n_anchors} anchors but controller expects {controller.k}"
            )
    controller.history.append(float(val_objective))
    direction = trend(controller.history, controller.tol)
    restored = 0
    delta = 0
    if direction == "decreasing":
        for _ in range(controller.delta_k):
            if controller.buffer:
                unit = controller.buffer.pop()
                for m, (row, column) in zip(models, unit):
                    m.restore_anchor(row, column)
                restored += 1
            else:
                for m in models:
                    m.append_anchors(controller.fresh_anchor(m.dim))
            delta += 1
    elif direction == "increasing":
        shrinkable = min(controller.delta_k, controller.k - 1)
        for _ in range(shrinkable):
            unit = []
            for m in models:
                row, column = m.pop_anchor()
                unit.append((row, column))
            controller.buffer.append(unit)
            delta -= 1
    controller.k += delta
    return AdaptAction(trend=direction, delta=delta, k=controller.k, restored=restored)


@dataclass
class OnlineReport:
    k_trajectory: list[int]
    final_loss: float
    passes: list[int]


def online_train(
    model,
    controller: NbAntController,
    batch_stream,
    train_pass,
    val_objective,
    tol: float = TREND_TOL,
    max_passes: int = 50,
) -> OnlineReport:
    """Streaming variant: each incoming batch is trained to convergence.

    ``train_pass(batch)`` runs one optimization pass over the batch and
    returns its loss; passes repeat until the loss stops improving by a
    relative ``tol`` (capped at ``max_passes``).  The batch then serves
    as the controller's held-out data via ``val_objective(batch)`` and
    the anchor count adapts before the stream moves on.  Earlier batches
    are never revisited.
    """
    k_traj: list[int] = []
    passes: list[int] = []
    last_loss = math.nan
    for batch in batch_stream:
        prev = math.inf
        used = 0
        for _ in range(max_passes):
            loss = train_pass(batch)
            used += 1
            if prev - loss < tol * abs(prev):
                break
            prev = loss
        last_loss = loss
        adapt(model, controller, val_objective(batch))
        k_traj.append(controller.k)
        passes.append(used)
    if not k_traj:
        raise ValueError("empty batch stream")
    return OnlineReport(k_trajectory=k_traj, final_loss=last_loss, passes=passes)


@dataclass
class IbpSample:
    """A binary anchor-selection matrix with prior hyperparameters a, b > 0."""

    z: np.ndarray
    a: float
    b: float

    def __post_init__(self):
        self.z = np.asarray(self.z)
        if self.z.ndim != 2:
            raise ValueError("z must be a 2-D binary matrix")
        if not np.isin(self.z, (0, 1)).all():
            raise ValueError("z must contain only 0/1 entries")
        if not (self.a > 0 and self.b > 0):
            raise ValueError("a and b must be positive")


def _column_stats(z: np.ndarray) -> tuple[np.ndarray, dict[bytes, int]]:
    """Counts per non-empty column and multiplicities of distinct patterns."""
    m = z.sum(axis=0)
    nonzero = np.nonzero(m)[0]
    patterns: dict[bytes, int] = {}
    for j in nonzero:
        key = np.ascontiguousarray(z[:, j], dtype=np.uint8).tobytes()
        patterns[key] = patterns.get(key, 0) + 1
    return m[nonzero].astype(np.int64), patterns


def _log_ibp_from_logs(z: np.ndarray, log_a: float, log_b: float) -> float:
    """Log prior mass computed from log-space hyperparameters.

    Evaluates  K log(ab) - sum_h log K_h! - a b H_n
             + sum_k [ lgamma(m_k) + lgamma(n - m_k + b) - lgamma(n + b) ]
    with H_n = sum_{j=1}^{n} 1/(b + j - 1), entirely from ``log_a`` and
    ``log_b`` so extreme hyperparameters neither overflow nor underflow.
    """
    n = z.shape[0]
    m, patterns = _column_stats(z)
    k = int(m.size)
    total = k * (log_a + log_b)
    total -= sum(math.lgamma(c + 1) for c in patterns.values())
    # a*b*H_n term: sum_j exp(log_a + log_b - log(b + j - 1)), with
    # log(b + j - 1) = log_b + log1p((j - 1) / b) evaluated stably
    for j in range(1, n + 1):
        if log_b > 700:  # b overflows float64; (j-1)/b underflows to 0
            log_denom = log_b
        else:
            log_denom = log_b + math.log1p((j - 1) * math.exp(-log_b))
        total -= math.exp(log_a + log_b - log_denom)
    if k:
        b = math.exp(log_b)
        if not math.isfinite(b):
            raise OverflowError("b too large for the gamma terms; reduce beta*lambda2")
        for mk in m:
            total += math.lgamma(mk) + math.lgamma(n - mk + b) - math.lgamma(n + b)
    return total


def log_ibp_prior(sample: IbpSample) -> float:
    """Natural log of the two-parameter buffet-process prior mass of ``z``.

    Empty columns carry no mass terms: K counts non-empty columns and
    the pattern multiplicities K_h range over distinct non-zero columns.
    """
    return _log_ibp_from_logs(sample.z, math.log(sample.a), math.log(sample.b))


def sva_limit_check(
    z: np.ndarray,
    lambda1: float,
    lambda2: float,
    betas: Sequence[float],
) -> list[tuple[float, float]]:
    """Scaled log-prior along the coupling a=exp(-beta*lambda1), b=exp(beta*lambda2).

    Returns (beta, log_prior/beta) pairs.  As beta grows the value
    converges to ``-lambda2 * ||z||_0 - (lambda1 - lambda2) * K``, the
    penalty the training objective uses; callers compare against that
    closed form.
    """
    if not (lambda1 > lambda2 > 0):
        raise ValueError("need lambda1 > lambda2 > 0")
    z = np.asarray(z)
    if not np.isin(z, (0, 1)).all():
        raise ValueError("z must contain only 0/1 entries")
    out = []
    for beta in betas:
        if beta <= 0:
            raise ValueError("beta must be positive")
        val = _log_ibp_from_logs(z, -beta * lambda1, beta * lambda2)
        out.append((float(beta), val / beta))
    return out


def sva_limit(z: np.ndarray, lambda1: float, lambda2: float) -> float:
    """Closed-form limit of the scaled log prior."""
    z = np.asarray(z)
    m = z.sum(axis=0)
    k = int((m > 0).sum())
    return -lambda2 * float(z.sum()) - (lambda1 - lambda2) * k
