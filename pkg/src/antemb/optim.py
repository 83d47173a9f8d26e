"""Adaptive gradient updates and the sparsifying proximal operator.

The optimizer is Yogi: Adam-style first moment, but the second moment
moves additively toward the squared gradient,

    v <- v - (1 - beta2) * sign(v - g^2) * g^2,

which keeps the effective step size from collapsing when gradients are
bursty.  Bias correction follows Adam.  The proximal step applied after
each update soft-thresholds the transform's entries at ``eta * lambda2``
and projects onto the non-negative orthant, producing exact zeros that
are then dropped from storage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sparse import SparseRowMatrix

__all__ = [
    "DecaySchedule",
    "YogiState",
    "yogi_step",
    "ProxConfig",
    "prox_step",
    "prox_values",
    "soft_threshold",
    "orthogonality_penalty",
    "negative_pair_penalty",
]

YOGI_BETA1 = 0.9
YOGI_BETA2 = 0.999
YOGI_EPS = 1e-3


@dataclass
class DecaySchedule:
    """Step-wise learning-rate decay: multiply by ``factor`` after every
    ``every`` steps (``every = 0`` disables decay)."""

    factor: float = 1.0
    every: int = 0

    def at(self, step: int, lr: float) -> float:
        if self.every <= 0 or self.factor == 1.0:
            return lr
        return lr * self.factor ** ((step - 1) // self.every)


@dataclass
class YogiState:
    """Per-parameter optimizer state.

    ``step`` counts completed updates; bias correction uses it, so a
    fresh state must start at 0 with zero moments.
    """

    m: np.ndarray
    v: np.ndarray
    lr: float
    beta1: float = YOGI_BETA1
    beta2: float = YOGI_BETA2
    epsilon: float = YOGI_EPS
    step: int = 0
    decay: DecaySchedule = field(default_factory=DecaySchedule)

    @classmethod
    def zeros(cls, shape, lr: float, **kwargs) -> "YogiState":
        return cls(m=np.zeros(shape), v=np.zeros(shape), lr=lr, **kwargs)

    def effective_lr(self, step: int | None = None) -> float:
        """Learning rate used at update ``step`` (default: the next one)."""
        if step is None:
            step = self.step + 1
        return self.decay.at(step, self.lr)

    def resize_rows(self, n_rows: int) -> None:
        """Grow or shrink the leading dimension; new rows start at zero."""
        old = self.m.shape[0]
        if n_rows == old:
            return
        if n_rows < old:
            self.m = self.m[:n_rows].copy()
            self.v = self.v[:n_rows].copy()
        else:
            pad = (n_rows - old,) + self.m.shape[1:]
            self.m = np.concatenate([self.m, np.zeros(pad)])
            self.v = np.concatenate([self.v, np.zeros(pad)])


def yogi_update_inplace(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    step: int,
    lr: float,
    beta1: float,
    beta2: float,
    epsilon: float,
) -> None:
    """One Yogi update on aligned array slices (``step`` is 1-based).

    Shared by the dense path and the row-sparse transform path so both
    produce bitwise-identical arithmetic.
    """
    gsq = grad * grad
    m *= beta1
    m += (1.0 - beta1) * grad
    v -= (1.0 - beta2) * np.sign(v - gsq) * gsq
    mhat = m / (1.0 - beta1**step)
    denom1 = 1.0 - beta2**step
    # beta2 == 1 keeps v at zero; skip the 0/0 correction in that case
    vhat = v / denom1 if denom1 != 0.0 else v
    param -= lr * mhat / (np.sqrt(vhat) + epsilon)


def yogi_step(param: np.ndarray, grad: np.ndarray, state: YogiState) -> np.ndarray:
    """Apply one optimizer update in place and return the parameter.

    Raises on non-finite gradients before touching any state.
    """
    param = np.asarray(param)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise ValueError("parameter, gradient and state shapes must agree")
    if not np.isfinite(grad).all():
        raise ValueError("non-finite gradient")
    t = state.step + 1
    yogi_update_inplace(
        param,
        grad,
        state.m,
        state.v,
        t,
        state.effective_lr(t),
        state.beta1,
        state.beta2,
        state.epsilon,
    )
    state.step = t
    return param


def soft_threshold(x, threshold: float):
    """Closed-form proximal map of ``threshold * |.|``: shrink toward 0."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - threshold, 0.0)


@dataclass
class ProxConfig:
    """Sparsity penalty configuration for the transform.

    ``mask_complement`` marks entries exempt from the L1 penalty (value 1
    at exempt positions); everything else is penalized.  Exempt entries
    are still projected onto the non-negative orthant when ``nonneg``.
    """

    lambda2: float = 0.0
    nonneg: bool = True
    mask_complement: SparseRowMatrix | None = None

    def __post_init__(self):
        if self.lambda2 < 0:
            raise ValueError("lambda2 must be >= 0")


def prox_values(vals: np.ndarray, penalized: np.ndarray, threshold: float, nonneg: bool) -> np.ndarray:
    """Entrywise proximal map shared by prox_step and the fused training path.

    Penalized non-negative entries shrink by ``threshold`` and clamp at 0;
    exempt ones are only clamped.  Without the non-negativity constraint
    the penalized entries soft-threshold toward 0 from either side.
    """
    if nonneg:
        out = np.where(penalized, vals - threshold, vals)
        return np.maximum(out, 0.0)
    return np.where(penalized, soft_threshold(vals, threshold), vals)


def prox_step(
    t: SparseRowMatrix,
    eta: float,
    cfg: ProxConfig,
    rows=None,
) -> SparseRowMatrix:
    """Apply the proximal operator to stored entries, in place.

    Penalized entries shrink by ``eta * lambda2``; entries flagged in the
    mask complement are only clamped.  Entries that land exactly on zero
    are removed from storage.  ``rows`` restricts the sweep (the training
    loop only proxes rows it touched); ``None`` sweeps the whole matrix.
    """
    if eta <= 0:
        raise ValueError("eta must be > 0")
    threshold = eta * cfg.lambda2
    nonneg = cfg.nonneg
    mask = cfg.mask_complement
    row_iter = range(t.rows) if rows is None else np.asarray(rows, dtype=np.int64)
    for i in row_iter:
        i = int(i)
        cols, vals = t.row(i)
        if cols.size == 0:
            continue
        if mask is not None:
            exempt_cols, _ = mask.row(i)
            penalized = ~np.isin(cols, exempt_cols, assume_unique=True)
        else:
            penalized = np.ones(cols.size, dtype=bool)
        new_vals = prox_values(vals, penalized, threshold, nonneg)
        keep = new_vals != 0.0
        if keep.all():
            t.set_row(i, cols, new_vals)
        else:
            t.set_row(i, cols[keep], new_vals[keep])
    return t


def orthogonality_penalty(a: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum of |dot products| over ordered pairs of distinct rows.

    Returns the penalty value and its subgradient with respect to the
    matrix (subgradient of |x| at 0 taken as 0).  Zero for orthogonal
    rows; used to keep freely trained anchors from collapsing onto each
    other.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        raise ValueError("anchor matrix must be nonempty")
    gram = a @ a.T
    np.fill_diagonal(gram, 0.0)
    value = float(np.abs(gram).sum())
    # d/da_i sum_{p != q} |a_p . a_q| = 2 * sum_{j != i} sign(a_i . a_j) a_j
    grad = 2.0 * (np.sign(gram) @ a)
    return value, grad


def negative_pair_penalty(
    t: SparseRowMatrix,
    negatives,
) -> tuple[float, dict[int, tuple[np.ndarray, np.ndarray]]]:
    """Penalty discouraging unrelated objects from sharing anchors.

    For each pair (u, v) the term is ``|t_u| . |t_v|``, an inner product
    over shared stored columns.  Returns the total and, per row, the
    accumulated subgradient as (columns, values) aligned with that row's
    stored entries.
    """
    total = 0.0
    grads: dict[int, np.ndarray] = {}

    def _row_grad(i: int) -> np.ndarray:
        if i not in grads:
            grads[i] = np.zeros(t.row(i)[0].size)
        return grads[i]

    for u, v in negatives:
        cu, vu = t.row(int(u))
        cv, vv = t.row(int(v))
        if cu.size == 0 or cv.size == 0:
            continue
        shared, iu, iv = np.intersect1d(cu, cv, assume_unique=True, return_indices=True)
        if shared.size == 0:
            continue
        au, av = np.abs(vu[iu]), np.abs(vv[iv])
        total += float(au @ av)
        gu = _row_grad(int(u))
        gv = _row_grad(int(v))
        gu[iu] += np.sign(vu[iu]) * av
        gv[iv] += np.sign(vv[iv]) * au
    out = {i: (t.row(i)[0].copy(), g) for i, g in grads.items()}
    return total, out
