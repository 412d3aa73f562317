"""Contrastive objectives over a multiview batch with partial labels.

A batch of b sources (b_l labeled, b_u unlabeled) is expanded to 2b
augmented views. Labeled anchors pull toward every same-class view, with
the whole batch (labeled and unlabeled alike) serving as negatives;
unlabeled anchors pull only toward their own second view. The unified
objective is the labeled-anchor sum plus alpha times the unlabeled-anchor
sum; anchors are summed, not averaged (a per-anchor mean sits behind
``reduction="mean"`` for batch-size-invariant comparisons).

Softmax denominators exclude the anchor itself and are evaluated in log
space with the row max (over the denominator's domain) subtracted as a
constant, which leaves values and gradients unchanged but keeps the loss
finite down to very small temperatures.

Every function accepts projections either as a plain float64 array
(returns a float) or as a tape ``Var`` (returns a ``Var`` for training).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var

GALPHA_CHOICES = ("unlabeled", "labeled")
REDUCTIONS = ("sum", "mean")


@dataclass(frozen=True)
class MultiviewIndex:
    """View bookkeeping for a 2b multiview batch.

    labeled: bool flag per view; labels: class id per view (-1 when
    unlabeled); pair: index of the other view of the same source.
    """

    labeled: np.ndarray
    labels: np.ndarray
    pair: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "labeled", np.asarray(self.labeled, dtype=bool))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        object.__setattr__(self, "pair", np.asarray(self.pair, dtype=np.int64))
        n = self.labeled.shape[0]
        if n % 2 or self.labels.shape != (n,) or self.pair.shape != (n,):
            raise ValueError("multiview index arrays must share an even length")
        i = np.arange(n)
        if np.any(self.pair == i) or np.any(self.pair[self.pair] != i):
            raise ValueError("pair map must be an involution without fixed points")
        if np.any(self.labeled != self.labeled[self.pair]):
            raise ValueError("paired views must share label status")
        if np.any(self.labels != self.labels[self.pair]):
            raise ValueError("paired views must share the label value")

    @classmethod
    def from_sources(cls, source_labels: Sequence[int | None]) -> "MultiviewIndex":
        """Standard layout: rows 0..b-1 first views, b..2b-1 second views."""
        b = len(source_labels)
        if b == 0:
            raise ValueError("multiview batch needs at least one source")
        per_source = np.array(
            [-1 if y is None else int(y) for y in source_labels], dtype=np.int64
        )
        labels = np.concatenate([per_source, per_source])
        pair = (np.arange(2 * b) + b) % (2 * b)
        return cls(labels >= 0, labels, pair)

    @property
    def n_views(self) -> int:
        return self.labeled.shape[0]

    @property
    def anchors_labeled(self) -> np.ndarray:
        return np.where(self.labeled)[0]

    @property
    def anchors_unlabeled(self) -> np.ndarray:
        return np.where(~self.labeled)[0]

    @property
    def b_l(self) -> int:
        return int(self.labeled.sum()) // 2

    @property
    def b_u(self) -> int:
        return int((~self.labeled).sum()) // 2


@dataclass(frozen=True)
class PositiveMask:
    """positives[i, j] is True when view j is a positive for anchor i."""

    positives: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "positives", np.asarray(self.positives, dtype=bool))
        if np.any(np.diag(self.positives)):
            raise ValueError("an anchor cannot be its own positive")
        if np.any(self.positives.sum(axis=1) < 1):
            raise ValueError("every anchor needs at least one positive")


def build_masks(idx: MultiviewIndex) -> PositiveMask:
    """Positives: same-class views for labeled anchors, the paired view otherwise."""
    if np.any(idx.labeled & (idx.labels < 0)):
        raise ValueError("labeled view is missing a label")
    n = idx.n_views
    pos = np.zeros((n, n), dtype=bool)
    lab = idx.anchors_labeled
    if lab.size:
        pos[np.ix_(lab, lab)] = idx.labels[lab, None] == idx.labels[None, lab]
    unl = idx.anchors_unlabeled
    pos[unl, idx.pair[unl]] = True
    np.fill_diagonal(pos, False)
    return PositiveMask(pos)


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.07
    alpha: float = 1.0
    galpha_on: str = "unlabeled"
    reduction: str = "sum"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"temperature must be > 0, got {self.tau}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.galpha_on not in GALPHA_CHOICES:
            raise ValueError(f"galpha_on must be one of {GALPHA_CHOICES}")
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"reduction must be one of {REDUCTIONS}")


def _per_anchor_losses(z: Var, positives: np.ndarray, tau: float) -> Var:
    """Column of -mean_{p in P(i)} log softmax(z_i.z_p / tau), shape (n, 1)."""
    n = z.shape[0]
    tape = z.tape
    logits = ad.scale(ad.gram(z), 1.0 / tau)
    off = logits.data.copy()
    np.fill_diagonal(off, -np.inf)
    # constant shift: cancels exactly in value and gradient
    stab = tape.const(-off.max(axis=1, keepdims=True))
    shifted = ad.add(logits, stab)
    # the diagonal must vanish before exp, not after: exp of the raw
    # diagonal overflows at small tau
    kill_diag = tape.const(np.diag(np.full(n, -np.inf)))
    den = ad.row_sum(ad.exp(ad.add(shifted, kill_diag)))
    log_prob = ad.add(shifted, ad.scale(ad.log(den), -1.0))
    counts = positives.sum(axis=1)
    weights = positives / np.maximum(counts, 1)[:, None]
    return ad.scale(ad.row_sum(ad.mul(log_prob, tape.const(weights))), -1.0)


def _anchor_reduce(per_anchor: Var, anchors: np.ndarray, reduction: str) -> Var:
    if anchors.size == 0:
        return per_anchor.tape.const(0.0)
    n = per_anchor.shape[0]
    indicator = np.zeros((n, 1))
    indicator[anchors] = 1.0
    total = ad.total_sum(ad.mul(per_anchor, per_anchor.tape.const(indicator)))
    if reduction == "mean":
        return ad.scale(total, 1.0 / anchors.size)
    return total


def _dispatch(fn):
    """Run on the caller's tape when given a Var, else on a fresh one."""

    def wrapper(z, *args, **kwargs):
        if isinstance(z, Var):
            return fn(z, *args, **kwargs)
        tape = Tape()
        return float(fn(tape.const(ad.as_f64(z)), *args, **kwargs).data)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_dispatch
def loss_mem(z, idx: MultiviewIndex, mask: PositiveMask, cfg: LossConfig):
    """Supervised contrastive term over labeled anchors, full-batch negatives."""
    anchors = idx.anchors_labeled
    if anchors.size == 0:
        return z.tape.const(0.0)
    per_anchor = _per_anchor_losses(z, mask.positives, cfg.tau)
    return _anchor_reduce(per_anchor, anchors, cfg.reduction)


@_dispatch
def loss_unlab(z, idx: MultiviewIndex, cfg: LossConfig):
    """Self-supervised term over unlabeled anchors; positive is the paired view."""
    anchors = idx.anchors_unlabeled
    if anchors.size == 0:
        return z.tape.const(0.0)
    n = idx.n_views
    pos = np.zeros((n, n), dtype=bool)
    pos[anchors, idx.pair[anchors]] = True
    per_anchor = _per_anchor_losses(z, pos, cfg.tau)
    return _anchor_reduce(per_anchor, anchors, cfg.reduction)


@_dispatch
def semicon(z, idx: MultiviewIndex, mask: PositiveMask, cfg: LossConfig):
    """Unified loss: labeled term + alpha * unlabeled term.

    ``galpha_on="labeled"`` moves the weight onto the labeled term
    instead (the per-anchor-weight reading of the unified form).
    """
    lm = loss_mem(z, idx, mask, cfg)
    lu = loss_unlab(z, idx, cfg)
    if cfg.galpha_on == "labeled":
        return ad.add(ad.scale(lm, cfg.alpha), lu)
    return ad.add(lm, ad.scale(lu, cfg.alpha))


@_dispatch
def cross_entropy(logits, labels):
    """Mean over rows of -log softmax(logits)[label]."""
    n, n_classes = logits.shape
    if n == 0:
        raise ValueError("cross_entropy: empty batch")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"label out of range for {n_classes} classes")
    tape = logits.tape
    stab = tape.const(-logits.data.max(axis=1, keepdims=True))
    shifted = ad.add(logits, stab)
    log_den = ad.log(ad.row_sum(ad.exp(shifted)))
    log_prob = ad.add(shifted, ad.scale(log_den, -1.0))
    picked = ad.gather(log_prob, np.arange(n) * n_classes + labels)
    return ad.scale(ad.mean(picked), -1.0)
