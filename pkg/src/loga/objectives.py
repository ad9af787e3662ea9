"""Identity cross-entropy, triplet ranking loss and their per-batch combination."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .config import MINING, ConfigError, DataError
from .params import ParameterStore
from .tensor import Tensor

logger = logging.getLogger(__name__)


def id_loss(x: Tensor, y, store: ParameterStore) -> Tensor:
    """-log softmax(FC(x))[y] for a single descriptor [D] or a batch [N, D].

    Returns a scalar for one descriptor and a length-N vector otherwise.
    """
    single = x.ndim == 1
    xb = T.reshape(x, (1, x.shape[0])) if single else x
    labels = np.atleast_1d(np.asarray(y, dtype=np.int64))
    num_classes = store["classifier.weight"].shape[0]
    if labels.shape[0] != xb.shape[0]:
        raise DataError(f"{labels.shape[0]} labels for {xb.shape[0]} descriptors")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise DataError(f"label out of range [0, {num_classes}): {labels.tolist()}")
    logits = T.linear(xb, store["classifier.weight"], store["classifier.bias"])
    nll = T.scale(T.pick(T.log_softmax(logits, axis=-1), labels), -1.0)
    return T.reshape(nll, ()) if single else nll


def triplet_loss(anchor: Tensor, positive: Tensor, negative: Tensor, margin: float) -> Tensor:
    """max(0, margin + |a - p| - |a - n|) with Euclidean distances (row-wise for 2-D inputs)."""
    if margin < 0:
        raise ConfigError(f"margin must be non-negative, got {margin}")
    d_pos = T.euclidean_distance(anchor, positive)
    d_neg = T.euclidean_distance(anchor, negative)
    return T.relu(T.add(T.sub(d_pos, d_neg), Tensor(np.full(d_pos.shape, margin), dtype=d_pos.dtype)))


def pairwise_distances(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * x @ x.T, 0)
    return np.sqrt(d2)


def sample_triplets(
    labels: Sequence[int],
    rng: np.random.Generator,
    mining: str = "random",
    descriptors: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Choose a positive and a negative partner for every anchor in the batch.

    Returns ``(pos_idx, neg_idx, valid)``; anchors without a same-identity
    partner or without any other identity get ``valid == False`` and index 0.
    Random mining draws, anchor by anchor, one positive then one negative.
    """
    if mining not in MINING:
        raise ConfigError(f"unknown triplet mining {mining!r}")
    labels = np.asarray(labels)
    n = len(labels)
    pos_idx = np.zeros(n, dtype=np.intp)
    neg_idx = np.zeros(n, dtype=np.intp)
    valid = np.zeros(n, dtype=bool)
    dist = pairwise_distances(descriptors) if mining == "batch_hard" else None
    idx = np.arange(n)
    for i in range(n):
        pos = idx[(labels == labels[i]) & (idx != i)]
        neg = idx[labels != labels[i]]
        if len(pos) == 0 or len(neg) == 0:
            continue
        valid[i] = True
        if mining == "random":
            pos_idx[i] = pos[rng.integers(len(pos))]
            neg_idx[i] = neg[rng.integers(len(neg))]
        else:
            pos_idx[i] = pos[np.argmax(dist[i, pos])]
            neg_idx[i] = neg[np.argmin(dist[i, neg])]
    return pos_idx, neg_idx, valid


@dataclass
class BatchLoss:
    total: Tensor
    id_loss: float
    triplet_loss: float
    skipped_anchors: int

    def record(self, **extra) -> dict:
        rec = dict(extra)
        rec.update(id_loss=self.id_loss, triplet_loss=self.triplet_loss, total=self.total.item())
        return rec


def batch_loss(
    x: Tensor,
    labels: Sequence[int],
    store: ParameterStore,
    margin: float,
    rng: np.random.Generator,
    mining: str = "random",
) -> BatchLoss:
    """(1/n) * sum_i [id_loss(x_i) + triplet(x_i, x_i+, x_i-)] over the batch rows of ``x``."""
    labels = np.asarray(labels)
    n = x.shape[0]
    ids = id_loss(x, labels, store)
    pos_idx, neg_idx, valid = sample_triplets(labels, rng, mining, x.data if mining == "batch_hard" else None)
    skipped = int((~valid).sum())
    if skipped:
        logger.warning("%d of %d anchors have no valid triplet partner", skipped, n)
    hinge = triplet_loss(x, T.take(x, pos_idx), T.take(x, neg_idx), margin)
    hinge = T.mul(hinge, Tensor(valid.astype(x.dtype), dtype=x.dtype))
    id_sum = T.sum(ids)
    trip_sum = T.sum(hinge)
    total = T.scale(T.add(id_sum, trip_sum), 1.0 / n)
    return BatchLoss(total, id_sum.item() / n, trip_sum.item() / n, skipped)
