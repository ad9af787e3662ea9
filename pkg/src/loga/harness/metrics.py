"""Cosine-distance retrieval evaluation: CMC curve and mean average precision."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import List

import numpy as np


@dataclass
class EvalResult:
    cmc: np.ndarray  # cmc[k - 1] = rank-k accuracy
    map: float
    average_precision: List[float] = field(default_factory=list)
    num_queries: int = 0
    num_invalid: int = 0

    def rank(self, k: int) -> float:
        return float(self.cmc[min(k, len(self.cmc)) - 1])


def cosine_similarity_matrix(q: np.ndarray, g: np.ndarray) -> np.ndarray:
    qn = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-12)
    gn = g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-12)
    return qn @ gn.T


def evaluate_rankings(
    sim: np.ndarray,
    q_ids: np.ndarray,
    g_ids: np.ndarray,
    q_cams: np.ndarray,
    g_cams: np.ndarray,
    max_rank: int = 20,
) -> EvalResult:
    """CMC and mAP from a [num_query, num_gallery] similarity matrix.

    Gallery items are ranked by descending similarity, ties by ascending gallery
    index. Items sharing both identity and camera with the query are dropped.
    Queries left without any correct match are excluded and counted.
    AP is accumulated in exact rational arithmetic.
    """
    q_ids, g_ids = np.asarray(q_ids), np.asarray(g_ids)
    q_cams, g_cams = np.asarray(q_cams), np.asarray(g_cams)
    hits = np.zeros(max_rank, dtype=np.int64)
    aps: List[Fraction] = []
    invalid = 0
    for i in range(len(q_ids)):
        order = np.argsort(-sim[i], kind="stable")
        keep = ~((g_ids[order] == q_ids[i]) & (g_cams[order] == q_cams[i]))
        matches = g_ids[order][keep] == q_ids[i]
        positions = np.flatnonzero(matches)  # 0-based ranks of correct matches
        if len(positions) == 0:
            invalid += 1
            continue
        if positions[0] < max_rank:
            hits[positions[0] :] += 1
        ap = sum((Fraction(k + 1, int(r) + 1) for k, r in enumerate(positions)), Fraction(0))
        aps.append(ap / len(positions))
    valid = len(aps)
    if valid == 0:
        return EvalResult(np.zeros(max_rank), 0.0, [], len(q_ids), invalid)
    cmc = np.array([float(Fraction(int(h), valid)) for h in hits])
    mean_ap = float(sum(aps, Fraction(0)) / valid)
    return EvalResult(cmc, mean_ap, [float(a) for a in aps], len(q_ids), invalid)
