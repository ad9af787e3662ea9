"""Strategy comparison and score-separation measurements on a generated benchmark."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence

import numpy as np

from ..config import STRATEGIES, TrainConfig
from ..datagen import Dataset
from .checkpoint import Checkpoint
from .metrics import EvalResult
from .training import describe_clips, evaluate, train

SUSPECT = ("id_switch", "occluded")


@dataclass
class Separation:
    """Fraction of corrupted clips whose corrupted frames score lower on average than their clean frames."""

    local: float
    global_: float
    num_clips: int


def score_separation(
    ckpt: Checkpoint, dataset: Dataset, splits: Sequence[str] = ("query", "gallery"), suspect: Iterable[str] = SUSPECT
) -> Separation:
    idx = np.concatenate([dataset.indices(s) for s in splits])
    out = describe_clips(ckpt, dataset.frames[idx])
    suspect = list(suspect)
    wins_local = wins_global = n = 0
    for row, i in enumerate(idx):
        flags = np.asarray(dataset.flags[i])
        bad = np.isin(flags, suspect)
        clean = flags == "clean"
        if not bad.any() or not clean.any():
            continue
        n += 1
        wl, wg = out.w_local.data[row], out.w_global.data[row]
        wins_local += wl[bad].mean() < wl[clean].mean()
        wins_global += wg[bad].mean() < wg[clean].mean()
    if n == 0:
        return Separation(float("nan"), float("nan"), 0)
    return Separation(wins_local / n, wins_global / n, n)


def run_strategies(
    dataset: Dataset,
    base: TrainConfig,
    strategies: Sequence[str] = STRATEGIES,
    max_rank: int = 20,
) -> Dict[str, EvalResult]:
    """Train and evaluate one model per strategy with otherwise identical settings."""
    results = {}
    for s in strategies:
        ckpt = train(dataclasses.replace(base, strategy=s), dataset)
        results[s] = evaluate(ckpt, dataset, max_rank)
    return results


def format_table(results: Dict[str, EvalResult], ranks: Sequence[int] = (1, 5, 20), baseline: Optional[str] = "mean_pool") -> str:
    head = "strategy".ljust(16) + "mAP".rjust(8) + "".join(f"R{k}".rjust(8) for k in ranks)
    lines = [head, "-" * len(head)]
    for name, r in results.items():
        lines.append(name.ljust(16) + f"{100 * r.map:8.1f}" + "".join(f"{100 * r.rank(k):8.1f}" for k in ranks))
    if baseline in results and "associative" in results:
        gain = 100 * (results["associative"].map - results[baseline].map)
        lines.append(f"associative - {baseline}: {gain:+.1f} mAP")
    return "\n".join(lines)
