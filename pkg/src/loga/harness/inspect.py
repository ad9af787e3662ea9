"""Per-frame importance score dumps.

Format: tab-separated text, one record per frame, preceded by a header line
and followed per clip by a ``#`` summary line::

    clip_id	frame	w_local	w_global	flag
    17	0	0.1021	0.0934
    17	1	0.0811	0.0312	id_switch
    # clip 17 w_local max/min 1.2590

The flag column is empty for clean frames. Lines starting with ``#`` are
comments. Scores may be multiplied by a display scale (e.g. 1000).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Sequence

import numpy as np

from ..datagen import Dataset
from .checkpoint import Checkpoint
from .training import describe_clips

HEADER = "clip_id\tframe\tw_local\tw_global\tflag"


@dataclass(frozen=True)
class ScoreRecord:
    clip_id: int
    frame: int
    w_local: float
    w_global: float
    flag: str = ""


def inspect_clips(ckpt: Checkpoint, dataset: Dataset, clip_ids: Sequence[int], scale: float = 1.0) -> List[ScoreRecord]:
    ids = [int(c) for c in clip_ids]
    for c in ids:
        if not 0 <= c < len(dataset):
            raise KeyError(f"unknown clip id {c}")
    out = describe_clips(ckpt, dataset.frames[ids])
    records = []
    for row, cid in enumerate(ids):
        for f, flag in enumerate(dataset.flags[cid]):
            records.append(
                ScoreRecord(
                    cid,
                    f,
                    float(out.w_local.data[row, f]) * scale,
                    float(out.w_global.data[row, f]) * scale,
                    "" if flag == "clean" else flag,
                )
            )
    return records


def format_score_dump(records: Iterable[ScoreRecord]) -> str:
    lines = [HEADER]
    by_clip = {}
    for r in records:
        by_clip.setdefault(r.clip_id, []).append(r)
    for cid, rows in by_clip.items():
        for r in rows:
            lines.append(f"{r.clip_id}\t{r.frame}\t{r.w_local:.6g}\t{r.w_global:.6g}\t{r.flag}")
        local = np.array([r.w_local for r in rows])
        ratio = local.max() / local.min() if local.min() > 0 else float("inf")
        lines.append(f"# clip {cid} w_local max/min {ratio:.4f}")
    return "\n".join(lines) + "\n"


def parse_score_dump(text: str) -> List[ScoreRecord]:
    records = []
    for line in text.splitlines():
        if not line or line.startswith("#") or line == HEADER:
            continue
        cols = line.split("\t")
        if len(cols) != 5:
            raise ValueError(f"malformed score record: {line!r}")
        records.append(ScoreRecord(int(cols[0]), int(cols[1]), float(cols[2]), float(cols[3]), cols[4]))
    return records
