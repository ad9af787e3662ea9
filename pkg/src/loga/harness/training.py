"""The training loop, descriptor extraction and dataset-level evaluation."""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from ..assembler import Assembly, assemble_batch, build_model
from ..config import DataError, TrainConfig
from ..datagen import Dataset, pk_batch_sampler, split_into_clips
from ..objectives import batch_loss
from ..tensor import Tensor
from .checkpoint import Checkpoint, save_checkpoint
from .metrics import EvalResult, cosine_similarity_matrix, evaluate_rankings
from .optim import Adam, lr_at

logger = logging.getLogger(__name__)


class NonFiniteLossError(RuntimeError):
    """Training produced a NaN/inf loss; carries the offending batch."""

    def __init__(self, message: str, batch: dict):
        super().__init__(message)
        self.batch = batch


def initial_checkpoint(cfg: TrainConfig, dataset: Dataset) -> Checkpoint:
    c = dataset.config
    mcfg = cfg.model_config(c["height"], c["width"], c["channels"], dataset.num_train_classes)
    if c["clip_len"] != cfg.clip_len:
        raise DataError(f"dataset clip length {c['clip_len']} differs from configured {cfg.clip_len}")
    store = build_model(mcfg, seed=cfg.seed, dtype=np.dtype(cfg.dtype))
    return Checkpoint(cfg, mcfg, store)


def iterations_per_epoch(num_clips: int, cfg: TrainConfig) -> int:
    return max(1, math.ceil(num_clips / (cfg.P * cfg.K)))


def train(
    cfg: TrainConfig,
    dataset: Dataset,
    out: Optional[Union[str, Path]] = None,
    on_epoch: Optional[Callable[[int, dict], None]] = None,
) -> Checkpoint:
    """Train from scratch; each step samples a P x K batch, assembles, and back-propagates the summed loss."""
    ckpt = initial_checkpoint(cfg, dataset)
    store, mcfg = ckpt.store, ckpt.model_config
    train_idx, labels = dataset.train_labels()
    if len(np.unique(labels)) < cfg.P:
        raise DataError(f"train split has {len(np.unique(labels))} identities, fewer than P={cfg.P}")
    sampler_rng = np.random.default_rng([cfg.seed, 1])
    batches = pk_batch_sampler(labels, cfg.P, cfg.K, sampler_rng)
    opt = Adam(store, weight_decay=cfg.weight_decay)
    frames = dataset.frames.astype(store.dtype, copy=False)
    iters = iterations_per_epoch(len(train_idx), cfg)
    step = 0
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg.lr, cfg.lr_decay, cfg.lr_decay_every)
        totals = np.zeros(3)
        for _ in range(iters):
            rows = next(batches)
            clip_idx = train_idx[rows]
            out_ = assemble_batch(frames[clip_idx], store, mcfg, cfg.strategy, "train")
            loss = batch_loss(
                out_.x, labels[rows], store, cfg.margin, np.random.default_rng([cfg.seed, 2, step]), cfg.mining
            )
            total = loss.total.item()
            if not np.isfinite(total):
                batch = {"epoch": epoch, "step": step, "clip_ids": clip_idx.tolist(), "labels": labels[rows].tolist()}
                if out is not None:
                    dump = Path(str(out) + f".nonfinite_step{step}.json")
                    dump.write_text(json.dumps(batch, indent=1))
                raise NonFiniteLossError(f"non-finite loss {total} at epoch {epoch} step {step}", batch)
            store.zero_grad()
            loss.total.backward()
            opt.step(lr)
            ckpt.history.append(loss.record(step=step, epoch=epoch, lr=lr))
            totals += (loss.id_loss, loss.triplet_loss, total)
            step += 1
        summary = dict(zip(("id_loss", "triplet_loss", "total"), (totals / iters).tolist()), epoch=epoch, lr=lr)
        logger.info("epoch %d lr %.2e id %.4f triplet %.4f total %.4f", epoch, lr, *(totals / iters))
        if on_epoch is not None:
            on_epoch(epoch, summary)
        ckpt.epoch, ckpt.step = epoch + 1, step
        if out is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            _sync(ckpt, opt, sampler_rng)
            save_checkpoint(ckpt, Path(str(out) + f".epoch{epoch + 1}"))
    _sync(ckpt, opt, sampler_rng)
    if out is not None:
        save_checkpoint(ckpt, out)
    return ckpt


def _sync(ckpt: Checkpoint, opt: Adam, rng: np.random.Generator) -> None:
    ckpt.adam_t = opt.t
    ckpt.adam_m = {k: v.copy() for k, v in opt.m.items()}
    ckpt.adam_v = {k: v.copy() for k, v in opt.v.items()}
    ckpt.rng_state = rng.bit_generator.state


def describe_clips(ckpt: Checkpoint, clips: np.ndarray, batch_size: int = 256) -> Assembly:
    """Eval-mode assembly of many clips [N, L, Cc, H, W]; returned tensors are concatenated numpy-backed results."""
    outs = []
    clips = np.asarray(clips, dtype=ckpt.store.dtype)
    for start in range(0, len(clips), batch_size):
        outs.append(assemble_batch(clips[start : start + batch_size], ckpt.store, ckpt.model_config, ckpt.train_config.strategy, "eval"))
    if len(outs) == 1:
        return outs[0]

    def cat(attr):
        parts = [getattr(o, attr) for o in outs]
        if parts[0] is None:
            return None
        return Tensor(np.concatenate([p.data for p in parts]))

    return Assembly(*(cat(a) for a in ("x", "p", "p_hat", "w_local", "w_global", "features")))


def extract_descriptor(tracklet: np.ndarray, ckpt: Checkpoint) -> np.ndarray:
    """Tracklet descriptor: mean of the per-clip descriptors of its L-frame clips."""
    tracklet = np.asarray(tracklet)
    if tracklet.ndim != 4 or len(tracklet) == 0:
        raise DataError(f"expected a non-empty tracklet [F, Cc, H, W], got shape {tracklet.shape}")
    clips = split_into_clips(tracklet, ckpt.model_config.clip_len)
    x = describe_clips(ckpt, np.stack([c.frames for c in clips])).x.data
    return x.mean(axis=0)


def tracklet_descriptors(ckpt: Checkpoint, dataset: Dataset, split: str):
    """(descriptors [T, D], identities [T], cameras [T]) for every tracklet in ``split``."""
    groups = dataset.tracklets(split)
    if not groups:
        return np.zeros((0, ckpt.model_config.feature_dim)), np.zeros(0, int), np.zeros(0, int)
    flat = np.concatenate(groups)
    x = describe_clips(ckpt, dataset.frames[flat]).x.data
    feats, start = [], 0
    for g in groups:
        feats.append(x[start : start + len(g)].mean(axis=0))
        start += len(g)
    first = [g[0] for g in groups]
    return np.stack(feats), dataset.identity[first], dataset.camera[first]


def evaluate(ckpt: Checkpoint, dataset: Dataset, max_rank: int = 20) -> EvalResult:
    """Rank gallery tracklets for every query tracklet by cosine similarity."""
    qf, qi, qc = tracklet_descriptors(ckpt, dataset, "query")
    gf, gi, gc = tracklet_descriptors(ckpt, dataset, "gallery")
    if len(qf) == 0 or len(gf) == 0:
        raise DataError("dataset needs non-empty query and gallery splits")
    result = evaluate_rankings(cosine_similarity_matrix(qf, gf), qi, gi, qc, gc, max_rank)
    if result.num_invalid:
        logger.warning("%d queries have no valid gallery match and were excluded", result.num_invalid)
    return result


def final_losses(ckpt: Checkpoint) -> List[float]:
    return [rec["total"] for rec in ckpt.history]
