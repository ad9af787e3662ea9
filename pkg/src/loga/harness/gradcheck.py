"""Finite-difference verification of every parameter gradient of the training loss."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np

from ..assembler import assemble_batch, build_model
from ..config import ModelConfig
from ..objectives import batch_loss


@dataclass
class GradcheckConfig:
    feature_dim: int = 8
    clip_len: int = 4
    height: int = 8
    width: int = 4
    channels: int = 1
    num_classes: int = 3
    clips_per_class: int = 2
    part_size: int = 10
    strategy: str = "associative"
    mining: str = "random"
    margin: float = 0.3
    step: float = 1e-5
    tolerance: float = 1e-4
    seed: int = 0
    dtype: str = "float64"


@dataclass
class GradcheckReport:
    errors: Dict[str, float]
    tolerance: float
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def format(self) -> str:
        width = max(len(n) for n in self.errors)
        lines = [f"{n:<{width}}  {e:.3e}  {'FAIL' if n in self.failures else 'ok'}" for n, e in self.errors.items()]
        verdict = "PASS" if self.passed else f"FAIL ({', '.join(self.failures)})"
        lines.append(f"max relative error {max(self.errors.values()):.3e}, tolerance {self.tolerance:.0e}: {verdict}")
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max|a - n| / max(max|a|, max|n|) over one parameter group.

    Discrepancies at or below the absolute ``floor`` count as zero: groups whose
    exact gradient vanishes (e.g. a shift that softmax ignores) only carry
    finite-difference round-off.
    """
    diff = float(np.abs(analytic - numeric).max(initial=0.0))
    if diff <= floor:
        return 0.0
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    return diff / scale


def central_difference(f: Callable[[], float], x: np.ndarray, h: float) -> np.ndarray:
    """Numerical gradient of ``f`` w.r.t. the array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def tiny_problem(cfg: GradcheckConfig):
    """A seeded model and batch sized for exhaustive finite differences."""
    mcfg = ModelConfig(
        clip_len=cfg.clip_len,
        height=cfg.height,
        width=cfg.width,
        channels=cfg.channels,
        feature_dim=cfg.feature_dim,
        part_size=cfg.part_size,
        num_classes=cfg.num_classes,
    )
    store = build_model(mcfg, seed=cfg.seed, dtype=np.dtype(cfg.dtype))
    rng = np.random.default_rng([cfg.seed, 99])
    # zero-initialised residual weights would hide the value-path gradients
    for name in ("gcq.fc.weight", "gcq.fc.bias"):
        store[name].data[...] = rng.uniform(-0.5, 0.5, store[name].shape)
    n = cfg.num_classes * cfg.clips_per_class
    clips = rng.random((n, cfg.clip_len, cfg.channels, cfg.height, cfg.width)).astype(cfg.dtype)
    labels = np.repeat(np.arange(cfg.num_classes), cfg.clips_per_class)
    return mcfg, store, clips, labels


def gradcheck(cfg: GradcheckConfig = GradcheckConfig()) -> GradcheckReport:
    mcfg, store, clips, labels = tiny_problem(cfg)
    buffers = {k: v.copy() for k, v in store.buffers.items()}

    def loss_value(backprop: bool = False) -> float:
        out = assemble_batch(clips, store, mcfg, cfg.strategy, "train")
        loss = batch_loss(out.x, labels, store, cfg.margin, np.random.default_rng([cfg.seed, 7]), cfg.mining)
        if backprop:
            store.zero_grad()
            loss.total.backward()
        return loss.total.item()

    loss_value(backprop=True)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in store.items()}
    errors = {}
    for name, p in store.items():
        numeric = central_difference(loss_value, p.data, cfg.step)
        errors[name] = relative_error(analytic[name], numeric)
    for k, v in buffers.items():
        store.buffers[k][...] = v
    failures = [n for n, e in errors.items() if not e < cfg.tolerance]
    return GradcheckReport(errors, cfg.tolerance, failures)

