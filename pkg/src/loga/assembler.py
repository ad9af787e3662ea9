"""Local-global associative assembling of frame features into a clip descriptor.

Shapes use B clips, L frames, D feature channels and M spatial parts. All
public functions accept either a single clip (no leading batch axis) or a
batch; batched inputs are what training uses so that batchnorm statistics
span every frame of every clip in the mini-batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import tensor as T
from .config import STRATEGIES, ConfigError, ModelConfig
from .encoder import encode_batch, init_encoder_params, laq_input_batch
from .params import ParameterStore, uniform_init
from .tensor import Tensor


@dataclass
class ImportanceScores:
    w_local: Tensor
    w_global: Tensor


@dataclass
class TrackletDescriptor:
    x: Tensor
    p: Tensor
    p_hat: Optional[Tensor] = None


@dataclass
class Assembly:
    """Everything one forward pass produces for a batch of clips."""

    x: Tensor
    p: Tensor
    p_hat: Optional[Tensor]
    w_local: Tensor
    w_global: Tensor
    features: Tensor


def init_laq_params(store: ParameterStore, cfg: ModelConfig, rng: np.random.Generator) -> None:
    L, S = cfg.clip_len, cfg.part_size
    store.add("laq.kernel", uniform_init(rng, (L, L, S), L * S))
    store.add("laq.mlp.weight", uniform_init(rng, (L, L), L))
    store.add("laq.mlp.bias", uniform_init(rng, (L,), L))


def init_gcq_params(store: ParameterStore, cfg: ModelConfig, rng: np.random.Generator) -> None:
    D = cfg.feature_dim
    for head in ("q", "k", "v"):
        store.add(f"gcq.{head}.weight", uniform_init(rng, (D, D), D))
        store.add_batchnorm(f"gcq.{head}.bn", D)
    # zero residual: training starts from the local-assembled prototype
    store.add("gcq.fc.weight", np.zeros((D, D)))
    store.add("gcq.fc.bias", np.zeros(D))


def _unbatched(t: Tensor, ndim: int) -> bool:
    return t.ndim == ndim - 1


def _add_batch(t: Tensor) -> Tensor:
    return T.reshape(t, (1, *t.shape))


def _drop_batch(t: Tensor) -> Tensor:
    return T.reshape(t, t.shape[1:])


# ---------------------------------------------------------------------------
# local aligned quality


def laq_scores(laq_input: Tensor, store: ParameterStore, cfg: ModelConfig) -> Tuple[Tensor, Tensor]:
    """Per-frame local-alignment scores from the stacked flattened frames.

    ``laq_input`` is [L, H*W] (or [B, L, H*W]). Returns ``(w_local, part_scores)``
    with shapes [L] and [M, L] (batched: [B, L] and [B, M, L]).
    """
    single = _unbatched(laq_input, 3)
    x = _add_batch(laq_input) if single else laq_input
    if x.shape[-1] < cfg.part_size:
        raise ConfigError(f"flattened frame length {x.shape[-1]} is shorter than part size {cfg.part_size}")
    # frames are conv channels; stride S makes the parts non-overlapping
    conv = T.conv1d(x, store["laq.kernel"], stride=cfg.part_size)  # [B, L, M]
    part_scores = T.transpose(conv, (0, 2, 1))  # [B, M, L]
    pooled = T.mean(part_scores, axis=1)  # frame-wise mean over parts -> [B, L]
    hidden = T.relu(T.linear(pooled, store["laq.mlp.weight"], store["laq.mlp.bias"]))
    w_local = T.softmax(hidden, axis=-1)
    if single:
        return _drop_batch(w_local), _drop_batch(part_scores)
    return w_local, part_scores


def prototype(E: Tensor, w_local: Tensor) -> Tensor:
    """Score-weighted sum of the frame features: [D, L] x [L] -> [D]."""
    single = _unbatched(E, 3)
    e = _add_batch(E) if single else E
    w = _add_batch(w_local) if single else w_local
    b, d, l = e.shape
    p = T.reshape(T.matmul(e, T.reshape(w, (b, l, 1))), (b, d))
    return _drop_batch(p) if single else p


# ---------------------------------------------------------------------------
# global correlated quality


def _project(store: ParameterStore, cfg: ModelConfig, head: str, x: Tensor, mode: str) -> Tensor:
    """Linear map followed by batchnorm over the D channels.

    ``x`` is either [B, D] (one vector per clip) or [B, D, L] (one column per frame).
    """
    w = store[f"gcq.{head}.weight"]
    if x.ndim == 2:
        y = T.linear(x, w)
        axis = 1
    else:
        y = T.matmul(w, x)
        axis = 1
    return T.batchnorm(
        y,
        store[f"gcq.{head}.bn.gamma"],
        store[f"gcq.{head}.bn.beta"],
        store.bn_stats(f"gcq.{head}.bn"),
        mode=mode,
        momentum=cfg.bn_momentum,
        eps=cfg.bn_eps,
        channel_axis=axis,
    )


def _correlate(E: Tensor, p: Tensor, store: ParameterStore, cfg: ModelConfig, mode: str) -> Tensor:
    b, d, l = E.shape
    q = _project(store, cfg, "q", p, mode)  # [B, D]
    K = _project(store, cfg, "k", E, mode)  # [B, D, L]
    logits = T.reshape(T.matmul(T.transpose(K, (0, 2, 1)), T.reshape(q, (b, d, 1))), (b, l))
    if cfg.scaled_attention:
        logits = T.scale(logits, 1.0 / np.sqrt(d))
    return T.softmax(logits, axis=-1)


def gcq_scores(E: Tensor, p: Tensor, store: ParameterStore, cfg: ModelConfig, mode: str = "eval") -> Tensor:
    """Per-frame global-correlation scores softmax(K^T q) with q from the prototype."""
    single = _unbatched(E, 3)
    if single:
        return _drop_batch(_correlate(_add_batch(E), _add_batch(p), store, cfg, mode))
    return _correlate(E, p, store, cfg, mode)


def _aggregate(E: Tensor, p: Tensor, w_global: Tensor, store: ParameterStore, cfg: ModelConfig, mode: str):
    b, d, l = E.shape
    V = _project(store, cfg, "v", E, mode)
    p_hat = T.reshape(T.matmul(V, T.reshape(w_global, (b, l, 1))), (b, d))
    x = T.add(p, T.linear(p_hat, store["gcq.fc.weight"], store["gcq.fc.bias"]))
    return x, p_hat


def assemble(
    E: Tensor,
    w_local: Tensor,
    w_global: Tensor,
    store: ParameterStore,
    cfg: ModelConfig,
    mode: str = "eval",
) -> TrackletDescriptor:
    """x = p + FC(V w_global), where p is the local-assembled prototype."""
    single = _unbatched(E, 3)
    e = _add_batch(E) if single else E
    wl = _add_batch(w_local) if single else w_local
    wg = _add_batch(w_global) if single else w_global
    p = prototype(e, wl)
    x, p_hat = _aggregate(e, p, wg, store, cfg, mode)
    if single:
        return TrackletDescriptor(_drop_batch(x), _drop_batch(p), _drop_batch(p_hat))
    return TrackletDescriptor(x, p, p_hat)


# ---------------------------------------------------------------------------
# assembling strategies


def _uniform(b: int, l: int, dtype) -> Tensor:
    return Tensor(np.full((b, l), 1.0 / l), dtype=dtype)


def assemble_batch(
    clips: np.ndarray,
    store: ParameterStore,
    cfg: ModelConfig,
    strategy: str = "associative",
    mode: str = "train",
) -> Assembly:
    """Run encoder, scoring and assembling for clips of shape [B, L, Cc, H, W]."""
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    clips = np.asarray(clips)
    E = encode_batch(clips, store, cfg)
    b, d, l = E.shape
    uniform = _uniform(b, l, store.dtype)

    if strategy == "mean_pool":
        x = T.mean(E, axis=2)
        return Assembly(x, x, None, uniform, uniform, E)

    if strategy == "gcq_only":
        p = T.mean(E, axis=2)
        w_global = _correlate(E, p, store, cfg, mode)
        x, p_hat = _aggregate(E, p, w_global, store, cfg, mode)
        return Assembly(x, p, p_hat, uniform, w_global, E)

    laq_in = Tensor(laq_input_batch(clips), dtype=store.dtype)
    w_local, _ = laq_scores(laq_in, store, cfg)
    p = prototype(E, w_local)

    if strategy == "laq_only":
        return Assembly(p, p, None, w_local, uniform, E)

    if strategy == "dual_branch":
        # the global branch ignores local scores and uses its own plain-mean query
        p_mean = T.mean(E, axis=2)
        w_global = _correlate(E, p_mean, store, cfg, mode)
        x_global, p_hat = _aggregate(E, p_mean, w_global, store, cfg, mode)
        return Assembly(T.add(p, x_global), p, p_hat, w_local, w_global, E)

    if strategy == "direct_connect":
        rescaled = T.column_scale(E, T.scale(w_local, float(l)))
        query = T.mean(rescaled, axis=2)  # equals p
        w_global = _correlate(rescaled, query, store, cfg, mode)
        x, p_hat = _aggregate(rescaled, query, w_global, store, cfg, mode)
        return Assembly(x, p, p_hat, w_local, w_global, E)

    w_global = _correlate(E, p, store, cfg, mode)
    x, p_hat = _aggregate(E, p, w_global, store, cfg, mode)
    return Assembly(x, p, p_hat, w_local, w_global, E)


def assemble_strategy(clip, store: ParameterStore, cfg: ModelConfig, strategy: str, mode: str = "eval") -> TrackletDescriptor:
    """Descriptor of a single :class:`~loga.encoder.Clip` under one assembling strategy."""
    a = assemble_batch(np.asarray(clip.frames)[None], store, cfg, strategy, mode)
    p_hat = None if a.p_hat is None else _drop_batch(a.p_hat)
    return TrackletDescriptor(_drop_batch(a.x), _drop_batch(a.p), p_hat)


def init_classifier_params(store: ParameterStore, cfg: ModelConfig, rng: np.random.Generator) -> None:
    D, C = cfg.feature_dim, cfg.num_classes
    store.add("classifier.weight", uniform_init(rng, (C, D), D))
    store.add("classifier.bias", uniform_init(rng, (C,), D))


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ParameterStore:
    """All learnable parameters and buffers for one model, deterministically from ``seed``."""
    rng = np.random.default_rng(seed)
    store = ParameterStore(dtype)
    init_encoder_params(store, cfg, rng)
    init_laq_params(store, cfg, rng)
    init_gcq_params(store, cfg, rng)
    init_classifier_params(store, cfg, rng)
    return store
