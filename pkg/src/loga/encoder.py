"""Small per-frame convolutional encoder and the raw-pixel LAQ input.

The encoder maps every frame independently to a D-dimensional embedding:
conv(Cc->8, 3x3, s2) -> ReLU -> conv(8->16, 3x3, s2) -> ReLU -> global
average pool -> linear(16->D). Both convolutions use one pixel of zero
padding so tiny frames (e.g. 8x4) still produce a non-empty map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .config import ConfigError, ModelConfig
from .params import ParameterStore, uniform_init
from .tensor import Tensor


@dataclass
class Clip:
    """A fixed-length window of one tracklet.

    ``frames`` has shape [L, Cc, H, W] with pixels in [0, 1]. ``flags`` marks the
    ground-truth corruption of each frame and is never read by the model.
    """

    frames: np.ndarray
    identity: int
    camera: int
    flags: Sequence[str] = ()
    clip_id: int = -1
    tracklet_id: int = -1

    def __post_init__(self):
        if not self.flags:
            self.flags = ("clean",) * len(self.frames)
        if len(self.flags) != len(self.frames):
            raise ValueError(f"{len(self.flags)} flags for {len(self.frames)} frames")


def init_encoder_params(store: ParameterStore, cfg: ModelConfig, rng: np.random.Generator) -> None:
    c1, c2 = cfg.encoder_channels
    fan1 = cfg.channels * 9
    fan2 = c1 * 9
    store.add("encoder.conv1.weight", uniform_init(rng, (c1, cfg.channels, 3, 3), fan1))
    store.add("encoder.conv1.bias", uniform_init(rng, (c1,), fan1))
    store.add("encoder.conv2.weight", uniform_init(rng, (c2, c1, 3, 3), fan2))
    store.add("encoder.conv2.bias", uniform_init(rng, (c2,), fan2))
    store.add("encoder.fc.weight", uniform_init(rng, (cfg.feature_dim, c2), c2))
    store.add("encoder.fc.bias", uniform_init(rng, (cfg.feature_dim,), c2))


def _check_frames(frames: np.ndarray, cfg: ModelConfig) -> None:
    expected = (cfg.clip_len, cfg.channels, cfg.height, cfg.width)
    if frames.ndim != 5 or frames.shape[1:] != expected:
        raise ConfigError(f"clip batch {frames.shape} does not match configured [B, L, Cc, H, W] = [B, *{expected}]")


def encode_frames(frames: Tensor, store: ParameterStore) -> Tensor:
    """[N, Cc, H, W] -> [N, D]."""
    h = T.bias_add(T.conv2d(frames, store["encoder.conv1.weight"], stride=2, padding=1), store["encoder.conv1.bias"], axis=1)
    h = T.relu(h)
    h = T.bias_add(T.conv2d(h, store["encoder.conv2.weight"], stride=2, padding=1), store["encoder.conv2.bias"], axis=1)
    h = T.relu(h)
    h = T.mean(h, axis=(2, 3))
    return T.linear(h, store["encoder.fc.weight"], store["encoder.fc.bias"])


def encode_batch(clips: np.ndarray, store: ParameterStore, cfg: ModelConfig) -> Tensor:
    """Encode a batch of clips [B, L, Cc, H, W] to features E of shape [B, D, L]."""
    _check_frames(clips, cfg)
    b, l = clips.shape[:2]
    frames = Tensor(clips.reshape(b * l, *clips.shape[2:]), dtype=store.dtype)
    emb = encode_frames(frames, store)
    return T.transpose(T.reshape(emb, (b, l, cfg.feature_dim)), (0, 2, 1))


def encode_clip(clip: Clip, store: ParameterStore, cfg: ModelConfig, mode: str = "eval") -> Tensor:
    """Holistic frame features E [D, L] for one clip; column i embeds frame i.

    The encoder has no mode-dependent layers; ``mode`` is accepted for a
    uniform call signature.
    """
    del mode
    e = encode_batch(np.asarray(clip.frames)[None], store, cfg)
    return T.reshape(e, (cfg.feature_dim, cfg.clip_len))


def laq_input_batch(clips: np.ndarray) -> np.ndarray:
    """[B, L, Cc, H, W] -> [B, L, H*W]: channel mean, then row-major flatten per frame."""
    b, l = clips.shape[:2]
    return clips.mean(axis=2).reshape(b, l, -1)


def flatten_for_laq(clip: Clip) -> Tensor:
    """The LAQ input for one clip: row i is frame i collapsed to one channel and flattened."""
    frames = np.asarray(clip.frames)
    dtype = frames.dtype if frames.dtype in T.FLOAT_DTYPES else T.DEFAULT_DTYPE
    return Tensor(laq_input_batch(frames[None])[0], dtype=dtype)
