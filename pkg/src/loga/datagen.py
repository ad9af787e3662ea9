"""Synthetic noisy-tracklet benchmark and its on-disk container.

Each identity owns a procedural template: a figure split into horizontal
body-part bands, each band with its own intensity and stripe texture, on a
flat background. A tracklet views the template through its camera's fixed
photometric transform plus per-frame sensor noise (the "clean render"),
and each frame then receives at most one corruption:

* ``occluded``   - a dark rectangle overwrites part of the frame
* ``misaligned`` - the frame is shifted by up to ``max_shift`` pixels, zero filled
* ``id_switch``  - the frame is replaced by a render of another identity

Container layout (all integers little-endian)::

    <root>/manifest.json          human-readable JSON, keys sorted
    <root>/chunk_00000.bin ...    one file per ``clips_per_chunk`` clips

    chunk := header payload crc
    header  = b"LOGACHNK" (8 bytes) | uint32 format version | uint32 clip count
    payload = clip count x (L * Cc * H * W) float32, clip-major, then frame,
              channel, row, column
    crc     = uint32 CRC-32 (zlib) of header + payload

Every chunk except the last holds exactly ``clips_per_chunk`` clips.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import ConfigError, DatasetConfig, to_dict
from .encoder import Clip

FORMAT_VERSION = 1
CHUNK_MAGIC = b"LOGACHNK"
HEADER = struct.Struct("<8sII")
CRC = struct.Struct("<I")
MANIFEST = "manifest.json"
FLAGS = ("clean", "occluded", "misaligned", "id_switch")

# seed stream tags for SeedSequence([seed, tag, ...])
_TEMPLATE, _TRACKLET, _NOISE, _CORRUPT = 1, 2, 3, 4


class DatasetError(Exception):
    """Base class for dataset container failures."""


class ManifestError(DatasetError):
    """The manifest is malformed or its split assignment is inconsistent."""


class DatasetVersionError(DatasetError):
    pass


class ChecksumError(DatasetError):
    pass


class TruncatedChunkError(DatasetError):
    pass


# ---------------------------------------------------------------------------
# rendering


def _rng(cfg: DatasetConfig, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, *key]))


def identity_template(cfg: DatasetConfig, identity: int) -> np.ndarray:
    """Noise-free appearance of one identity, [Cc, H, W] in [0, 1]."""
    rng = _rng(cfg, _TEMPLATE, identity)
    H, W, C = cfg.height, cfg.width, cfg.channels
    img = np.full((C, H, W), 0.45)
    bounds = np.linspace(0, H, cfg.body_parts + 1).round().astype(int)
    margin = max(1, W // 5)
    rows = np.arange(H)[:, None]
    cols = np.arange(W)[None, :]
    for part in range(cfg.body_parts):
        top, bottom = bounds[part], bounds[part + 1]
        # the top band (head) is narrower than the torso/leg bands
        inset = margin + (W // 8 if part == 0 else 0)
        left, right = inset, W - inset
        base = rng.uniform(0.1, 0.95, size=C)
        amplitude = rng.uniform(0.1, 0.35)
        freq = rng.integers(0, 5)
        phase = rng.uniform(0, 2 * np.pi)
        axis_coord = rows if rng.integers(2) == 0 else cols
        texture = amplitude * np.sin(2 * np.pi * freq * axis_coord / max(W, 1) + phase)
        band = np.clip(base[:, None, None] + texture[None], 0.0, 1.0)
        band = np.broadcast_to(band, (C, H, W))
        img[:, top:bottom, left:right] = band[:, top:bottom, left:right]
    return img


def camera_transform(img: np.ndarray, cfg: DatasetConfig, camera: int) -> np.ndarray:
    contrast = cfg.noise.camera_contrast[camera]
    brightness = cfg.noise.camera_brightness[camera]
    return (img - 0.5) * contrast + 0.5 + brightness


def _tracklet_uid(cfg: DatasetConfig, identity: int, t: int) -> int:
    return identity * cfg.tracklets_per_identity + t


def _tracklet_gain(cfg: DatasetConfig, uid: int) -> float:
    return float(_rng(cfg, _TRACKLET, uid).uniform(0.9, 1.1))


def _render(cfg: DatasetConfig, template: np.ndarray, camera: int, gain: float, uid: int, frame: int) -> np.ndarray:
    img = camera_transform(template * gain, cfg, camera)
    if cfg.noise.sensor_noise > 0:
        img = img + _rng(cfg, _NOISE, uid, frame).normal(0.0, cfg.noise.sensor_noise, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def render_clean_frame(cfg: DatasetConfig, identity: int, tracklet: int, frame: int) -> np.ndarray:
    """The deterministic uncorrupted frame ``frame`` of tracklet ``tracklet`` of ``identity``."""
    uid = _tracklet_uid(cfg, identity, tracklet)
    camera = tracklet % cfg.num_cameras
    return _render(cfg, identity_template(cfg, identity), camera, _tracklet_gain(cfg, uid), uid, frame)


def _draw_corruption(cfg: DatasetConfig, rng: np.random.Generator, identity: int, candidates: Sequence[int]) -> dict:
    ns = cfg.noise
    probs = np.array([ns.p_occlude, ns.p_misalign, ns.p_idswitch])
    u = rng.random()
    kind = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    if kind == 0:
        h = int(min(cfg.height, rng.integers(ns.occluder_height[0], ns.occluder_height[1] + 1)))
        w = int(min(cfg.width, rng.integers(ns.occluder_width[0], ns.occluder_width[1] + 1)))
        y = int(rng.integers(0, cfg.height - h + 1))
        x = int(rng.integers(0, cfg.width - w + 1))
        fill = float(rng.uniform(*ns.occluder_intensity))
        return {"flag": "occluded", "rect": [y, x, h, w], "fill": fill}
    if kind == 1:
        while True:
            dy, dx = (int(v) for v in rng.integers(-ns.max_shift, ns.max_shift + 1, size=2))
            if dy or dx:
                return {"flag": "misaligned", "shift": [dy, dx]}
    if kind == 2:
        others = [c for c in candidates if c != identity]
        return {"flag": "id_switch", "source": int(others[rng.integers(len(others))])}
    return {"flag": "clean"}


def shift_frame(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Translate by (dy, dx) pixels with zero fill."""
    out = np.zeros_like(img)
    H, W = img.shape[-2:]
    src_y = slice(max(0, -dy), min(H, H - dy))
    dst_y = slice(max(0, dy), min(H, H + dy))
    src_x = slice(max(0, -dx), min(W, W - dx))
    dst_x = slice(max(0, dx), min(W, W + dx))
    out[..., dst_y, dst_x] = img[..., src_y, src_x]
    return out


def generate_tracklet(
    cfg: DatasetConfig, identity: int, tracklet: int, templates: Optional[Dict[int, np.ndarray]] = None
) -> Tuple[np.ndarray, List[dict]]:
    """All frames [F, Cc, H, W] of one tracklet plus the applied corruption per frame."""
    templates = templates if templates is not None else {}

    def template(i):
        if i not in templates:
            templates[i] = identity_template(cfg, i)
        return templates[i]

    uid = _tracklet_uid(cfg, identity, tracklet)
    camera = tracklet % cfg.num_cameras
    gain = _tracklet_gain(cfg, uid)
    rng = _rng(cfg, _CORRUPT, uid)
    same_split = _split_identities(cfg, identity)
    frames, events = [], []
    for f in range(cfg.frames_per_tracklet):
        event = _draw_corruption(cfg, rng, identity, same_split)
        if event["flag"] == "id_switch":
            img = _render(cfg, template(event["source"]), camera, 1.0, uid, f)
        else:
            img = _render(cfg, template(identity), camera, gain, uid, f)
        if event["flag"] == "occluded":
            y, x, h, w = event["rect"]
            img[:, y : y + h, x : x + w] = event["fill"]
        elif event["flag"] == "misaligned":
            img = shift_frame(img, *event["shift"])
        frames.append(img)
        events.append(event)
    return np.stack(frames), events


def _split_identities(cfg: DatasetConfig, identity: int) -> range:
    if identity < cfg.train_identities:
        return range(cfg.train_identities)
    return range(cfg.train_identities, cfg.num_identities)


def split_into_clips(
    frames: np.ndarray,
    clip_len: int,
    flags: Optional[Sequence[str]] = None,
    identity: int = -1,
    camera: int = -1,
    tracklet_id: int = -1,
) -> List[Clip]:
    """Consecutive non-overlapping windows; a short tail is completed by repeating its last frame."""
    n = len(frames)
    if n < 1:
        raise ValueError("cannot split an empty tracklet")
    flags = list(flags) if flags is not None else ["clean"] * n
    clips = []
    for start in range(0, n, clip_len):
        idx = list(range(start, min(start + clip_len, n)))
        idx += [idx[-1]] * (clip_len - len(idx))
        clips.append(
            Clip(
                frames=np.asarray(frames)[idx],
                identity=identity,
                camera=camera,
                flags=tuple(flags[i] for i in idx),
                tracklet_id=tracklet_id,
            )
        )
    return clips


def _split_of(cfg: DatasetConfig, identity: int, tracklet: int) -> str:
    if identity < cfg.train_identities:
        return "train"
    return "query" if tracklet < cfg.num_cameras else "gallery"


def validate_splits(records: Sequence[dict]) -> None:
    """Every query identity needs a gallery tracklet from a different camera."""
    gallery: Dict[int, set] = {}
    for r in records:
        if r["split"] not in ("train", "query", "gallery"):
            raise ManifestError(f"clip {r['clip_id']}: unknown split {r['split']!r}")
        if r["split"] == "gallery":
            gallery.setdefault(r["identity"], set()).add(r["camera"])
    for r in records:
        if r["split"] == "query":
            cams = gallery.get(r["identity"], set())
            if not cams - {r["camera"]}:
                raise ManifestError(
                    f"query identity {r['identity']} (camera {r['camera']}) has no gallery tracklet on another camera"
                )


# ---------------------------------------------------------------------------
# container


def _write_chunk(path: Path, clips: Sequence[np.ndarray]) -> None:
    header = HEADER.pack(CHUNK_MAGIC, FORMAT_VERSION, len(clips))
    payload = np.ascontiguousarray(np.stack(clips), dtype="<f4").tobytes()
    crc = zlib.crc32(payload, zlib.crc32(header))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
        fh.write(CRC.pack(crc))


def generate_dataset(cfg: DatasetConfig, out_dir: Union[str, Path]) -> Path:
    """Write the benchmark described by ``cfg`` to ``out_dir`` (deterministic in ``cfg.seed``)."""
    cfg.validate()
    if cfg.noise.p_misalign > 0 and cfg.noise.max_shift < 1:
        raise ConfigError("misalignment needs max_shift >= 1")
    if cfg.noise.p_idswitch > 0 and min(cfg.train_identities, cfg.num_identities - cfg.train_identities) < 2:
        raise ConfigError("identity switches need at least two identities in each split")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    templates: Dict[int, np.ndarray] = {}
    records, pending, chunks = [], [], []

    def flush():
        name = f"chunk_{len(chunks):05d}.bin"
        _write_chunk(out / name, pending)
        chunks.append({"file": name, "clips": len(pending)})
        pending.clear()

    for identity in range(cfg.num_identities):
        for t in range(cfg.tracklets_per_identity):
            frames, events = generate_tracklet(cfg, identity, t, templates)
            uid = _tracklet_uid(cfg, identity, t)
            camera = t % cfg.num_cameras
            flags = [e["flag"] for e in events]
            clips = split_into_clips(frames, cfg.clip_len, flags, identity, camera, uid)
            for k, clip in enumerate(clips):
                start = k * cfg.clip_len
                idx = [min(start + j, len(frames) - 1) for j in range(cfg.clip_len)]
                records.append(
                    {
                        "clip_id": len(records),
                        "tracklet_id": uid,
                        "identity": identity,
                        "camera": camera,
                        "split": _split_of(cfg, identity, t),
                        "flags": list(clip.flags),
                        "corruptions": [events[i] for i in idx],
                        "chunk": len(chunks),
                        "index": len(pending),
                    }
                )
                pending.append(clip.frames.astype(np.float32))
                if len(pending) == cfg.clips_per_chunk:
                    flush()
    if pending:
        flush()
    validate_splits(records)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": to_dict(cfg),
        "clips_per_identity": len(records) // cfg.num_identities,
        "num_clips": len(records),
        "chunks": chunks,
        "clips": records,
    }
    with open(out / MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return out


def read_manifest(path: Union[str, Path]) -> dict:
    root = Path(path)
    try:
        with open(root / MANIFEST) as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise ManifestError(f"no {MANIFEST} in {root}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{root / MANIFEST} is not valid JSON: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise DatasetVersionError(f"dataset format version {version!r} is not supported (expected {FORMAT_VERSION})")
    for key in ("config", "chunks", "clips"):
        if key not in manifest:
            raise ManifestError(f"manifest is missing {key!r}")
    validate_splits(manifest["clips"])
    return manifest


def read_chunk(path: Path, clip_shape: Tuple[int, ...]) -> np.ndarray:
    """Verify and decode one chunk file into [count, *clip_shape] float32."""
    raw = Path(path).read_bytes()
    name = Path(path).name
    if len(raw) < HEADER.size + CRC.size:
        raise TruncatedChunkError(f"chunk {name}: {len(raw)} bytes is shorter than header and checksum")
    magic, version, count = HEADER.unpack_from(raw)
    if magic != CHUNK_MAGIC:
        raise DatasetError(f"chunk {name}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DatasetVersionError(f"chunk {name}: format version {version} is not supported")
    per_clip = int(np.prod(clip_shape)) * 4
    expected = HEADER.size + count * per_clip + CRC.size
    if len(raw) != expected:
        raise TruncatedChunkError(f"chunk {name}: {len(raw)} bytes, expected {expected} for {count} clips")
    body = raw[: -CRC.size]
    (stored,) = CRC.unpack_from(raw, len(body))
    if zlib.crc32(body) != stored:
        raise ChecksumError(f"chunk {name}: checksum mismatch")
    data = np.frombuffer(body, dtype="<f4", offset=HEADER.size)
    return data.astype(np.float32).reshape(count, *clip_shape)


def _clip_shape(cfg: dict) -> Tuple[int, ...]:
    return (cfg["clip_len"], cfg["channels"], cfg["height"], cfg["width"])


def load_dataset(path: Union[str, Path]) -> Tuple[dict, Iterator[Clip]]:
    """Open a dataset directory; clips are streamed chunk by chunk with checksums verified."""
    root = Path(path)
    manifest = read_manifest(root)
    shape = _clip_shape(manifest["config"])
    by_chunk: Dict[int, List[dict]] = {}
    for r in manifest["clips"]:
        by_chunk.setdefault(r["chunk"], []).append(r)

    def stream() -> Iterator[Clip]:
        for k, chunk in enumerate(manifest["chunks"]):
            data = read_chunk(root / chunk["file"], shape)
            if len(data) != chunk["clips"]:
                raise ManifestError(f"chunk {chunk['file']}: holds {len(data)} clips, manifest says {chunk['clips']}")
            for r in by_chunk.get(k, []):
                yield Clip(
                    frames=data[r["index"]],
                    identity=r["identity"],
                    camera=r["camera"],
                    flags=tuple(r["flags"]),
                    clip_id=r["clip_id"],
                    tracklet_id=r["tracklet_id"],
                )

    return manifest, stream()


@dataclass
class Dataset:
    """A fully loaded dataset: pixel array plus per-clip labels."""

    manifest: dict
    frames: np.ndarray  # [N, L, Cc, H, W]
    identity: np.ndarray
    camera: np.ndarray
    tracklet: np.ndarray
    split: np.ndarray
    flags: List[Tuple[str, ...]]

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Dataset":
        manifest, clips = load_dataset(path)
        clips = list(clips)
        order = np.argsort([c.clip_id for c in clips], kind="stable")
        clips = [clips[i] for i in order]
        by_id = {r["clip_id"]: r for r in manifest["clips"]}
        return cls(
            manifest=manifest,
            frames=np.stack([c.frames for c in clips]),
            identity=np.array([c.identity for c in clips]),
            camera=np.array([c.camera for c in clips]),
            tracklet=np.array([c.tracklet_id for c in clips]),
            split=np.array([by_id[c.clip_id]["split"] for c in clips]),
            flags=[tuple(c.flags) for c in clips],
        )

    @property
    def config(self) -> dict:
        return self.manifest["config"]

    def __len__(self) -> int:
        return len(self.frames)

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.split == split)

    def clip(self, i: int) -> Clip:
        return Clip(self.frames[i], int(self.identity[i]), int(self.camera[i]), self.flags[i], i, int(self.tracklet[i]))

    def train_labels(self) -> Tuple[np.ndarray, np.ndarray]:
        """(clip indices of the train split, contiguous class labels 0..C-1)."""
        idx = self.indices("train")
        classes = np.unique(self.identity[idx])
        return idx, np.searchsorted(classes, self.identity[idx])

    @property
    def num_train_classes(self) -> int:
        return len(np.unique(self.identity[self.indices("train")]))

    def tracklets(self, split: str) -> List[np.ndarray]:
        """Clip indices grouped per tracklet (ordered by tracklet id) within a split."""
        idx = self.indices(split)
        return [idx[self.tracklet[idx] == t] for t in np.unique(self.tracklet[idx])]


def pk_batch_sampler(labels: Sequence[int], P: int, K: int, seed: int) -> Iterator[np.ndarray]:
    """Endless stream of index batches: P distinct identities x K clips each.

    Identities with fewer than K clips are sampled with replacement.
    """
    labels = np.asarray(labels)
    ids = np.unique(labels)
    if len(ids) < P:
        raise ConfigError(f"need at least P={P} identities, found {len(ids)}")
    members = {i: np.flatnonzero(labels == i) for i in ids}
    rng = np.random.default_rng(seed)
    while True:
        batch = []
        for i in rng.choice(ids, size=P, replace=False):
            pool = members[i]
            batch.extend(rng.choice(pool, size=K, replace=len(pool) < K))
        yield np.asarray(batch, dtype=np.intp)
