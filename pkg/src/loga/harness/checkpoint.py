"""Binary checkpoint container.

Layout (little-endian)::

    b"LOGA" | uint32 version | uint32 record count | record * count

    record = uint32 name length | utf-8 name | uint8 dtype tag | uint32 rank
             | rank * uint32 extents | payload

dtype tags: 0 float32, 1 float64, 2 int64, 3 uint8 (raw bytes, used for JSON).
Tensor records (``param/*`` then ``buffer/*``) come first, followed by the
optimizer and RNG state records (``adam/*``, ``state/*``).
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from ..config import ModelConfig, TrainConfig, from_dict, to_dict
from ..params import ParameterStore

MAGIC = b"LOGA"
VERSION = 1
_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<i8"): 2, np.dtype("u1"): 3}
_DTYPES = {v: k for k, v in _TAGS.items()}


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    train_config: TrainConfig
    model_config: ModelConfig
    store: ParameterStore
    epoch: int = 0
    step: int = 0
    adam_t: int = 0
    adam_m: Dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: Dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: Optional[dict] = None
    history: List[dict] = field(default_factory=list)


def _encode(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    if arr.dtype.kind == "f" and arr.dtype.itemsize == 4:
        dt = np.dtype("<f4")
    elif arr.dtype.kind == "f":
        dt = np.dtype("<f8")
    elif arr.dtype.kind in "iu" and arr.dtype != np.uint8:
        dt = np.dtype("<i8")
    if dt not in _TAGS:
        raise CheckpointError(f"record {name!r}: unsupported dtype {arr.dtype}")
    raw = name.encode()
    head = struct.pack("<I", len(raw)) + raw + struct.pack("<BI", _TAGS[dt], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=dt).tobytes()


def _json_bytes(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode(), dtype=np.uint8)


def _records(ckpt: Checkpoint) -> List[Tuple[str, np.ndarray]]:
    recs = [(f"param/{n}", p.data) for n, p in ckpt.store.items()]
    recs += [(f"buffer/{n}", b) for n, b in ckpt.store.buffers.items()]
    recs += [(f"adam/m/{n}", a) for n, a in ckpt.adam_m.items()]
    recs += [(f"adam/v/{n}", a) for n, a in ckpt.adam_v.items()]
    recs += [
        ("adam/t", np.array(ckpt.adam_t, dtype=np.int64)),
        ("state/epoch", np.array(ckpt.epoch, dtype=np.int64)),
        ("state/step", np.array(ckpt.step, dtype=np.int64)),
        ("state/train_config", _json_bytes(to_dict(ckpt.train_config))),
        ("state/model_config", _json_bytes(to_dict(ckpt.model_config))),
        ("state/rng", _json_bytes(ckpt.rng_state)),
        ("state/history", _json_bytes(ckpt.history)),
    ]
    return recs


def dumps(ckpt: Checkpoint) -> bytes:
    recs = _records(ckpt)
    out = io.BytesIO()
    out.write(MAGIC + struct.pack("<II", VERSION, len(recs)))
    for name, arr in recs:
        out.write(_encode(name, arr))
    return out.getvalue()


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> None:
    Path(path).write_bytes(dumps(ckpt))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError("checkpoint is truncated")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(raw: bytes) -> Checkpoint:
    r = _Reader(raw)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (expected {VERSION})")
    recs: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode()
        tag, rank = r.unpack("<BI")
        if tag not in _DTYPES:
            raise CheckpointError(f"record {name!r}: unknown dtype tag {tag}")
        shape = r.unpack(f"<{rank}I") if rank else ()
        dt = _DTYPES[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        recs[name] = np.frombuffer(r.take(nbytes), dtype=dt).reshape(shape).copy()
    if r.pos != len(raw):
        raise CheckpointError(f"{len(raw) - r.pos} trailing bytes after the last record")

    def js(name):
        return json.loads(recs[name].tobytes().decode())

    train_cfg = from_dict(TrainConfig, js("state/train_config"))
    model_cfg = from_dict(ModelConfig, js("state/model_config"))
    params = {k[6:]: v for k, v in recs.items() if k.startswith("param/")}
    dtype = next(iter(params.values())).dtype if params else np.float32
    store = ParameterStore(dtype)
    for name, value in params.items():
        store.add(name, value)
    for name, value in recs.items():
        if name.startswith("buffer/"):
            store.add_buffer(name[7:], value)
    return Checkpoint(
        train_config=train_cfg,
        model_config=model_cfg,
        store=store,
        epoch=int(recs["state/epoch"]),
        step=int(recs["state/step"]),
        adam_t=int(recs["adam/t"]),
        adam_m={k[7:]: v for k, v in recs.items() if k.startswith("adam/m/")},
        adam_v={k[7:]: v for k, v in recs.items() if k.startswith("adam/v/")},
        rng_state=js("state/rng"),
        history=js("state/history"),
    )


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    return loads(Path(path).read_bytes())
