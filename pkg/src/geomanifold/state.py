"""Model weights file (MFW1, little-endian):

  magic "MFW1", version u32 = 1,
  config snapshot: u32 byte length + UTF-8 text,
  stage marker u8 (1 = pretrained VAE, 2 = + transformer/dynamics, 3 = finetuned),
  tensor count u32; per tensor:
    name: u16 byte length + UTF-8,
    ndim u8, dims u32 each,
    fp64 payload, row-major.

Weights stay fp64 end to end; a save/load roundtrip is bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig, from_text, to_text
from .errors import FormatError, UsageError
from .model import SequenceModel, build_model
from .tensor import Tensor

MFW_MAGIC = b"MFW1"
MFW_VERSION = 1

STAGE_NAMES = {1: "pretrain", 2: "train", 3: "finetune"}


@dataclass
class ModelState:
    params: dict[str, np.ndarray]
    config_text: str
    stage: int

    def config(self) -> TrainConfig:
        return from_text(self.config_text)


def save_model(path, model: SequenceModel, stage: int):
    params = model.params()
    save_state(path, {k: v.data for k, v in params.items()}, to_text(model.cfg), stage)


def save_state(path, params: dict[str, np.ndarray], config_text: str, stage: int):
    if stage not in STAGE_NAMES:
        raise UsageError(f"stage must be 1, 2 or 3, got {stage}")
    blob = bytearray()
    blob += MFW_MAGIC
    blob += struct.pack("<I", MFW_VERSION)
    cfg_bytes = config_text.encode("utf-8")
    blob += struct.pack("<I", len(cfg_bytes))
    blob += cfg_bytes
    blob += struct.pack("<BI", stage, len(params))
    for name, arr in params.items():
        name_bytes = name.encode("utf-8")
        blob += struct.pack("<H", len(name_bytes))
        blob += name_bytes
        arr = np.asarray(arr, dtype=np.float64)
        blob += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<I", dim)
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_state(path) -> ModelState:
    with open(path, "rb") as fh:
        blob = fh.read()

    def need(n: int, offset: int, what: str):
        if offset + n > len(blob):
            raise FormatError(f"truncated while reading {what}", offset=offset)

    if blob[:4] != MFW_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {MFW_MAGIC!r}", offset=0)
    need(4, 4, "version")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != MFW_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    offset = 8
    need(4, offset, "config length")
    (cfg_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    need(cfg_len, offset, "config snapshot")
    config_text = blob[offset : offset + cfg_len].decode("utf-8")
    offset += cfg_len
    need(5, offset, "stage and tensor count")
    stage, count = struct.unpack_from("<BI", blob, offset)
    offset += 5
    if stage not in STAGE_NAMES:
        raise FormatError(f"invalid stage marker {stage}", offset=offset - 5)
    params: dict[str, np.ndarray] = {}
    for i in range(count):
        need(2, offset, f"tensor {i} name length")
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        need(name_len, offset, f"tensor {i} name")
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        if name in params:
            raise FormatError(f"duplicate tensor name '{name}'", offset=offset)
        need(1, offset, f"tensor '{name}' ndim")
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        dims = []
        for _ in range(ndim):
            need(4, offset, f"tensor '{name}' dims")
            (dim,) = struct.unpack_from("<I", blob, offset)
            dims.append(dim)
            offset += 4
        n_bytes = 8 * int(np.prod(dims, dtype=np.int64)) if dims else 8
        need(n_bytes, offset, f"tensor '{name}' payload")
        arr = np.frombuffer(blob, dtype="<f8", count=n_bytes // 8, offset=offset)
        params[name] = arr.reshape(dims).copy()
        offset += n_bytes
    if offset != len(blob):
        raise FormatError("trailing bytes after last tensor", offset=offset)
    return ModelState(params=params, config_text=config_text, stage=stage)


def restore_model(state: ModelState) -> SequenceModel:
    """Rebuild the model from the embedded snapshot and install the weights."""
    cfg = state.config()
    if cfg.model_n_channels < 1 or cfg.model_n_samples < 1:
        raise FormatError("weights snapshot lacks model dimensions", offset=0)
    model = build_model(cfg, cfg.model_n_channels, cfg.model_n_samples)
    params = model.params()
    missing = set(params) - set(state.params)
    extra = set(state.params) - set(params)
    if missing or extra:
        raise FormatError(
            f"weights do not match the embedded config (missing {sorted(missing)[:3]}, "
            f"unexpected {sorted(extra)[:3]})",
            offset=0,
        )
    for name, tensor in params.items():
        stored = state.params[name]
        if stored.shape != tensor.shape:
            raise FormatError(
                f"tensor '{name}' has dims {stored.shape}, config implies {tensor.shape}",
                offset=0,
            )
        tensor.data = stored.astype(np.float64)
    return model


def require_stage(state: ModelState, expected: int, command: str):
    if state.stage != expected:
        raise UsageError(
            f"{command} needs stage-{expected} ({STAGE_NAMES[expected]}) weights, "
            f"got stage-{state.stage}"
        )
