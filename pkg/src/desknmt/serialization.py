"""Binary model files.

Layout (little-endian)::

    b"SNMT"  u32 version
    u32 n    metadata, n bytes of UTF-8 "key=value" lines
    u32 k    tensors: u32 name_len, name, u32 rank, u32 dims..., float32 values
    u32 m    prune masks: u32 name_len, name, u32 n_bytes, packed bits

Tensors are written in parameter order and masks in name order, so a
save/load/save cycle reproduces the file byte for byte.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, NmtModel
from .vocab import FeatureSpec, Vocab

__all__ = ["MAGIC", "VERSION", "ModelFileError", "BadMagicError", "VersionError",
           "TruncatedFileError", "save_model", "load_model", "model_to_bytes", "model_from_bytes"]

MAGIC = b"SNMT"
VERSION = 1


class ModelFileError(Exception):
    code = "E_MODEL"


class BadMagicError(ModelFileError):
    code = "E_MAGIC"


class VersionError(ModelFileError):
    code = "E_VERSION"


class TruncatedFileError(ModelFileError):
    code = "E_TRUNCATED"


def _spec_to_str(spec: FeatureSpec) -> str:
    return f"{spec.name}|{spec.default}|{','.join(spec.values)}"


def _spec_from_str(s: str) -> FeatureSpec:
    name, default, values = s.split("|")
    return FeatureSpec(name, tuple(values.split(",")), default)


def _metadata(model: NmtModel) -> str:
    lines = []
    for key, value in model.config.to_dict().items():
        if isinstance(value, (tuple, list)):
            value = ",".join(map(str, value))
        lines.append(f"config.{key}={value}")
    lines.append(f"seed={model.seed}")
    lines.append(f"rng_state={model.graph.rng.state}")
    lines.append("src_vocab=" + "\t".join(model.src_vocab.tokens[4:]))
    lines.append("tgt_vocab=" + "\t".join(model.tgt_vocab.tokens[4:]))
    for k, spec in enumerate(model.src_feature_specs):
        lines.append(f"src_feature.{k}={_spec_to_str(spec)}")
    for k, spec in enumerate(model.tgt_feature_specs):
        lines.append(f"tgt_feature.{k}={_spec_to_str(spec)}")
    for name in sorted(model.frozen_rows):
        lines.append(f"frozen.{name}=" + ",".join(map(str, model.frozen_rows[name].tolist())))
    lines.append(f"prune_masks={int(bool(model.masks))}")
    return "\n".join(lines)


def model_to_bytes(model: NmtModel) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", VERSION))
    meta = _metadata(model).encode("utf-8")
    out.write(struct.pack("<I", len(meta)))
    out.write(meta)
    params = model.params
    out.write(struct.pack("<I", len(params)))
    for name, p in params.items():
        raw = name.encode("utf-8")
        out.write(struct.pack("<I", len(raw)))
        out.write(raw)
        out.write(struct.pack("<I", p.data.ndim))
        out.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
        out.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    out.write(struct.pack("<I", len(model.masks)))
    for name in sorted(model.masks):
        raw = name.encode("utf-8")
        bits = np.packbits(model.masks[name].astype(bool).reshape(-1), bitorder="little").tobytes()
        out.write(struct.pack("<I", len(raw)))
        out.write(raw)
        out.write(struct.pack("<I", len(bits)))
        out.write(bits)
    return out.getvalue()


def save_model(model: NmtModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"model file truncated at byte {len(self.data)} "
                                     f"(needed {self.pos + n})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def _parse_config(meta: dict) -> ModelConfig:
    base = ModelConfig()
    kwargs = {}
    for key, default in base.to_dict().items():
        raw = meta.get(f"config.{key}")
        if raw is None:
            continue
        if isinstance(default, bool):
            kwargs[key] = raw == "True"
        elif isinstance(default, int):
            kwargs[key] = int(raw)
        elif isinstance(default, float):
            kwargs[key] = float(raw)
        elif isinstance(default, tuple):
            kwargs[key] = tuple(int(x) for x in raw.split(",") if x)
    return ModelConfig(**kwargs)


def model_from_bytes(data: bytes, dtype=np.float32) -> NmtModel:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise BadMagicError("not a model file (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise VersionError(f"unsupported model file version {version} (expected {VERSION})")
    meta = {}
    for line in r.take(r.u32()).decode("utf-8").split("\n"):
        key, _, value = line.partition("=")
        meta[key] = value
    config = _parse_config(meta)

    def vocab(key):
        raw = meta[key]
        return Vocab(["<blank>", "<unk>", "<s>", "</s>"] + (raw.split("\t") if raw else []))

    def specs(prefix):
        out, k = [], 0
        while f"{prefix}.{k}" in meta:
            out.append(_spec_from_str(meta[f"{prefix}.{k}"]))
            k += 1
        return out

    model = NmtModel(config, vocab("src_vocab"), vocab("tgt_vocab"), specs("src_feature"),
                     specs("tgt_feature"), seed=int(meta.get("seed", 0)), dtype=dtype)
    model.graph.rng.state = int(meta.get("rng_state", model.graph.rng.state))
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        n = int(np.prod(shape)) if rank else 1
        values = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape)
        if name not in model.params or model.params[name].data.shape != tuple(shape):
            raise ModelFileError(f"tensor {name!r} with shape {shape} does not fit the configuration")
        model.params[name].data = values.astype(dtype)
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        bits = np.frombuffer(r.take(r.u32()), dtype=np.uint8)
        shape = model.params[name].data.shape
        mask = np.unpackbits(bits, bitorder="little")[:int(np.prod(shape))].reshape(shape)
        model.masks[name] = mask.astype(dtype)
    for key, value in meta.items():
        if key.startswith("frozen."):
            model.frozen_rows[key[7:]] = np.array([int(x) for x in value.split(",") if x], dtype=np.int64)
    if r.pos != len(data):
        raise ModelFileError(f"{len(data) - r.pos} trailing bytes after the model")
    return model


def load_model(path, dtype=np.float32) -> NmtModel:
    return model_from_bytes(Path(path).read_bytes(), dtype)
