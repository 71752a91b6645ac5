"""Checkpoint container: a JSON header (names, shapes, offsets) followed by
raw little-endian float64 tensor data, for bit-exact round trips."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .data import FeatureSchema
from .network import ModelVariant, NetworkDims, NetworkParams

MAGIC = b"SPCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class CheckpointMeta:
    format_version: int
    variant: str
    vocab_sha256: str
    seed: int | None
    training_config: Mapping | None


def save_checkpoint(params: NetworkParams, path, vocab_sha256: str,
                    seed: int | None = None,
                    training_config: Mapping | None = None) -> None:
    tensors = list(params.tensors())
    entries = []
    offset = 0
    for name, arr in tensors:
        nbytes = arr.size * 8
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "variant": params.variant.kind,
        "schema": params.variant.schema.to_dict() if params.variant.schema else None,
        "dims": params.dims.to_dict(),
        "vocab_size": params.vocab_size,
        "vocab_sha256": vocab_sha256,
        "seed": seed,
        "training_config": dict(training_config) if training_config else None,
        "tensors": entries,
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[NetworkParams, CheckpointMeta]:
    """Exact round-trip load; any structural problem reports its byte offset."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic at byte 0")
    if len(raw) < 8:
        raise CheckpointError(f"{path}: truncated header length at byte {len(raw)}")
    (header_len,) = struct.unpack("<I", raw[4:8])
    header_end = 8 + header_len
    if len(raw) < header_end:
        raise CheckpointError(f"{path}: truncated header at byte {len(raw)}")
    try:
        header = json.loads(raw[8:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header at byte 8: {exc}") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {version} (expected {FORMAT_VERSION})")

    schema = FeatureSchema.from_dict(header["schema"]) if header["schema"] else None
    variant = ModelVariant(header["variant"], schema)
    dims = NetworkDims(**header["dims"])

    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        start = header_end + entry["offset"]
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        if len(raw) < start + nbytes:
            raise CheckpointError(
                f"{path}: truncated tensor {entry['name']!r} at byte {len(raw)}")
        buf = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=start)
        tensors[entry["name"]] = buf.reshape(shape).astype(float, copy=True)

    params = _params_from_tensors(variant, dims, header["vocab_size"], tensors, path)
    meta = CheckpointMeta(format_version=version, variant=header["variant"],
                          vocab_sha256=header["vocab_sha256"], seed=header.get("seed"),
                          training_config=header.get("training_config"))
    return params, meta


def _params_from_tensors(variant: ModelVariant, dims: NetworkDims, vocab_size: int,
                         tensors: Mapping[str, np.ndarray], path) -> NetworkParams:
    def take(name):
        if name not in tensors:
            raise CheckpointError(f"{path}: missing tensor {name!r}")
        return tensors[name]

    feature_emb = {g.name: take(f"feature_emb/{g.name}")
                   for g in variant.feature_group_order()}
    params = NetworkParams(
        variant=variant, dims=dims, vocab_size=vocab_size,
        keyword_emb=take("keyword_emb"), feature_emb=feature_emb,
        fc1_w=take("fc1_w"), fc1_b=take("fc1_b"),
        fc2_w=take("fc2_w"), fc2_b=take("fc2_b"),
        head_main_w=take("head_main_w"), head_main_b=take("head_main_b"))
    if variant.has_aux:
        params.att_wu = take("att_wu")
        params.att_wq = take("att_wq")
        params.att_wa = take("att_wa")
        params.att_z = take("att_z")
        params.head_aux_w = take("head_aux_w")
        params.head_aux_b = take("head_aux_b")
    return params


def check_vocabulary(meta: CheckpointMeta, vocab_sha256: str) -> None:
    """Refuse to pair a checkpoint with a vocabulary it was not trained on."""
    if meta.vocab_sha256 != vocab_sha256:
        raise CheckpointError(
            f"vocabulary hash mismatch: checkpoint has {meta.vocab_sha256[:12]}..., "
            f"supplied vocabulary is {vocab_sha256[:12]}...")
