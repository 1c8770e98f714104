"""Versioned, checksummed binary checkpoints.

Layout: 8-byte magic, 8-byte little-endian header length, UTF-8 JSON
header, concatenated raw float64 array payloads, 32-byte SHA-256 over
everything before it.  Raw bytes keep parameters bit-identical through a
save/load round trip, so a restored training run continues exactly where
it left off.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import CheckpointIntegrityError, CheckpointVersionError
from .model import (AdamState, LstmBlockParams, ModelConfig, Seq2SeqModel,
                    TrainConfig)
from .preprocess import PcaModel, ScalerParams

MAGIC = b"GCCKPT01"
FORMAT_VERSION = 1


def _collect_arrays(model: Seq2SeqModel, state: AdamState | None) -> dict[str, np.ndarray]:
    arrays = dict(model.param_dict())
    if state is not None:
        arrays.update({f"adam.m.{k}": v for k, v in state.m.items()})
        arrays.update({f"adam.v.{k}": v for k, v in state.v.items()})
    return arrays


def checkpoint_save(model: Seq2SeqModel, path, state: AdamState | None = None,
                    train_config: TrainConfig | None = None,
                    scaler: ScalerParams | None = None,
                    pca: PcaModel | None = None,
                    extra: dict | None = None) -> None:
    """Write the model (and optionally optimizer/transform state) to path."""
    arrays = _collect_arrays(model, state)
    index = {}
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype=np.float64).tobytes()
        index[name] = {"offset": offset, "shape": list(arr.shape)}
        offset += len(data)
        blobs.append(data)

    header = {
        "format_version": FORMAT_VERSION,
        "model_config": asdict(model.config),
        "arrays": index,
        "adam": None if state is None else {"t": state.t, "lr": state.lr,
                                            "beta1": state.beta1, "beta2": state.beta2,
                                            "eps": state.eps},
        "train_config": None if train_config is None else asdict(train_config),
        "scaler": None if scaler is None else json.loads(scaler.to_json()),
        "pca": None if pca is None else json.loads(pca.to_json()),
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = MAGIC + len(header_bytes).to_bytes(8, "little") + header_bytes + b"".join(blobs)
    digest = hashlib.sha256(body).digest()
    Path(path).write_bytes(body + digest)


def checkpoint_load(path):
    """Load a checkpoint; returns (model, state, train_config, scaler, pca, extra).

    Raises CheckpointIntegrityError on truncation or checksum mismatch and
    CheckpointVersionError on an unknown format version.
    """
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8 + 32 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointIntegrityError(f"{path}: not a checkpoint file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointIntegrityError(f"{path}: checksum mismatch (file corrupt or truncated)")
    header_len = int.from_bytes(body[len(MAGIC):len(MAGIC) + 8], "little")
    header_start = len(MAGIC) + 8
    try:
        header = json.loads(body[header_start:header_start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointIntegrityError(f"{path}: unreadable header: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format_version "
                                     f"{header.get('format_version')} not supported "
                                     f"(expected {FORMAT_VERSION})")
    payload = body[header_start + header_len:]
    arrays = {}
    for name, meta in header["arrays"].items():
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = meta["offset"]
        arrays[name] = np.frombuffer(payload[start:start + 8 * count],
                                     dtype=np.float64).reshape(shape).copy()

    config = ModelConfig(**header["model_config"])
    model = _assemble_model(config, arrays)

    state = None
    if header["adam"] is not None:
        meta = header["adam"]
        params = model.param_dict()
        state = AdamState(
            m={k: arrays[f"adam.m.{k}"] for k in params},
            v={k: arrays[f"adam.v.{k}"] for k in params},
            t=int(meta["t"]), lr=meta["lr"], beta1=meta["beta1"],
            beta2=meta["beta2"], eps=meta["eps"])

    train_config = None if header["train_config"] is None else TrainConfig(**header["train_config"])
    scaler = None if header["scaler"] is None else ScalerParams.from_json(json.dumps(header["scaler"]))
    pca = None if header["pca"] is None else PcaModel.from_json(json.dumps(header["pca"]))
    return model, state, train_config, scaler, pca, header.get("extra", {})


def _assemble_model(config: ModelConfig, arrays: dict[str, np.ndarray]) -> Seq2SeqModel:
    def block(prefix, hidden, inputs, cand, out):
        return LstmBlockParams(
            w_f=arrays[f"{prefix}.w_f"], w_i=arrays[f"{prefix}.w_i"],
            w_c=arrays[f"{prefix}.w_c"], w_o=arrays[f"{prefix}.w_o"],
            b_f=arrays[f"{prefix}.b_f"], b_i=arrays[f"{prefix}.b_i"],
            b_c=arrays[f"{prefix}.b_c"], b_o=arrays[f"{prefix}.b_o"],
            hidden_size=hidden, input_size=inputs,
            candidate_activation=cand, output_activation=out,
            leaky_alpha=config.leaky_alpha)

    return Seq2SeqModel(
        enc1=block("enc1", config.hidden1, config.n_features,
                   config.block1_candidate, config.block1_output),
        enc2=block("enc2", config.hidden2, config.hidden1,
                   config.block2_candidate, config.block2_output),
        dec1=block("dec1", config.hidden1, 1,
                   config.block1_candidate, config.block1_output),
        dec2=block("dec2", config.hidden2, config.hidden1,
                   config.block2_candidate, config.block2_output),
        dense_w=arrays["dense_w"], dense_b=arrays["dense_b"],
        head_w=arrays["head_w"], head_b=arrays["head_b"],
        config=config)
