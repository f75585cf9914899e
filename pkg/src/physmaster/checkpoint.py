"""Checkpoint files: one tensor container plus a JSON metadata sidecar.

``<name>.pmt`` holds every tensor (model weights, adapter weights, optimizer
moments, torch RNG state) as container records; ``<name>.json`` holds
architecture hyperparameters, the stage tag, the parent-checkpoint hash, and
the record offsets. Writes are atomic (temp file then rename).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import tensorio
from .encoder import EncoderConfig, PhysEncoder, build_encoder
from .generator import GeneratorConfig, VelocityNet, build_generator
from .lora import attach_lora

FORMAT_VERSION = 1


class MissingCheckpointError(FileNotFoundError):
    pass


def parameter_hashes(module: torch.nn.Module) -> dict[str, str]:
    """SHA-256 of every named parameter/buffer, for trainable-mask audits."""
    out = {}
    for name, tensor in list(module.named_parameters()) + list(module.named_buffers()):
        out[name] = hashlib.sha256(
            tensor.detach().cpu().numpy().tobytes()
        ).hexdigest()
    return out


def file_hash(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _to_record(tensor: torch.Tensor) -> np.ndarray:
    arr = tensor.detach().cpu().numpy()
    if arr.dtype == np.uint8 or arr.dtype == np.bool_:
        return arr
    return arr.astype(np.float32)


@dataclass
class Checkpoint:
    meta: dict
    tensors: dict[str, np.ndarray]

    @property
    def stage(self) -> str:
        return self.meta["stage"]

    @property
    def stage_history(self) -> list[str]:
        return list(self.meta["stage_history"])


def save_checkpoint(
    base_path,
    *,
    generator: VelocityNet,
    encoder: PhysEncoder,
    stage: str,
    stage_history: list[str],
    step: int,
    lora: dict | None = None,
    ref_lora: dict | None = None,
    optimizer: torch.optim.Optimizer | None = None,
    ref_generator: VelocityNet | None = None,
    ref_encoder: PhysEncoder | None = None,
    parent: str | Path | None = None,
    train_config: dict | None = None,
    np_rng_state: dict | None = None,
    save_torch_rng: bool = True,
) -> Path:
    base = Path(base_path)
    base.parent.mkdir(parents=True, exist_ok=True)
    tensors: dict[str, np.ndarray] = {}
    for key, value in generator.state_dict().items():
        tensors[f"generator/{key}"] = _to_record(value)
    for key, value in encoder.state_dict().items():
        tensors[f"encoder/{key}"] = _to_record(value)
    if ref_generator is not None:
        for key, value in ref_generator.state_dict().items():
            tensors[f"ref_generator/{key}"] = _to_record(value)
    if ref_encoder is not None:
        for key, value in ref_encoder.state_dict().items():
            tensors[f"ref_encoder/{key}"] = _to_record(value)

    opt_groups = None
    if optimizer is not None:
        state = optimizer.state_dict()
        opt_groups = state["param_groups"]
        for idx, entry in state["state"].items():
            for field, value in entry.items():
                tensors[f"optimizer/{idx}/{field}"] = _to_record(
                    value if torch.is_tensor(value) else torch.tensor(float(value))
                )
    if save_torch_rng:
        tensors["rng/torch"] = torch.get_rng_state().numpy()

    pmt_path = base.with_suffix(".pmt")
    tmp_pmt = base.with_suffix(".pmt.tmp")
    offsets = tensorio.write_tensor_file(tmp_pmt, tensors)

    meta = {
        "format": FORMAT_VERSION,
        "stage": stage,
        "stage_history": list(stage_history),
        "step": step,
        "generator_config": generator.config.to_json(),
        "encoder_config": encoder.config.to_json(),
        "lora": lora,
        "ref_lora": ref_lora,
        "has_reference": ref_generator is not None,
        "optimizer_groups": opt_groups,
        "train_config": train_config,
        "np_rng_state": np_rng_state,
        "parent_hash": file_hash(Path(parent).with_suffix(".pmt")) if parent else None,
        "offsets": offsets,
    }
    json_path = base.with_suffix(".json")
    tmp_json = base.with_suffix(".json.tmp")
    tmp_json.write_text(json.dumps(meta, sort_keys=True, indent=1))
    os.replace(tmp_pmt, pmt_path)
    os.replace(tmp_json, json_path)
    return base


def load_checkpoint(base_path) -> Checkpoint:
    base = Path(base_path)
    json_path = base.with_suffix(".json")
    pmt_path = base.with_suffix(".pmt")
    if not json_path.exists() or not pmt_path.exists():
        raise MissingCheckpointError(str(base))
    meta = json.loads(json_path.read_text())
    if meta["format"] != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {meta['format']}")
    tensors = tensorio.read_tensor_file(pmt_path, meta["offsets"])
    return Checkpoint(meta=meta, tensors=tensors)


def _load_module_state(module: torch.nn.Module, tensors: dict, prefix: str) -> None:
    state = {
        key[len(prefix) :]: torch.from_numpy(np.ascontiguousarray(value))
        for key, value in tensors.items()
        if key.startswith(prefix)
    }
    module.load_state_dict(state)


def build_generator_from(ckpt: Checkpoint, prefix: str = "generator/") -> VelocityNet:
    config = GeneratorConfig.from_json(ckpt.meta["generator_config"])
    model = build_generator(config, seed=0)
    lora_key = "ref_lora" if prefix.startswith("ref_") else "lora"
    lora_meta = ckpt.meta.get(lora_key)
    if lora_meta:
        attach_lora(model, lora_meta["rank"], lora_meta["alpha"], seed=0)
    _load_module_state(model, ckpt.tensors, prefix)
    return model


def build_encoder_from(ckpt: Checkpoint, prefix: str = "encoder/") -> PhysEncoder:
    config = EncoderConfig.from_json(ckpt.meta["encoder_config"])
    model = build_encoder(config, seed=0)
    _load_module_state(model, ckpt.tensors, prefix)
    return model
