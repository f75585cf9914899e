"""Three-stage training pipeline.

Stage order: supervised finetuning of generator + encoder ("sft"), then
preference finetuning of the generator through low-rank adapters
("dpo_model"), then preference finetuning of the encoder's physical head
("dpo_encoder"). Each preference stage snapshots the current model pair as
its frozen reference and builds fresh oracle-ranked pairs with it. A fourth
stage kind, "dpo_joint" (adapters + head together), exists for the ablation
grid.

Exactly one trainable parameter set per stage; everything else is frozen and
must come out of a stage bit-identical.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt_io
from . import losses, pairs as pairs_mod
from .corpus import ConfigError, DatasetManifest
from .encoder import EncoderConfig, PhysEncoder, build_encoder
from .generator import GeneratorConfig, GeneratorSampler, VelocityNet, build_generator
from .lora import attach_lora, has_lora, lora_parameters

STAGES = ("sft", "dpo_model", "dpo_encoder", "dpo_joint")


class StageOrderError(RuntimeError):
    """Stage requested out of pipeline order without the override flag."""


@dataclass
class TrainConfig:
    stage: str = "sft"
    steps: int = 200
    batch_size: int = 8
    lr: float = 1e-4
    beta: float = 100.0
    seed: int = 0
    dropout_prob: float = 0.1
    t_min: float = 0.02
    t_max: float = 0.98
    phys_mode: str = "encoder"  # "encoder" | "zeros"
    lora_rank: int = 8
    lora_alpha: float = 16.0
    n_pair_conditions: int = 128
    pair_margin: float | None = None
    pair_seeds: tuple[int, int] = (1, 2)
    pair_split: str = "train"
    badness_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    sample_steps: int = 16
    cfg_scale: float = 2.0
    checkpoint_every: int = 500
    force_order: bool = False

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError(f"unknown stage {self.stage!r}")
        if self.beta <= 0:
            raise ConfigError("beta must be > 0")
        if self.phys_mode not in ("encoder", "zeros"):
            raise ConfigError(f"unknown phys_mode {self.phys_mode!r}")
        if not (0.0 <= self.t_min < self.t_max <= 1.0):
            raise ConfigError("need 0 <= t_min < t_max <= 1")

    def to_json(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json(d: dict) -> "TrainConfig":
        d = dict(d)
        if "pair_seeds" in d:
            d["pair_seeds"] = tuple(d["pair_seeds"])
        if "badness_weights" in d:
            d["badness_weights"] = tuple(d["badness_weights"])
        return TrainConfig(**d)


@dataclass
class TrainState:
    generator: VelocityNet
    encoder: PhysEncoder
    stage_history: list[str] = field(default_factory=list)
    loss_rows: list[tuple[int, float, str]] = field(default_factory=list)
    ref_generator: VelocityNet | None = None
    ref_encoder: PhysEncoder | None = None
    lora_meta: dict | None = None
    ref_lora_meta: dict | None = None
    step_in_stage: int = 0


def build_train_state(
    gen_config: GeneratorConfig, enc_config: EncoderConfig, seed: int
) -> TrainState:
    return TrainState(
        generator=build_generator(gen_config, seed),
        encoder=build_encoder(enc_config, seed + 1),
    )


def stage_seed(seed: int, stage: str, position: int) -> int:
    digest = hashlib.sha256(f"{seed}:{stage}:{position}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**31 - 1)


def _check_stage_order(history: list[str], stage: str, force: bool) -> None:
    if force:
        return
    ok = {
        "sft": len(history) == 0,
        "dpo_model": "sft" in history,
        "dpo_joint": "sft" in history,
        "dpo_encoder": "dpo_model" in history,
    }[stage]
    if not ok:
        raise StageOrderError(
            f"stage {stage!r} after {history or ['<nothing>']}; "
            "pass force_order to override"
        )


def _set_requires_grad(state: TrainState, stage: str, phys_mode: str) -> list:
    """Freeze everything outside the stage's trainable set; return trainables."""
    for p in state.generator.parameters():
        p.requires_grad_(False)
    for p in state.encoder.parameters():
        p.requires_grad_(False)
    if stage == "sft":
        trainables = list(state.generator.parameters())
        for p in trainables:
            p.requires_grad_(True)
        if phys_mode == "encoder":
            enc = list(state.encoder.parameters())
            for p in enc:
                p.requires_grad_(True)
            trainables += enc
        return trainables
    trainables = []
    if stage in ("dpo_model", "dpo_joint"):
        trainables += list(lora_parameters(state.generator))
    if stage in ("dpo_encoder", "dpo_joint"):
        trainables += list(state.encoder.head_parameters())
    for p in trainables:
        p.requires_grad_(True)
    return trainables


class ClipCache:
    """Train-split clips held in memory as one (n, T, H, W, C) block."""

    def __init__(self, manifest: DatasetManifest, split: str):
        records = manifest.split(split)
        if not records:
            raise ConfigError(f"split {split!r} is empty")
        self.records = records
        self.frames = np.stack([manifest.load_frames(r) for r in records])
        self.categories = np.array(
            [r.scene.category_label for r in records], dtype=np.int64
        )


def _snapshot_reference(state: TrainState) -> None:
    state.ref_generator = copy.deepcopy(state.generator).eval()
    state.ref_encoder = copy.deepcopy(state.encoder).eval()
    for p in state.ref_generator.parameters():
        p.requires_grad_(False)
    for p in state.ref_encoder.parameters():
        p.requires_grad_(False)
    state.ref_lora_meta = dict(state.lora_meta) if state.lora_meta else None


def build_stage_pairs(
    state: TrainState, config: TrainConfig, manifest: DatasetManifest
) -> list[pairs_mod.PreferencePair]:
    """Oracle-ranked pairs sampled from the frozen stage reference."""
    sampler = GeneratorSampler(
        state.ref_generator,
        state.ref_encoder,
        sample_steps=config.sample_steps,
        cfg_scale=config.cfg_scale,
        phys_mode=config.phys_mode,
    )
    return pairs_mod.build_preference_pairs(
        sampler,
        manifest,
        n_conditions=config.n_pair_conditions,
        margin=config.pair_margin,
        seeds=config.pair_seeds,
        split=config.pair_split,
        weights=config.badness_weights,
    )


def run_stage(
    state: TrainState,
    config: TrainConfig,
    manifest: DatasetManifest,
    run_dir: Path | None = None,
    cache: ClipCache | None = None,
    prebuilt_pairs: list[pairs_mod.PreferencePair] | None = None,
) -> TrainState:
    """Execute one training stage, mutating and returning `state`."""
    _check_stage_order(state.stage_history, config.stage, config.force_order)
    _check_geometry(state, manifest)
    stage = config.stage
    loss_rows_before = len(state.loss_rows)
    torch.manual_seed(stage_seed(config.seed, stage, len(state.stage_history)))

    if stage == "sft":
        if config.steps > 0:
            if cache is None:
                cache = ClipCache(manifest, "train")
            _run_sft(state, config, cache, run_dir)
    elif config.steps > 0:  # zero-step stages are pure passthrough
        _snapshot_reference(state)
        if stage in ("dpo_model", "dpo_joint") and not has_lora(state.generator):
            attach_lora(
                state.generator,
                config.lora_rank,
                config.lora_alpha,
                seed=stage_seed(config.seed, "lora", len(state.stage_history)),
            )
            state.lora_meta = {"rank": config.lora_rank, "alpha": config.lora_alpha}
        if prebuilt_pairs is None:
            prebuilt_pairs = build_stage_pairs(state, config, manifest)
            if run_dir is not None:
                pairs_mod.save_pairs(prebuilt_pairs, Path(run_dir) / "pairs" / stage)
        # pair building consumed RNG via sampling; reseed the train loop
        torch.manual_seed(
            stage_seed(config.seed, stage + ":train", len(state.stage_history))
        )
        _run_dpo(state, config, prebuilt_pairs, run_dir)

    state.stage_history.append(stage)
    state.step_in_stage = config.steps
    if run_dir is not None:
        _append_loss_csv(state.loss_rows[loss_rows_before:], run_dir)
        ckpt_path = Path(run_dir) / "checkpoints" / f"{stage}_final"
        save_state_checkpoint(state, config, ckpt_path)
    return state


def _run_sft(
    state: TrainState, config: TrainConfig, cache: ClipCache, run_dir: Path | None
) -> None:
    trainables = _set_requires_grad(state, "sft", config.phys_mode)
    optimizer = torch.optim.Adam(trainables, lr=config.lr)
    rng = np.random.default_rng(stage_seed(config.seed, "sft:order", 0))
    n = len(cache.records)
    order: list[int] = []
    state.generator.train()
    state.encoder.train()
    for step in range(config.steps):
        while len(order) < config.batch_size:
            order.extend(rng.permutation(n).tolist())
        idx = [order.pop(0) for _ in range(config.batch_size)]
        frames = torch.from_numpy(cache.frames[idx])
        first_frame = frames[:, 0].clone()
        category = torch.from_numpy(cache.categories[idx])
        b = frames.shape[0]
        t = config.t_min + (config.t_max - config.t_min) * torch.rand(b)
        noise = torch.randn_like(frames)
        drop = [torch.rand(b) < config.dropout_prob for _ in range(3)]
        loss = losses.sft_loss(
            state.generator,
            state.encoder,
            frames,
            first_frame,
            category,
            t,
            noise,
            drop_image=drop[0],
            drop_category=drop[1],
            drop_phys=drop[2],
            phys_mode=config.phys_mode,
        )
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        state.loss_rows.append((step, float(loss.detach()), "sft"))
        _maybe_checkpoint(state, config, step, run_dir)
    state.generator.eval()
    state.encoder.eval()


def _run_dpo(
    state: TrainState,
    config: TrainConfig,
    pref_pairs: list[pairs_mod.PreferencePair],
    run_dir: Path | None,
) -> None:
    if not pref_pairs:
        return
    trainables = _set_requires_grad(state, config.stage, config.phys_mode)
    optimizer = torch.optim.Adam(trainables, lr=config.lr)
    winner = torch.from_numpy(np.stack([p.winner.frames for p in pref_pairs]))
    loser = torch.from_numpy(np.stack([p.loser.frames for p in pref_pairs]))
    first_frame = torch.from_numpy(
        np.stack([p.condition.first_frame for p in pref_pairs])
    )
    category = torch.tensor(
        [p.condition.category_label for p in pref_pairs], dtype=torch.long
    )
    rng = np.random.default_rng(stage_seed(config.seed, config.stage + ":order", 0))
    n = len(pref_pairs)
    batch = min(config.batch_size, n)
    order: list[int] = []
    state.generator.train()
    state.encoder.train()
    for step in range(config.steps):
        while len(order) < batch:
            order.extend(rng.permutation(n).tolist())
        idx = [order.pop(0) for _ in range(batch)]
        b = len(idx)
        t = config.t_min + (config.t_max - config.t_min) * torch.rand(b)
        shared_noise = torch.randn_like(winner[idx])
        loss, _stats = losses.flow_dpo_loss(
            state.generator,
            state.encoder,
            state.ref_generator,
            state.ref_encoder,
            winner[idx],
            loser[idx],
            first_frame[idx],
            category[idx],
            t,
            shared_noise,
            beta=config.beta,
            phys_mode=config.phys_mode,
        )
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        state.loss_rows.append((step, float(loss.detach()), config.stage))
        _maybe_checkpoint(state, config, step, run_dir)
    state.generator.eval()
    state.encoder.eval()


def _maybe_checkpoint(
    state: TrainState, config: TrainConfig, step: int, run_dir: Path | None
) -> None:
    if run_dir is None or config.checkpoint_every <= 0:
        return
    if (step + 1) % config.checkpoint_every != 0 or (step + 1) == config.steps:
        return
    path = Path(run_dir) / "checkpoints" / f"{config.stage}_{step + 1:06d}"
    save_state_checkpoint(state, config, path, mid_stage_step=step + 1)


def save_state_checkpoint(
    state: TrainState,
    config: TrainConfig,
    base_path,
    mid_stage_step: int | None = None,
) -> Path:
    return ckpt_io.save_checkpoint(
        base_path,
        generator=state.generator,
        encoder=state.encoder,
        stage=config.stage,
        stage_history=state.stage_history
        if mid_stage_step is None
        else state.stage_history + [config.stage + ":partial"],
        step=mid_stage_step if mid_stage_step is not None else config.steps,
        lora=state.lora_meta,
        ref_lora=state.ref_lora_meta,
        ref_generator=state.ref_generator,
        ref_encoder=state.ref_encoder,
        train_config=config.to_json(),
    )


def load_train_state(base_path) -> TrainState:
    ckpt = ckpt_io.load_checkpoint(base_path)
    state = TrainState(
        generator=ckpt_io.build_generator_from(ckpt),
        encoder=ckpt_io.build_encoder_from(ckpt),
        stage_history=[s for s in ckpt.stage_history if not s.endswith(":partial")],
        lora_meta=ckpt.meta.get("lora"),
        ref_lora_meta=ckpt.meta.get("ref_lora"),
    )
    if ckpt.meta.get("has_reference"):
        state.ref_generator = ckpt_io.build_generator_from(ckpt, "ref_generator/")
        state.ref_encoder = ckpt_io.build_encoder_from(ckpt, "ref_encoder/")
    state.generator.eval()
    state.encoder.eval()
    return state


def _check_geometry(state: TrainState, manifest: DatasetManifest) -> None:
    geo = manifest.geometry
    c = state.generator.config
    if (c.frames, c.height, c.width, c.channels) != (geo.t, geo.h, geo.w, geo.c):
        raise ConfigError(
            f"generator geometry {(c.frames, c.height, c.width, c.channels)} "
            f"does not match corpus geometry {(geo.t, geo.h, geo.w, geo.c)}"
        )
    e = state.encoder.config
    if (e.height, e.width, e.channels) != (geo.h, geo.w, geo.c):
        raise ConfigError("encoder geometry does not match corpus geometry")


def _append_loss_csv(rows, run_dir) -> None:
    path = Path(run_dir) / "loss.csv"
    new_file = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new_file:
            writer.writerow(["step", "loss", "stage"])
        for step, loss, stage in rows:
            writer.writerow([step, f"{loss:.8f}", stage])


def write_config_snapshot(run_dir, payload: dict) -> None:
    """Resolved-config snapshot, written before any other artifact."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(payload, sort_keys=True, indent=1))
