"""Command-line entry point.

Subcommands: gen-data, build-pairs, train, sample, eval, ablate, pca.
Every command is deterministic given (config, seed). Exit codes: 0 success,
2 config validation, 3 I/O failure, 4 missing checkpoint/reference,
5 stage-order violation without --force-order.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import pairs as pairs_mod
from .ablation import VARIANTS, AblationPlan, run_ablation
from .corpus import ConfigError, CorpusConfig, DatasetManifest, generate_corpus
from .encoder import EncoderConfig, build_encoder
from .evaluate import GroundTruthSampler, evaluate_checkpoint, write_report
from .generator import GeneratorConfig, GeneratorSampler, build_generator
from .pca import pca_visualize
from .training import (
    StageOrderError,
    TrainConfig,
    build_train_state,
    load_train_state,
    run_stage,
    write_config_snapshot,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_MISSING_CHECKPOINT = 4
EXIT_STAGE_ORDER = 5


def _threads() -> int:
    env = os.environ.get("PHYSMASTER_THREADS", "")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc


def _model_configs(payload: dict) -> tuple[GeneratorConfig, EncoderConfig]:
    gen = GeneratorConfig.from_json(payload.get("generator", {})) if payload.get(
        "generator"
    ) else GeneratorConfig()
    enc = EncoderConfig.from_json(payload.get("encoder", {})) if payload.get(
        "encoder"
    ) else EncoderConfig()
    return gen, enc


def _train_config(payload: dict, stage: str, args) -> TrainConfig:
    base = dict(payload.get("train", {}))
    base.update(payload.get("stages", {}).get(stage, {}))
    base["stage"] = stage
    if args.seed is not None:
        base["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        base["steps"] = args.steps
    if getattr(args, "force_order", False):
        base["force_order"] = True
    return TrainConfig.from_json(base)


def _save_png(array: np.ndarray, path: Path) -> None:
    from PIL import Image

    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array).save(path)


def frame_strip(frames: np.ndarray) -> np.ndarray:
    """Horizontal strip of all frames as one uint8 grayscale image."""
    t, h, w, c = frames.shape
    strip = frames[..., 0].transpose(1, 0, 2).reshape(h, t * w)
    return np.clip(strip * 255.0, 0, 255).round().astype(np.uint8)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    config = CorpusConfig.from_json(_load_json(args.config)) if args.config else CorpusConfig()
    seed = args.seed if args.seed is not None else 0
    manifest = generate_corpus(config, seed=seed, out_dir=args.out, workers=_threads())
    for split in ("train", "val", "test_seen", "test_unseen"):
        print(f"{split}: {len(manifest.split(split))} clips")
    print(f"manifest: {manifest.root / 'manifest.json'}")
    return EXIT_OK


def _sampler_from_checkpoint(path, payload: dict | None = None) -> GeneratorSampler:
    ckpt = ckpt_io.load_checkpoint(path)
    generator = ckpt_io.build_generator_from(ckpt)
    encoder = ckpt_io.build_encoder_from(ckpt)
    generator.eval()
    encoder.eval()
    train_cfg = ckpt.meta.get("train_config") or {}
    payload = payload or {}
    return GeneratorSampler(
        generator,
        encoder,
        sample_steps=payload.get("sample_steps", train_cfg.get("sample_steps", 16)),
        cfg_scale=payload.get("cfg_scale", train_cfg.get("cfg_scale", 2.0)),
        phys_mode=payload.get("phys_mode", train_cfg.get("phys_mode", "encoder")),
    )


def cmd_build_pairs(args) -> int:
    raw = _load_json(args.config) if args.config else {}
    # pair settings may live at the top level or inside a train config
    payload = {**raw.get("train", {}), **raw}
    manifest = DatasetManifest.load(args.data)
    sampler = _sampler_from_checkpoint(args.checkpoint, payload)
    seeds = tuple(payload.get("pair_seeds", (1, 2)))
    if args.seed is not None:
        seeds = (args.seed, args.seed + 1)
    pairs = pairs_mod.build_preference_pairs(
        sampler,
        manifest,
        n_conditions=payload.get("n_pair_conditions", 128),
        margin=payload.get("pair_margin"),
        seeds=seeds,
        split=payload.get("pair_split", "train"),
        weights=tuple(payload.get("badness_weights", (1.0, 1.0, 1.0))),
    )
    pairs_mod.save_pairs(pairs, args.out)
    print(f"kept {len(pairs)} pairs -> {args.out}")
    return EXIT_OK


STAGE_PREDECESSOR = {
    "dpo_model": ("sft_final",),
    "dpo_joint": ("dpo_model_final", "sft_final"),
    "dpo_encoder": ("dpo_model_final", "sft_final"),
}


def _locate_reference(run_dir: Path, stage: str, explicit: str | None):
    if explicit:
        return Path(explicit)
    for name in STAGE_PREDECESSOR.get(stage, ()):
        base = run_dir / "checkpoints" / name
        if base.with_suffix(".json").exists():
            return base
    return None


def cmd_train(args) -> int:
    payload = _load_json(args.config) if args.config else {}
    manifest = DatasetManifest.load(args.data)
    gen_config, enc_config = _model_configs(payload)
    config = _train_config(payload, args.stage, args)
    run_dir = Path(args.run_dir)
    done = run_dir / "checkpoints" / f"{config.stage}_final"
    if args.resume and done.with_suffix(".json").exists():
        print(f"stage {config.stage} already complete: {done}")
        return EXIT_OK
    write_config_snapshot(
        run_dir,
        {
            "command": "train",
            "stage": config.stage,
            "generator": gen_config.to_json(),
            "encoder": enc_config.to_json(),
            "train": config.to_json(),
            "data": str(args.data),
        },
    )

    prebuilt = None
    if args.pairs:
        prebuilt = pairs_mod.load_pairs(args.pairs, manifest)
        print(f"reusing {len(prebuilt)} preference pairs from {args.pairs}")

    if args.resume:
        partials = sorted(
            (run_dir / "checkpoints").glob(f"{config.stage}_0*.json"), reverse=True
        )
        if partials:
            base = partials[0].with_suffix("")
            state = load_train_state(base)
            done_steps = ckpt_io.load_checkpoint(base).meta["step"]
            config = replace(config, steps=max(config.steps - done_steps, 0))
            print(f"resuming {config.stage} from {base} ({config.steps} steps left)")
            run_stage(state, config, manifest, run_dir=run_dir, prebuilt_pairs=prebuilt)
            return EXIT_OK

    if config.stage == "sft":
        state = build_train_state(gen_config, enc_config, config.seed)
    else:
        reference = _locate_reference(run_dir, config.stage, args.reference)
        if reference is None:
            print(
                f"stage {config.stage} needs a prior checkpoint "
                "(none found in the run directory; pass --reference)",
                file=sys.stderr,
            )
            return EXIT_MISSING_CHECKPOINT
        state = load_train_state(reference)
    run_stage(state, config, manifest, run_dir=run_dir, prebuilt_pairs=prebuilt)
    print(f"stage {config.stage} done; checkpoints in {run_dir / 'checkpoints'}")
    return EXIT_OK


def cmd_sample(args) -> int:
    manifest = DatasetManifest.load(args.data)
    sampler = _sampler_from_checkpoint(args.checkpoint)
    records = manifest.split(args.split)[: args.count]
    if not records:
        raise ConfigError(f"split {args.split!r} has no clips")
    out = Path(args.out)
    seed = args.seed if args.seed is not None else 0
    conditions = [manifest.condition(r) for r in records]
    from .metrics import clip_eval_seed

    seeds = [clip_eval_seed(seed, r.clip_id) for r in records]
    frames_list = sampler.sample_clip_batch(conditions, seeds)
    for record, frames in zip(records, frames_list):
        _save_png(frame_strip(frames), out / f"{record.clip_id}.png")
    print(f"wrote {len(records)} frame strips to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = DatasetManifest.load(args.data)
    if args.passthrough:
        sampler = GroundTruthSampler(manifest)
        model_id = "ground-truth-passthrough"
    else:
        sampler = _sampler_from_checkpoint(args.checkpoint)
        model_id = str(args.checkpoint)
    report = evaluate_checkpoint(
        sampler,
        manifest,
        eval_seed=args.seed if args.seed is not None else 0,
        model_id=model_id,
    )
    write_report(report, args.out)
    print(report.to_markdown())
    return EXIT_OK


def cmd_ablate(args) -> int:
    payload = _load_json(args.config) if args.config else {}
    manifest = DatasetManifest.load(args.data)
    gen_config, enc_config = _model_configs(payload)
    plan_payload = dict(payload.get("plan", {}))
    if args.rows:
        plan_payload["rows"] = args.rows.split(",")
    if args.seed is not None:
        plan_payload["seed"] = args.seed
    sft_cfg = TrainConfig.from_json({**plan_payload.pop("sft", {}), "stage": "sft"})
    dpo_cfg = TrainConfig.from_json(
        {"lr": 1e-5, **plan_payload.pop("dpo", {}), "stage": "dpo_model"}
    )
    plan = AblationPlan(sft=sft_cfg, dpo=dpo_cfg, **plan_payload)
    run_dir = Path(args.run_dir)
    write_config_snapshot(
        run_dir,
        {
            "command": "ablate",
            "generator": gen_config.to_json(),
            "encoder": enc_config.to_json(),
            "plan": {
                "rows": plan.rows,
                "seed": plan.seed,
                "sft": plan.sft.to_json(),
                "dpo": plan.dpo.to_json(),
                "eval_seed": plan.eval_seed,
                "eval_sample_steps": plan.eval_sample_steps,
                "eval_cfg_scale": plan.eval_cfg_scale,
                "beta_sweep": plan.beta_sweep,
            },
            "data": str(args.data),
        },
    )
    report = run_ablation(plan, manifest, gen_config, enc_config, run_dir=run_dir)
    print(report.to_markdown())
    return EXIT_OK


def cmd_pca(args) -> int:
    from . import sim

    ckpt = ckpt_io.load_checkpoint(args.checkpoint)
    encoder = ckpt_io.build_encoder_from(ckpt)
    encoder.eval()
    out = Path(args.out)
    jobs: list[tuple[str, np.ndarray]] = []
    if args.clip:
        manifest = DatasetManifest.load(args.data)
        for clip_id in args.clip:
            condition = manifest.condition(manifest.record(clip_id))
            jobs.append((clip_id, condition.first_frame))
    if args.constructed or not jobs:
        cfg = encoder.config
        for name, y in (("constructed_airborne", 0.62), ("constructed_grounded", 0.151)):
            scene = sim.Scene(
                objects=(
                    sim.RigidObject("circle", (0.5, y), (0.0, 0.0), 0.15, 0.5, 1.0, 2),
                ),
                gravity=2.0,
            )
            frame, _ = sim.render(
                sim.SimState.initial(scene), scene, cfg.height, cfg.width
            )
            jobs.append((name, frame))
    import torch

    for name, frame in jobs:
        with torch.no_grad():
            feats = encoder.patch_features(torch.from_numpy(frame)[None])[0].numpy()
        rgb = pca_visualize(feats, encoder.config.height, encoder.config.width)
        _save_png(rgb, out / f"pca_{name}.png")
    print(f"wrote {len(jobs)} feature maps to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="physmaster",
        description="Free-fall video world: data generation, flow-matching "
        "training with preference finetuning, and mask-metric evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a clip corpus")
    p.add_argument("--config", help="corpus config JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("build-pairs", help="construct oracle-ranked preference pairs")
    p.add_argument("--config", help="pair/sampler config JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_build_pairs)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", required=True,
                   choices=["sft", "dpo_model", "dpo_encoder", "dpo_joint"])
    p.add_argument("--config", help="training config JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--reference", help="checkpoint to start a preference stage from")
    p.add_argument("--pairs", help="reuse an existing preference-pair directory "
                                   "instead of regenerating from the reference")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--force-order", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sample", help="sample clips and write PNG frame strips")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test_seen")
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test splits")
    p.add_argument("--checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--passthrough", action="store_true",
                   help="evaluate the simulator ground truth against itself")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run the stage-combination grid")
    p.add_argument("--config", help="ablation config JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--rows", help=f"comma-separated subset of {','.join(VARIANTS)}")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("pca", help="write PCA feature-map PNGs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--clip", action="append", help="clip id (repeatable)")
    p.add_argument("--constructed", action="store_true",
                   help="also render the airborne/grounded constructed pair")
    p.set_defaults(fn=cmd_pca)
    return parser


def main(argv=None) -> int:
    import torch

    torch.set_num_threads(_threads())
    args = build_parser().parse_args(argv)
    if args.command == "eval" and not args.passthrough and not args.checkpoint:
        print("eval needs --checkpoint (or --passthrough)", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ckpt_io.MissingCheckpointError as exc:
        print(f"missing checkpoint: {exc}", file=sys.stderr)
        return EXIT_MISSING_CHECKPOINT
    except StageOrderError as exc:
        print(f"stage-order violation: {exc}", file=sys.stderr)
        return EXIT_STAGE_ORDER
    except OSError as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
