"""Ablation grid over training-stage combinations.

Nine pipeline variants cover: the untrained base, supervised finetuning with
and without the physical encoder, and every preference-finetuning
combination (generator adapters, encoder head, both, and the staged
pipelines). Variants sharing a training prefix reuse the cached state
instead of retraining it. Each variant is evaluated on the seen and unseen
test splits, producing one report row with the three metrics per column
group.
"""

from __future__ import annotations

import copy
import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

from .corpus import ConfigError, DatasetManifest
from .evaluate import evaluate_checkpoint
from .generator import GeneratorSampler
from .training import ClipCache, TrainConfig, TrainState, build_train_state, run_stage

# variant name -> list of (stage, phys_mode) steps; m = generator, e = encoder
VARIANTS: dict[str, list[tuple[str, str]]] = {
    "base": [],
    "sft_m": [("sft", "zeros")],
    "sft_me": [("sft", "encoder")],
    "sft_m+dpo_m": [("sft", "zeros"), ("dpo_model", "zeros")],
    "sft_me+dpo_m": [("sft", "encoder"), ("dpo_model", "encoder")],
    "sft_me+dpo_e": [("sft", "encoder"), ("dpo_encoder", "encoder")],
    "sft_me+dpo_me": [("sft", "encoder"), ("dpo_joint", "encoder")],
    "sft_me+dpo_m+dpo_e": [
        ("sft", "encoder"),
        ("dpo_model", "encoder"),
        ("dpo_encoder", "encoder"),
    ],
    "sft_me+dpo_m+dpo_me": [
        ("sft", "encoder"),
        ("dpo_model", "encoder"),
        ("dpo_joint", "encoder"),
    ],
}

COLUMN_GROUPS = ("seen", "unseen", "average")
METRIC_KEYS = ("l2", "cd", "iou")


@dataclass
class AblationPlan:
    rows: list[str] = field(default_factory=lambda: list(VARIANTS))
    seed: int = 0
    sft: TrainConfig = field(default_factory=lambda: TrainConfig(stage="sft"))
    dpo: TrainConfig = field(default_factory=lambda: TrainConfig(stage="dpo_model", lr=1e-5))
    eval_seed: int = 0
    eval_sample_steps: int = 16
    eval_cfg_scale: float = 2.0
    eval_batch: int = 32
    beta_sweep: list[float] = field(default_factory=list)

    def validate(self) -> None:
        unknown = [r for r in self.rows if r not in VARIANTS]
        if unknown:
            raise ConfigError(f"unknown ablation rows: {unknown}")


@dataclass
class AblationRow:
    variant: str
    metrics: dict[str, dict[str, float]]  # column group -> metric -> value


@dataclass
class AblationReport:
    rows: list[AblationRow]
    stats: dict

    def to_markdown(self) -> str:
        header = "| Variant |"
        rule = "|---|"
        for group in COLUMN_GROUPS:
            for key in METRIC_KEYS:
                arrow = "up" if key == "iou" else "down"
                header += f" {group} {key.upper()} ({arrow}) |"
                rule += "---|"
        lines = [header, rule]
        for row in self.rows:
            cells = [row.variant]
            for group in COLUMN_GROUPS:
                for key in METRIC_KEYS:
                    cells.append(f"{row.metrics[group][key]:.4f}")
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["variant"]
            + [f"{g}_{k}" for g in COLUMN_GROUPS for k in METRIC_KEYS]
        )
        for row in self.rows:
            writer.writerow(
                [row.variant]
                + [f"{row.metrics[g][k]:.6f}" for g in COLUMN_GROUPS for k in METRIC_KEYS]
            )
        return buf.getvalue()


def _stage_config(
    plan: AblationPlan, stage: str, phys_mode: str, history: list[str]
) -> TrainConfig:
    template = plan.sft if stage == "sft" else plan.dpo
    # the encoder-only row skips the adapter stage, which needs the override
    force = stage == "dpo_encoder" and "dpo_model" not in history
    return replace(
        template, stage=stage, phys_mode=phys_mode, seed=plan.seed, force_order=force
    )


def _evaluate_state(
    state: TrainState, plan: AblationPlan, manifest: DatasetManifest, phys_mode: str, name: str
):
    sampler = GeneratorSampler(
        state.generator,
        state.encoder,
        sample_steps=plan.eval_sample_steps,
        cfg_scale=plan.eval_cfg_scale,
        phys_mode=phys_mode,
    )
    report = evaluate_checkpoint(
        sampler, manifest, eval_seed=plan.eval_seed, model_id=name,
        batch_size=plan.eval_batch,
    )
    return {
        "seen": report.aggregate("test_seen"),
        "unseen": report.aggregate("test_unseen"),
        "average": report.aggregate(None),
    }, report


def run_ablation(
    plan: AblationPlan,
    manifest: DatasetManifest,
    gen_config,
    enc_config,
    run_dir: Path | None = None,
    report_hook=None,
) -> AblationReport:
    """Execute the planned variants with prefix caching and evaluate each."""
    plan.validate()
    cache: dict[tuple, TrainState] = {}
    clip_cache = ClipCache(manifest, "train") if any(VARIANTS[r] for r in plan.rows) else None
    stats = {"trained_stages": 0, "cache_hits": 0}
    rows: list[AblationRow] = []

    def state_for(steps: list[tuple[str, str]]) -> TrainState:
        key = tuple(steps)
        if key in cache:
            stats["cache_hits"] += 1
            return cache[key]
        if not steps:
            state = build_train_state(gen_config, enc_config, plan.seed)
        else:
            prefix_state = state_for(steps[:-1])
            stage, phys_mode = steps[-1]
            state = copy.deepcopy(prefix_state)
            config = _stage_config(plan, stage, phys_mode, state.stage_history)
            run_stage(state, config, manifest, cache=clip_cache)
            stats["trained_stages"] += 1
        cache[key] = state
        return state

    for variant in plan.rows:
        steps = VARIANTS[variant]
        state = state_for(steps)
        phys_mode = steps[-1][1] if steps else "encoder"
        metrics, report = _evaluate_state(state, plan, manifest, phys_mode, variant)
        rows.append(AblationRow(variant=variant, metrics=metrics))
        if report_hook is not None:
            report_hook(variant, state, report)

    for beta in plan.beta_sweep:
        steps = VARIANTS["sft_me+dpo_m"]
        state = copy.deepcopy(state_for(steps[:-1]))
        config = replace(
            _stage_config(plan, "dpo_model", "encoder", state.stage_history), beta=beta
        )
        run_stage(state, config, manifest, cache=clip_cache)
        stats["trained_stages"] += 1
        metrics, _ = _evaluate_state(
            state, plan, manifest, "encoder", f"sft_me+dpo_m[beta={beta:g}]"
        )
        rows.append(
            AblationRow(variant=f"sft_me+dpo_m[beta={beta:g}]", metrics=metrics)
        )

    report = AblationReport(rows=rows, stats=stats)
    if run_dir is not None:
        out = Path(run_dir) / "reports"
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.md").write_text(report.to_markdown())
        (out / "ablation.csv").write_text(report.to_csv())
    return report
