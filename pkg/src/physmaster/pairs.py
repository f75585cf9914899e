"""Oracle-ranked preference pairs.

The free-fall world is deterministic given the first frame, so preference
over two generations of the same condition can be decided automatically:
score each candidate against the ground-truth clip with a composite badness
(weighted centroid L2 + chamfer + (1 - IoU), lower is better) and keep the
pair when the gap is clear enough.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import masks as mask_extraction
from . import metrics, tensorio
from .corpus import ConditionBundle, DatasetManifest
from .sim import VideoClip

DEFAULT_WEIGHTS = (1.0, 1.0, 1.0)
MARGIN_IQR_FRACTION = 0.1


@dataclass
class PreferencePair:
    condition: ConditionBundle
    winner: VideoClip
    loser: VideoClip
    winner_score: float
    loser_score: float
    gt_clip_id: str


def generated_clip(frames: np.ndarray, ground_truth: VideoClip) -> VideoClip:
    """Wrap generated frames as a clip with extracted masks and centroids."""
    extracted = mask_extraction.extract_masks(
        frames, ground_truth.scene, ground_truth.trajectories[0]
    )
    t_total, n_obj = extracted.shape[:2]
    trajectories = ground_truth.trajectories[0][None].repeat(t_total, axis=0).copy()
    for t in range(t_total):
        for n in range(n_obj):
            c = mask_extraction_centroid(extracted[t, n])
            if c is not None:
                trajectories[t, n] = c
    return VideoClip(
        frames=frames,
        masks=extracted,
        trajectories=trajectories.astype(np.float32),
        fps=ground_truth.fps,
        scene=ground_truth.scene,
    )


def mask_extraction_centroid(mask: np.ndarray):
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        return None
    h, w = mask.shape
    return ((cols + 0.5).mean() / w, 1.0 - (rows + 0.5).mean() / h)


def oracle_badness(
    generated: VideoClip, ground_truth: VideoClip, weights=DEFAULT_WEIGHTS
) -> float:
    """Composite distance to ground truth; 0 for a perfect reproduction."""
    if generated.frames.shape != ground_truth.frames.shape:
        raise ValueError(
            f"clip geometry mismatch: {generated.frames.shape} vs {ground_truth.frames.shape}"
        )
    if generated.masks.shape != ground_truth.masks.shape:
        raise ValueError("object count mismatch between generated and ground truth")
    w1, w2, w3 = weights
    score = 0.0
    if w1 != 0.0:
        score += w1 * metrics.centroid_l2(generated.masks, ground_truth.masks)
    if w2 != 0.0:
        score += w2 * metrics.chamfer(generated.masks, ground_truth.masks)
    if w3 != 0.0:
        score += w3 * (1.0 - metrics.iou(generated.masks, ground_truth.masks))
    return float(score)


def _spread_indices(total: int, wanted: int) -> list[int]:
    if wanted >= total:
        return list(range(total))
    return [round(i * (total - 1) / max(wanted - 1, 1)) for i in range(wanted)]


def build_preference_pairs(
    model,
    manifest: DatasetManifest,
    n_conditions: int,
    margin: float | None,
    seeds: tuple[int, int],
    split: str = "train",
    weights=DEFAULT_WEIGHTS,
) -> list[PreferencePair]:
    """Sample two clips per condition with the two seeds and rank by badness.

    margin=None calibrates the margin to MARGIN_IQR_FRACTION of the
    inter-quartile range of all candidate badness scores.
    """
    records = manifest.split(split)
    if not records:
        raise ValueError(f"split {split!r} is empty")
    chosen = [records[i] for i in _spread_indices(len(records), n_conditions)]

    scored = []
    for record in chosen:
        gt = manifest.load_clip(record)
        condition = manifest.condition(record)
        claims = []
        for seed in seeds:
            clip_seed = metrics.clip_eval_seed(seed, record.clip_id)
            frames = model.sample_clip(condition, clip_seed)
            clip = generated_clip(frames, gt)
            claims.append((clip, oracle_badness(clip, gt, weights)))
        scored.append((condition, record.clip_id, claims))

    if margin is None:
        all_scores = [s for _, _, claims in scored for _, s in claims]
        q1, q3 = np.percentile(all_scores, [25, 75])
        margin = MARGIN_IQR_FRACTION * float(q3 - q1)

    out: list[PreferencePair] = []
    for condition, gt_clip_id, claims in scored:
        (clip_a, score_a), (clip_b, score_b) = claims
        if score_a <= score_b:
            winner, w_score, loser, l_score = clip_a, score_a, clip_b, score_b
        else:
            winner, w_score, loser, l_score = clip_b, score_b, clip_a, score_a
        gap = l_score - w_score
        # exact ties carry no preference signal and would make the winner
        # depend on candidate order, so they are always dropped
        if gap > 0.0 and gap >= margin:
            out.append(
                PreferencePair(
                    condition=condition,
                    winner=winner,
                    loser=loser,
                    winner_score=w_score,
                    loser_score=l_score,
                    gt_clip_id=gt_clip_id,
                )
            )
    return out


# ---------------------------------------------------------------------------
# on-disk layout: one tensor file per pair plus a pairs.json index
# ---------------------------------------------------------------------------


def save_pairs(pairs: list[PreferencePair], out_dir) -> None:
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    index = []
    for i, pair in enumerate(pairs):
        rel = f"pair_{i:05d}.pmt"
        offsets = tensorio.write_tensor_file(
            root / rel,
            {"winner_frames": pair.winner.frames, "loser_frames": pair.loser.frames},
        )
        index.append(
            {
                "file": rel,
                "offsets": offsets,
                "gt_clip_id": pair.gt_clip_id,
                "winner_score": pair.winner_score,
                "loser_score": pair.loser_score,
            }
        )
    path = root / "pairs.json"
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps({"pairs": index}, sort_keys=True, indent=1))
    os.replace(tmp, path)


def load_pairs(pairs_dir, manifest: DatasetManifest) -> list[PreferencePair]:
    root = Path(pairs_dir)
    index = json.loads((root / "pairs.json").read_text())["pairs"]
    out = []
    for entry in index:
        tensors = tensorio.read_tensor_file(root / entry["file"], entry["offsets"])
        record = manifest.record(entry["gt_clip_id"])
        gt = manifest.load_clip(record)
        out.append(
            PreferencePair(
                condition=manifest.condition(record),
                winner=generated_clip(tensors["winner_frames"], gt),
                loser=generated_clip(tensors["loser_frames"], gt),
                winner_score=entry["winner_score"],
                loser_score=entry["loser_score"],
                gt_clip_id=entry["gt_clip_id"],
            )
        )
    return out
